//! Coherent-by-construction multi-label prediction.
//!
//! This crate compiles sets of propositional normal rules into stratified
//! constraint circuits, evaluates the constraint module (coherent score
//! extension) and the constraint loss (label-masked cross-entropy with
//! exact gradients), trains small feedforward classifiers against them,
//! and verifies the compiled semantics against brute-force logic oracles.

pub mod circuit;
pub mod closure;
pub mod cm;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod mlp;
pub mod rules;
pub mod semantics;
pub mod sweep;
pub mod synth;

pub use circuit::{compile, compile_with, CompileOptions, ConstraintCircuit};
pub use cm::{cm_forward, cm_forward_batch, cm_forward_hmc, delegation_rate, predict, EvalTrace};
pub use error::{CoreError, Result};
pub use graph::{build_dependency_graph, check_stratified, comp_strata, Stratification};
pub use loss::{bce_loss, closs, closs_hmc, closs_targets, LossResult};
pub use rules::{hierarchy_to_rules, parse_rules, serialize_rules, ClassTable, Rule, RuleSet};
pub use semantics::{
    check_constraint_violation, check_logical_violation, check_minimal, check_supported,
    stable_model, ClassSet,
};
pub use dataset::{load_dataset, DatasetSchema, SplitFractions, TabularDataset};
pub use metrics::{au_prc, mc_metrics, MetricReport};
pub use mlp::{
    init_model, train, wrap_baseline, LossChoice, MlpModel, Nonlinearity, TrainConfig,
    TrainedSystem, WrapperKind,
};
pub use sweep::{sweep_experiment, SweepConfig, SweepKind, SweepReport};
pub use synth::{gen_nine_rect, gen_rectangles, Membership, Rect, RectangleWorld};
