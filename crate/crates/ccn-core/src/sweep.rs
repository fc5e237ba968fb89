//! The moving-rectangle experiments: nine geometry steps from disjoint to
//! nested, several seeds per step, competing systems trained per run, and
//! per-step mean/std of every metric.

use crate::circuit::{compile, ConstraintCircuit};
use crate::error::Result;
use crate::metrics::{mc_metrics, MetricReport};
use crate::mlp::{
    init_model, train, wrap_baseline, LossChoice, MlpModel, Nonlinearity, TrainConfig,
    WrapperKind,
};
use crate::synth::{
    basic_hmc_rules, basic_hmc_world, basic_lcmc_rules, basic_lcmc_world, gen_rectangles, Rect,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepKind {
    /// Two classes, one hierarchy edge; systems ccn, f_plus, g_plus.
    HmcSweep,
    /// Three classes with a negated constraint; systems ccn, f_plus.
    LcmcSweep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub runs: usize,
    pub epochs: usize,
    pub samples: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            runs: 10,
            epochs: 20_000,
            samples: 5000,
            hidden: 4,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

pub const SWEEP_STEPS: usize = 9;

/// Geometry of step `k` (1-based): the big rectangle is fixed at
/// [0.3, 0.9]^2; the small one has side 0.2 and its centre moves on a
/// horizontal line from (0.1, 0.6) (fully disjoint) to (0.6, 0.6)
/// (centred) in nine uniform steps.
pub fn sweep_geometry(step: usize) -> (Rect, Rect) {
    assert!((1..=SWEEP_STEPS).contains(&step));
    let cx = 0.1 + 0.5 * (step - 1) as f64 / (SWEEP_STEPS - 1) as f64;
    let r1 = Rect::new(cx - 0.1, 0.5, cx + 0.1, 0.7);
    let r2 = Rect::new(0.3, 0.3, 0.9, 0.9);
    (r1, r2)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemRuns {
    pub system: String,
    pub runs: Vec<MetricReport>,
    pub failures: Vec<String>,
}

impl SystemRuns {
    pub fn mean_of(&self, f: impl Fn(&MetricReport) -> f64) -> f64 {
        if self.runs.is_empty() {
            return f64::NAN;
        }
        self.runs.iter().map(&f).sum::<f64>() / self.runs.len() as f64
    }

    pub fn std_of(&self, f: impl Fn(&MetricReport) -> f64) -> f64 {
        if self.runs.len() < 2 {
            return 0.0;
        }
        let mean = self.mean_of(&f);
        let var = self
            .runs
            .iter()
            .map(|r| {
                let d = f(r) - mean;
                d * d
            })
            .sum::<f64>()
            / self.runs.len() as f64;
        var.sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub r1: Rect,
    pub r2: Rect,
    pub systems: Vec<SystemRuns>,
}

impl StepReport {
    pub fn system(&self, name: &str) -> &SystemRuns {
        self.systems
            .iter()
            .find(|s| s.system == name)
            .expect("unknown system name")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: SweepKind,
    pub config: SweepConfig,
    pub steps: Vec<StepReport>,
}

const METRIC_COLUMNS: [(&str, fn(&MetricReport) -> f64); 7] = [
    ("au_prc", |r| r.au_prc),
    ("average_precision", |r| r.average_precision),
    ("coverage_error", |r| r.coverage_error),
    ("hamming_loss", |r| r.hamming_loss),
    ("multilabel_accuracy", |r| r.multilabel_accuracy),
    ("one_error", |r| r.one_error),
    ("ranking_loss", |r| r.ranking_loss),
];

impl SweepReport {
    /// One row per (step, system, metric) with mean and std over runs,
    /// geometry included for reproducibility.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "step,r1_x0,r1_y0,r1_x1,r1_y1,r2_x0,r2_y0,r2_x1,r2_y1,system,metric,mean,std\n",
        );
        for step in &self.steps {
            for sys in &step.systems {
                for (name, f) in METRIC_COLUMNS {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                        step.step,
                        step.r1.x0,
                        step.r1.y0,
                        step.r1.x1,
                        step.r1.y1,
                        step.r2.x0,
                        step.r2.y0,
                        step.r2.x1,
                        step.r2.y1,
                        sys.system,
                        name,
                        sys.mean_of(f),
                        sys.std_of(f),
                    ));
                }
            }
        }
        out
    }

    /// One row per (step, system, run) with every metric as a column.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("step,system,run");
        for (name, _) in METRIC_COLUMNS {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for step in &self.steps {
            for sys in &step.systems {
                for (run, r) in sys.runs.iter().enumerate() {
                    out.push_str(&format!("{},{},{run}", step.step, sys.system));
                    for (_, f) in METRIC_COLUMNS {
                        out.push_str(&format!(",{}", f(r)));
                    }
                    out.push('\n');
                }
            }
        }
        out
    }
}

fn mix_seed(base: u64, a: u64, b: u64, c: u64) -> u64 {
    // splitmix64 over the concatenated words
    let mut z = base
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(a)
        .wrapping_mul(0xbf58476d1ce4e5b9)
        .wrapping_add(b)
        .wrapping_mul(0x94d049bb133111eb)
        .wrapping_add(c);
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58476d1ce4e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

struct RunSpec<'a> {
    kind: SweepKind,
    cfg: &'a SweepConfig,
    step: usize,
    run: usize,
}

fn train_system(
    spec: &RunSpec,
    circuit: &ConstraintCircuit,
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    test_x: &[Vec<f64>],
    test_y: &[Vec<f64>],
    system: &str,
    sys_idx: u64,
) -> std::result::Result<MetricReport, String> {
    let cfg = TrainConfig {
        epochs: spec.cfg.epochs,
        learning_rate: spec.cfg.learning_rate,
        seed: mix_seed(spec.cfg.seed, spec.step as u64, spec.run as u64, 100 + sys_idx),
        ..TrainConfig::default()
    };
    let l = circuit.classes.len();
    let init: MlpModel = init_model(
        &[2, spec.cfg.hidden, l],
        Nonlinearity::Tanh,
        mix_seed(spec.cfg.seed, spec.step as u64, spec.run as u64, sys_idx),
    );
    let (choice, wrapper, train_y): (LossChoice, WrapperKind, Vec<Vec<f64>>) = match system {
        "ccn" => (LossChoice::CLoss, WrapperKind::CcnCLoss, y.to_vec()),
        "h_cm" => (LossChoice::BceAfterCm, WrapperKind::HCmBce, y.to_vec()),
        "f_plus" => {
            let wrapper = match spec.kind {
                SweepKind::HmcSweep => WrapperKind::FPlusMin,
                SweepKind::LcmcSweep => WrapperKind::HPlusPostproc,
            };
            (LossChoice::Bce, wrapper, y.to_vec())
        }
        "g_plus" => {
            // Outputs (A1, A \ A1): relabel the superclass column.
            let y2: Vec<Vec<f64>> = y
                .iter()
                .map(|row| vec![row[0], row[1] * (1.0 - row[0])])
                .collect();
            (LossChoice::Bce, WrapperKind::GPlusMax, y2)
        }
        other => return Err(format!("unknown system `{other}`")),
    };
    let needs_circuit = !matches!(choice, LossChoice::Bce);
    let outcome = train(
        &init,
        x,
        &train_y,
        None,
        needs_circuit.then_some(circuit),
        choice,
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let sys = wrap_baseline(outcome.model, wrapper, Some(circuit)).map_err(|e| e.to_string())?;
    let scores = sys.infer(test_x).map_err(|e| e.to_string())?;
    mc_metrics(&scores, test_y, 0.5).map_err(|e| e.to_string())
}

fn run_step_once(spec: &RunSpec) -> Vec<(String, std::result::Result<MetricReport, String>)> {
    let (r1, r2) = sweep_geometry(spec.step);
    let data_seed = mix_seed(spec.cfg.seed, spec.step as u64, spec.run as u64, 0);
    let (world, rules) = match spec.kind {
        SweepKind::HmcSweep => (
            basic_hmc_world(r1, r2, spec.cfg.samples, data_seed),
            basic_hmc_rules(),
        ),
        SweepKind::LcmcSweep => (
            basic_lcmc_world(r1, r2, spec.cfg.samples, data_seed),
            basic_lcmc_rules(),
        ),
    };
    let systems: &[&str] = match spec.kind {
        SweepKind::HmcSweep => &["ccn", "f_plus", "g_plus"],
        SweepKind::LcmcSweep => &["ccn", "f_plus"],
    };
    let data = match gen_rectangles(&world) {
        Ok(d) => d,
        Err(e) => {
            return systems
                .iter()
                .map(|s| (s.to_string(), Err(e.to_string())))
                .collect()
        }
    };
    let circuit = compile(&rules).expect("static rules compile");
    let (x, y) = data.train();
    let (tx, ty) = data.test();
    systems
        .iter()
        .enumerate()
        .map(|(i, s)| {
            (
                s.to_string(),
                train_system(spec, &circuit, &x, &y, &tx, &ty, s, i as u64),
            )
        })
        .collect()
}

/// Run the nine-step experiment. Runs are independent and execute on the
/// rayon pool; assembly order is fixed by (step, run), so reports are
/// reproducible bit-for-bit under a fixed seed.
pub fn sweep_experiment(kind: SweepKind, cfg: &SweepConfig) -> Result<SweepReport> {
    let jobs: Vec<(usize, usize)> = (1..=SWEEP_STEPS)
        .flat_map(|step| (0..cfg.runs).map(move |run| (step, run)))
        .collect();
    let results: Vec<Vec<(String, std::result::Result<MetricReport, String>)>> = jobs
        .par_iter()
        .map(|&(step, run)| {
            run_step_once(&RunSpec {
                kind,
                cfg,
                step,
                run,
            })
        })
        .collect();

    let system_names: &[&str] = match kind {
        SweepKind::HmcSweep => &["ccn", "f_plus", "g_plus"],
        SweepKind::LcmcSweep => &["ccn", "f_plus"],
    };
    let mut steps = Vec::with_capacity(SWEEP_STEPS);
    for step in 1..=SWEEP_STEPS {
        let (r1, r2) = sweep_geometry(step);
        let mut systems: Vec<SystemRuns> = system_names
            .iter()
            .map(|s| SystemRuns {
                system: s.to_string(),
                runs: Vec::new(),
                failures: Vec::new(),
            })
            .collect();
        for run in 0..cfg.runs {
            let job = &results[(step - 1) * cfg.runs + run];
            for (name, outcome) in job {
                let slot = systems
                    .iter_mut()
                    .find(|s| &s.system == name)
                    .expect("system slot");
                match outcome {
                    Ok(report) => slot.runs.push(report.clone()),
                    Err(msg) => slot.failures.push(format!("run {run}: {msg}")),
                }
            }
        }
        steps.push(StepReport {
            step,
            r1,
            r2,
            systems,
        });
    }
    Ok(SweepReport {
        kind,
        config: cfg.clone(),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_endpoints() {
        let (r1, r2) = sweep_geometry(1);
        // Step 1: fully disjoint.
        assert!(r1.x1 < r2.x0);
        let (r1, r2) = sweep_geometry(9);
        // Step 9: centred inside.
        assert!(r1.x0 > r2.x0 && r1.x1 < r2.x1 && r1.y0 > r2.y0 && r1.y1 < r2.y1);
        assert!(((r1.x0 + r1.x1) / 2.0 - 0.6).abs() <= 1e-12);
    }

    #[test]
    fn tiny_sweep_is_reproducible() {
        let cfg = SweepConfig {
            runs: 1,
            epochs: 30,
            samples: 200,
            ..SweepConfig::default()
        };
        let a = sweep_experiment(SweepKind::HmcSweep, &cfg).unwrap();
        let b = sweep_experiment(SweepKind::HmcSweep, &cfg).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.steps.len(), 9);
        for step in &a.steps {
            assert_eq!(step.systems.len(), 3);
            for sys in &step.systems {
                assert_eq!(sys.runs.len(), 1, "failures: {:?}", sys.failures);
            }
        }
    }
}
