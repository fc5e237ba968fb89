//! Constraint loss: binary cross-entropy against ground-truth-masked
//! targets, with exact reverse-mode gradients.
//!
//! For each class the loss optimizes a target that differs from the plain
//! module output: products with the ground truth mask out body atoms whose
//! labels disagree with the rule's intended use, so that a rule only pulls
//! a head up when its body is label-consistent (head labelled 1) and only
//! keeps a head down when some body atom is label-inconsistent (head
//! labelled 0). Targets are computed stratum by stratum like the module
//! itself; one merged vector suffices because every use site multiplies by
//! the matching label mask.
//!
//! Gradients route through each min/max to the lowest-index argument and
//! log arguments are clamped at `1e-12`, which keeps every partial
//! derivative finite while preserving its sign.
//!
//! Training evaluates the loss once per sample per epoch, so the core is
//! written against reusable scratch buffers; the free functions wrap a
//! freshly allocated scratch.

use crate::circuit::ConstraintCircuit;
use crate::cm::{
    cm_backward, cm_forward_tape, hmc_forward_impl, validate_labels, validate_scores, ClassArg,
    RuleArg,
};
use crate::error::{CoreError, Result};

pub const LOG_EPS: f64 = 1e-12;

/// Loss value, gradient with respect to the raw scores, and the target
/// vector the cross-entropy was taken against (absent for plain BCE).
#[derive(Debug, Clone)]
pub struct LossResult {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub targets: Option<Vec<f64>>,
}

/// Numerical context of one loss evaluation, for test-side filtering.
#[derive(Debug, Clone, Copy)]
pub struct LossTrace {
    /// Smallest winner-vs-runner-up gap over all min/max nodes.
    pub min_gap: f64,
}

fn bce_into(targets: &[f64], y: &[f64], d: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    for i in 0..targets.len() {
        let t = targets[i];
        if y[i] == 1.0 {
            loss -= t.max(LOG_EPS).ln();
            d[i] = -1.0 / t.max(LOG_EPS);
        } else {
            loss -= (1.0 - t).max(LOG_EPS).ln();
            d[i] = 1.0 / (1.0 - t).max(LOG_EPS);
        }
    }
    loss
}

/// Reusable buffers for constraint-loss evaluation on one circuit.
pub struct ClossEvaluator {
    vp: Vec<Vec<f64>>,
    vm: Vec<Vec<f64>>,
    vp_choice: Vec<Vec<RuleArg>>,
    vm_choice: Vec<Vec<RuleArg>>,
    class_choice: Vec<Vec<ClassArg>>,
    t_levels: Vec<Vec<f64>>,
    d: Vec<f64>,
    d_prev: Vec<f64>,
    pub targets: Vec<f64>,
    pub grad: Vec<f64>,
    min_gap: f64,
}

impl ClossEvaluator {
    pub fn new(circuit: &ConstraintCircuit) -> Self {
        let l = circuit.classes.len();
        let s = circuit.strata.len();
        ClossEvaluator {
            vp: circuit.strata.iter().map(|s| vec![0.0; s.num_rules()]).collect(),
            vm: circuit.strata.iter().map(|s| vec![0.0; s.num_rules()]).collect(),
            vp_choice: circuit
                .strata
                .iter()
                .map(|s| vec![RuleArg::Empty; s.num_rules()])
                .collect(),
            vm_choice: circuit
                .strata
                .iter()
                .map(|s| vec![RuleArg::Empty; s.num_rules()])
                .collect(),
            class_choice: vec![vec![ClassArg::Prev; l]; s],
            t_levels: vec![vec![0.0; l]; s + 1],
            d: vec![0.0; l],
            d_prev: vec![0.0; l],
            targets: vec![0.0; l],
            grad: vec![0.0; l],
            min_gap: f64::INFINITY,
        }
    }

    fn forward(&mut self, circuit: &ConstraintCircuit, h: &[f64], y: &[f64]) {
        let l = circuit.classes.len();
        self.min_gap = f64::INFINITY;
        self.t_levels[0].copy_from_slice(h);
        for (si, stratum) in circuit.strata.iter().enumerate() {
            let p = stratum.num_rules();
            let (done, rest) = self.t_levels.split_at_mut(si + 1);
            let t = &done[si];
            let next = &mut rest[0];
            next.copy_from_slice(t);
            for j in 0..p {
                let bp = &stratum.body_pos[j];
                let bn = &stratum.body_neg[j];
                let mut best_p = f64::INFINITY;
                let mut arg_p = RuleArg::Empty;
                let mut best_m = f64::INFINITY;
                let mut arg_m = RuleArg::Empty;
                let mut second_p = f64::INFINITY;
                let mut second_m = f64::INFINITY;
                for k in 0..l {
                    if bp[k] {
                        // Exploit the rule: the atom counts when labelled 1.
                        let val = t[k] * y[k];
                        if val < best_p {
                            second_p = best_p;
                            best_p = val;
                            arg_p = RuleArg::Pos(k);
                        } else if val < second_p {
                            second_p = val;
                        }
                        // Keep it unfired: the atom counts when labelled 0.
                        let val = t[k] * (1.0 - y[k]) + y[k];
                        if val < best_m {
                            second_m = best_m;
                            best_m = val;
                            arg_m = RuleArg::Pos(k);
                        } else if val < second_m {
                            second_m = val;
                        }
                    }
                }
                for k in 0..l {
                    if bn[k] {
                        let val = (1.0 - t[k]) * (1.0 - y[k]);
                        if val < best_p {
                            second_p = best_p;
                            best_p = val;
                            arg_p = RuleArg::Neg(k);
                        } else if val < second_p {
                            second_p = val;
                        }
                        let val = (1.0 - t[k]) * y[k] + (1.0 - y[k]);
                        if val < best_m {
                            second_m = best_m;
                            best_m = val;
                            arg_m = RuleArg::Neg(k);
                        } else if val < second_m {
                            second_m = val;
                        }
                    }
                }
                // Empty bodies (facts) evaluate to 1.
                self.vp[si][j] = if arg_p == RuleArg::Empty { 1.0 } else { best_p };
                self.vm[si][j] = if arg_m == RuleArg::Empty { 1.0 } else { best_m };
                self.vp_choice[si][j] = arg_p;
                self.vm_choice[si][j] = arg_m;
                if arg_p != RuleArg::Empty && second_p.is_finite() {
                    self.min_gap = self.min_gap.min(second_p - best_p);
                }
                if arg_m != RuleArg::Empty && second_m.is_finite() {
                    self.min_gap = self.min_gap.min(second_m - best_m);
                }
            }
            for c in 0..l {
                self.class_choice[si][c] = ClassArg::Prev;
                let mut second = f64::NEG_INFINITY;
                for &j in &stratum.heads[c] {
                    let val = if y[c] == 1.0 {
                        self.vp[si][j]
                    } else {
                        self.vm[si][j]
                    };
                    if val > next[c] {
                        second = next[c];
                        next[c] = val;
                        self.class_choice[si][c] = ClassArg::Rule(j);
                    } else if val > second {
                        second = val;
                    }
                }
                if second > f64::NEG_INFINITY {
                    self.min_gap = self.min_gap.min(next[c] - second);
                }
            }
        }
        self.targets.copy_from_slice(&self.t_levels[circuit.strata.len()]);
    }

    /// Loss and gradient; results land in `self.targets` / `self.grad`.
    pub fn eval(&mut self, circuit: &ConstraintCircuit, h: &[f64], y: &[f64]) -> f64 {
        let l = circuit.classes.len();
        self.forward(circuit, h, y);
        let loss = bce_into(&self.targets, y, &mut self.d);

        for si in (0..circuit.strata.len()).rev() {
            self.d_prev[..l].fill(0.0);
            for c in 0..l {
                match self.class_choice[si][c] {
                    ClassArg::Prev => self.d_prev[c] += self.d[c],
                    ClassArg::Rule(j) => {
                        let g = self.d[c];
                        if y[c] == 1.0 {
                            match self.vp_choice[si][j] {
                                RuleArg::Empty => {}
                                RuleArg::Pos(k) => self.d_prev[k] += g * y[k],
                                RuleArg::Neg(k) => self.d_prev[k] -= g * (1.0 - y[k]),
                            }
                        } else {
                            match self.vm_choice[si][j] {
                                RuleArg::Empty => {}
                                RuleArg::Pos(k) => self.d_prev[k] += g * (1.0 - y[k]),
                                RuleArg::Neg(k) => self.d_prev[k] -= g * y[k],
                            }
                        }
                    }
                }
            }
            std::mem::swap(&mut self.d, &mut self.d_prev);
        }
        self.grad.copy_from_slice(&self.d);
        loss
    }
}

/// Reusable buffers for the hierarchy fast paths.
pub struct HmcLossEvaluator {
    masked: Vec<f64>,
    cm: Vec<f64>,
    cm_arg: Vec<usize>,
    pos: Vec<f64>,
    pos_arg: Vec<usize>,
    d: Vec<f64>,
    pub targets: Vec<f64>,
    pub grad: Vec<f64>,
}

impl HmcLossEvaluator {
    pub fn new(num_classes: usize) -> Self {
        let l = num_classes;
        HmcLossEvaluator {
            masked: vec![0.0; l],
            cm: vec![0.0; l],
            cm_arg: vec![0; l],
            pos: vec![0.0; l],
            pos_arg: vec![0; l],
            d: vec![0.0; l],
            targets: vec![0.0; l],
            grad: vec![0.0; l],
        }
    }

    fn max_over_descendants(mask: &[Vec<bool>], h: &[f64], out: &mut [f64], arg: &mut [usize]) {
        for a in 0..mask.len() {
            let mut best = f64::NEG_INFINITY;
            let mut best_k = a;
            let row = &mask[a];
            for (b, &m) in row.iter().enumerate() {
                if m && h[b] > best {
                    best = h[b];
                    best_k = b;
                }
            }
            out[a] = best;
            arg[a] = best_k;
        }
    }

    /// Constraint loss through the descendant mask.
    pub fn eval_closs(&mut self, mask: &[Vec<bool>], h: &[f64], y: &[f64]) -> f64 {
        let l = mask.len();
        for k in 0..l {
            self.masked[k] = h[k] * y[k];
        }
        Self::max_over_descendants(mask, h, &mut self.cm, &mut self.cm_arg);
        Self::max_over_descendants(mask, &self.masked, &mut self.pos, &mut self.pos_arg);
        for a in 0..l {
            self.targets[a] = if y[a] == 1.0 { self.pos[a] } else { self.cm[a] };
        }
        let loss = bce_into(&self.targets, y, &mut self.d);
        self.grad.fill(0.0);
        for a in 0..l {
            if y[a] == 1.0 {
                let b = self.pos_arg[a];
                self.grad[b] += self.d[a] * y[b];
            } else {
                self.grad[self.cm_arg[a]] += self.d[a];
            }
        }
        loss
    }

    /// Plain BCE after the mask module, gradient routed to the argmax.
    pub fn eval_bce_after_cm(&mut self, mask: &[Vec<bool>], h: &[f64], y: &[f64]) -> f64 {
        Self::max_over_descendants(mask, h, &mut self.cm, &mut self.cm_arg);
        self.targets.copy_from_slice(&self.cm);
        let loss = bce_into(&self.targets, y, &mut self.d);
        self.grad.fill(0.0);
        for a in 0..mask.len() {
            self.grad[self.cm_arg[a]] += self.d[a];
        }
        loss
    }
}

/// The masked target vector the constraint loss is evaluated against.
pub fn closs_targets(circuit: &ConstraintCircuit, h: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let l = circuit.classes.len();
    validate_scores(h, l)?;
    validate_labels(y, l)?;
    let mut ev = ClossEvaluator::new(circuit);
    ev.forward(circuit, h, y);
    Ok(ev.targets)
}

/// Constraint loss and its gradient with respect to the raw scores.
/// The loss is the sum over classes of the per-class cross-entropy terms.
pub fn closs(circuit: &ConstraintCircuit, h: &[f64], y: &[f64]) -> Result<LossResult> {
    let l = circuit.classes.len();
    validate_scores(h, l)?;
    validate_labels(y, l)?;
    let mut ev = ClossEvaluator::new(circuit);
    let loss = ev.eval(circuit, h, y);
    Ok(LossResult {
        loss,
        grad: ev.grad,
        targets: Some(ev.targets),
    })
}

/// As [`closs`], also reporting the smallest min/max gap seen.
pub fn closs_traced(
    circuit: &ConstraintCircuit,
    h: &[f64],
    y: &[f64],
) -> Result<(LossResult, LossTrace)> {
    let l = circuit.classes.len();
    validate_scores(h, l)?;
    validate_labels(y, l)?;
    let mut ev = ClossEvaluator::new(circuit);
    let loss = ev.eval(circuit, h, y);
    let min_gap = ev.min_gap;
    Ok((
        LossResult {
            loss,
            grad: ev.grad,
            targets: Some(ev.targets),
        },
        LossTrace { min_gap },
    ))
}

/// Hierarchy fast path of the constraint loss. For a class labelled 1 the
/// target is the maximum label-masked raw score over its descendants; for
/// a class labelled 0 it is the module output itself. Behaves exactly like
/// the general path on hierarchy problems with coherent labels.
pub fn closs_hmc(mask: &[Vec<bool>], h: &[f64], y: &[f64]) -> Result<LossResult> {
    let l = mask.len();
    validate_scores(h, l)?;
    validate_labels(y, l)?;
    let mut ev = HmcLossEvaluator::new(l);
    let loss = ev.eval_closs(mask, h, y);
    Ok(LossResult {
        loss,
        grad: ev.grad,
        targets: Some(ev.targets),
    })
}

/// Plain binary cross-entropy on the given scores.
pub fn bce_loss(scores: &[f64], y: &[f64]) -> Result<LossResult> {
    if scores.len() != y.len() {
        return Err(CoreError::DimensionMismatch {
            expected: y.len(),
            got: scores.len(),
        });
    }
    validate_labels(y, y.len())?;
    let mut grad = vec![0.0; y.len()];
    let loss = bce_into(scores, y, &mut grad);
    Ok(LossResult {
        loss,
        grad,
        targets: None,
    })
}

/// Binary cross-entropy applied after the constraint module, with the
/// gradient pulled back through the module's min/max graph. This is the
/// training path of the module-without-constraint-loss ablation.
pub fn bce_after_cm(circuit: &ConstraintCircuit, h: &[f64], y: &[f64]) -> Result<LossResult> {
    let l = circuit.classes.len();
    validate_scores(h, l)?;
    validate_labels(y, l)?;
    let (cm, tape) = cm_forward_tape(circuit, h);
    let mut d_cm = vec![0.0; l];
    let loss = bce_into(&cm, y, &mut d_cm);
    let grad = cm_backward(circuit, &tape, &d_cm);
    Ok(LossResult {
        loss,
        grad,
        targets: Some(cm),
    })
}

/// Hierarchy fast path of [`bce_after_cm`].
pub fn bce_after_cm_hmc(mask: &[Vec<bool>], h: &[f64], y: &[f64]) -> Result<LossResult> {
    let l = mask.len();
    validate_scores(h, l)?;
    validate_labels(y, l)?;
    let mut ev = HmcLossEvaluator::new(l);
    let loss = ev.eval_bce_after_cm(mask, h, y);
    Ok(LossResult {
        loss,
        grad: ev.grad,
        targets: Some(ev.targets),
    })
}

/// Hierarchy fast path of the module forward, reusing no buffers; the
/// argmax bookkeeping lives in [`HmcLossEvaluator`] for training.
pub fn cm_hmc_values(mask: &[Vec<bool>], h: &[f64]) -> Vec<f64> {
    hmc_forward_impl(mask, h).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::compile;
    use crate::rules::parse_rules;

    fn example_circuit() -> ConstraintCircuit {
        // Class order (A1, A2, A).
        let rs = parse_rules("class: A1\nclass: A2\nclass: A\nA1 -> A\nA2 -> A\nA, !A1 -> A2\n")
            .unwrap();
        compile(&rs).unwrap()
    }

    #[test]
    fn worked_example_targets() {
        let c = example_circuit();
        let t = closs_targets(&c, &[0.2, 0.3, 0.6], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(t, vec![0.2, 0.8, 0.6]);
    }

    #[test]
    fn worked_example_loss_value() {
        let c = example_circuit();
        let r = closs(&c, &[0.2, 0.3, 0.6], &[1.0, 0.0, 1.0]).unwrap();
        let expected = -2.0 * 0.2f64.ln() - 0.6f64.ln();
        assert!((r.loss - expected).abs() <= 1e-12);
    }

    #[test]
    fn no_rules_and_consistent_labels_leave_targets_alone() {
        let rs = parse_rules("class: A\nclass: B\n").unwrap();
        let c = compile(&rs).unwrap();
        let h = vec![0.8, 0.2];
        let t = closs_targets(&c, &h, &[1.0, 0.0]).unwrap();
        assert_eq!(t, h);
    }

    #[test]
    fn single_edge_gradients() {
        // h_A1 = 0.3, h_A = 0.1, y_A1 = 0, y_A = 1:
        // dCLoss/dh_A1 = 1/(1 - 0.3), dCLoss/dh_A = -1/0.1.
        let rs = parse_rules("A1 -> A\n").unwrap();
        let c = compile(&rs).unwrap();
        let r = closs(&c, &[0.3, 0.1], &[0.0, 1.0]).unwrap();
        assert!((r.grad[0] - 1.0 / 0.7).abs() <= 1e-12);
        assert!((r.grad[1] - (-10.0)).abs() <= 1e-12);
        let expected = -(0.7f64).ln() - (0.1f64).ln();
        assert!((r.loss - expected).abs() <= 1e-12);
    }

    #[test]
    fn hmc_path_matches_general_path_on_single_edge() {
        let rs = parse_rules("A1 -> A\n").unwrap();
        let c = compile(&rs).unwrap();
        let mask = c.hmc_mask.clone().unwrap();
        let h = [0.3, 0.1];
        let y = [0.0, 1.0];
        let a = closs(&c, &h, &y).unwrap();
        let b = closs_hmc(&mask, &h, &y).unwrap();
        assert!((a.loss - b.loss).abs() <= 1e-12);
        for (x, z) in a.grad.iter().zip(&b.grad) {
            assert!((x - z).abs() <= 1e-12);
        }
        assert_eq!(a.targets, b.targets);
    }

    #[test]
    fn hmc_loss_on_all_zero_labels_is_bce_of_module_output() {
        let rs = parse_rules("A1 -> A\n").unwrap();
        let c = compile(&rs).unwrap();
        let mask = c.hmc_mask.clone().unwrap();
        let h = [0.3, 0.1];
        let y = [0.0, 0.0];
        let r = closs_hmc(&mask, &h, &y).unwrap();
        let cm = crate::cm::cm_forward_hmc(&mask, &h).unwrap();
        let plain = bce_loss(&cm, &y).unwrap();
        assert!((r.loss - plain.loss).abs() <= 1e-12);
    }

    #[test]
    fn bce_after_cm_learns_the_wrong_direction_on_single_edge() {
        // Same inputs as `single_edge_gradients`, but plain BCE after the
        // module: the gradient on h_A1 is negative and h_A gets none.
        let rs = parse_rules("A1 -> A\n").unwrap();
        let c = compile(&rs).unwrap();
        let r = bce_after_cm(&c, &[0.3, 0.1], &[0.0, 1.0]).unwrap();
        let expected_a1 = 1.0 / 0.7 - 1.0 / 0.3;
        assert!((r.grad[0] - expected_a1).abs() <= 1e-12);
        assert_eq!(r.grad[1], 0.0);
        let hmc = bce_after_cm_hmc(c.hmc_mask.as_ref().unwrap(), &[0.3, 0.1], &[0.0, 1.0]).unwrap();
        assert!((hmc.loss - r.loss).abs() <= 1e-12);
        assert_eq!(hmc.grad, r.grad);
    }

    #[test]
    fn bce_on_exact_labels_is_zero() {
        let y = [1.0, 0.0, 1.0];
        let r = bce_loss(&[1.0, 0.0, 1.0], &y).unwrap();
        assert!(r.loss.abs() <= 1e-9);
    }

    #[test]
    fn perfect_confident_closs_is_tiny() {
        let c = example_circuit();
        let y = [1.0, 0.0, 1.0];
        let r = closs(&c, &[1.0, 0.0, 1.0], &y).unwrap();
        assert!(r.loss.abs() <= 1e-9);
    }

    #[test]
    fn many_superclass_sign_flip() {
        // n superclasses of A, y_A = 0, all superclasses labelled 1, h_A
        // strictly largest: dL/dh_A through the module flips sign at
        // h_A = n / (n + 1).
        let n = 4;
        let mut doc = String::new();
        for i in 1..=n {
            doc.push_str(&format!("A -> P{i}\n"));
        }
        let rs = parse_rules(&doc).unwrap();
        let c = compile(&rs).unwrap();
        let a = rs.classes.index_of("A").unwrap();
        let l = rs.num_classes();
        let mut y = vec![1.0; l];
        y[a] = 0.0;

        let eval = |ha: f64| {
            let mut h = vec![0.1; l];
            h[a] = ha;
            bce_after_cm(&c, &h, &y).unwrap().grad[a]
        };
        let boundary = n as f64 / (n as f64 + 1.0);
        assert!(eval(boundary - 0.05) < 0.0);
        assert!(eval(boundary + 0.05) > 0.0);

        // The constraint loss never asks to raise h_A when y_A = 0.
        let mut h = vec![0.1; l];
        h[a] = 0.3;
        let r = closs(&c, &h, &y).unwrap();
        assert!(r.grad[a] >= 0.0);
    }

    #[test]
    fn gap_trace_reports_near_ties() {
        let rs = parse_rules("A1 -> A\n").unwrap();
        let c = compile(&rs).unwrap();
        let (_, trace) = closs_traced(&c, &[0.3, 0.1], &[0.0, 1.0]).unwrap();
        assert!(trace.min_gap > 0.0);
        // The contradictory closure pair bounds the example circuit's class
        // A2 by 1 - h_A1 twice: an exact tie.
        let c = example_circuit();
        let (_, trace) = closs_traced(&c, &[0.2, 0.3, 0.6], &[1.0, 0.0, 1.0]).unwrap();
        assert!(trace.min_gap <= 1e-9);
    }
}
