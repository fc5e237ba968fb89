//! Forward evaluation of the constraint module: raw class scores in, the
//! minimal coherent extension out.
//!
//! Evaluation walks the strata in order. For stratum `i`, each closed rule
//! gets a body value: the minimum over its positive atoms of the running
//! scores and over its negated atoms of one minus the running scores
//! (standard negation, threshold 0.5). Each class then takes the maximum
//! of its running score and the body values of the rules it heads. All
//! arithmetic is in f64; ties in min/max route to the lowest class/rule
//! index, which matters for delegation and gradient routing.

use crate::circuit::ConstraintCircuit;
use crate::error::{CoreError, Result};

pub fn validate_scores(h: &[f64], expected_len: usize) -> Result<()> {
    if h.len() != expected_len {
        return Err(CoreError::DimensionMismatch {
            expected: expected_len,
            got: h.len(),
        });
    }
    for (i, &v) in h.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) || v.is_nan() {
            return Err(CoreError::InvalidScore { index: i, value: v });
        }
    }
    Ok(())
}

pub fn validate_labels(y: &[f64], expected_len: usize) -> Result<()> {
    if y.len() != expected_len {
        return Err(CoreError::DimensionMismatch {
            expected: expected_len,
            got: y.len(),
        });
    }
    for (i, &v) in y.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(CoreError::InvalidLabel { index: i, value: v });
        }
    }
    Ok(())
}

/// Which body atom fixed a rule's value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum RuleArg {
    /// Empty body: the value is 1 and depends on nothing.
    Empty,
    Pos(usize),
    Neg(usize),
}

/// Which candidate fixed a class value at one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ClassArg {
    Prev,
    Rule(usize),
}

pub(crate) struct CmStratumTape {
    pub rule_choice: Vec<RuleArg>,
    pub class_choice: Vec<ClassArg>,
}

/// Forward recording for reverse-mode gradients through min/max.
pub(crate) struct CmTape {
    pub strata: Vec<CmStratumTape>,
}

/// Per-stratum intermediate values of one evaluation.
#[derive(Debug, Clone)]
pub struct EvalTrace {
    /// `cm_levels[0]` is the input; `cm_levels[i]` the output of stratum i.
    pub cm_levels: Vec<Vec<f64>>,
    /// Body values per stratum, one per closed rule.
    pub body_values: Vec<Vec<f64>>,
}

fn forward_impl(
    circuit: &ConstraintCircuit,
    h: &[f64],
    mut trace: Option<&mut EvalTrace>,
    mut tape: Option<&mut CmTape>,
) -> Vec<f64> {
    let l = circuit.classes.len();
    let mut cm = h.to_vec();
    if let Some(t) = trace.as_deref_mut() {
        t.cm_levels.push(cm.clone());
    }
    for stratum in &circuit.strata {
        let p = stratum.num_rules();
        let mut v = vec![1.0f64; p];
        let mut choices = vec![RuleArg::Empty; p];
        for j in 0..p {
            let mut best = f64::INFINITY;
            let mut arg = RuleArg::Empty;
            let bp = &stratum.body_pos[j];
            let bn = &stratum.body_neg[j];
            for k in 0..l {
                if bp[k] {
                    let val = cm[k];
                    if val < best {
                        best = val;
                        arg = RuleArg::Pos(k);
                    }
                }
            }
            for k in 0..l {
                if bn[k] {
                    let val = 1.0 - cm[k];
                    if val < best {
                        best = val;
                        arg = RuleArg::Neg(k);
                    }
                }
            }
            // An empty body (a fact) evaluates to 1.
            v[j] = if arg == RuleArg::Empty { 1.0 } else { best };
            choices[j] = arg;
        }
        let mut class_choice = vec![ClassArg::Prev; l];
        let mut next = cm.clone();
        for c in 0..l {
            for &j in &stratum.heads[c] {
                if v[j] > next[c] {
                    next[c] = v[j];
                    class_choice[c] = ClassArg::Rule(j);
                }
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.body_values.push(v);
            t.cm_levels.push(next.clone());
        }
        if let Some(t) = tape.as_deref_mut() {
            t.strata.push(CmStratumTape {
                rule_choice: choices,
                class_choice,
            });
        }
        cm = next;
    }
    cm
}

/// Map raw scores to coherent scores through the compiled circuit.
pub fn cm_forward(circuit: &ConstraintCircuit, h: &[f64]) -> Result<Vec<f64>> {
    validate_scores(h, circuit.classes.len())?;
    Ok(forward_impl(circuit, h, None, None))
}

/// As [`cm_forward`], also returning per-stratum intermediates.
pub fn cm_forward_traced(circuit: &ConstraintCircuit, h: &[f64]) -> Result<(Vec<f64>, EvalTrace)> {
    validate_scores(h, circuit.classes.len())?;
    let mut trace = EvalTrace {
        cm_levels: Vec::new(),
        body_values: Vec::new(),
    };
    let cm = forward_impl(circuit, h, Some(&mut trace), None);
    Ok((cm, trace))
}

pub(crate) fn cm_forward_tape(circuit: &ConstraintCircuit, h: &[f64]) -> (Vec<f64>, CmTape) {
    let mut tape = CmTape { strata: Vec::new() };
    let cm = forward_impl(circuit, h, None, Some(&mut tape));
    (cm, tape)
}

/// Pull a gradient on the module output back to the raw scores.
pub(crate) fn cm_backward(circuit: &ConstraintCircuit, tape: &CmTape, d_cm: &[f64]) -> Vec<f64> {
    let l = circuit.classes.len();
    let mut d = d_cm.to_vec();
    for (stratum, st) in circuit.strata.iter().zip(&tape.strata).rev() {
        let mut d_prev = vec![0.0f64; l];
        let mut d_rule = vec![0.0f64; stratum.num_rules()];
        for c in 0..l {
            match st.class_choice[c] {
                ClassArg::Prev => d_prev[c] += d[c],
                ClassArg::Rule(j) => d_rule[j] += d[c],
            }
        }
        for (j, &g) in d_rule.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            match st.rule_choice[j] {
                RuleArg::Empty => {}
                RuleArg::Pos(k) => d_prev[k] += g,
                RuleArg::Neg(k) => d_prev[k] -= g,
            }
        }
        d = d_prev;
    }
    d
}

/// Row-wise evaluation of a batch of score vectors.
pub fn cm_forward_batch(circuit: &ConstraintCircuit, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|r| cm_forward(circuit, r)).collect()
}

/// Hierarchy fast path: each class takes the maximum raw score over its
/// descendant set as given by the mask.
pub fn cm_forward_hmc(mask: &[Vec<bool>], h: &[f64]) -> Result<Vec<f64>> {
    let l = mask.len();
    validate_scores(h, l)?;
    Ok(hmc_forward_impl(mask, h).0)
}

/// Returns (values, argmax class per row) with lowest-index tie routing.
pub(crate) fn hmc_forward_impl(mask: &[Vec<bool>], h: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let l = mask.len();
    let mut out = vec![0.0f64; l];
    let mut arg = vec![0usize; l];
    for a in 0..l {
        let mut best = f64::NEG_INFINITY;
        let mut best_k = a;
        for b in 0..l {
            if mask[a][b] && h[b] > best {
                best = h[b];
                best_k = b;
            }
        }
        out[a] = best;
        arg[a] = best_k;
    }
    (out, arg)
}

/// Threshold the scores: a class is predicted iff its score is strictly
/// greater than `theta`. The stratified semantics are only guaranteed at
/// `theta = 0.5` when non-definite rules are present.
pub fn predict(scores: &[f64], theta: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > theta).collect()
}

/// Fraction of batch rows on which the module delegates the prediction on
/// `class` to one of its proper subclasses: some subclass score exceeds the
/// class's own raw score, so the module output equals the subclass score.
///
/// Requires a hierarchy circuit. A class without proper subclasses has
/// delegation rate 0 by definition.
pub fn delegation_rate(
    circuit: &ConstraintCircuit,
    batch: &[Vec<f64>],
    class: usize,
) -> Result<f64> {
    let mask = circuit.hmc_mask.as_ref().ok_or(CoreError::NotHmc)?;
    let l = circuit.classes.len();
    if class >= l {
        return Err(CoreError::DimensionMismatch {
            expected: l,
            got: class,
        });
    }
    let proper: Vec<usize> = (0..l).filter(|&b| mask[class][b] && b != class).collect();
    if proper.is_empty() || batch.is_empty() {
        return Ok(0.0);
    }
    let mut count = 0usize;
    for row in batch {
        validate_scores(row, l)?;
        let best_sub = proper
            .iter()
            .map(|&b| row[b])
            .fold(f64::NEG_INFINITY, f64::max);
        if best_sub > row[class] {
            count += 1;
        }
    }
    Ok(count as f64 / batch.len() as f64)
}
