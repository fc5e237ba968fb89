//! Brute-force logic oracles: violation checks, supportedness, minimality,
//! and the stable model of a stratified program. These are the ground
//! truth the compiled circuit is verified against.

use crate::error::Result;
use crate::graph::comp_strata;
use crate::rules::RuleSet;

/// A set of classes over a fixed table, backed by a bitset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassSet {
    len: usize,
    words: Vec<u64>,
}

impl ClassSet {
    pub fn empty(len: usize) -> Self {
        ClassSet {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Self {
        let mut s = Self::empty(len);
        for &i in indices {
            s.insert(i);
        }
        s
    }

    /// Subset of the first `len` classes selected by the low bits of `mask`.
    pub fn from_mask(len: usize, mask: u64) -> Self {
        assert!(len <= 64);
        let mut s = Self::empty(len);
        s.words[0] = mask & if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        s
    }

    /// Classes whose score strictly exceeds `theta`.
    pub fn from_scores(scores: &[f64], theta: f64) -> Self {
        let mut s = Self::empty(scores.len());
        for (i, &v) in scores.iter().enumerate() {
            if v > theta {
                s.insert(i);
            }
        }
        s
    }

    pub fn insert(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_subset_of(&self, other: &ClassSet) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.contains(i))
    }

    pub fn indices(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

fn body_satisfied(rule: &crate::rules::Rule, s: &ClassSet) -> bool {
    rule.body_pos.iter().all(|&b| s.contains(b))
        && rule.body_neg.iter().all(|&b| !s.contains(b))
}

/// Rules violated by a prediction set: body satisfied but head absent.
pub fn check_logical_violation(rs: &RuleSet, predicted: &ClassSet) -> Vec<usize> {
    rs.rules
        .iter()
        .enumerate()
        .filter(|(_, r)| body_satisfied(r, predicted) && !predicted.contains(r.head))
        .map(|(i, _)| i)
        .collect()
}

/// Rules violated in the graded sense: the body value under the scores
/// (min of positive scores and negated-score complements) strictly exceeds
/// the head score. For a hierarchy rule this is exactly the subclass score
/// exceeding the superclass score.
pub fn check_constraint_violation(rs: &RuleSet, scores: &[f64]) -> Vec<usize> {
    rs.rules
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            let mut body = 1.0f64;
            for &b in &r.body_pos {
                body = body.min(scores[b]);
            }
            for &b in &r.body_neg {
                body = body.min(1.0 - scores[b]);
            }
            body > scores[r.head]
        })
        .map(|(i, _)| i)
        .collect()
}

/// Supportedness: every class of `m` is in `base` or headed by a rule
/// whose body `m` satisfies.
pub fn check_supported(rs: &RuleSet, base: &ClassSet, m: &ClassSet) -> bool {
    m.iter().all(|a| {
        base.contains(a)
            || rs
                .rules
                .iter()
                .any(|r| r.head == a && body_satisfied(r, m))
    })
}

/// Minimality: no coherent set strictly between `base` and `m` exists.
/// Exhaustive over the `m \ base` lattice; intended for small class counts.
pub fn check_minimal(rs: &RuleSet, base: &ClassSet, m: &ClassSet) -> bool {
    if !base.is_subset_of(m) {
        return false;
    }
    let free: Vec<usize> = m.iter().filter(|&a| !base.contains(a)).collect();
    assert!(free.len() <= 20, "minimality check is exhaustive");
    let total = 1u64 << free.len();
    for pick in 0..total {
        if pick == total - 1 {
            continue; // the full set is m itself
        }
        let mut candidate = base.clone();
        for (bit, &cls) in free.iter().enumerate() {
            if pick & (1 << bit) != 0 {
                candidate.insert(cls);
            }
        }
        if check_logical_violation(rs, &candidate).is_empty() {
            return false;
        }
    }
    true
}

/// Deterministic coherent closure: repeatedly fire the lowest-index
/// violated rule until none is violated. Terminates within `|classes|`
/// additions and returns a coherent superset of `base`.
pub fn coherent_closure(rs: &RuleSet, base: &ClassSet) -> ClassSet {
    let mut s = base.clone();
    loop {
        let violated = check_logical_violation(rs, &s);
        match violated.first() {
            Some(&idx) => s.insert(rs.rules[idx].head),
            None => return s,
        }
    }
}

/// Stable model of `rules ∪ { -> A : A ∈ base }` for a stratified rule set,
/// by the stratum-wise reduct construction: each stratum's rules are
/// reduced against the model so far (dropping rules whose negated atoms
/// are in it), then the model is closed under the remaining definite rules.
pub fn stable_model(rs: &RuleSet, base: &ClassSet) -> Result<ClassSet> {
    let strat = comp_strata(rs)?;
    let mut model = base.clone();
    for stratum_rules in &strat.strata_rules {
        // Reduct relative to the model of the previous strata. Negated
        // atoms live strictly below this stratum, so membership is final.
        let reduct: Vec<&crate::rules::Rule> = stratum_rules
            .iter()
            .map(|&i| &rs.rules[i])
            .filter(|r| r.body_neg.iter().all(|&b| !model.contains(b)))
            .collect();
        loop {
            let mut grew = false;
            for r in &reduct {
                if !model.contains(r.head) && r.body_pos.iter().all(|&b| model.contains(b)) {
                    model.insert(r.head);
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
    }
    Ok(model)
}

/// Largest per-class residual of the fixpoint equations
/// `m_A = max(h_A, max_r min(bodies under m))` over the original rules.
pub fn fixpoint_residual(rs: &RuleSet, h: &[f64], m: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for a in 0..rs.num_classes() {
        let mut rhs = h[a];
        for r in rs.rules.iter().filter(|r| r.head == a) {
            let mut body = 1.0f64;
            for &b in &r.body_pos {
                body = body.min(m[b]);
            }
            for &b in &r.body_neg {
                body = body.min(1.0 - m[b]);
            }
            rhs = rhs.max(body);
        }
        worst = worst.max((m[a] - rhs).abs());
    }
    worst
}
