//! Intra-stratum transitive closure of rule bodies.
//!
//! Within one stratum, a chain such as `A1, A2 -> A3; A3 -> A` must be
//! collapsed so the final value of `A` can be read off in a single pass:
//! the closure adds `A1, A2 -> A`. Substitution replaces a positive body
//! atom of the current stratum by the body of any original stratum rule
//! with that head. Rules whose head reappears in their positive body are
//! dropped at generation time; rules whose body strictly contains the
//! body of another same-head rule of the original stratum are dropped at
//! the end. Rules with contradictory bodies (`B` and `!B`) are retained:
//! they are what keeps the module from committing constraint violations.

use crate::error::{CoreError, Result};
use crate::graph::Stratification;
use crate::rules::{Rule, RuleSet};
use std::collections::HashSet;

pub const DEFAULT_CLOSURE_CAP: usize = 1_000_000;

/// Compute the closed rule list of stratum `i` (1-based), in canonical
/// order: original rules first (file order), then generated rules in
/// generation order.
pub fn close_stratum(
    rs: &RuleSet,
    strat: &Stratification,
    stratum: usize,
    cap: usize,
) -> Result<Vec<Rule>> {
    let originals: Vec<&Rule> = strat.strata_rules[stratum - 1]
        .iter()
        .map(|&i| &rs.rules[i])
        .collect();

    let mut ordered: Vec<Rule> = Vec::new();
    let mut seen: HashSet<Rule> = HashSet::new();
    for r in &originals {
        if r.body_pos.contains(&r.head) {
            continue;
        }
        if seen.insert((*r).clone()) {
            ordered.push((*r).clone());
        }
    }

    let mut cursor = 0;
    while cursor < ordered.len() {
        let rule = ordered[cursor].clone();
        cursor += 1;
        for &atom in &rule.body_pos {
            if strat.class_stratum[atom] != stratum {
                continue;
            }
            for rsub in &originals {
                if rsub.head != atom {
                    continue;
                }
                let mut pos: Vec<usize> = rule
                    .body_pos
                    .iter()
                    .copied()
                    .filter(|&b| b != atom)
                    .collect();
                pos.extend_from_slice(&rsub.body_pos);
                let mut neg = rule.body_neg.clone();
                neg.extend_from_slice(&rsub.body_neg);
                let derived = Rule::new(rule.head, pos, neg);
                if derived.body_pos.contains(&derived.head) {
                    continue;
                }
                if seen.insert(derived.clone()) {
                    ordered.push(derived);
                    if ordered.len() > cap {
                        return Err(CoreError::ClosureCap { cap });
                    }
                }
            }
        }
    }

    // Subsumption against the original stratum rules only.
    let kept: Vec<Rule> = ordered
        .iter()
        .filter(|r| {
            !originals
                .iter()
                .any(|o| o.head == r.head && o.body_strict_subset_of(r))
        })
        .cloned()
        .collect();
    Ok(kept)
}
