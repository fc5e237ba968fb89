//! Compiled constraint circuits: per-stratum body/head incidence matrices
//! ready for batched min/max evaluation.

use crate::closure::{close_stratum, DEFAULT_CLOSURE_CAP};
use crate::error::Result;
use crate::graph::{comp_strata, Stratification};
use crate::rules::{ClassTable, Rule, RuleSet};
use serde::{Deserialize, Serialize};

/// One compiled stratum: the closed rules and their incidence matrices.
///
/// Row `j` of `body_pos`/`body_neg` is the indicator of the j-th rule's
/// positive/negative body over the class axis; `heads[c]` lists the rules
/// headed by class `c` (the non-zeros of the head incidence matrix row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumCircuit {
    pub rules: Vec<Rule>,
    pub body_pos: Vec<Vec<bool>>,
    pub body_neg: Vec<Vec<bool>>,
    pub heads: Vec<Vec<usize>>,
    pub rule_head: Vec<usize>,
}

impl StratumCircuit {
    fn from_rules(rules: Vec<Rule>, num_classes: usize) -> Self {
        let p = rules.len();
        let mut body_pos = vec![vec![false; num_classes]; p];
        let mut body_neg = vec![vec![false; num_classes]; p];
        let mut heads = vec![Vec::new(); num_classes];
        let mut rule_head = Vec::with_capacity(p);
        for (j, r) in rules.iter().enumerate() {
            for &b in &r.body_pos {
                body_pos[j][b] = true;
            }
            for &b in &r.body_neg {
                body_neg[j][b] = true;
            }
            heads[r.head].push(j);
            rule_head.push(r.head);
        }
        StratumCircuit {
            rules,
            body_pos,
            body_neg,
            heads,
            rule_head,
        }
    }

    pub fn num_rules(&self) -> usize {
        self.rules.len()
    }
}

/// A compiled rule set: strata in evaluation order plus, for hierarchy
/// inputs, the descendant mask `M` with `M[a][b] = true` when `b` is a
/// subclass of `a` (path of length >= 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCircuit {
    pub classes: ClassTable,
    pub stratification: Stratification,
    pub strata: Vec<StratumCircuit>,
    pub hmc_mask: Option<Vec<Vec<bool>>>,
    /// True when some rule has a negated body atom; threshold semantics
    /// are only guaranteed at 0.5 in that case.
    pub has_nondefinite: bool,
}

pub const CIRCUIT_FORMAT_VERSION: u32 = 1;

/// Versioned on-disk form of a circuit.
#[derive(Debug, Serialize, Deserialize)]
pub struct CircuitFile {
    pub version: u32,
    pub circuit: ConstraintCircuit,
}

#[derive(Debug, Clone, Copy)]
pub struct CompileOptions {
    pub closure_cap: usize,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            closure_cap: DEFAULT_CLOSURE_CAP,
        }
    }
}

pub fn compile(rs: &RuleSet) -> Result<ConstraintCircuit> {
    compile_with(rs, CompileOptions::default())
}

pub fn compile_with(rs: &RuleSet, opts: CompileOptions) -> Result<ConstraintCircuit> {
    let strat = comp_strata(rs)?;
    let l = rs.num_classes();
    let mut strata = Vec::with_capacity(strat.num_strata);
    for i in 1..=strat.num_strata {
        let closed = close_stratum(rs, &strat, i, opts.closure_cap)?;
        strata.push(StratumCircuit::from_rules(closed, l));
    }
    let hmc_mask = if rs.is_hierarchy_shaped() && !has_subclass_cycle(rs) {
        Some(descendant_mask(rs))
    } else {
        None
    };
    let has_nondefinite = rs.rules.iter().any(|r| !r.is_definite());
    Ok(ConstraintCircuit {
        classes: rs.classes.clone(),
        stratification: strat,
        strata,
        hmc_mask,
        has_nondefinite,
    })
}

fn has_subclass_cycle(rs: &RuleSet) -> bool {
    // Hierarchy-shaped rule sets only: edges sub -> sup.
    let n = rs.num_classes();
    let mut adj = vec![Vec::new(); n];
    for r in &rs.rules {
        adj[r.body_pos[0]].push(r.head);
    }
    let mut state = vec![0u8; n];
    let mut stack = Vec::new();
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        stack.push((start, 0usize));
        state[start] = 1;
        while let Some(&mut (v, ref mut e)) = stack.last_mut() {
            if *e < adj[v].len() {
                let w = adj[v][*e];
                *e += 1;
                if state[w] == 1 {
                    return true;
                }
                if state[w] == 0 {
                    state[w] = 1;
                    stack.push((w, 0));
                }
            } else {
                state[v] = 2;
                stack.pop();
            }
        }
    }
    false
}

/// Reflexive–transitive descendant mask of a hierarchy rule set.
pub fn descendant_mask(rs: &RuleSet) -> Vec<Vec<bool>> {
    let n = rs.num_classes();
    let mut up = vec![Vec::new(); n]; // sub -> list of direct superclasses
    for r in &rs.rules {
        up[r.body_pos[0]].push(r.head);
    }
    let mut mask = vec![vec![false; n]; n];
    for sub in 0..n {
        let mut stack = vec![sub];
        while let Some(v) = stack.pop() {
            if mask[v][sub] {
                continue;
            }
            mask[v][sub] = true;
            for &sup in &up[v] {
                stack.push(sup);
            }
        }
    }
    mask
}

/// Read the rules of each stratum back out of the incidence matrices.
/// Used to check that compilation is faithful to the closed rule sets.
pub fn decompile(circuit: &ConstraintCircuit) -> Vec<Vec<Rule>> {
    circuit
        .strata
        .iter()
        .map(|s| {
            (0..s.num_rules())
                .map(|j| {
                    let pos = (0..circuit.classes.len())
                        .filter(|&k| s.body_pos[j][k])
                        .collect();
                    let neg = (0..circuit.classes.len())
                        .filter(|&k| s.body_neg[j][k])
                        .collect();
                    Rule::new(s.rule_head[j], pos, neg)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::parse_rules;

    const EXAMPLE_PROGRAM: &str = "A1 -> A\nA2 -> A\nA, !A1 -> A2\n";

    #[test]
    fn example_matrices_are_exact() {
        // Class order (A1, A2, A) as in the worked matrix example.
        let rs = parse_rules("class: A1\nclass: A2\nclass: A\nA1 -> A\nA2 -> A\nA, !A1 -> A2\n")
            .unwrap();
        let c = compile(&rs).unwrap();
        assert_eq!(c.stratification.num_strata, 2);
        assert_eq!(c.strata[0].num_rules(), 0);
        let s2 = &c.strata[1];
        assert_eq!(s2.num_rules(), 4);
        let bp: Vec<Vec<bool>> = vec![
            vec![true, false, false],
            vec![false, true, false],
            vec![false, false, true],
            vec![true, false, false],
        ];
        let bn: Vec<Vec<bool>> = vec![
            vec![false, false, false],
            vec![false, false, false],
            vec![true, false, false],
            vec![true, false, false],
        ];
        assert_eq!(s2.body_pos, bp);
        assert_eq!(s2.body_neg, bn);
        // Head incidence: A1 heads nothing, A2 heads rules 2 and 3, A rules 0 and 1.
        assert_eq!(s2.heads[0], Vec::<usize>::new());
        assert_eq!(s2.heads[1], vec![2, 3]);
        assert_eq!(s2.heads[2], vec![0, 1]);
    }

    #[test]
    fn empty_ruleset_compiles_to_identity_circuit() {
        let rs = parse_rules("class: A\nclass: B\n").unwrap();
        let c = compile(&rs).unwrap();
        assert_eq!(c.strata.len(), 1);
        assert_eq!(c.strata[0].num_rules(), 0);
    }

    #[test]
    fn hierarchy_input_emits_descendant_mask() {
        let rs = parse_rules("A1 -> A\nA2 -> A1\n").unwrap();
        let c = compile(&rs).unwrap();
        let m = c.hmc_mask.as_ref().expect("hierarchy must carry a mask");
        let i = |n: &str| rs.classes.index_of(n).unwrap();
        // Descendants of A: A, A1, A2. Of A1: A1, A2. Of A2: A2.
        assert!(m[i("A")][i("A")] && m[i("A")][i("A1")] && m[i("A")][i("A2")]);
        assert!(!m[i("A1")][i("A")] && m[i("A1")][i("A1")] && m[i("A1")][i("A2")]);
        assert!(m[i("A2")][i("A2")] && !m[i("A2")][i("A1")]);
    }

    #[test]
    fn nonhierarchy_input_has_no_mask() {
        let rs = parse_rules(EXAMPLE_PROGRAM).unwrap();
        let c = compile(&rs).unwrap();
        assert!(c.hmc_mask.is_none());
        assert!(c.has_nondefinite);
    }

    #[test]
    fn cyclic_definite_single_atom_rules_have_no_mask() {
        let rs = parse_rules("A -> B\nB -> A\n").unwrap();
        let c = compile(&rs).unwrap();
        assert!(c.hmc_mask.is_none());
    }

    #[test]
    fn decompile_matches_closed_rules() {
        let rs = parse_rules(EXAMPLE_PROGRAM).unwrap();
        let c = compile(&rs).unwrap();
        let back = decompile(&c);
        for (s, rules) in c.strata.iter().zip(&back) {
            assert_eq!(&s.rules, rules);
        }
    }

    #[test]
    fn heads_live_in_single_stratum() {
        let rs = parse_rules("A1 -> A\nA2 -> A\nA, !A1 -> A2\nA3 -> A4\n").unwrap();
        let c = compile(&rs).unwrap();
        let mut seen = vec![None; rs.num_classes()];
        for (i, s) in c.strata.iter().enumerate() {
            for r in &s.rules {
                if let Some(prev) = seen[r.head] {
                    assert_eq!(prev, i, "class heads rules in two strata");
                }
                seen[r.head] = Some(i);
            }
        }
    }
}
