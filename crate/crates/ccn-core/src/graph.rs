//! Dependency graph and stratification of a rule set.
//!
//! A rule set is stratified exactly when its dependency graph has no cycle
//! through a negative edge. Strata are computed on the condensation of the
//! graph: each class gets 1 plus the maximum number of negative edges on
//! any path from a root of the condensation to its component, and a
//! stratum collects the rules whose head carries that number. This yields
//! the stratification with the fewest strata, and every class heads rules
//! in exactly one stratum.

use crate::error::{CoreError, Result};
use crate::rules::RuleSet;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Class-level dependency graph: one positive edge per positive body atom,
/// one negative edge per negated body atom, duplicates collapsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    pub num_nodes: usize,
    pub pos_edges: BTreeSet<(usize, usize)>,
    pub neg_edges: BTreeSet<(usize, usize)>,
}

pub fn build_dependency_graph(rs: &RuleSet) -> DependencyGraph {
    let mut pos_edges = BTreeSet::new();
    let mut neg_edges = BTreeSet::new();
    for r in &rs.rules {
        for &b in &r.body_pos {
            pos_edges.insert((b, r.head));
        }
        for &b in &r.body_neg {
            neg_edges.insert((b, r.head));
        }
    }
    DependencyGraph {
        num_nodes: rs.num_classes(),
        pos_edges,
        neg_edges,
    }
}

/// A cycle through at least one negative edge, witnessing non-stratifiedness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeCycle {
    /// Edges in cycle order; `(from, to, negative)`.
    pub edges: Vec<(usize, usize, bool)>,
}

impl NegativeCycle {
    pub fn render(&self, rs: &RuleSet) -> String {
        let mut out = String::new();
        for (i, &(from, _, neg)) in self.edges.iter().enumerate() {
            if i == 0 {
                out.push_str(rs.classes.name(from));
            }
            out.push_str(if neg { " -!-> " } else { " --> " });
            out.push_str(rs.classes.name(self.edges[i].1));
        }
        out
    }
}

/// Tarjan strongly connected components, iterative, deterministic:
/// vertices and neighbors are visited in ascending index order.
/// Returns `comp_of` with components numbered in reverse topological
/// order of discovery (every edge goes from a higher to a lower or equal
/// component id is NOT guaranteed; use `condensation_topo` for ordering).
fn tarjan_scc(n: usize, adj: &[Vec<usize>]) -> (usize, Vec<usize>) {
    #[derive(Clone)]
    struct Frame {
        v: usize,
        edge: usize,
    }
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut comp_of = vec![usize::MAX; n];
    let mut next_index = 0usize;
    let mut num_comps = 0usize;

    for start in 0..n {
        if index[start] != usize::MAX {
            continue;
        }
        let mut call: Vec<Frame> = vec![Frame { v: start, edge: 0 }];
        index[start] = next_index;
        low[start] = next_index;
        next_index += 1;
        stack.push(start);
        on_stack[start] = true;

        while let Some(frame) = call.last_mut() {
            let v = frame.v;
            if frame.edge < adj[v].len() {
                let w = adj[v][frame.edge];
                frame.edge += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push(Frame { v: w, edge: 0 });
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                if low[v] == index[v] {
                    loop {
                        let w = stack.pop().expect("scc stack underflow");
                        on_stack[w] = false;
                        comp_of[w] = num_comps;
                        if w == v {
                            break;
                        }
                    }
                    num_comps += 1;
                }
                call.pop();
                if let Some(parent) = call.last() {
                    let p = parent.v;
                    low[p] = low[p].min(low[v]);
                }
            }
        }
    }
    (num_comps, comp_of)
}

/// Check for a cycle through a negative edge. `None` means stratified.
pub fn check_stratified(g: &DependencyGraph) -> Option<NegativeCycle> {
    let n = g.num_nodes;
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in g.pos_edges.iter().chain(g.neg_edges.iter()) {
        adj[u].push(v);
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let (_, comp_of) = tarjan_scc(n, &adj);

    for &(u, v) in &g.neg_edges {
        if comp_of[u] != comp_of[v] {
            continue;
        }
        // Close the cycle: path v -> u inside the component, then u -!-> v.
        let mut prev = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(v);
        let mut seen = vec![false; n];
        seen[v] = true;
        while let Some(x) = queue.pop_front() {
            if x == u {
                break;
            }
            for &y in &adj[x] {
                if comp_of[y] == comp_of[u] && !seen[y] {
                    seen[y] = true;
                    prev[y] = x;
                    queue.push_back(y);
                }
            }
        }
        let mut path = vec![u];
        let mut cur = u;
        while cur != v {
            cur = prev[cur];
            path.push(cur);
        }
        path.reverse(); // v .. u
        let mut edges = Vec::new();
        for w in path.windows(2) {
            let neg = g.neg_edges.contains(&(w[0], w[1])) && !g.pos_edges.contains(&(w[0], w[1]));
            edges.push((w[0], w[1], neg));
        }
        edges.push((u, v, true));
        return Some(NegativeCycle { edges });
    }
    None
}

/// Partition of classes and rules into strata (1-based numbers).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratification {
    /// Stratum number per class, in `1..=num_strata`.
    pub class_stratum: Vec<usize>,
    /// Rule indices of each stratum, in original rule order.
    pub strata_rules: Vec<Vec<usize>>,
    pub num_strata: usize,
}

impl Stratification {
    pub fn classes_of_stratum(&self, i: usize) -> Vec<usize> {
        (0..self.class_stratum.len())
            .filter(|&c| self.class_stratum[c] == i)
            .collect()
    }
}

/// CompStrata: condensation, negative-edge longest path, rule assignment.
///
/// Roots are condensation nodes with in-degree zero; isolated classes land
/// in stratum 1. Errors with a witness cycle when not stratified.
pub fn comp_strata(rs: &RuleSet) -> Result<Stratification> {
    let g = build_dependency_graph(rs);
    if let Some(cycle) = check_stratified(&g) {
        return Err(CoreError::NotStratified(cycle.render(rs)));
    }
    let n = g.num_nodes;
    if n == 0 {
        return Ok(Stratification {
            class_stratum: vec![],
            strata_rules: vec![rs.rules.iter().enumerate().map(|(i, _)| i).collect()],
            num_strata: 1,
        });
    }

    let mut adj = vec![Vec::new(); n];
    for &(u, v) in g.pos_edges.iter().chain(g.neg_edges.iter()) {
        adj[u].push(v);
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let (num_comps, comp_of) = tarjan_scc(n, &adj);

    // Condensation edges with a "has a negative original edge" flag.
    let mut cond_edges: BTreeSet<(usize, usize, bool)> = BTreeSet::new();
    for &(u, v) in &g.pos_edges {
        if comp_of[u] != comp_of[v] {
            cond_edges.insert((comp_of[u], comp_of[v], false));
        }
    }
    for &(u, v) in &g.neg_edges {
        debug_assert_ne!(comp_of[u], comp_of[v], "negative edge inside a component");
        cond_edges.insert((comp_of[u], comp_of[v], true));
    }

    // Longest path by negative-edge count over the condensation DAG.
    let mut out: Vec<Vec<(usize, bool)>> = vec![Vec::new(); num_comps];
    let mut indeg = vec![0usize; num_comps];
    for &(a, b, neg) in &cond_edges {
        out[a].push((b, neg));
        indeg[b] += 1;
    }
    let mut neg_count = vec![0usize; num_comps];
    let mut queue: std::collections::VecDeque<usize> = (0..num_comps)
        .filter(|&c| indeg[c] == 0)
        .collect();
    let mut remaining = indeg.clone();
    while let Some(c) = queue.pop_front() {
        for &(d, neg) in &out[c] {
            let cand = neg_count[c] + usize::from(neg);
            if cand > neg_count[d] {
                neg_count[d] = cand;
            }
            remaining[d] -= 1;
            if remaining[d] == 0 {
                queue.push_back(d);
            }
        }
    }

    let class_stratum: Vec<usize> = (0..n).map(|c| neg_count[comp_of[c]] + 1).collect();
    let num_strata = class_stratum.iter().copied().max().unwrap_or(1);
    let mut strata_rules = vec![Vec::new(); num_strata];
    for (i, r) in rs.rules.iter().enumerate() {
        strata_rules[class_stratum[r.head] - 1].push(i);
    }
    Ok(Stratification {
        class_stratum,
        strata_rules,
        num_strata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::parse_rules;

    const EXAMPLE_PROGRAM: &str = "A1 -> A\nA2 -> A\nA, !A1 -> A2\nA3 -> A4\n";

    #[test]
    fn dependency_graph_of_example_program() {
        let rs = parse_rules(EXAMPLE_PROGRAM).unwrap();
        let g = build_dependency_graph(&rs);
        let e = |a: &str, b: &str| {
            (
                rs.classes.index_of(a).unwrap(),
                rs.classes.index_of(b).unwrap(),
            )
        };
        let pos: BTreeSet<_> = [e("A1", "A"), e("A2", "A"), e("A", "A2"), e("A3", "A4")]
            .into_iter()
            .collect();
        let neg: BTreeSet<_> = [e("A1", "A2")].into_iter().collect();
        assert_eq!(g.pos_edges, pos);
        assert_eq!(g.neg_edges, neg);
    }

    #[test]
    fn empty_ruleset_gives_empty_graph() {
        let rs = parse_rules("").unwrap();
        let g = build_dependency_graph(&rs);
        assert_eq!(g.num_nodes, 0);
        assert!(g.pos_edges.is_empty() && g.neg_edges.is_empty());
    }

    #[test]
    fn facts_only_gives_nodes_without_edges() {
        let rs = parse_rules("-> A\n-> B\n").unwrap();
        let g = build_dependency_graph(&rs);
        assert_eq!(g.num_nodes, 2);
        assert!(g.pos_edges.is_empty() && g.neg_edges.is_empty());
    }

    #[test]
    fn negation_two_cycle_is_not_stratified() {
        let rs = parse_rules("!A1 -> A2\n!A2 -> A1\n").unwrap();
        let g = build_dependency_graph(&rs);
        let cycle = check_stratified(&g).expect("must find a witness");
        assert!(cycle.edges.iter().any(|&(_, _, neg)| neg));
        assert_eq!(cycle.edges.len(), 2);
        assert!(comp_strata(&rs).is_err());
    }

    #[test]
    fn definite_rules_are_stratified() {
        let rs = parse_rules("A1 -> A\nA -> A1\nA2, A -> A1\n").unwrap();
        let g = build_dependency_graph(&rs);
        assert!(check_stratified(&g).is_none());
    }

    #[test]
    fn example_program_is_stratified() {
        let rs = parse_rules(EXAMPLE_PROGRAM).unwrap();
        assert!(check_stratified(&build_dependency_graph(&rs)).is_none());
    }

    #[test]
    fn comp_strata_on_example_program() {
        let rs = parse_rules(EXAMPLE_PROGRAM).unwrap();
        let strat = comp_strata(&rs).unwrap();
        assert_eq!(strat.num_strata, 2);
        let stratum_of = |name: &str| strat.class_stratum[rs.classes.index_of(name).unwrap()];
        assert_eq!(stratum_of("A1"), 1);
        assert_eq!(stratum_of("A3"), 1);
        assert_eq!(stratum_of("A4"), 1);
        assert_eq!(stratum_of("A"), 2);
        assert_eq!(stratum_of("A2"), 2);
        // Stratum 1 holds exactly A3 -> A4 (rule index 3).
        assert_eq!(strat.strata_rules[0], vec![3]);
        assert_eq!(strat.strata_rules[1], vec![0, 1, 2]);
    }

    #[test]
    fn definite_rules_form_single_stratum() {
        let rs = parse_rules("A1 -> A\nA2, A3 -> A\nA -> A4\n").unwrap();
        let strat = comp_strata(&rs).unwrap();
        assert_eq!(strat.num_strata, 1);
        assert_eq!(strat.strata_rules[0].len(), 3);
    }

    #[test]
    fn isolated_classes_get_stratum_one() {
        let rs = parse_rules("class: Z\n!A -> B\n").unwrap();
        let strat = comp_strata(&rs).unwrap();
        assert_eq!(strat.class_stratum[rs.classes.index_of("Z").unwrap()], 1);
        assert_eq!(strat.class_stratum[rs.classes.index_of("A").unwrap()], 1);
        assert_eq!(strat.class_stratum[rs.classes.index_of("B").unwrap()], 2);
    }
}
