//! Classes, normal rules, and the textual rule language.
//!
//! A rule file holds one rule per line in the form `B1, B2, !B3 -> H`,
//! where `!` negates a body atom and `-> H` alone states a fact. `#`
//! starts a comment and `class: NAME` declares a class without using it
//! in a rule. Class indices are assigned in first-appearance order and
//! stay fixed for the lifetime of a compiled problem.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

/// Ordered table of unique class identifiers with dense indices `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

fn validate_identifier(name: &str) -> std::result::Result<(), String> {
    if name.is_empty() {
        return Err("empty class identifier".into());
    }
    if name.chars().any(|c| c.is_whitespace()) {
        return Err(format!("class identifier `{name}` contains whitespace"));
    }
    for bad in [',', '!', '#'] {
        if name.contains(bad) {
            return Err(format!("class identifier `{name}` contains `{bad}`"));
        }
    }
    if name.contains("->") {
        return Err(format!("class identifier `{name}` contains `->`"));
    }
    Ok(())
}

impl ClassTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a table from names in order, validating each identifier.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut t = Self::new();
        for n in names {
            t.get_or_insert(n.as_ref()).map_err(|msg| CoreError::Parse {
                line: 0,
                col: 0,
                msg,
            })?;
        }
        Ok(t)
    }

    /// Index of `name`, inserting it at the end if unseen.
    pub fn get_or_insert(&mut self, name: &str) -> std::result::Result<usize, String> {
        if let Some(&i) = self.index.get(name) {
            return Ok(i);
        }
        validate_identifier(name)?;
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        Ok(i)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Rebuild the name→index map (needed after deserialization).
    pub fn rebuild_index(&mut self) {
        self.index = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
    }
}

/// A normal rule `body_pos, !body_neg -> head`. Body sets are kept sorted.
///
/// Parser-accepted rules have disjoint positive and negative bodies; the
/// stratum closure may generate rules where they overlap.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rule {
    pub head: usize,
    pub body_pos: Vec<usize>,
    pub body_neg: Vec<usize>,
}

impl Rule {
    pub fn new(head: usize, mut body_pos: Vec<usize>, mut body_neg: Vec<usize>) -> Self {
        body_pos.sort_unstable();
        body_pos.dedup();
        body_neg.sort_unstable();
        body_neg.dedup();
        Rule {
            head,
            body_pos,
            body_neg,
        }
    }

    pub fn fact(head: usize) -> Self {
        Rule::new(head, vec![], vec![])
    }

    pub fn is_fact(&self) -> bool {
        self.body_pos.is_empty() && self.body_neg.is_empty()
    }

    pub fn is_definite(&self) -> bool {
        self.body_neg.is_empty()
    }

    /// True when some atom occurs both positively and negatively.
    pub fn has_contradictory_body(&self) -> bool {
        let mut i = 0;
        let mut j = 0;
        while i < self.body_pos.len() && j < self.body_neg.len() {
            match self.body_pos[i].cmp(&self.body_neg[j]) {
                std::cmp::Ordering::Equal => return true,
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        false
    }

    /// `body(self) ⊂ body(other)` as literal sets (strict subset).
    pub fn body_strict_subset_of(&self, other: &Rule) -> bool {
        let sub = |a: &[usize], b: &[usize]| a.iter().all(|x| b.binary_search(x).is_ok());
        sub(&self.body_pos, &other.body_pos)
            && sub(&self.body_neg, &other.body_neg)
            && (self.body_pos.len() + self.body_neg.len())
                < (other.body_pos.len() + other.body_neg.len())
    }

    pub fn display<'a>(&'a self, classes: &'a ClassTable) -> RuleDisplay<'a> {
        RuleDisplay {
            rule: self,
            classes,
        }
    }
}

pub struct RuleDisplay<'a> {
    rule: &'a Rule,
    classes: &'a ClassTable,
}

impl fmt::Display for RuleDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for &b in &self.rule.body_pos {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "{}", self.classes.name(b))?;
            first = false;
        }
        for &b in &self.rule.body_neg {
            if !first {
                write!(f, ", ")?;
            }
            write!(f, "!{}", self.classes.name(b))?;
            first = false;
        }
        if !first {
            write!(f, " ")?;
        }
        write!(f, "-> {}", self.classes.name(self.rule.head))
    }
}

/// A class table plus an ordered list of rules over it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub classes: ClassTable,
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// True when every rule is definite with exactly one body atom
    /// (the hierarchy fragment of the language).
    pub fn is_hierarchy_shaped(&self) -> bool {
        self.rules
            .iter()
            .all(|r| r.body_neg.is_empty() && r.body_pos.len() == 1)
    }
}

fn parse_err(line: usize, col: usize, msg: impl Into<String>) -> CoreError {
    CoreError::Parse {
        line,
        col,
        msg: msg.into(),
    }
}

/// Column (1-based) of `token` inside `line`, best effort.
fn col_of(line: &str, token: &str) -> usize {
    line.find(token).map(|p| p + 1).unwrap_or(1)
}

/// Parse a rule document. Classes are indexed in first-appearance order;
/// explicit `class:` declarations count as appearances.
pub fn parse_rules(text: &str) -> Result<RuleSet> {
    let mut classes = ClassTable::new();
    let mut rules: Vec<Rule> = Vec::new();
    let mut seen: HashMap<Rule, usize> = HashMap::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }

        if let Some(rest) = trimmed.strip_prefix("class:") {
            let name = rest.trim();
            classes
                .get_or_insert(name)
                .map_err(|msg| parse_err(lineno, col_of(raw, "class:"), msg))?;
            continue;
        }

        let arrow = trimmed
            .find("->")
            .ok_or_else(|| parse_err(lineno, 1, "expected `->` in rule"))?;
        let (body_str, head_str) = trimmed.split_at(arrow);
        let head_str = head_str[2..].trim();
        if head_str.is_empty() {
            return Err(parse_err(lineno, col_of(raw, "->"), "missing rule head"));
        }
        if head_str.contains(',') {
            return Err(parse_err(
                lineno,
                col_of(raw, head_str),
                "rule head must be a single class",
            ));
        }

        // Body atoms are registered before the head: class indices follow
        // first appearance in the document text.
        let mut body_pos: Vec<usize> = Vec::new();
        let mut body_neg: Vec<usize> = Vec::new();
        let body_str = body_str.trim();
        if !body_str.is_empty() {
            for item in body_str.split(',') {
                let item = item.trim();
                if item.is_empty() {
                    return Err(parse_err(lineno, col_of(raw, ","), "empty body atom"));
                }
                let (negated, name) = match item.strip_prefix('!') {
                    Some(rest) => (true, rest.trim()),
                    None => (false, item),
                };
                let idx = classes
                    .get_or_insert(name)
                    .map_err(|msg| parse_err(lineno, col_of(raw, name), msg))?;
                let bucket = if negated { &mut body_neg } else { &mut body_pos };
                if bucket.contains(&idx) {
                    return Err(parse_err(
                        lineno,
                        col_of(raw, name),
                        format!("duplicate atom `{name}` in rule body"),
                    ));
                }
                bucket.push(idx);
            }
        }
        for &p in &body_pos {
            if body_neg.contains(&p) {
                return Err(parse_err(
                    lineno,
                    col_of(raw, classes.name(p)),
                    format!(
                        "atom `{}` occurs both positively and negatively",
                        classes.name(p)
                    ),
                ));
            }
        }

        let head = classes
            .get_or_insert(head_str)
            .map_err(|msg| parse_err(lineno, col_of(raw, head_str), msg))?;
        let rule = Rule::new(head, body_pos, body_neg);
        if let Some(prev) = seen.get(&rule) {
            return Err(parse_err(
                lineno,
                1,
                format!("duplicate rule (first stated on line {prev})"),
            ));
        }
        seen.insert(rule.clone(), lineno);
        rules.push(rule);
    }

    Ok(RuleSet { classes, rules })
}

/// Render a rule set such that `parse_rules(serialize_rules(rs)) == rs`.
///
/// Every class is declared explicitly so the first-appearance order of the
/// round trip matches the table order even for classes no rule mentions.
pub fn serialize_rules(rs: &RuleSet) -> String {
    let mut out = String::new();
    for name in rs.classes.names() {
        out.push_str("class: ");
        out.push_str(name);
        out.push('\n');
    }
    for rule in &rs.rules {
        out.push_str(&rule.display(&rs.classes).to_string());
        out.push('\n');
    }
    out
}

/// Build the rule set of a subclass hierarchy: one definite single-atom
/// rule `sub -> sup` per edge. Rejects cyclic hierarchies.
pub fn hierarchy_to_rules<S: AsRef<str>>(edges: &[(S, S)]) -> Result<RuleSet> {
    let mut classes = ClassTable::new();
    let mut rules = Vec::new();
    let mut seen: HashMap<Rule, ()> = HashMap::new();
    for (sub, sup) in edges {
        let s = classes
            .get_or_insert(sub.as_ref())
            .map_err(|msg| parse_err(0, 0, msg))?;
        let p = classes
            .get_or_insert(sup.as_ref())
            .map_err(|msg| parse_err(0, 0, msg))?;
        let rule = Rule::new(p, vec![s], vec![]);
        if seen.insert(rule.clone(), ()).is_none() {
            rules.push(rule);
        }
    }
    let rs = RuleSet { classes, rules };
    if let Some(cycle) = hierarchy_cycle(&rs) {
        return Err(CoreError::HierarchyCycle(cycle));
    }
    Ok(rs)
}

/// Parse a hierarchy file: one `CHILD < PARENT` pair per line, `#` comments.
pub fn parse_hierarchy(text: &str) -> Result<RuleSet> {
    let mut edges: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.splitn(2, '<');
        let child = parts.next().unwrap_or("").trim();
        let parent = parts
            .next()
            .ok_or_else(|| parse_err(lineno, 1, "expected `CHILD < PARENT`"))?
            .trim();
        if child.is_empty() || parent.is_empty() || parent.contains('<') {
            return Err(parse_err(lineno, 1, "expected `CHILD < PARENT`"));
        }
        edges.push((child.to_string(), parent.to_string()));
    }
    hierarchy_to_rules(&edges)
}

/// Find a cycle in the subclass graph, rendered as `A -> B -> A`.
fn hierarchy_cycle(rs: &RuleSet) -> Option<String> {
    let n = rs.num_classes();
    let mut adj = vec![Vec::new(); n];
    for r in &rs.rules {
        adj[r.body_pos[0]].push(r.head);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut stack: Vec<usize> = Vec::new();

    fn dfs(
        v: usize,
        adj: &[Vec<usize>],
        state: &mut [u8],
        stack: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        state[v] = 1;
        stack.push(v);
        for &w in &adj[v] {
            if state[w] == 1 {
                let start = stack.iter().position(|&x| x == w).unwrap();
                let mut cycle = stack[start..].to_vec();
                cycle.push(w);
                return Some(cycle);
            }
            if state[w] == 0 {
                if let Some(c) = dfs(w, adj, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[v] = 2;
        None
    }

    for v in 0..n {
        if state[v] == 0 {
            if let Some(cycle) = dfs(v, &adj, &mut state, &mut stack) {
                let names: Vec<&str> = cycle.iter().map(|&c| rs.classes.name(c)).collect();
                return Some(names.join(" -> "));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(rs: &RuleSet, name: &str) -> usize {
        rs.classes.index_of(name).unwrap()
    }

    #[test]
    fn parses_definite_rule() {
        let rs = parse_rules("A1, A2 -> A").unwrap();
        assert_eq!(rs.rules.len(), 1);
        let r = &rs.rules[0];
        assert_eq!(r.head, idx(&rs, "A"));
        assert_eq!(r.body_pos, vec![idx(&rs, "A1"), idx(&rs, "A2")]);
        assert!(r.body_neg.is_empty());
    }

    #[test]
    fn parses_negated_rule() {
        let rs = parse_rules("A, !A1 -> A2").unwrap();
        let r = &rs.rules[0];
        assert_eq!(r.head, idx(&rs, "A2"));
        assert_eq!(r.body_pos, vec![idx(&rs, "A")]);
        assert_eq!(r.body_neg, vec![idx(&rs, "A1")]);
    }

    #[test]
    fn parses_fact() {
        let rs = parse_rules("-> A").unwrap();
        assert!(rs.rules[0].is_fact());
        assert_eq!(rs.rules[0].head, idx(&rs, "A"));
    }

    #[test]
    fn comments_blank_lines_and_declarations() {
        let rs = parse_rules("# header\n\nclass: Z\nA1 -> A # trailing\n").unwrap();
        assert_eq!(rs.classes.names(), &["Z", "A1", "A"]);
        assert_eq!(rs.rules.len(), 1);
    }

    #[test]
    fn rejects_duplicate_atom() {
        let err = parse_rules("A1, A1 -> A").unwrap_err();
        match err {
            CoreError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_atom_in_both_polarities() {
        assert!(parse_rules("A1, !A1 -> A").is_err());
    }

    #[test]
    fn rejects_duplicate_rule() {
        let err = parse_rules("A1 -> A\nA1 -> A").unwrap_err();
        match err {
            CoreError::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("duplicate rule"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_identifier() {
        assert!(parse_rules("A!B -> C").is_err());
        assert!(parse_rules("class: ").is_err());
    }

    #[test]
    fn hierarchy_edge_becomes_rule() {
        let rs = hierarchy_to_rules(&[("stomach", "gastrointestinalSystem")]).unwrap();
        assert_eq!(rs.rules.len(), 1);
        let r = &rs.rules[0];
        assert_eq!(r.body_pos, vec![idx(&rs, "stomach")]);
        assert_eq!(r.head, idx(&rs, "gastrointestinalSystem"));
    }

    #[test]
    fn empty_hierarchy_is_empty_ruleset() {
        let rs = hierarchy_to_rules::<&str>(&[]).unwrap();
        assert!(rs.rules.is_empty());
        assert_eq!(rs.num_classes(), 0);
    }

    #[test]
    fn hierarchy_two_cycle_rejected() {
        let err = hierarchy_to_rules(&[("A1", "A"), ("A", "A1")]).unwrap_err();
        assert!(matches!(err, CoreError::HierarchyCycle(_)));
    }

    #[test]
    fn serializes_example_program_in_canonical_form() {
        let rs = parse_rules("A1 -> A\nA2 -> A\nA, !A1 -> A2\nA3 -> A4\n").unwrap();
        let doc = serialize_rules(&rs);
        let rules: Vec<&str> = doc
            .lines()
            .filter(|l| !l.starts_with("class:"))
            .collect();
        assert_eq!(
            rules,
            vec!["A1 -> A", "A2 -> A", "A, !A1 -> A2", "A3 -> A4"]
        );
        assert_eq!(parse_rules(&doc).unwrap(), rs);
    }

    #[test]
    fn serializes_empty_ruleset_as_declarations() {
        let rs = parse_rules("class: A\nclass: B\n").unwrap();
        let doc = serialize_rules(&rs);
        assert_eq!(doc, "class: A\nclass: B\n");
        assert_eq!(parse_rules(&doc).unwrap(), rs);
    }

    #[test]
    fn hierarchy_file_format() {
        let rs = parse_hierarchy("# taxonomy\nstomach < gastrointestinalSystem\n").unwrap();
        assert_eq!(rs.rules.len(), 1);
        assert!(parse_hierarchy("a < b < c").is_err());
    }
}
