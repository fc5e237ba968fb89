//! Synthetic rectangle worlds: uniform points in the unit square labelled
//! by rectangle membership expressions, the material of the synthetic
//! experiments.

use crate::dataset::TabularDataset;
use crate::error::{CoreError, Result};
use crate::rules::{parse_rules, RuleSet};
use crate::semantics::{coherent_closure, ClassSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { x0, y0, x1, y1 }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }
}

/// A class region: the union of `include` rectangles minus the union of
/// `exclude` rectangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub include: Vec<usize>,
    pub exclude: Vec<usize>,
}

impl Membership {
    pub fn union(include: Vec<usize>) -> Self {
        Membership {
            include,
            exclude: vec![],
        }
    }

    pub fn difference(include: Vec<usize>, exclude: Vec<usize>) -> Self {
        Membership { include, exclude }
    }

    fn holds(&self, rects: &[Rect], x: f64, y: f64) -> bool {
        self.include.iter().any(|&i| rects[i].contains(x, y))
            && !self.exclude.iter().any(|&i| rects[i].contains(x, y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangleWorld {
    pub rects: Vec<Rect>,
    /// Class name and region, in class-table order.
    pub classes: Vec<(String, Membership)>,
    pub n_samples: usize,
    pub seed: u64,
}

/// Sample the world: uniform points, membership labels, first half train,
/// second half test.
pub fn gen_rectangles(world: &RectangleWorld) -> Result<TabularDataset> {
    gen_with_rules(world, None)
}

/// As [`gen_rectangles`], but close each label vector under the rules so
/// the generated data are coherent by construction.
pub fn gen_with_rules(world: &RectangleWorld, rules: Option<&RuleSet>) -> Result<TabularDataset> {
    for (i, r) in world.rects.iter().enumerate() {
        if r.area() <= 0.0 {
            return Err(CoreError::DegenerateRectangle { index: i });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(world.seed);
    let n = world.n_samples;
    let l = world.classes.len();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.gen::<f64>();
        let y = rng.gen::<f64>();
        let mut row = vec![0.0f64; l];
        for (k, (_, membership)) in world.classes.iter().enumerate() {
            if membership.holds(&world.rects, x, y) {
                row[k] = 1.0;
            }
        }
        if let Some(rs) = rules {
            let base = ClassSet::from_scores(&row, 0.5);
            let closed = coherent_closure(rs, &base);
            for k in closed.iter() {
                row[k] = 1.0;
            }
        }
        features.push(vec![x, y]);
        labels.push(row);
    }
    let half = n / 2;
    let classes =
        crate::rules::ClassTable::from_names(&world.classes.iter().map(|c| c.0.clone()).collect::<Vec<_>>())?;
    Ok(TabularDataset {
        feature_names: vec!["x".into(), "y".into()],
        features,
        labels,
        train_idx: (0..half).collect(),
        val_idx: vec![],
        test_idx: (half..n).collect(),
        classes,
    })
}

/// Two-class hierarchy world: `A1 = R1`, `A = R1 ∪ R2`, constraint
/// `A1 -> A`.
pub fn basic_hmc_world(r1: Rect, r2: Rect, n_samples: usize, seed: u64) -> RectangleWorld {
    RectangleWorld {
        rects: vec![r1, r2],
        classes: vec![
            ("A1".into(), Membership::union(vec![0])),
            ("A".into(), Membership::union(vec![0, 1])),
        ],
        n_samples,
        seed,
    }
}

pub fn basic_hmc_rules() -> RuleSet {
    parse_rules("class: A1\nclass: A\nA1 -> A\n").expect("static rules")
}

/// Three-class world: `A = R1 ∪ R2`, `A1 = R1`, `A2 = R2 \ R1`, with the
/// constraints `A1 -> A; A2 -> A; A, !A1 -> A2`.
pub fn basic_lcmc_world(r1: Rect, r2: Rect, n_samples: usize, seed: u64) -> RectangleWorld {
    RectangleWorld {
        rects: vec![r1, r2],
        classes: vec![
            ("A1".into(), Membership::union(vec![0])),
            ("A2".into(), Membership::difference(vec![1], vec![0])),
            ("A".into(), Membership::union(vec![0, 1])),
        ],
        n_samples,
        seed,
    }
}

pub fn basic_lcmc_rules() -> RuleSet {
    parse_rules("class: A1\nclass: A2\nclass: A\nA1 -> A\nA2 -> A\nA, !A1 -> A2\n")
        .expect("static rules")
}

/// Nine rectangles on a 3x3 grid with margins. Classes A1..A9; A5 is an
/// ancestor of every class and A3 a descendant of every class, so points
/// in R3 carry all nine labels and any labelled point carries A5.
pub fn nine_rect_world(n_samples: usize, seed: u64) -> RectangleWorld {
    let mut rects = Vec::with_capacity(9);
    // Cells of width 0.26 with margins 0.06 and gaps 0.05.
    let offsets = [0.06, 0.37, 0.68];
    for row in 0..3 {
        for col in 0..3 {
            let x0 = offsets[col];
            let y0 = offsets[2 - row];
            rects.push(Rect::new(x0, y0, x0 + 0.26, y0 + 0.26));
        }
    }
    let classes = (1..=9)
        .map(|i| (format!("A{i}"), Membership::union(vec![i - 1])))
        .collect();
    RectangleWorld {
        rects,
        classes,
        n_samples,
        seed,
    }
}

pub fn nine_rect_rules() -> RuleSet {
    let mut doc = String::new();
    for i in 1..=9 {
        doc.push_str(&format!("class: A{i}\n"));
    }
    for i in 1..=9 {
        if i != 5 {
            doc.push_str(&format!("A{i} -> A5\n"));
        }
    }
    for j in 1..=9 {
        if j != 3 && j != 5 {
            doc.push_str(&format!("A3 -> A{j}\n"));
        }
    }
    parse_rules(&doc).expect("static rules")
}

/// The nine-rectangle dataset with hierarchy-closed labels.
pub fn gen_nine_rect(seed: u64) -> Result<(TabularDataset, RuleSet)> {
    let world = nine_rect_world(5000, seed);
    let rules = nine_rect_rules();
    let data = gen_with_rules(&world, Some(&rules))?;
    Ok((data, rules))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::check_logical_violation;

    #[test]
    fn hmc_world_labels_respect_the_hierarchy() {
        let world = basic_hmc_world(
            Rect::new(0.1, 0.1, 0.3, 0.3),
            Rect::new(0.5, 0.5, 0.9, 0.9),
            500,
            1,
        );
        let data = gen_rectangles(&world).unwrap();
        let rules = basic_hmc_rules();
        for row in &data.labels {
            let set = ClassSet::from_scores(row, 0.5);
            assert!(check_logical_violation(&rules, &set).is_empty());
        }
    }

    #[test]
    fn lcmc_world_labels_satisfy_all_three_constraints() {
        let world = basic_lcmc_world(
            Rect::new(0.2, 0.2, 0.5, 0.5),
            Rect::new(0.4, 0.4, 0.8, 0.8),
            800,
            2,
        );
        let data = gen_rectangles(&world).unwrap();
        let rules = basic_lcmc_rules();
        for row in &data.labels {
            let set = ClassSet::from_scores(row, 0.5);
            assert!(check_logical_violation(&rules, &set).is_empty());
        }
    }

    #[test]
    fn points_outside_every_rectangle_have_empty_labels() {
        let world = basic_hmc_world(
            Rect::new(0.4, 0.4, 0.45, 0.45),
            Rect::new(0.5, 0.5, 0.55, 0.55),
            2000,
            3,
        );
        let data = gen_rectangles(&world).unwrap();
        assert!(data
            .labels
            .iter()
            .any(|row| row.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn degenerate_rectangle_is_rejected() {
        let world = basic_hmc_world(
            Rect::new(0.4, 0.4, 0.4, 0.45),
            Rect::new(0.5, 0.5, 0.55, 0.55),
            10,
            3,
        );
        assert!(matches!(
            gen_rectangles(&world),
            Err(CoreError::DegenerateRectangle { index: 0 })
        ));
    }

    #[test]
    fn nine_rect_labels_are_coherent_and_follow_the_grid() {
        let (data, rules) = gen_nine_rect(7).unwrap();
        assert_eq!(data.labels.len(), 5000);
        assert_eq!(data.train_idx.len(), 2500);
        let a3 = data.classes.index_of("A3").unwrap();
        let a5 = data.classes.index_of("A5").unwrap();
        for row in &data.labels {
            let set = ClassSet::from_scores(row, 0.5);
            assert!(check_logical_violation(&rules, &set).is_empty());
            // Points in R3 belong to all classes.
            if row[a3] == 1.0 {
                assert!(row.iter().all(|&v| v == 1.0));
            }
            // Any labelled point belongs to A5.
            if row.iter().any(|&v| v == 1.0) {
                assert_eq!(row[a5], 1.0);
            }
        }
        // Both labelled and unlabelled points occur.
        assert!(data.labels.iter().any(|r| r.iter().all(|&v| v == 0.0)));
        assert!(data.labels.iter().any(|r| r[a3] == 1.0));
    }
}
