//! Tabular datasets: feature matrix, binary label matrix, splits, and the
//! CSV loader with the standard preprocessing (one-hot categoricals,
//! train-mean imputation, train-statistics standardization).

use crate::error::{CoreError, Result};
use crate::rules::ClassTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub feature_names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub classes: ClassTable,
}

impl TabularDataset {
    pub fn num_rows(&self) -> usize {
        self.features.len()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Clone out the rows of a split.
    pub fn subset(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            idx.iter().map(|&i| self.features[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i].clone()).collect(),
        )
    }

    pub fn train(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        self.subset(&self.train_idx)
    }

    pub fn val(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        self.subset(&self.val_idx)
    }

    pub fn test(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        self.subset(&self.test_idx)
    }
}

/// Sidecar description of a CSV: which columns are labels, which are
/// categorical, and optionally a column holding the split assignment
/// (`train` / `val` / `test`).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub label_columns: Vec<String>,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    #[serde(default)]
    pub split_column: Option<String>,
}

/// How rows are assigned to splits when the schema has no split column.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            val: 0.2,
            seed: 0,
        }
    }
}

pub fn load_dataset_path(
    path: &Path,
    schema: &DatasetSchema,
    split: SplitFractions,
) -> Result<TabularDataset> {
    let text = std::fs::read_to_string(path)?;
    load_dataset(&text, schema, split)
}

/// Parse and preprocess a CSV document with a header row.
///
/// Numeric columns: empty cells are missing and imputed with the mean of
/// the train split. Categorical columns: one indicator per category (in
/// first-appearance order); an empty cell yields the all-zero vector.
/// After assembly every feature column is standardized with train-split
/// mean and standard deviation (constant columns are only centered).
pub fn load_dataset(
    text: &str,
    schema: &DatasetSchema,
    split: SplitFractions,
) -> Result<TabularDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CoreError::Dataset(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();

    for needed in schema
        .label_columns
        .iter()
        .chain(schema.categorical_columns.iter())
        .chain(schema.split_column.iter())
    {
        if !headers.contains(needed) {
            return Err(CoreError::Dataset(format!("missing column `{needed}`")));
        }
    }

    #[derive(PartialEq)]
    enum ColKind {
        Label,
        Categorical,
        Split,
        Numeric,
    }
    let kinds: Vec<ColKind> = headers
        .iter()
        .map(|h| {
            if schema.label_columns.contains(h) {
                ColKind::Label
            } else if schema.categorical_columns.contains(h) {
                ColKind::Categorical
            } else if schema.split_column.as_deref() == Some(h) {
                ColKind::Split
            } else {
                ColKind::Numeric
            }
        })
        .collect();

    let mut raw: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CoreError::Dataset(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(CoreError::Dataset(format!(
                "row has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        raw.push(record.iter().map(str::to_string).collect());
    }
    let n = raw.len();
    if n == 0 {
        return Err(CoreError::Dataset("empty dataset".into()));
    }

    // Splits first: imputation and standardization use train rows only.
    let (train_idx, val_idx, test_idx) = match &schema.split_column {
        Some(col) => {
            let ci = headers.iter().position(|h| h == col).unwrap();
            let mut tr = Vec::new();
            let mut va = Vec::new();
            let mut te = Vec::new();
            for (i, row) in raw.iter().enumerate() {
                match row[ci].trim() {
                    "train" => tr.push(i),
                    "val" => va.push(i),
                    "test" => te.push(i),
                    other => {
                        return Err(CoreError::Dataset(format!(
                            "unknown split value `{other}` in row {i}"
                        )))
                    }
                }
            }
            (tr, va, te)
        }
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
            for i in (1..n).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let n_train = (split.train * n as f64).round() as usize;
            let n_val = (split.val * n as f64).round() as usize;
            let tr = order[..n_train.min(n)].to_vec();
            let va = order[n_train.min(n)..(n_train + n_val).min(n)].to_vec();
            let te = order[(n_train + n_val).min(n)..].to_vec();
            (tr, va, te)
        }
    };
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(CoreError::Dataset("empty train or test split".into()));
    }
    // Assemble labels and raw feature columns.
    let mut label_names: Vec<String> = Vec::new();
    let mut labels = vec![Vec::new(); n];
    let mut feature_names: Vec<String> = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new(); // column-major

    for (ci, header) in headers.iter().enumerate() {
        match kinds[ci] {
            ColKind::Split => {}
            ColKind::Label => {
                label_names.push(header.clone());
                for (i, row) in raw.iter().enumerate() {
                    let v: f64 = row[ci]
                        .trim()
                        .parse()
                        .map_err(|_| CoreError::Dataset(format!(
                            "label `{header}` row {i}: `{}` is not a number",
                            row[ci]
                        )))?;
                    if v != 0.0 && v != 1.0 {
                        return Err(CoreError::Dataset(format!(
                            "label `{header}` row {i}: value {v} is not binary"
                        )));
                    }
                    labels[i].push(v);
                }
            }
            ColKind::Categorical => {
                let mut categories: Vec<String> = Vec::new();
                for row in &raw {
                    let v = row[ci].trim();
                    if !v.is_empty() && !categories.iter().any(|c| c == v) {
                        categories.push(v.to_string());
                    }
                }
                for cat in &categories {
                    feature_names.push(format!("{header}={cat}"));
                    let col: Vec<f64> = raw
                        .iter()
                        .map(|row| if row[ci].trim() == cat { 1.0 } else { 0.0 })
                        .collect();
                    columns.push(col);
                }
            }
            ColKind::Numeric => {
                let parsed: Vec<Option<f64>> = raw
                    .iter()
                    .map(|row| row[ci].trim().parse::<f64>().ok())
                    .collect();
                let train_vals: Vec<f64> = train_idx
                    .iter()
                    .filter_map(|&i| parsed[i])
                    .collect();
                let mean = if train_vals.is_empty() {
                    0.0
                } else {
                    train_vals.iter().sum::<f64>() / train_vals.len() as f64
                };
                feature_names.push(header.clone());
                columns.push(parsed.iter().map(|v| v.unwrap_or(mean)).collect());
            }
        }
    }
    // Standardize with train statistics.
    for col in &mut columns {
        let tvals: Vec<f64> = train_idx.iter().map(|&i| col[i]).collect();
        let mean = tvals.iter().sum::<f64>() / tvals.len() as f64;
        let var = tvals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / tvals.len() as f64;
        let std = var.sqrt();
        let denom = if std > 1e-15 { std } else { 1.0 };
        for v in col.iter_mut() {
            *v = (*v - mean) / denom;
        }
    }

    let features: Vec<Vec<f64>> = (0..n)
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    let classes = ClassTable::from_names(&label_names)?;
    Ok(TabularDataset {
        feature_names,
        features,
        labels,
        train_idx,
        val_idx,
        test_idx,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(labels: &[&str], cats: &[&str]) -> DatasetSchema {
        DatasetSchema {
            label_columns: labels.iter().map(|s| s.to_string()).collect(),
            categorical_columns: cats.iter().map(|s| s.to_string()).collect(),
            split_column: None,
        }
    }

    #[test]
    fn numeric_csv_is_standardized() {
        let csv = "f1,f2,y\n1.0,10.0,1\n2.0,20.0,0\n3.0,30.0,1\n4.0,40.0,0\n";
        let data = load_dataset(
            csv,
            &schema(&["y"], &[]),
            SplitFractions {
                train: 0.5,
                val: 0.0,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(data.num_features(), 2);
        // Train columns have mean ~0 and std ~1.
        for c in 0..2 {
            let tvals: Vec<f64> = data.train_idx.iter().map(|&i| data.features[i][c]).collect();
            let mean: f64 = tvals.iter().sum::<f64>() / tvals.len() as f64;
            let var: f64 =
                tvals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / tvals.len() as f64;
            assert!(mean.abs() <= 1e-9);
            assert!((var.sqrt() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn missing_numeric_is_imputed_with_train_mean() {
        let csv = "f,s,y\n1.0,train,1\n3.0,train,0\n,test,1\n5.0,test,0\n";
        let mut sch = schema(&["y"], &[]);
        sch.split_column = Some("s".into());
        let data = load_dataset(csv, &sch, SplitFractions::default()).unwrap();
        // Train mean of f is 2.0; row 2's missing value becomes 2.0, then
        // standardization maps the train mean to 0.
        assert!(data.features[2][0].abs() <= 1e-12);
    }

    #[test]
    fn categorical_gets_one_indicator_per_value() {
        let csv = "c,y\nred,1\ngreen,0\nblue,1\nred,0\n";
        let data = load_dataset(
            csv,
            &schema(&["y"], &["c"]),
            SplitFractions {
                train: 0.5,
                val: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(data.num_features(), 3);
        assert!(data.feature_names.contains(&"c=red".to_string()));
    }

    #[test]
    fn non_binary_labels_are_rejected() {
        let csv = "f,y\n1.0,2\n2.0,0\n";
        assert!(load_dataset(csv, &schema(&["y"], &[]), SplitFractions::default()).is_err());
    }

    #[test]
    fn missing_columns_are_rejected() {
        let csv = "f,y\n1.0,1\n";
        assert!(load_dataset(csv, &schema(&["z"], &[]), SplitFractions::default()).is_err());
    }

    #[test]
    fn splits_cover_and_do_not_overlap() {
        let csv = "f,y\n1,1\n2,0\n3,1\n4,0\n5,1\n6,0\n7,1\n8,0\n9,1\n10,0\n";
        let data = load_dataset(
            csv,
            &schema(&["y"], &[]),
            SplitFractions {
                train: 0.6,
                val: 0.2,
                seed: 3,
            },
        )
        .unwrap();
        let mut all: Vec<usize> = data
            .train_idx
            .iter()
            .chain(&data.val_idx)
            .chain(&data.test_idx)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(data.train_idx.len(), 6);
        assert_eq!(data.val_idx.len(), 2);
    }
}
