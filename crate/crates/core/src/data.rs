//! Datasets, client partitioning and CSV ingestion.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("client {client} would receive an empty {split} split; raise num_examples or reduce num_clients")]
    EmptyShard { client: usize, split: &'static str },
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("feature column `{0}` is not numeric")]
    NonNumericFeature(String),
    #[error("label column `{0}` not found in header")]
    MissingColumn(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid data request: {0}")]
    Invalid(String),
}

/// Row-major feature matrix with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    num_features: usize,
    labels: Vec<usize>,
    num_classes: usize,
    /// Position of each row in the dataset it was cut from.
    ids: Vec<usize>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        num_features: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if labels.is_empty() || num_features == 0 {
            return Err(DataError::Invalid("dataset is empty".into()));
        }
        if features.len() != labels.len() * num_features {
            return Err(DataError::Invalid(format!(
                "{} feature values for {} rows of width {num_features}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Invalid(format!(
                "label {l} outside 0..{num_classes}"
            )));
        }
        let ids = (0..labels.len()).collect();
        Ok(Dataset {
            features,
            num_features,
            labels,
            num_classes,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Rows selected by position, keeping the original ids.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.num_features);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Dataset {
            features,
            num_features: self.num_features,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            num_classes: self.num_classes,
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
        }
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// One client's train / validation / test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionScheme {
    Iid,
    Dirichlet { concentration: f64 },
}

fn default_split_fractions() -> [f64; 3] {
    [0.7, 0.15, 0.15]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub scheme: PartitionScheme,
    pub num_clients: usize,
    /// (train, val, test) fractions of each client's pool.
    #[serde(default = "default_split_fractions")]
    pub split_fractions: [f64; 3],
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_clients == 0 {
            return Err(DataError::Invalid("num_clients must be at least 1".into()));
        }
        if let PartitionScheme::Dirichlet { concentration } = self.scheme {
            if !(concentration > 0.0 && concentration.is_finite()) {
                return Err(DataError::Invalid(
                    "Dirichlet concentration must be positive".into(),
                ));
            }
        }
        if self.split_fractions.iter().any(|&f| f <= 0.0)
            || (self.split_fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(DataError::Invalid(
                "split fractions must be positive and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

/// Gaussian class clusters with unit-variance noise. Class means sit on orthogonal
/// axes (random directions when classes outnumber features), pairwise
/// `class_separation` apart.
pub fn generate_synthetic<R: Rng + ?Sized>(
    num_examples: usize,
    num_features: usize,
    num_classes: usize,
    class_separation: f64,
    rng: &mut R,
) -> Result<Dataset, DataError> {
    if num_classes < 2 || num_features == 0 || num_examples == 0 {
        return Err(DataError::Invalid(
            "synthetic data needs ≥ 2 classes, ≥ 1 feature and ≥ 1 example".into(),
        ));
    }
    if !(class_separation >= 0.0 && class_separation.is_finite()) {
        return Err(DataError::Invalid("class_separation must be ≥ 0".into()));
    }
    let radius = class_separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            if num_classes <= num_features {
                let mut m = vec![0.0; num_features];
                m[c] = radius;
                m
            } else {
                let dir: Vec<f64> = (0..num_features)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                dir.iter().map(|x| x / norm * radius).collect()
            }
        })
        .collect();
    let mut labels: Vec<usize> = (0..num_examples).map(|i| i % num_classes).collect();
    labels.shuffle(rng);
    let mut features = Vec::with_capacity(num_examples * num_features);
    for &l in &labels {
        for m in &means[l] {
            features.push(m + rng.sample::<f64, _>(StandardNormal));
        }
    }
    Dataset::new(features, num_features, labels, num_classes)
}

const DIRICHLET_ATTEMPTS: usize = 100;

/// Splits `data` across clients, then each client's pool into train/val/test.
pub fn partition<R: Rng + ?Sized>(
    data: &Dataset,
    spec: &PartitionSpec,
    rng: &mut R,
) -> Result<Vec<ClientShard>, DataError> {
    spec.validate()?;
    let n_clients = spec.num_clients;
    let pools = match spec.scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(rng);
            let base = data.len() / n_clients;
            let extra = data.len() % n_clients;
            let mut pools = Vec::with_capacity(n_clients);
            let mut start = 0;
            for k in 0..n_clients {
                let size = base + usize::from(k < extra);
                pools.push(order[start..start + size].to_vec());
                start += size;
            }
            pools
        }
        PartitionScheme::Dirichlet { concentration } => {
            // Redraw until every client can fill all three splits.
            let mut pools = dirichlet_pools(data, n_clients, concentration, rng)?;
            let mut attempts = 1;
            while attempts < DIRICHLET_ATTEMPTS
                && pools
                    .iter()
                    .any(|p| split_sizes(p.len(), &spec.split_fractions).is_none())
            {
                pools = dirichlet_pools(data, n_clients, concentration, rng)?;
                attempts += 1;
            }
            pools
        }
    };
    pools
        .into_iter()
        .enumerate()
        .map(|(client_id, mut pool)| {
            pool.shuffle(rng);
            let [n_train, n_val, n_test] = split_sizes(pool.len(), &spec.split_fractions)
                .ok_or_else(|| DataError::EmptyShard {
                    client: client_id,
                    split: empty_split_name(pool.len(), &spec.split_fractions),
                })?;
            debug_assert_eq!(n_train + n_val + n_test, pool.len());
            Ok(ClientShard {
                client_id,
                train: data.subset(&pool[..n_train]),
                val: data.subset(&pool[n_train..n_train + n_val]),
                test: data.subset(&pool[n_train + n_val..]),
            })
        })
        .collect()
}

fn dirichlet_pools<R: Rng + ?Sized>(
    data: &Dataset,
    n_clients: usize,
    concentration: f64,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>, DataError> {
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| DataError::Invalid(format!("Dirichlet concentration: {e}")))?;
    let mut by_class = vec![Vec::new(); data.num_classes()];
    for i in 0..data.len() {
        by_class[data.label(i)].push(i);
    }
    let mut pools = vec![Vec::new(); n_clients];
    for members in &by_class {
        let mut props: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
        let total: f64 = props.iter().sum();
        if total > 0.0 && total.is_finite() {
            props.iter_mut().for_each(|p| *p /= total);
        } else {
            props.iter_mut().for_each(|p| *p = 1.0 / n_clients as f64);
        }
        // Shuffle the class, then cut it at the cumulative proportions.
        let mut members = members.clone();
        members.shuffle(rng);
        let n = members.len() as f64;
        let mut start = 0;
        let mut acc = 0.0;
        for (k, p) in props.iter().enumerate() {
            acc += p;
            let end = if k + 1 == n_clients {
                members.len()
            } else {
                ((acc * n).floor() as usize).clamp(start, members.len())
            };
            pools[k].extend_from_slice(&members[start..end]);
            start = end;
        }
    }
    Ok(pools)
}

/// `[train, val, test]` sizes, or `None` if any would be empty.
fn split_sizes(n: usize, fractions: &[f64; 3]) -> Option<[usize; 3]> {
    let n_val = (n as f64 * fractions[1]).round() as usize;
    let n_test = (n as f64 * fractions[2]).round() as usize;
    let n_train = n.checked_sub(n_val + n_test)?;
    (n_train > 0 && n_val > 0 && n_test > 0).then_some([n_train, n_val, n_test])
}

fn empty_split_name(n: usize, fractions: &[f64; 3]) -> &'static str {
    let n_val = (n as f64 * fractions[1]).round() as usize;
    let n_test = (n as f64 * fractions[2]).round() as usize;
    if n_val == 0 {
        "val"
    } else if n_test == 0 {
        "test"
    } else {
        "train"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub client: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Audit view of a partition: client id → example ids per split.
pub fn manifest(shards: &[ClientShard]) -> Vec<ShardManifest> {
    shards
        .iter()
        .map(|s| ShardManifest {
            client: s.client_id,
            train: s.train.ids().to_vec(),
            val: s.val.ids().to_vec(),
            test: s.test.ids().to_vec(),
        })
        .collect()
}

/// Reads a comma-separated file with a header row. Every column except
/// `label_column` is a numeric feature; features are standardised per column.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::MissingColumn(label_column.to_string()))?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(DataError::Invalid("no feature columns".into()));
    }

    let mut raw: Vec<Vec<Result<f64, String>>> = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| DataError::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        raw.push(
            feature_cols
                .iter()
                .map(|&c| {
                    let cell = record.get(c).unwrap_or("").trim();
                    cell.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| cell.to_string())
                })
                .collect(),
        );
        label_names.push(record.get(label_idx).unwrap_or("").trim().to_string());
    }
    if raw.is_empty() {
        return Err(DataError::Invalid("CSV has no data rows".into()));
    }
    for (j, &c) in feature_cols.iter().enumerate() {
        if raw.iter().all(|row| row[j].is_err()) {
            return Err(DataError::NonNumericFeature(headers[c].to_string()));
        }
    }
    for (r, row) in raw.iter().enumerate() {
        if let Some((j, Err(cell))) = row.iter().enumerate().find(|(_, v)| v.is_err()) {
            return Err(DataError::Parse {
                row: r + 1,
                column: headers[feature_cols[j]].to_string(),
                message: format!("`{cell}` is not a number"),
            });
        }
    }

    let d = feature_cols.len();
    let n = raw.len();
    let mut features: Vec<f64> = raw
        .into_iter()
        .flat_map(|row| row.into_iter().map(|v| v.unwrap_or_default()))
        .collect();
    for j in 0..d {
        let mean = (0..n).map(|i| features[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (features[i * d + j] - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        for i in 0..n {
            let x = &mut features[i * d + j];
            *x = if std <= 1e-12 {
                0.0
            } else {
                (*x - mean) / std.max(1e-12)
            };
        }
    }

    let mut mapping: HashMap<String, usize> = HashMap::new();
    let labels: Vec<usize> = label_names
        .into_iter()
        .map(|name| {
            let next = mapping.len();
            *mapping.entry(name).or_insert(next)
        })
        .collect();
    let num_classes = mapping.len();
    Dataset::new(features, d, labels, num_classes)
}

fn csv_error(path: &Path, e: csv::Error) -> DataError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io {
                path: path.display().to_string(),
                source,
            },
            _ => unreachable!(),
        }
    } else {
        DataError::Invalid(format!("{}: {e}", path.display()))
    }
}
