//! Labelled datasets, the synthetic Gaussian-mixture task, CSV loading and
//! client partitioning.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Dense features (row-major, `len x dim`) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub num_classes: usize,
    pub features: Vec<f32>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn new(dim: usize, num_classes: usize, features: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Dataset(format!(
                "{} feature values for {} examples of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Dataset(format!("label {bad} outside {num_classes} classes")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example(&self, i: usize) -> (&[f32], u32) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    /// New dataset holding the given examples, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (x, y) = self.example(i);
            features.extend_from_slice(x);
            labels.push(y);
        }
        Dataset {
            dim: self.dim,
            num_classes: self.num_classes,
            features,
            labels,
        }
    }

    /// Random split into `(train, test)` with `test_fraction` of the examples
    /// held out.
    pub fn split(&self, test_fraction: f64, rng: &mut SeededRng) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        rng.shuffle(&mut idx);
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        let (test, train) = idx.split_at(n_test.min(self.len()));
        (self.subset(train), self.subset(test))
    }
}

/// Parameters of the synthetic classification task: each class is a
/// mixture of `clusters_per_class` isotropic Gaussians whose centres are
/// drawn from `N(0, separation²)` per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub train_examples: usize,
    pub test_examples: usize,
    #[serde(default = "one")]
    pub clusters_per_class: usize,
    #[serde(default = "one_f")]
    pub separation: f64,
    #[serde(default = "one_f")]
    pub noise: f64,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

impl SyntheticSpec {
    /// Generates `(train, test)` from one seed. Labels are balanced up to one
    /// example.
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.num_classes < 2 || self.dim == 0 || self.clusters_per_class == 0 {
            return Err(Error::Dataset(format!("degenerate synthetic spec {self:?}")));
        }
        let mut rng = SeededRng::new(seed);
        let n_centres = self.num_classes * self.clusters_per_class;
        let centres: Vec<f64> = (0..n_centres * self.dim)
            .map(|_| rng.normal() * self.separation)
            .collect();
        let sample = |n: usize, rng: &mut SeededRng| -> Result<Dataset> {
            let mut features = Vec::with_capacity(n * self.dim);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let class = i % self.num_classes;
                let c = class * self.clusters_per_class + rng.below(self.clusters_per_class);
                let centre = &centres[c * self.dim..(c + 1) * self.dim];
                features.extend(centre.iter().map(|&m| (m + rng.normal() * self.noise) as f32));
                labels.push(class as u32);
            }
            let ds = Dataset::new(self.dim, self.num_classes, features, labels)?;
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            Ok(ds.subset(&order))
        };
        let train = sample(self.train_examples, &mut rng)?;
        let test = sample(self.test_examples, &mut rng)?;
        Ok((train, test))
    }
}

/// Reads `label,feat1,...,featD` rows after one header line.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    parse_csv(&text).map_err(|e| match e {
        Error::Dataset(msg) => Error::Dataset(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    lines
        .next()
        .ok_or_else(|| Error::Dataset("missing header line".into()))?;
    let mut dim = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in lines.enumerate() {
        let row = n + 2;
        let mut fields = line.split(',').map(str::trim);
        let label: u32 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Dataset(format!("line {row}: bad label")))?;
        let before = features.len();
        for f in fields {
            let v: f32 = f
                .parse()
                .map_err(|_| Error::Dataset(format!("line {row}: bad feature `{f}`")))?;
            features.push(v);
        }
        let d = features.len() - before;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::Dataset(format!(
                    "line {row}: {d} features, expected {expected}"
                )))
            }
            _ => {}
        }
        labels.push(label);
    }
    let dim = dim.ok_or_else(|| Error::Dataset("no examples".into()))?;
    let num_classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    Dataset::new(dim, num_classes, features, labels)
}

/// One simulated client's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub id: u32,
    pub data: Dataset,
}

/// Random disjoint partition into `n_clients` shards whose sizes differ by
/// at most one.
pub fn partition_iid(data: &Dataset, n_clients: usize, rng: &mut SeededRng) -> Result<Vec<ClientDataset>> {
    if n_clients == 0 || n_clients > data.len() {
        return Err(Error::TooFewExamples {
            examples: data.len(),
            clients: n_clients,
        });
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    rng.shuffle(&mut idx);
    let base = data.len() / n_clients;
    let extra = data.len() % n_clients;
    let mut start = 0;
    Ok((0..n_clients)
        .map(|c| {
            let size = base + usize::from(c < extra);
            let shard = &idx[start..start + size];
            start += size;
            ClientDataset {
                id: c as u32,
                data: data.subset(shard),
            }
        })
        .collect())
}

/// Label-skewed partition: client `c` owns the labels
/// `(offset + c·L + j) mod K` for `j < L`, and each label's examples are
/// split evenly at random among that label's owners.
pub fn partition_by_label(
    data: &Dataset,
    n_clients: usize,
    labels_per_client: usize,
    rng: &mut SeededRng,
) -> Result<Vec<ClientDataset>> {
    let mut by_label: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &y) in data.labels.iter().enumerate() {
        by_label.entry(y).or_default().push(i);
    }
    let labels: Vec<u32> = by_label.keys().copied().collect();
    let k = labels.len();
    if n_clients == 0 || labels_per_client == 0 || labels_per_client > k {
        return Err(Error::InfeasiblePartition(format!(
            "{labels_per_client} labels per client with {k} labels and {n_clients} clients"
        )));
    }
    if n_clients * labels_per_client < k {
        return Err(Error::InfeasiblePartition(format!(
            "{n_clients} clients x {labels_per_client} labels cannot cover {k} labels"
        )));
    }
    let offset = rng.below(k);
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); k];
    for c in 0..n_clients {
        for j in 0..labels_per_client {
            owners[(offset + c * labels_per_client + j) % k].push(c);
        }
    }
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    for (li, label) in labels.iter().enumerate() {
        let mut idx = by_label[label].clone();
        let own = &owners[li];
        if idx.len() < own.len() {
            return Err(Error::InfeasiblePartition(format!(
                "label {label} has {} examples for {} owners",
                idx.len(),
                own.len()
            )));
        }
        rng.shuffle(&mut idx);
        let base = idx.len() / own.len();
        let extra = idx.len() % own.len();
        let mut start = 0;
        for (o, &c) in own.iter().enumerate() {
            let size = base + usize::from(o < extra);
            shards[c].extend_from_slice(&idx[start..start + size]);
            start += size;
        }
    }
    shards
        .into_iter()
        .enumerate()
        .map(|(c, mut shard)| {
            rng.shuffle(&mut shard);
            if shard.is_empty() {
                return Err(Error::InfeasiblePartition(format!("client {c} received no examples")));
            }
            Ok(ClientDataset {
                id: c as u32,
                data: data.subset(&shard),
            })
        })
        .collect()
}
