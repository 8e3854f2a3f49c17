//! The synchronous federated-averaging loop and the server update.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{CompressionConfig, EncodedUpdate};
use crate::data::{load_csv, partition_by_label, partition_iid, ClientDataset, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::{evaluate, ModelSpec};
use crate::rng::{derive_seed, rng_stream, SeededRng};
use crate::tensor::ModelParams;
use crate::train::{encode_layer, local_train, purpose, ClientContext, Constraint, RoundConfig, Weighting};
use crate::wire::{deserialize, serialize_sized, ByteLedger, MessageSize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticSpec),
    Csv {
        train: PathBuf,
        /// Held-out file; when absent `test_fraction` of `train` is held out.
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionSpec {
    Iid,
    ByLabel { labels_per_client: usize },
}

fn default_eval_interval() -> u32 {
    1
}

/// Everything needed to reproduce one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub partition: PartitionSpec,
    pub num_clients: usize,
    pub model: ModelSpec,
    pub round: RoundConfig,
    pub compression: CompressionConfig,
    pub rounds: u32,
    #[serde(default = "default_eval_interval")]
    pub eval_interval: u32,
    /// Metrics CSV destination, relative to the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Final model destination; defaults to the CSV path with a
    /// `.model.json` extension.
    #[serde(default)]
    pub model_output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidConfig {
                field: field.into(),
                reason,
            })
        };
        self.round.validate()?;
        self.compression.validate()?;
        if self.num_clients == 0 {
            return bad("num_clients", "must be at least 1".into());
        }
        if self.round.clients_per_round > self.num_clients {
            return bad(
                "round.clients_per_round",
                format!("{} exceeds num_clients {}", self.round.clients_per_round, self.num_clients),
            );
        }
        if self.eval_interval == 0 {
            return bad("eval_interval", "must be at least 1".into());
        }
        if let ModelSpec::Mlp { hidden: 0 } = self.model {
            return bad("model.hidden", "must be at least 1".into());
        }
        if let PartitionSpec::ByLabel { labels_per_client: 0 } = self.partition {
            return bad("partition.labels_per_client", "must be at least 1".into());
        }
        match &self.dataset {
            DatasetSpec::Synthetic(s) => {
                if s.num_classes < 2 {
                    return bad("dataset.num_classes", "must be at least 2".into());
                }
                if s.dim == 0 {
                    return bad("dataset.dim", "must be at least 1".into());
                }
                if s.train_examples < self.num_clients {
                    return bad(
                        "dataset.train_examples",
                        format!("{} is fewer than num_clients {}", s.train_examples, self.num_clients),
                    );
                }
                if s.clusters_per_class == 0 {
                    return bad("dataset.clusters_per_class", "must be at least 1".into());
                }
            }
            DatasetSpec::Csv { test_fraction, test, .. } => {
                if test.is_none() && !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                    return bad("dataset.test_fraction", format!("{test_fraction} not in (0, 1)"));
                }
            }
        }
        Ok(())
    }

    /// Resolves relative file paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSpec::Csv { train, test, .. } = &mut self.dataset {
            fix(train);
            if let Some(t) = test {
                fix(t);
            }
        }
        if let Some(p) = &mut self.output {
            fix(p);
        }
        if let Some(p) = &mut self.model_output {
            fix(p);
        }
    }
}

/// Metrics for one completed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: u32,
    pub clients: Vec<u32>,
    pub uplink: MessageSize,
    pub uplink_cumulative: MessageSize,
    pub train_loss: f64,
    /// Present on evaluation rounds.
    pub test_accuracy: Option<f64>,
}

/// One client's decoded contribution to a round.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: u32,
    pub examples: usize,
    pub layers: Vec<EncodedUpdate>,
}

/// `W + η · mean_i decode(H_i)`. Contributions are summed in client-id
/// order in f64 so the result does not depend on arrival order.
pub fn server_aggregate(
    global: &ModelParams,
    updates: &[ClientUpdate],
    server_lr: f32,
    weighting: Weighting,
) -> Result<ModelParams> {
    if updates.is_empty() {
        return Ok(global.clone());
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client);
    let weights: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0 / order.len() as f64; order.len()],
        Weighting::Examples => {
            let total: usize = order.iter().map(|u| u.examples).sum();
            order.iter().map(|u| u.examples as f64 / total as f64).collect()
        }
    };
    let mut next = global.clone();
    for li in 0..global.len() {
        let dims = global.layer(li).shape();
        let mut acc = vec![0.0f64; dims.0 * dims.1];
        for (u, &wt) in order.iter().zip(&weights) {
            let enc = u.layers.get(li).ok_or_else(|| {
                Error::ShapeMismatch(format!("client {} sent {} layers", u.client, u.layers.len()))
            })?;
            let h = enc.decode(dims)?;
            for (a, &v) in acc.iter_mut().zip(h.data()) {
                *a += wt * f64::from(v);
            }
        }
        for (w, a) in next.layer_mut(li).data_mut().iter_mut().zip(&acc) {
            *w += server_lr * (*a as f32);
        }
    }
    if !next.is_finite() {
        return Err(Error::NonFinite("aggregated model"));
    }
    Ok(next)
}

/// Data, clients and initial model for a run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub clients: Vec<ClientDataset>,
    pub test: Dataset,
    pub initial: ModelParams,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Setup> {
    cfg.validate()?;
    let (train, test) = match &cfg.dataset {
        DatasetSpec::Synthetic(s) => s.generate(derive_seed(cfg.seed, purpose::DATA))?,
        DatasetSpec::Csv {
            train,
            test,
            test_fraction,
        } => {
            let full = load_csv(train)?;
            match test {
                Some(t) => {
                    let mut test = load_csv(t)?;
                    if test.dim != full.dim {
                        return Err(Error::Dataset(format!(
                            "test features have dimension {}, train {}",
                            test.dim, full.dim
                        )));
                    }
                    let classes = full.num_classes.max(test.num_classes);
                    let mut full = full;
                    full.num_classes = classes;
                    test.num_classes = classes;
                    (full, test)
                }
                None => full.split(*test_fraction, &mut SeededRng::new(derive_seed(cfg.seed, purpose::DATA))),
            }
        }
    };
    let mut prng = SeededRng::new(derive_seed(cfg.seed, purpose::PARTITION));
    let clients = match cfg.partition {
        PartitionSpec::Iid => partition_iid(&train, cfg.num_clients, &mut prng)?,
        PartitionSpec::ByLabel { labels_per_client } => {
            partition_by_label(&train, cfg.num_clients, labels_per_client, &mut prng)?
        }
    };
    let mut initial = cfg.model.init(
        train.dim,
        train.num_classes,
        &mut SeededRng::new(derive_seed(cfg.seed, purpose::INIT)),
    )?;
    initial.apply_exemption(cfg.compression.exemption_threshold);
    Ok(Setup {
        clients,
        test,
        initial,
    })
}

/// Clients taking part in a round: uniform without replacement, sorted.
pub fn sample_clients(seed: u64, round: u32, num_clients: usize, per_round: usize) -> Vec<u32> {
    let mut rng = rng_stream(derive_seed(seed, purpose::SAMPLE), round, 0, 0);
    rng.sample_indices(num_clients, per_round)
        .into_iter()
        .map(|c| c as u32)
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub records: Vec<RoundRecord>,
    pub final_params: ModelParams,
    pub ledger: ByteLedger,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, |_| {})
}

/// Runs all rounds, calling `on_round` after each one.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    mut on_round: impl FnMut(&RoundRecord),
) -> Result<ExperimentResult> {
    let setup = prepare(cfg)?;
    let mut global = setup.initial;
    let mut ledger = ByteLedger::new();
    let mut records = Vec::with_capacity(cfg.rounds as usize);
    let constraint = Constraint::from(&cfg.compression.scheme);

    for round in 1..=cfg.rounds {
        let sampled = sample_clients(cfg.seed, round, setup.clients.len(), cfg.round.clients_per_round);
        let uploads: Vec<(u32, usize, f64, Vec<(Vec<u8>, MessageSize)>)> = sampled
            .par_iter()
            .map(|&client| {
                let ctx = ClientContext {
                    seed: cfg.seed,
                    round,
                    client,
                };
                let data = &setup.clients[client as usize].data;
                let local = local_train(&cfg.model, &global, data, &cfg.round, constraint, ctx)?;
                let messages = local
                    .layers
                    .iter()
                    .zip(global.layers())
                    .enumerate()
                    .map(|(li, (update, layer))| {
                        let enc = encode_layer(update, &cfg.compression.scheme, layer.compressible, ctx, li as u32)?;
                        serialize_sized(&enc)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((client, local.examples, local.mean_loss, messages))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut decoded = Vec::with_capacity(uploads.len());
        let mut loss_sum = 0.0;
        for (client, examples, loss, messages) in &uploads {
            loss_sum += loss;
            let mut layers = Vec::with_capacity(messages.len());
            for (li, (bytes, size)) in messages.iter().enumerate() {
                ledger.record(round, *client, li as u32, *size);
                layers.push(deserialize(bytes)?);
            }
            decoded.push(ClientUpdate {
                client: *client,
                examples: *examples,
                layers,
            });
        }
        global = server_aggregate(&global, &decoded, cfg.round.server_lr, cfg.round.weighting)?;

        let test_accuracy = (round % cfg.eval_interval == 0).then(|| evaluate(&cfg.model, &global, &setup.test).0);
        let record = RoundRecord {
            round,
            clients: sampled,
            uplink: ledger.round_total(round),
            uplink_cumulative: ledger.cumulative(),
            train_loss: loss_sum / uploads.len() as f64,
            test_accuracy,
        };
        log::debug!(
            "round {round}: loss {:.4} acc {:?} bytes {}",
            record.train_loss,
            record.test_accuracy,
            record.uplink_cumulative.total()
        );
        on_round(&record);
        records.push(record);
    }
    Ok(ExperimentResult {
        records,
        final_params: global,
        ledger,
    })
}
