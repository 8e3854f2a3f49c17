//! Client side of a round: local SGD, optionally restricted to a low-rank or
//! masked update, followed by encoding of each layer.

use serde::{Deserialize, Serialize};

use crate::codec::{EncodedUpdate, Scheme};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, ModelSpec};
use crate::rng::{derive_seed, rng_stream, stream_seed};
use crate::sketch::{sketch_encode, SketchSeeds};
use crate::structured::{
    encode_structured, expand_low_rank, gen_mask, low_rank_k, project_grad_low_rank, LowRankFactors,
    MaskPattern, StructuredParams,
};
use crate::tensor::{Matrix, ModelParams};

/// Salts separating the purposes random streams are used for.
pub mod purpose {
    pub const SAMPLE: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const LOW_RANK: u64 = 3;
    pub const MASK: u64 = 4;
    pub const SKETCH: u64 = 5;
    pub const PARTITION: u64 = 6;
    pub const INIT: u64 = 7;
    pub const DATA: u64 = 8;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Weight each client by its number of local examples.
    Examples,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundConfig {
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub local_lr: f32,
    #[serde(default = "unit_lr")]
    pub server_lr: f32,
    pub batch_size: usize,
    #[serde(default)]
    pub weighting: Weighting,
}

fn unit_lr() -> f32 {
    1.0
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::InvalidConfig {
                field: format!("round.{field}"),
                reason: reason.into(),
            })
        };
        if self.clients_per_round == 0 {
            return bad("clients_per_round", "must be at least 1");
        }
        if self.local_epochs == 0 {
            return bad("local_epochs", "must be at least 1");
        }
        if !(self.local_lr.is_finite() && self.local_lr >= 0.0) {
            return bad("local_lr", "must be finite and non-negative");
        }
        if !self.server_lr.is_finite() {
            return bad("server_lr", "must be finite");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        Ok(())
    }
}

/// Restriction applied to compressible layers during local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    None,
    LowRank { mode: f32 },
    Mask { fraction: f32 },
}

impl From<&Scheme> for Constraint {
    fn from(s: &Scheme) -> Self {
        match *s {
            Scheme::LowRank { mode } => Constraint::LowRank { mode },
            Scheme::Mask { fraction } => Constraint::Mask { fraction },
            Scheme::Raw | Scheme::Sketch(_) => Constraint::None,
        }
    }
}

/// Identifies one client's work in one round; all of its random streams
/// derive from these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientContext {
    pub seed: u64,
    pub round: u32,
    pub client: u32,
}

impl ClientContext {
    pub fn stream_seed(&self, purpose: u64, layer: u32) -> u64 {
        stream_seed(derive_seed(self.seed, purpose), self.round, self.client, layer)
    }
}

/// A trained layer update before encoding.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerUpdate {
    Dense(Matrix),
    LowRank(LowRankFactors),
    Masked {
        pattern: MaskPattern,
        fraction: f32,
        update: Matrix,
    },
}

impl LayerUpdate {
    pub fn expanded(&self) -> Result<Matrix> {
        match self {
            LayerUpdate::Dense(m) => Ok(m.clone()),
            LayerUpdate::LowRank(f) => expand_low_rank(f),
            LayerUpdate::Masked { update, .. } => Ok(update.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub layers: Vec<LayerUpdate>,
    /// Mean mini-batch loss over all local steps.
    pub mean_loss: f64,
    pub examples: usize,
}

enum LayerState {
    Free,
    LowRank(LowRankFactors),
    Mask { pattern: MaskPattern, fraction: f32, keep: Vec<bool> },
}

/// Runs `local_epochs` of mini-batch SGD from `global` and returns
/// `W_local - global` per layer.
pub fn local_train(
    spec: &ModelSpec,
    global: &ModelParams,
    data: &Dataset,
    cfg: &RoundConfig,
    constraint: Constraint,
    ctx: ClientContext,
) -> Result<LocalUpdate> {
    if data.is_empty() {
        return Err(Error::Dataset(format!("client {} has no data", ctx.client)));
    }
    let mut states = Vec::with_capacity(global.len());
    for (li, layer) in global.layers().iter().enumerate() {
        let (rows, cols) = layer.weights.shape();
        let state = match constraint {
            _ if !layer.compressible => LayerState::Free,
            Constraint::None => LayerState::Free,
            Constraint::LowRank { mode } => {
                let mut rng = rng_stream(
                    derive_seed(ctx.seed, purpose::LOW_RANK),
                    ctx.round,
                    ctx.client,
                    li as u32,
                );
                LayerState::LowRank(LowRankFactors::init(rows, cols, low_rank_k(mode, rows, cols), &mut rng)?)
            }
            Constraint::Mask { fraction } => {
                let mut rng =
                    rng_stream(derive_seed(ctx.seed, purpose::MASK), ctx.round, ctx.client, li as u32);
                let pattern = gen_mask((rows, cols), fraction, &mut rng)?;
                let keep = pattern.dense();
                LayerState::Mask { pattern, fraction, keep }
            }
        };
        states.push(state);
    }

    let mut w = global.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng_stream(derive_seed(ctx.seed, purpose::SHUFFLE), ctx.round, ctx.client, 0);
    let mut xb = Vec::with_capacity(cfg.batch_size * data.dim);
    let mut yb = Vec::with_capacity(cfg.batch_size);
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    let lr = cfg.local_lr;
    let diverged = || Error::Divergence {
        round: ctx.round,
        client: ctx.client,
    };

    for _ in 0..cfg.local_epochs {
        shuffle.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in batch {
                let (x, y) = data.example(i);
                xb.extend_from_slice(x);
                yb.push(y);
            }
            let (loss, grads) = loss_and_grad(spec, &w, &xb, &yb);
            if !loss.is_finite() {
                return Err(diverged());
            }
            loss_sum += loss;
            steps += 1;
            for (li, (state, g)) in states.iter_mut().zip(&grads).enumerate() {
                match state {
                    LayerState::Free => w.layer_mut(li).add_scaled(-lr, g)?,
                    LayerState::LowRank(f) => {
                        let gb = project_grad_low_rank(g, &f.a)?;
                        f.b.add_scaled(-lr, &gb)?;
                        let mut updated = global.layer(li).clone();
                        updated.add_scaled(1.0, &expand_low_rank(f)?)?;
                        *w.layer_mut(li) = updated;
                    }
                    LayerState::Mask { keep, .. } => {
                        let wl = w.layer_mut(li).data_mut();
                        for ((v, &gv), &k) in wl.iter_mut().zip(g.data()).zip(keep.iter()) {
                            if k {
                                *v -= lr * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    if !w.is_finite() {
        return Err(diverged());
    }

    let layers = states
        .into_iter()
        .enumerate()
        .map(|(li, state)| {
            let delta = || w.layer(li).sub(global.layer(li));
            Ok(match state {
                LayerState::Free => LayerUpdate::Dense(delta()?),
                LayerState::LowRank(f) => LayerUpdate::LowRank(f),
                LayerState::Mask { pattern, fraction, .. } => LayerUpdate::Masked {
                    pattern,
                    fraction,
                    update: delta()?,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalUpdate {
        layers,
        mean_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
        examples: data.len(),
    })
}

/// Encodes one trained layer for upload. Dense layers of incompressible
/// variables, and all dense layers under the raw scheme, go out raw.
pub fn encode_layer(
    update: &LayerUpdate,
    scheme: &Scheme,
    compressible: bool,
    ctx: ClientContext,
    layer: u32,
) -> Result<EncodedUpdate> {
    Ok(match update {
        LayerUpdate::LowRank(f) => EncodedUpdate::Structured(encode_structured(&StructuredParams::LowRank(f.clone()))),
        LayerUpdate::Masked {
            pattern,
            fraction,
            update,
        } => EncodedUpdate::Structured(encode_structured(&StructuredParams::Mask {
            pattern: pattern.clone(),
            fraction: *fraction,
            update: update.clone(),
        })),
        LayerUpdate::Dense(m) => match scheme {
            Scheme::Sketch(cfg) if compressible => {
                let seeds = SketchSeeds::from_stream(ctx.stream_seed(purpose::SKETCH, layer));
                EncodedUpdate::Sketch(sketch_encode(m, cfg, seeds)?)
            }
            _ => EncodedUpdate::Raw(m.clone()),
        },
    })
}
