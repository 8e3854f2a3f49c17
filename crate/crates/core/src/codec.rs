//! Scheme selection and the tagged encoded-update type shared by the
//! client, the wire format and the server.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::kept_count;
use crate::sketch::{sketch_decode, SketchConfig, SketchEncoded};
use crate::structured::{decode_structured, low_rank_k, StructuredEncoded};
use crate::tensor::Matrix;

/// Default share of total parameters below which a layer is sent raw.
pub const DEFAULT_EXEMPTION: f64 = 1e-4;

/// How compressible layers are restricted during training or compressed
/// after it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    Raw,
    /// `mode` is the rank as a fraction of the layer's row count.
    LowRank { mode: f32 },
    Mask { fraction: f32 },
    Sketch(SketchConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    pub scheme: Scheme,
    /// Layers holding less than this share of all parameters go raw.
    #[serde(default = "default_exemption")]
    pub exemption_threshold: f64,
}

fn default_exemption() -> f64 {
    DEFAULT_EXEMPTION
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self::new(Scheme::Raw)
    }
}

impl CompressionConfig {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            exemption_threshold: DEFAULT_EXEMPTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Error::InvalidConfig {
            field: field.into(),
            reason,
        };
        match self.scheme {
            Scheme::Raw => {}
            Scheme::LowRank { mode } => {
                if !(mode > 0.0 && mode <= 1.0) {
                    return Err(bad("compression.scheme.mode", format!("{mode} not in (0, 1]")));
                }
            }
            Scheme::Mask { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(bad(
                        "compression.scheme.fraction",
                        format!("{fraction} not in (0, 1]"),
                    ));
                }
            }
            Scheme::Sketch(s) => {
                if !(s.subsample_fraction > 0.0 && s.subsample_fraction <= 1.0) {
                    return Err(bad(
                        "compression.scheme.subsample_fraction",
                        format!("{} not in (0, 1]", s.subsample_fraction),
                    ));
                }
                if let Some(b) = s.bits {
                    if !(1..=8).contains(&b) {
                        return Err(bad("compression.scheme.bits", format!("{b} not in [1, 8]")));
                    }
                }
            }
        }
        if !(0.0..=1.0).contains(&self.exemption_threshold) {
            return Err(bad(
                "compression.exemption_threshold",
                format!("{} not in [0, 1]", self.exemption_threshold),
            ));
        }
        Ok(())
    }
}

/// Payload bits a compressible layer of shape `dims` costs under `scheme`.
pub fn payload_bits(scheme: &Scheme, dims: (usize, usize)) -> u64 {
    let (rows, cols) = dims;
    let d = rows * cols;
    let values = match *scheme {
        Scheme::Raw => d,
        Scheme::LowRank { mode } => low_rank_k(mode, rows, cols) * cols,
        Scheme::Mask { fraction } => kept_count(fraction, d),
        Scheme::Sketch(cfg) => {
            let kept = cfg.kept(d);
            return match cfg.bits {
                Some(b) => u64::from(b) * kept as u64,
                None => 32 * kept as u64,
            };
        }
    };
    32 * values as u64
}

/// One layer's upload, in any scheme.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodedUpdate {
    Raw(Matrix),
    Structured(StructuredEncoded),
    Sketch(SketchEncoded),
}

impl EncodedUpdate {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            EncodedUpdate::Raw(m) => m.shape(),
            EncodedUpdate::Structured(s) => (s.rows, s.cols),
            EncodedUpdate::Sketch(s) => (s.rows, s.cols),
        }
    }

    /// Server-side reconstruction of the layer update.
    pub fn decode(&self, dims: (usize, usize)) -> Result<Matrix> {
        match self {
            EncodedUpdate::Raw(m) => {
                if m.shape() != dims {
                    return Err(Error::ShapeMismatch(format!(
                        "raw update {:?} for a {dims:?} layer",
                        m.shape()
                    )));
                }
                Ok(m.clone())
            }
            EncodedUpdate::Structured(s) => decode_structured(s, dims),
            EncodedUpdate::Sketch(s) => sketch_decode(s, dims),
        }
    }
}
