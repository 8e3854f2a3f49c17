//! Structured updates: the client learns its update directly inside a
//! low-parameter family, so only those parameters (plus a seed) are sent.
//!
//! * Low rank: `H = A * B` with `A (d1 x k)` drawn from a seed and frozen,
//!   `B (k x d2)` trained. Only `B` is uploaded.
//! * Random mask: `H` is zero outside a seeded random sparsity pattern.
//!   Only the values on the pattern are uploaded.

use crate::error::{Error, Result};
use crate::rng::{kept_count, SeededRng};
use crate::tensor::Matrix;

/// Rank used for a low-rank update with the given mode (fraction of `d1`).
///
/// `k = clamp(round(mode * d1), 1, min(d1, d2))`, which makes the payload
/// `k * d2` equal to `mode * d1 * d2` whenever the clamp is inactive.
pub fn low_rank_k(mode: f32, rows: usize, cols: usize) -> usize {
    let k = (f64::from(mode) * rows as f64).round() as usize;
    k.clamp(1, rows.min(cols))
}

/// Draws the frozen factor `A (d1 x k)` with i.i.d. `N(0, 1/k)` entries.
pub fn gen_a(rows: usize, k: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if k == 0 || k > rows {
        return Err(Error::InvalidRank { k, rows, cols: k });
    }
    let std = (1.0 / k as f64).sqrt();
    let data = (0..rows * k).map(|_| (rng.normal() * std) as f32).collect();
    Ok(Matrix::from_raw(rows, k, data))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    pub a: Matrix,
    pub b: Matrix,
    pub seed: u64,
}

impl LowRankFactors {
    /// Fresh factors for one client/round: `A` from the stream, `B = 0`.
    pub fn init(rows: usize, cols: usize, k: usize, rng: &mut SeededRng) -> Result<Self> {
        if k == 0 || k > rows.min(cols) {
            return Err(Error::InvalidRank { k, rows, cols });
        }
        let seed = rng.seed();
        let a = gen_a(rows, k, rng)?;
        Ok(Self {
            a,
            b: Matrix::zeros(k, cols),
            seed,
        })
    }

    pub fn k(&self) -> usize {
        self.a.cols()
    }
}

/// `A * B`.
pub fn expand_low_rank(f: &LowRankFactors) -> Result<Matrix> {
    f.a.matmul(&f.b)
}

/// Gradient with respect to `B` when `W = W_t + A * B`: `Aᵀ * G_W`.
pub fn project_grad_low_rank(grad_w: &Matrix, a: &Matrix) -> Result<Matrix> {
    a.t_matmul(grad_w)
}

/// A seeded random sparsity pattern over the flattened `rows * cols` layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPattern {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    /// Sorted, distinct flat positions that are kept.
    pub indices: Vec<usize>,
}

impl MaskPattern {
    /// Dense 0/1 indicator over the flattened layer.
    pub fn dense(&self) -> Vec<bool> {
        let mut keep = vec![false; self.rows * self.cols];
        for &i in &self.indices {
            keep[i] = true;
        }
        keep
    }
}

/// Samples a mask keeping `max(1, round(fraction * d1 * d2))` positions.
pub fn gen_mask(dims: (usize, usize), fraction: f32, rng: &mut SeededRng) -> Result<MaskPattern> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidFraction(f64::from(fraction)));
    }
    let n = dims.0 * dims.1;
    Ok(gen_mask_count(dims, kept_count(fraction, n), rng))
}

/// Samples a mask with exactly `count` kept positions.
pub fn gen_mask_count(dims: (usize, usize), count: usize, rng: &mut SeededRng) -> MaskPattern {
    let seed = rng.seed();
    MaskPattern {
        seed,
        rows: dims.0,
        cols: dims.1,
        indices: rng.sample_indices(dims.0 * dims.1, count),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructuredVariant {
    LowRank,
    Mask,
}

/// What a client uploads for a structured update.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredEncoded {
    pub variant: StructuredVariant,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    /// Mask keep-fraction, or `k / d1` for low rank. Informational for
    /// low rank, where `k` is implied by the payload length.
    pub fraction: f32,
    /// Row-major `B` (low rank) or the kept values in index order (mask).
    pub payload: Vec<f32>,
}

/// The trained parameters of a structured update, ready to encode.
#[derive(Debug, Clone, PartialEq)]
pub enum StructuredParams {
    LowRank(LowRankFactors),
    Mask {
        pattern: MaskPattern,
        fraction: f32,
        /// Full update; only the entries on the pattern are sent.
        update: Matrix,
    },
}

pub fn encode_structured(params: &StructuredParams) -> StructuredEncoded {
    match params {
        StructuredParams::LowRank(f) => StructuredEncoded {
            variant: StructuredVariant::LowRank,
            seed: f.seed,
            rows: f.a.rows(),
            cols: f.b.cols(),
            fraction: f.k() as f32 / f.a.rows() as f32,
            payload: f.b.data().to_vec(),
        },
        StructuredParams::Mask {
            pattern,
            fraction,
            update,
        } => StructuredEncoded {
            variant: StructuredVariant::Mask,
            seed: pattern.seed,
            rows: pattern.rows,
            cols: pattern.cols,
            fraction: *fraction,
            payload: pattern.indices.iter().map(|&i| update.data()[i]).collect(),
        },
    }
}

/// Regenerates `A` or the mask from the seed and expands the update.
pub fn decode_structured(enc: &StructuredEncoded, dims: (usize, usize)) -> Result<Matrix> {
    let (rows, cols) = dims;
    if (enc.rows, enc.cols) != dims {
        return Err(Error::ShapeMismatch(format!(
            "encoded {}x{} for a {rows}x{cols} layer",
            enc.rows, enc.cols
        )));
    }
    if enc.payload.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("structured payload"));
    }
    let mut rng = SeededRng::new(enc.seed);
    match enc.variant {
        StructuredVariant::LowRank => {
            let k = low_rank_rank_from_payload(enc.payload.len(), rows, cols)?;
            let a = gen_a(rows, k, &mut rng)?;
            let b = Matrix::from_raw(k, cols, enc.payload.clone());
            a.matmul(&b)
        }
        StructuredVariant::Mask => {
            let n = rows * cols;
            let count = enc.payload.len();
            if count == 0 || count > n {
                return Err(Error::CorruptPayload(format!(
                    "mask payload of {count} values for {n} positions"
                )));
            }
            let pattern = gen_mask_count(dims, count, &mut rng);
            let mut data = vec![0.0f32; n];
            for (&i, &v) in pattern.indices.iter().zip(&enc.payload) {
                data[i] = v;
            }
            Ok(Matrix::from_raw(rows, cols, data))
        }
    }
}

pub(crate) fn low_rank_rank_from_payload(len: usize, rows: usize, cols: usize) -> Result<usize> {
    if len == 0 || len % cols != 0 || len / cols > rows.min(cols) {
        return Err(Error::CorruptPayload(format!(
            "low-rank payload of {len} values for a {rows}x{cols} layer"
        )));
    }
    Ok(len / cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Numerical rank by Gaussian elimination with full pivoting in f64.
    fn numerical_rank(m: &Matrix) -> usize {
        let (r, c) = m.shape();
        let mut a: Vec<Vec<f64>> = (0..r)
            .map(|i| m.row(i).iter().map(|&v| f64::from(v)).collect())
            .collect();
        let scale = a.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tol = 1e-6 * scale.max(f64::MIN_POSITIVE);
        let mut rank = 0;
        let mut used_cols = vec![false; c];
        for row in 0..r {
            let _ = row;
            // pick the largest remaining pivot
            let mut best = (0.0, 0, 0);
            for (i, ri) in a.iter().enumerate().skip(rank) {
                for (j, &v) in ri.iter().enumerate() {
                    if !used_cols[j] && v.abs() > best.0 {
                        best = (v.abs(), i, j);
                    }
                }
            }
            if best.0 <= tol {
                break;
            }
            let (_, pi, pj) = best;
            a.swap(rank, pi);
            used_cols[pj] = true;
            let pivot_row = a[rank].clone();
            for ri in a.iter_mut().skip(rank + 1) {
                let f = ri[pj] / pivot_row[pj];
                for (x, p) in ri.iter_mut().zip(&pivot_row) {
                    *x -= f * p;
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn gen_a_is_deterministic_and_centred() {
        let a1 = gen_a(50, 4, &mut SeededRng::new(11)).unwrap();
        let a2 = gen_a(50, 4, &mut SeededRng::new(11)).unwrap();
        assert_eq!(a1, a2);

        let big = gen_a(25_000, 4, &mut SeededRng::new(12)).unwrap();
        let n = big.len() as f64;
        let mean = big.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = big
            .data()
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        // sd of entries is 1/sqrt(k) = 0.5
        assert!(mean.abs() < 3.0 * 0.5 / n.sqrt(), "mean {mean}");
        assert!((var - 0.25).abs() < 0.01, "var {var}");
        assert!(gen_a(4, 5, &mut SeededRng::new(0)).is_err());
        assert!(gen_a(4, 0, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn square_a_is_full_rank() {
        for s in 0..100 {
            let a = gen_a(8, 8, &mut SeededRng::new(s)).unwrap();
            assert_eq!(numerical_rank(&a), 8);
        }
    }

    #[test]
    fn expand_zero_and_outer_product() {
        let mut rng = SeededRng::new(1);
        let f = LowRankFactors::init(6, 5, 2, &mut rng).unwrap();
        assert!(expand_low_rank(&f).unwrap().data().iter().all(|&v| v == 0.0));

        let r = [1.0, -2.0, 0.5];
        let f = LowRankFactors {
            a: Matrix::new(4, 1, vec![1.0; 4]).unwrap(),
            b: Matrix::new(1, 3, r.to_vec()).unwrap(),
            seed: 0,
        };
        let h = expand_low_rank(&f).unwrap();
        for i in 0..4 {
            assert_eq!(h.row(i), &r);
        }
    }

    #[test]
    fn expand_matches_triple_loop() {
        let mut rng = SeededRng::new(2);
        let a = Matrix::from_fn(7, 3, |_, _| rng.normal() as f32);
        let b = Matrix::from_fn(3, 9, |_, _| rng.normal() as f32);
        let h = expand_low_rank(&LowRankFactors {
            a: a.clone(),
            b: b.clone(),
            seed: 0,
        })
        .unwrap();
        for i in 0..7 {
            for j in 0..9 {
                let mut s = 0.0f64;
                for p in 0..3 {
                    s += f64::from(a.get(i, p)) * f64::from(b.get(p, j));
                }
                assert!((f64::from(h.get(i, j)) - s).abs() < 1e-5);
            }
        }
        assert!(numerical_rank(&h) <= 3);
    }

    #[test]
    fn projection_identity_and_zero() {
        let mut rng = SeededRng::new(3);
        let g = Matrix::from_fn(4, 6, |_, _| rng.normal() as f32);
        let eye = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.0 });
        assert_eq!(project_grad_low_rank(&g, &eye).unwrap(), g);
        let a = gen_a(4, 2, &mut rng).unwrap();
        let z = project_grad_low_rank(&Matrix::zeros(4, 6), &a).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(project_grad_low_rank(&Matrix::zeros(5, 6), &a).is_err());
    }

    #[test]
    fn projection_matches_finite_differences() {
        // L(B) = 0.5 * ||W0 + A B - T||^2, so dL/dW = W - T.
        let mut rng = SeededRng::new(4);
        let (d1, d2, k) = (6, 5, 3);
        let w0 = Matrix::from_fn(d1, d2, |_, _| rng.normal() as f32);
        let t = Matrix::from_fn(d1, d2, |_, _| rng.normal() as f32);
        let a = gen_a(d1, k, &mut rng).unwrap();
        let b = Matrix::from_fn(k, d2, |_, _| rng.normal() as f32);
        let loss = |b: &[f64]| -> f64 {
            let mut l = 0.0;
            for i in 0..d1 {
                for j in 0..d2 {
                    let mut w = f64::from(w0.get(i, j)) - f64::from(t.get(i, j));
                    for p in 0..k {
                        w += f64::from(a.get(i, p)) * b[p * d2 + j];
                    }
                    l += 0.5 * w * w;
                }
            }
            l
        };
        let mut w = w0.clone();
        w.add_scaled(1.0, &a.matmul(&b).unwrap()).unwrap();
        let grad_w = w.sub(&t).unwrap();
        let grad_b = project_grad_low_rank(&grad_w, &a).unwrap();
        let b64: Vec<f64> = b.data().iter().map(|&v| f64::from(v)).collect();
        let eps = 1e-4;
        for idx in 0..k * d2 {
            let mut plus = b64.clone();
            plus[idx] += eps;
            let mut minus = b64.clone();
            minus[idx] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let an = f64::from(grad_b.data()[idx]);
            assert!((an - fd).abs() <= 1e-3 * fd.abs().max(1e-2), "{an} vs {fd}");
        }
    }

    #[test]
    fn mask_sizes() {
        let full = gen_mask((3, 5), 1.0, &mut SeededRng::new(1)).unwrap();
        assert_eq!(full.indices, (0..15).collect::<Vec<_>>());
        let quarter = gen_mask((4, 4), 0.25, &mut SeededRng::new(2)).unwrap();
        assert_eq!(quarter.indices.len(), 4);
        assert!(quarter.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(quarter.indices.iter().all(|&i| i < 16));
        assert!(gen_mask((4, 4), 0.0, &mut SeededRng::new(2)).is_err());
        assert!(gen_mask((4, 4), 1.5, &mut SeededRng::new(2)).is_err());
    }

    #[test]
    fn mask_inclusion_is_uniform() {
        let (n, fraction, trials) = (40usize, 0.25f32, 10_000usize);
        let mut counts = vec![0usize; n];
        for s in 0..trials {
            let m = gen_mask((5, 8), fraction, &mut SeededRng::new(1000 + s as u64)).unwrap();
            for i in m.indices {
                counts[i] += 1;
            }
        }
        let p = 0.25;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - trials as f64 * p).abs() < 3.5 * sigma, "count {c}");
        }
    }

    #[test]
    fn low_rank_round_trip_is_exact() {
        let mut rng = SeededRng::new(77);
        let mut f = LowRankFactors::init(12, 9, 4, &mut rng).unwrap();
        let mut vals = SeededRng::new(78);
        f.b = Matrix::from_fn(4, 9, |_, _| vals.normal() as f32);
        let enc = encode_structured(&StructuredParams::LowRank(f.clone()));
        assert_eq!(enc.payload.len(), 4 * 9);
        let dec = decode_structured(&enc, (12, 9)).unwrap();
        assert_eq!(dec, expand_low_rank(&f).unwrap());
    }

    #[test]
    fn mask_round_trip_scatters_to_seeded_positions() {
        let mut rng = SeededRng::new(5);
        let pattern = gen_mask((6, 7), 0.3, &mut rng).unwrap();
        let mut update = Matrix::zeros(6, 7);
        let keep = pattern.dense();
        let mut vals = SeededRng::new(6);
        for (i, v) in update.data_mut().iter_mut().enumerate() {
            if keep[i] {
                *v = vals.normal() as f32;
            }
        }
        let enc = encode_structured(&StructuredParams::Mask {
            pattern: pattern.clone(),
            fraction: 0.3,
            update: update.clone(),
        });
        assert_eq!(enc.payload.len(), pattern.indices.len());
        assert_eq!(decode_structured(&enc, (6, 7)).unwrap(), update);
    }

    #[test]
    fn low_rank_payload_saves_d1_over_k() {
        let mut rng = SeededRng::new(8);
        let f = LowRankFactors::init(64, 64, 16, &mut rng).unwrap();
        let enc = encode_structured(&StructuredParams::LowRank(f));
        assert_eq!(enc.payload.len(), 1024);
        assert_eq!(64 * 64 / enc.payload.len(), 64 / 16);
    }

    #[test]
    fn decode_rejects_inconsistent_payload() {
        let enc = StructuredEncoded {
            variant: StructuredVariant::LowRank,
            seed: 1,
            rows: 4,
            cols: 3,
            fraction: 0.5,
            payload: vec![0.0; 7],
        };
        assert!(matches!(
            decode_structured(&enc, (4, 3)),
            Err(Error::CorruptPayload(_))
        ));
        assert!(matches!(
            decode_structured(&enc, (4, 4)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn low_rank_mode_to_rank() {
        assert_eq!(low_rank_k(0.25, 64, 64), 16);
        assert_eq!(low_rank_k(0.0625, 64, 128), 4);
        assert_eq!(low_rank_k(0.0625, 128, 10), 8);
        assert_eq!(low_rank_k(1.0, 128, 10), 10);
        assert_eq!(low_rank_k(0.001, 8, 8), 1);
    }
}
