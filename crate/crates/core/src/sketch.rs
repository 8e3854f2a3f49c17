//! Sketched updates: lossy compression of a fully trained update.
//!
//! Encoding runs three optional stages on the flattened layer:
//!
//! 1. rotation `y = Hd · D · pad(h)` where `D` is a seeded ±1 diagonal and
//!    `Hd` the orthonormal Walsh-Hadamard matrix of the padded size,
//! 2. subsampling of a seeded random subset of positions, scaled so the
//!    zero-filled reconstruction is unbiased,
//! 3. stochastic rounding of the kept values onto `2^b` evenly spaced levels
//!    between their minimum and maximum.
//!
//! Decoding inverts the stages in reverse order. The rotation and subsample
//! seeds travel with the payload; the rounding randomness stays on the
//! client.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, kept_count, SeededRng};
use crate::tensor::Matrix;

/// Ranges narrower than this are sent as a single value.
pub const ZERO_RANGE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchConfig {
    pub rotate: bool,
    pub subsample_fraction: f32,
    /// Quantization bits in `[1, 8]`; `None` sends 32-bit floats.
    pub bits: Option<u8>,
}

impl SketchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::InvalidFraction(f64::from(self.subsample_fraction)));
        }
        if let Some(b) = self.bits {
            if !(1..=8).contains(&b) {
                return Err(Error::InvalidBits(b));
            }
        }
        Ok(())
    }

    /// Length of the vector the subsampler sees for a layer of `d` values.
    pub fn working_dim(&self, d: usize) -> usize {
        if self.rotate {
            d.next_power_of_two()
        } else {
            d
        }
    }

    /// Number of values sent for a layer of `d` values.
    pub fn kept(&self, d: usize) -> usize {
        kept_count(self.subsample_fraction, self.working_dim(d))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantParams {
    pub bits: u8,
    pub h_min: f32,
    pub h_max: f32,
}

impl QuantParams {
    pub fn num_levels(&self) -> usize {
        1usize << self.bits
    }

    pub fn is_zero_range(&self) -> bool {
        f64::from(self.h_max) - f64::from(self.h_min) < ZERO_RANGE
    }

    /// Spacing between adjacent levels: `(h_max - h_min) / (2^b - 1)`.
    pub fn step(&self) -> f64 {
        (f64::from(self.h_max) - f64::from(self.h_min)) / (self.num_levels() - 1) as f64
    }

    pub fn level(&self, i: u8) -> f32 {
        if self.is_zero_range() {
            return self.h_min;
        }
        (f64::from(self.h_min) + f64::from(i) * self.step()) as f32
    }
}

/// In-place orthonormal fast Walsh-Hadamard transform.
pub fn fwht(v: &mut [f32]) -> Result<()> {
    let n = v.len();
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut half = 1;
    while half < n {
        for block in v.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
    let scale = 1.0 / (n as f32).sqrt();
    v.iter_mut().for_each(|x| *x *= scale);
    Ok(())
}

/// Seeded `Hd · D` rotation of a `d`-dimensional vector zero-padded to the
/// next power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RotationSpec {
    pub seed: u64,
    pub padded_dim: usize,
}

impl RotationSpec {
    pub fn new(seed: u64, d: usize) -> Self {
        Self {
            seed,
            padded_dim: d.next_power_of_two(),
        }
    }

    /// Diagonal of `D`.
    pub fn signs(&self) -> Vec<f32> {
        let mut rng = SeededRng::new(self.seed);
        (0..self.padded_dim).map(|_| rng.sign()).collect()
    }
}

pub fn rotate(h: &[f32], spec: &RotationSpec) -> Result<Vec<f32>> {
    rotate_with_signs(h, &spec.signs())
}

pub fn derotate(y: &[f32], spec: &RotationSpec, d: usize) -> Result<Vec<f32>> {
    derotate_with_signs(y, &spec.signs(), d)
}

fn rotate_with_signs(h: &[f32], signs: &[f32]) -> Result<Vec<f32>> {
    if h.len() > signs.len() {
        return Err(Error::ShapeMismatch(format!(
            "rotation of size {} for a {}-vector",
            signs.len(),
            h.len()
        )));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rotation input"));
    }
    let mut y = vec![0.0f32; signs.len()];
    for ((out, &v), &s) in y.iter_mut().zip(h).zip(signs) {
        *out = v * s;
    }
    fwht(&mut y)?;
    Ok(y)
}

fn derotate_with_signs(y: &[f32], signs: &[f32], d: usize) -> Result<Vec<f32>> {
    if y.len() != signs.len() || d > y.len() {
        return Err(Error::ShapeMismatch(format!(
            "derotate {} values with a size-{} rotation into {d}",
            y.len(),
            signs.len()
        )));
    }
    let mut x = y.to_vec();
    fwht(&mut x)?;
    x.truncate(d);
    for (v, &s) in x.iter_mut().zip(signs) {
        *v *= s;
    }
    Ok(x)
}

/// Kept positions and their rescaled values.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsampled {
    pub seed: u64,
    pub indices: Vec<usize>,
    pub values: Vec<f32>,
    pub scale: f32,
}

/// Keeps `max(1, round(fraction * d))` random positions, scaled by
/// `d / kept` so that [`unsubsample`] is unbiased. The scale equals
/// `1 / fraction` whenever `fraction * d` is an integer.
pub fn subsample(h: &[f32], fraction: f32, rng: &mut SeededRng) -> Result<Subsampled> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidFraction(f64::from(fraction)));
    }
    let n = h.len();
    let kept = kept_count(fraction, n);
    let seed = rng.seed();
    let indices = rng.sample_indices(n, kept);
    let scale = (n as f64 / kept as f64) as f32;
    let values = indices.iter().map(|&i| h[i] * scale).collect();
    Ok(Subsampled {
        seed,
        indices,
        values,
        scale,
    })
}

/// Zero-filled reconstruction of length `n`.
pub fn unsubsample(n: usize, indices: &[usize], values: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; n];
    for (&i, &v) in indices.iter().zip(values) {
        out[i] = v;
    }
    out
}

/// Stochastically rounds each value to one of its two bracketing levels,
/// with probabilities that make the result unbiased.
pub fn quantize(h: &[f32], bits: u8, rng: &mut SeededRng) -> Result<(QuantParams, Vec<u8>)> {
    if !(1..=8).contains(&bits) {
        return Err(Error::InvalidBits(bits));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("quantization input"));
    }
    let (h_min, h_max) = h
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (h_min, h_max) = if h.is_empty() { (0.0, 0.0) } else { (h_min, h_max) };
    let params = QuantParams { bits, h_min, h_max };
    if params.is_zero_range() {
        return Ok((params, Vec::new()));
    }
    let top = (params.num_levels() - 1) as f64;
    let step = params.step();
    let lo_val = f64::from(h_min);
    let levels = h
        .iter()
        .map(|&v| {
            let t = ((f64::from(v) - lo_val) / step).clamp(0.0, top);
            let lower = t.floor().min(top - 1.0);
            let p_up = t - lower;
            let up = rng.uniform() < p_up;
            (lower as u8) + u8::from(up)
        })
        .collect();
    Ok((params, levels))
}

/// Maps level indices back to values. A zero-range `params` decodes `count`
/// copies of `h_min` and ignores `levels`.
pub fn dequantize(params: &QuantParams, levels: &[u8], count: usize) -> Vec<f32> {
    if params.is_zero_range() {
        return vec![params.h_min; count];
    }
    levels.iter().map(|&i| params.level(i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum SketchPayload {
    Raw(Vec<f32>),
    Quantized { params: QuantParams, levels: Vec<u8> },
}

/// What a client uploads for a sketched update.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchEncoded {
    pub rows: usize,
    pub cols: usize,
    pub rotate: bool,
    pub rotation_seed: u64,
    pub subsample_seed: u64,
    pub fraction: f32,
    pub payload: SketchPayload,
}

impl SketchEncoded {
    pub fn config(&self) -> SketchConfig {
        SketchConfig {
            rotate: self.rotate,
            subsample_fraction: self.fraction,
            bits: match &self.payload {
                SketchPayload::Raw(_) => None,
                SketchPayload::Quantized { params, .. } => Some(params.bits),
            },
        }
    }
}

/// Seeds for the three random stages of one sketch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchSeeds {
    pub rotation: u64,
    pub subsample: u64,
    pub quantization: u64,
}

impl SketchSeeds {
    /// Splits one stream seed into the three stage seeds.
    pub fn from_stream(seed: u64) -> Self {
        Self {
            rotation: derive_seed(seed, 1),
            subsample: derive_seed(seed, 2),
            quantization: derive_seed(seed, 3),
        }
    }
}

pub fn sketch_encode(h: &Matrix, cfg: &SketchConfig, seeds: SketchSeeds) -> Result<SketchEncoded> {
    cfg.validate()?;
    let d = h.len();
    let working = if cfg.rotate {
        rotate(h.data(), &RotationSpec::new(seeds.rotation, d))?
    } else {
        h.data().to_vec()
    };
    let sub = subsample(&working, cfg.subsample_fraction, &mut SeededRng::new(seeds.subsample))?;
    if sub.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sketch values"));
    }
    let payload = match cfg.bits {
        None => SketchPayload::Raw(sub.values),
        Some(b) => {
            let (params, levels) = quantize(&sub.values, b, &mut SeededRng::new(seeds.quantization))?;
            SketchPayload::Quantized { params, levels }
        }
    };
    Ok(SketchEncoded {
        rows: h.rows(),
        cols: h.cols(),
        rotate: cfg.rotate,
        rotation_seed: if cfg.rotate { seeds.rotation } else { 0 },
        subsample_seed: seeds.subsample,
        fraction: cfg.subsample_fraction,
        payload,
    })
}

pub fn sketch_decode(enc: &SketchEncoded, dims: (usize, usize)) -> Result<Matrix> {
    let (rows, cols) = dims;
    if (enc.rows, enc.cols) != dims {
        return Err(Error::ShapeMismatch(format!(
            "encoded {}x{} for a {rows}x{cols} layer",
            enc.rows, enc.cols
        )));
    }
    let cfg = enc.config();
    cfg.validate()?;
    let d = rows * cols;
    let n = cfg.working_dim(d);
    let kept = cfg.kept(d);
    let values = match &enc.payload {
        SketchPayload::Raw(v) => {
            if v.len() != kept {
                return Err(Error::CorruptPayload(format!(
                    "{} raw values, expected {kept}",
                    v.len()
                )));
            }
            v.clone()
        }
        SketchPayload::Quantized { params, levels } => {
            let expected = if params.is_zero_range() { 0 } else { kept };
            if levels.len() != expected {
                return Err(Error::CorruptPayload(format!(
                    "{} quantized values, expected {expected}",
                    levels.len()
                )));
            }
            if levels.iter().any(|&l| usize::from(l) >= params.num_levels()) {
                return Err(Error::CorruptPayload("level index out of range".into()));
            }
            dequantize(params, levels, kept)
        }
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sketch payload"));
    }
    let indices = SeededRng::new(enc.subsample_seed).sample_indices(n, kept);
    let working = unsubsample(n, &indices, &values);
    let data = if enc.rotate {
        derotate(&working, &RotationSpec::new(enc.rotation_seed, d), d)?
    } else {
        working
    };
    Ok(Matrix::from_raw(rows, cols, data))
}

/// Mean squared per-coordinate error `E‖decode(encode(h)) − h‖² / d` over
/// `trials` independent seeds.
pub fn quantization_mse(h: &[f32], cfg: &SketchConfig, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidConfig {
            field: "trials".into(),
            reason: "must be at least 1".into(),
        });
    }
    let m = Matrix::new(1, h.len(), h.to_vec())?;
    let mut total = 0.0;
    for t in 0..trials {
        let seeds = SketchSeeds::from_stream(derive_seed(seed, t as u64));
        let dec = sketch_decode(&sketch_encode(&m, cfg, seeds)?, m.shape())?;
        total += dec
            .data()
            .iter()
            .zip(h)
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
            .sum::<f64>()
            / h.len() as f64;
    }
    Ok(total / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_vec(n: usize, seed: u64) -> Vec<f32> {
        let mut r = SeededRng::new(seed);
        (0..n).map(|_| r.normal() as f32).collect()
    }

    fn norm(v: &[f32]) -> f64 {
        v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn fwht_small_cases() {
        let mut v = [1.0, 0.0, 0.0, 0.0];
        fwht(&mut v).unwrap();
        assert_eq!(v, [0.5; 4]);
        let mut v = [1.0; 4];
        fwht(&mut v).unwrap();
        assert_eq!(v, [2.0, 0.0, 0.0, 0.0]);
        assert!(matches!(fwht(&mut [1.0; 3]), Err(Error::NotPowerOfTwo(3))));
    }

    #[test]
    fn fwht_matches_dense_hadamard() {
        // H[i][j] = (-1)^popcount(i & j) / sqrt(n)
        let n = 16;
        let x = random_vec(n, 1);
        let mut y = x.clone();
        fwht(&mut y).unwrap();
        for i in 0..n {
            let s: f64 = (0..n)
                .map(|j| {
                    let sign = if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    sign * f64::from(x[j])
                })
                .sum::<f64>()
                / (n as f64).sqrt();
            assert!((f64::from(y[i]) - s).abs() < 1e-5);
        }
    }

    #[test]
    fn fwht_involution_and_norm() {
        let x = random_vec(256, 2);
        let mut y = x.clone();
        fwht(&mut y).unwrap();
        assert!((norm(&y) - norm(&x)).abs() / norm(&x) < 1e-5);
        fwht(&mut y).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn rotation_with_unit_diagonal_is_plain_fwht() {
        let x = random_vec(64, 3);
        let mut expect = x.clone();
        fwht(&mut expect).unwrap();
        assert_eq!(rotate_with_signs(&x, &[1.0; 64]).unwrap(), expect);
    }

    #[test]
    fn rotation_round_trip_with_padding() {
        let h = random_vec(1000, 4);
        let spec = RotationSpec::new(99, 1000);
        assert_eq!(spec.padded_dim, 1024);
        let y = rotate(&h, &spec).unwrap();
        assert_eq!(y.len(), 1024);
        let back = derotate(&y, &spec, 1000).unwrap();
        let err = h.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err < 1e-5, "max error {err}");
        assert!(derotate(&y[..512], &spec, 1000).is_err());
    }

    #[test]
    fn rotation_spreads_a_spike() {
        let mut h = vec![0.0f32; 1024];
        h[0] = 100.0;
        let y = rotate(&h, &RotationSpec::new(5, 1024)).unwrap();
        let expect = 100.0 / 32.0;
        assert!(y.iter().all(|v| (v.abs() - expect).abs() < 1e-4));
    }

    #[test]
    fn subsample_degenerate_and_scaled() {
        let h = [1.0, 2.0, 3.0, 4.0];
        let s = subsample(&h, 1.0, &mut SeededRng::new(1)).unwrap();
        assert_eq!(s.indices, vec![0, 1, 2, 3]);
        assert_eq!(s.values, h.to_vec());
        assert_eq!(s.scale, 1.0);

        let s = subsample(&h, 0.5, &mut SeededRng::new(2)).unwrap();
        assert_eq!(s.indices.len(), 2);
        assert_eq!(s.scale, 2.0);
        let rec = unsubsample(4, &s.indices, &s.values);
        for i in 0..4 {
            let expect = if s.indices.contains(&i) { 2.0 * h[i] } else { 0.0 };
            assert_eq!(rec[i], expect);
        }
        // kept {0, 2} reconstructs [2h0, 0, 2h2, 0]
        assert_eq!(unsubsample(4, &[0, 2], &[2.0 * h[0], 2.0 * h[2]]), vec![2.0, 0.0, 6.0, 0.0]);
        assert!(subsample(&h, 0.0, &mut SeededRng::new(2)).is_err());
    }

    #[test]
    fn one_bit_endpoints_are_deterministic() {
        let h = [0.0, 1.0, 0.3];
        for s in 0..50 {
            let (p, lv) = quantize(&h, 1, &mut SeededRng::new(s)).unwrap();
            assert_eq!((p.h_min, p.h_max), (0.0, 1.0));
            assert_eq!(lv[0], 0);
            assert_eq!(lv[1], 1);
        }
    }

    #[test]
    fn zero_range_is_exact() {
        let h = [0.7f32; 10];
        let (p, lv) = quantize(&h, 1, &mut SeededRng::new(1)).unwrap();
        assert!(lv.is_empty());
        assert_eq!(dequantize(&p, &lv, 10), h.to_vec());
    }

    #[test]
    fn two_bit_rounding_probabilities() {
        // levels {0,1,2,3}; 1.25 rounds to 1 w.p. 0.75 and to 2 w.p. 0.25
        let h = [0.0, 3.0, 1.25];
        let n = 100_000;
        let mut ups = 0usize;
        let mut sum = 0.0f64;
        let mut rng = SeededRng::new(10);
        for _ in 0..n {
            let (p, lv) = quantize(&h, 2, &mut rng).unwrap();
            assert!(lv[2] == 1 || lv[2] == 2);
            ups += usize::from(lv[2] == 2);
            sum += f64::from(p.level(lv[2]));
        }
        let mean = sum / n as f64;
        let sigma = (0.25f64 * 0.75).sqrt();
        assert!((mean - 1.25).abs() < 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
        let frac = ups as f64 / n as f64;
        assert!((frac - 0.25).abs() < 3.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn quantized_values_lie_on_the_grid() {
        let h = random_vec(500, 7);
        for b in 1..=8u8 {
            let (p, lv) = quantize(&h, b, &mut SeededRng::new(u64::from(b))).unwrap();
            let step = p.step();
            for (&x, &l) in h.iter().zip(&lv) {
                assert!(usize::from(l) < p.num_levels());
                assert!((f64::from(p.level(l)) - f64::from(x)).abs() <= step * (1.0 + 1e-6));
            }
        }
        assert!(quantize(&h, 0, &mut SeededRng::new(0)).is_err());
        assert!(quantize(&h, 9, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn lossless_pipelines() {
        let mut r = SeededRng::new(20);
        let h = Matrix::from_fn(7, 9, |_, _| r.normal() as f32);
        let seeds = SketchSeeds::from_stream(1);
        let plain = SketchConfig {
            rotate: false,
            subsample_fraction: 1.0,
            bits: None,
        };
        let dec = sketch_decode(&sketch_encode(&h, &plain, seeds).unwrap(), (7, 9)).unwrap();
        assert_eq!(dec, h);
        let rotated = SketchConfig { rotate: true, ..plain };
        let dec = sketch_decode(&sketch_encode(&h, &rotated, seeds).unwrap(), (7, 9)).unwrap();
        assert!(dec.max_abs_diff(&h) < 1e-5);
    }

    #[test]
    fn end_to_end_unbiased() {
        let d = 64;
        let h = Matrix::new(1, d, random_vec(d, 30)).unwrap();
        let cfg = SketchConfig {
            rotate: true,
            subsample_fraction: 0.25,
            bits: Some(2),
        };
        let n = 10_000;
        let mut sum = vec![0.0f64; d];
        let mut sum_sq = vec![0.0f64; d];
        for t in 0..n {
            let dec = sketch_decode(
                &sketch_encode(&h, &cfg, SketchSeeds::from_stream(t)).unwrap(),
                (1, d),
            )
            .unwrap();
            for (i, &v) in dec.data().iter().enumerate() {
                sum[i] += f64::from(v);
                sum_sq[i] += f64::from(v).powi(2);
            }
        }
        for i in 0..d {
            let mean = sum[i] / n as f64;
            let sd = (sum_sq[i] / n as f64 - mean * mean).max(0.0).sqrt();
            let x = f64::from(h.data()[i]);
            assert!((mean - x).abs() <= 5.0 * sd / (n as f64).sqrt(), "coord {i}: {mean} vs {x}");
        }
    }

    #[test]
    fn decode_rejects_wrong_lengths() {
        let h = Matrix::new(1, 8, random_vec(8, 40)).unwrap();
        let cfg = SketchConfig {
            rotate: false,
            subsample_fraction: 0.5,
            bits: Some(3),
        };
        let mut enc = sketch_encode(&h, &cfg, SketchSeeds::from_stream(2)).unwrap();
        if let SketchPayload::Quantized { levels, .. } = &mut enc.payload {
            levels.pop();
        }
        assert!(matches!(sketch_decode(&enc, (1, 8)), Err(Error::CorruptPayload(_))));
        assert!(matches!(sketch_decode(&enc, (2, 4)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn mse_constant_vector_without_rotation_is_zero() {
        let h = vec![2.5f32; 256];
        for b in 1..=8 {
            let cfg = SketchConfig {
                rotate: false,
                subsample_fraction: 1.0,
                bits: Some(b),
            };
            assert_eq!(quantization_mse(&h, &cfg, 5, 1).unwrap(), 0.0);
        }
        let cfg = SketchConfig {
            rotate: false,
            subsample_fraction: 1.0,
            bits: Some(1),
        };
        assert!(quantization_mse(&h, &cfg, 0, 1).is_err());
    }

    #[test]
    fn mse_decreases_with_bits() {
        let h = random_vec(256, 50);
        let mut prev = f64::INFINITY;
        for b in 1..=8 {
            let cfg = SketchConfig {
                rotate: false,
                subsample_fraction: 1.0,
                bits: Some(b),
            };
            let mse = quantization_mse(&h, &cfg, 100, 3).unwrap();
            assert!(mse < prev, "b={b}: {mse} !< {prev}");
            prev = mse;
        }
    }

    #[test]
    fn rotation_reduces_error_on_sparse_signed_vector() {
        // Mostly zeros with extremes +-100: unrotated 1-bit rounds every zero
        // to an extreme.
        let mut h = vec![0.0f32; 1024];
        h[0] = 100.0;
        h[1] = -100.0;
        let mk = |rotate| SketchConfig {
            rotate,
            subsample_fraction: 1.0,
            bits: Some(1),
        };
        let plain = quantization_mse(&h, &mk(false), 200, 1).unwrap();
        let rotated = quantization_mse(&h, &mk(true), 200, 1).unwrap();
        assert!(plain > 0.0);
        assert!(rotated * 10.0 <= plain, "{rotated} vs {plain}");
    }
}
