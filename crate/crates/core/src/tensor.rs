//! Dense 32-bit matrices and the model parameter container.
//!
//! Matrices are row-major: entry `(i, j)` of a `rows x cols` matrix lives at
//! `data[i * cols + j]`. Flattening a matrix (the `vec(H)` used by the
//! sketching codecs) is therefore just its data slice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    /// Builds a matrix, checking the length and that every entry is finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::ShapeMismatch(format!("empty shape {rows}x{cols}")));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::DimensionOverflow(format!("{rows}x{cols}")))?;
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} needs {len} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix data"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty shape {rows}x{cols}");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0f32; self.rows * rhs.cols];
        matmul_into(&self.data, &rhs.data, &mut out, self.rows, self.cols, rhs.cols);
        Ok(Matrix::from_raw(self.rows, rhs.cols, out))
    }

    /// `selfᵀ * rhs`.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::ShapeMismatch(format!(
                "({}x{})ᵀ * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0f32; self.cols * rhs.cols];
        t_matmul_into(&self.data, &rhs.data, &mut out, self.rows, self.cols, rhs.cols);
        Ok(Matrix::from_raw(self.cols, rhs.cols, out))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f32, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} += {:?}",
                self.shape(),
                other.shape()
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        let mut out = self.clone();
        out.add_scaled(-1.0, other)?;
        Ok(out)
    }

    pub fn scale(&mut self, alpha: f32) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f32 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

/// `out (m x n) = a (m x k) * b (k x n)`, all row-major. `out` is overwritten.
pub(crate) fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bpj) in out_row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bpj;
            }
        }
    }
}

/// `out (k x n) = aᵀ * b` with `a (m x k)`, `b (m x n)`. `out` is overwritten.
pub(crate) fn t_matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bij) in out[p * n..(p + 1) * n].iter_mut().zip(b_row) {
                *o += aip * bij;
            }
        }
    }
}

/// `out (m x k) = a (m x n) * bᵀ` with `b (k x n)`. `out` is overwritten.
pub(crate) fn matmul_t_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = a_row
                .iter()
                .zip(&b[p * n..(p + 1) * n])
                .map(|(x, y)| x * y)
                .sum();
        }
    }
}

/// A rank-4 convolution kernel with shape `[in, width, height, out]`,
/// stored row-major (the `out` index varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel4 {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Kernel4 {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::DimensionOverflow(format!("{shape:?}")))?;
        if shape.contains(&0) {
            return Err(Error::ShapeMismatch(format!("zero dimension in {shape:?}")));
        }
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

/// Reshapes a kernel to `(in * width * height) x out`.
///
/// Row `(c * width + x) * height + y` holds the output weights of input
/// channel `c` at spatial position `(x, y)`. With the row-major kernel
/// layout this is a pure reinterpretation of the data.
pub fn reshape_kernel(kernel: &Kernel4) -> Result<Matrix> {
    let [c, w, h, out] = kernel.shape;
    let rows = c
        .checked_mul(w)
        .and_then(|v| v.checked_mul(h))
        .ok_or_else(|| Error::DimensionOverflow(format!("{:?}", kernel.shape)))?;
    Matrix::new(rows, out, kernel.data.clone())
}

/// Inverse of [`reshape_kernel`] given the spatial shape `[in, width, height]`.
pub fn unreshape_kernel(m: &Matrix, in_w_h: [usize; 3]) -> Result<Kernel4> {
    let [c, w, h] = in_w_h;
    if c.checked_mul(w).and_then(|v| v.checked_mul(h)) != Some(m.rows()) {
        return Err(Error::ShapeMismatch(format!(
            "{in_w_h:?} does not match {} rows",
            m.rows()
        )));
    }
    Kernel4::new([c, w, h, m.cols()], m.data().to_vec())
}

/// One named weight matrix of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub weights: Matrix,
    /// False for variables small enough to always be sent uncompressed.
    pub compressible: bool,
}

/// The global model: an ordered list of named 2D weight matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

impl ModelParams {
    pub fn new(layers: Vec<(String, Matrix)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &layers {
            if !seen.insert(name.as_str()) {
                return Err(Error::ShapeMismatch(format!("duplicate layer name {name}")));
            }
        }
        Ok(Self {
            layers: layers
                .into_iter()
                .map(|(name, weights)| Layer {
                    name,
                    weights,
                    compressible: true,
                })
                .collect(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Matrix {
        &self.layers[i].weights
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.layers[i].weights
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    /// Marks layers holding less than `threshold` of all parameters as
    /// incompressible; everything else is compressible.
    pub fn apply_exemption(&mut self, threshold: f64) {
        let total = self.num_params() as f64;
        for l in &mut self.layers {
            l.compressible = (l.weights.len() as f64) >= threshold * total;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite())
    }
}
