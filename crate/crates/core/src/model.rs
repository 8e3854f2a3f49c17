//! Desk-scale trainer models: softmax regression and a one-hidden-layer
//! tanh MLP. Inputs are row vectors, so a dense layer is `x · W + b` with
//! `W` stored `inputs x outputs` and `b` as a `1 x outputs` matrix.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{matmul_into, matmul_t_into, t_matmul_into, Matrix, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Softmax,
    Mlp { hidden: usize },
}

impl ModelSpec {
    /// Layer order: `w, b` for softmax; `w1, b1, w2, b2` for the MLP.
    pub fn init(&self, dim: usize, classes: usize, rng: &mut SeededRng) -> Result<ModelParams> {
        match *self {
            ModelSpec::Softmax => ModelParams::new(vec![
                ("w".into(), Matrix::zeros(dim, classes)),
                ("b".into(), Matrix::zeros(1, classes)),
            ]),
            ModelSpec::Mlp { hidden } => {
                let s1 = (1.0 / dim as f64).sqrt();
                let s2 = (1.0 / hidden as f64).sqrt();
                let w1 = Matrix::from_fn(dim, hidden, |_, _| (rng.normal() * s1) as f32);
                let w2 = Matrix::from_fn(hidden, classes, |_, _| (rng.normal() * s2) as f32);
                ModelParams::new(vec![
                    ("w1".into(), w1),
                    ("b1".into(), Matrix::zeros(1, hidden)),
                    ("w2".into(), w2),
                    ("b2".into(), Matrix::zeros(1, classes)),
                ])
            }
        }
    }
}

/// Adds the bias row to every row of `z (n x m)`.
fn add_bias(z: &mut [f32], b: &[f32]) {
    for row in z.chunks_exact_mut(b.len()) {
        for (v, &bi) in row.iter_mut().zip(b) {
            *v += bi;
        }
    }
}

/// Turns logits into probabilities in place; returns the summed
/// cross-entropy against `labels`.
fn softmax_xent(z: &mut [f32], labels: &[u32], classes: usize) -> f64 {
    let mut loss = 0.0f64;
    for (row, &y) in z.chunks_exact_mut(classes).zip(labels) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let zy = row[y as usize];
        loss += f64::from(sum.ln()) - f64::from(zy.ln());
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    loss
}

fn column_sums(m: &[f32], cols: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; cols];
    for row in m.chunks_exact(cols) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

/// Logits for a batch of row-major inputs.
fn logits(spec: &ModelSpec, params: &ModelParams, x: &[f32], n: usize) -> Vec<f32> {
    match *spec {
        ModelSpec::Softmax => {
            let (w, b) = (params.layer(0), params.layer(1));
            let mut z = vec![0.0f32; n * w.cols()];
            matmul_into(x, w.data(), &mut z, n, w.rows(), w.cols());
            add_bias(&mut z, b.data());
            z
        }
        ModelSpec::Mlp { hidden } => {
            let (w1, b1, w2, b2) = (params.layer(0), params.layer(1), params.layer(2), params.layer(3));
            let mut a1 = vec![0.0f32; n * hidden];
            matmul_into(x, w1.data(), &mut a1, n, w1.rows(), hidden);
            add_bias(&mut a1, b1.data());
            a1.iter_mut().for_each(|v| *v = v.tanh());
            let mut z = vec![0.0f32; n * w2.cols()];
            matmul_into(&a1, w2.data(), &mut z, n, hidden, w2.cols());
            add_bias(&mut z, b2.data());
            z
        }
    }
}

/// Mean cross-entropy of a batch and its gradient with respect to every
/// layer, in layer order.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    x: &[f32],
    labels: &[u32],
) -> (f64, Vec<Matrix>) {
    let n = labels.len();
    let inv_n = 1.0 / n as f32;
    match *spec {
        ModelSpec::Softmax => {
            let w = params.layer(0);
            let (dim, classes) = w.shape();
            let mut p = logits(spec, params, x, n);
            let loss = softmax_xent(&mut p, labels, classes) / n as f64;
            for (row, &y) in p.chunks_exact_mut(classes).zip(labels) {
                row[y as usize] -= 1.0;
                row.iter_mut().for_each(|v| *v *= inv_n);
            }
            let mut gw = vec![0.0f32; dim * classes];
            t_matmul_into(x, &p, &mut gw, n, dim, classes);
            let gb = column_sums(&p, classes);
            (
                loss,
                vec![Matrix::from_raw(dim, classes, gw), Matrix::from_raw(1, classes, gb)],
            )
        }
        ModelSpec::Mlp { hidden } => {
            let (w1, b1, w2, b2) = (params.layer(0), params.layer(1), params.layer(2), params.layer(3));
            let dim = w1.rows();
            let classes = w2.cols();
            let mut a1 = vec![0.0f32; n * hidden];
            matmul_into(x, w1.data(), &mut a1, n, dim, hidden);
            add_bias(&mut a1, b1.data());
            a1.iter_mut().for_each(|v| *v = v.tanh());
            let mut p = vec![0.0f32; n * classes];
            matmul_into(&a1, w2.data(), &mut p, n, hidden, classes);
            add_bias(&mut p, b2.data());
            let loss = softmax_xent(&mut p, labels, classes) / n as f64;
            for (row, &y) in p.chunks_exact_mut(classes).zip(labels) {
                row[y as usize] -= 1.0;
                row.iter_mut().for_each(|v| *v *= inv_n);
            }
            let mut gw2 = vec![0.0f32; hidden * classes];
            t_matmul_into(&a1, &p, &mut gw2, n, hidden, classes);
            let gb2 = column_sums(&p, classes);
            let mut da1 = vec![0.0f32; n * hidden];
            matmul_t_into(&p, w2.data(), &mut da1, n, classes, hidden);
            for (d, &a) in da1.iter_mut().zip(&a1) {
                *d *= 1.0 - a * a;
            }
            let mut gw1 = vec![0.0f32; dim * hidden];
            t_matmul_into(x, &da1, &mut gw1, n, dim, hidden);
            let gb1 = column_sums(&da1, hidden);
            (
                loss,
                vec![
                    Matrix::from_raw(dim, hidden, gw1),
                    Matrix::from_raw(1, hidden, gb1),
                    Matrix::from_raw(hidden, classes, gw2),
                    Matrix::from_raw(1, classes, gb2),
                ],
            )
        }
    }
}

/// Top-1 accuracy and mean cross-entropy over a dataset.
pub fn evaluate(spec: &ModelSpec, params: &ModelParams, data: &Dataset) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    let classes = data.num_classes;
    let mut correct = 0usize;
    let mut loss = 0.0;
    const CHUNK: usize = 1024;
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let x = &data.features[start * data.dim..end * data.dim];
        let y = &data.labels[start..end];
        let mut z = logits(spec, params, x, end - start);
        for (row, &label) in z.chunks_exact(classes).zip(y) {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            correct += usize::from(best == label as usize);
        }
        loss += softmax_xent(&mut z, y, classes);
    }
    (correct as f64 / data.len() as f64, loss / data.len() as f64)
}
