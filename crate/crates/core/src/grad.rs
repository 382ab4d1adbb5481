//! Analytic per-layer gradients of the loss and an independent
//! finite-difference oracle.
//!
//! For the linear model the loss is
//! `(1/m) || A W_l B M - Y ||_F^2` in each layer, with
//! `A = W_{H+1} ... W_{l+1}`, `B = W_{l-1} ... W_1` (empty products are
//! identities) and `M = (X S^H)_{*I}`. The gradient follows directly:
//!
//! `grad_{W_l} = (2/m) A^T (Yhat - Y) M^T B^T`
//!
//! Everything is assembled from small `d`-sized products through the cached
//! restriction; the Kronecker forms that appear in the derivation are never
//! materialized.

use crate::error::Result;
use crate::gnn::{collapsed_product, loss_collapsed, Problem, WeightStack};
use crate::linalg::fro;
use crate::Mat;

/// Per-layer gradient matrices, shaped like the stack they came from.
#[derive(Debug, Clone)]
pub struct GradientStack {
    layers: Vec<Mat>,
    norm_sq: f64,
}

impl GradientStack {
    fn new(layers: Vec<Mat>) -> Self {
        let norm_sq = layers.iter().map(|g| fro(g).powi(2)).sum();
        GradientStack { layers, norm_sq }
    }

    pub fn layers(&self) -> &[Mat] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &Mat {
        &self.layers[index]
    }

    /// `|grad L(W)|^2 = sum_l ||grad_{W_l}||_F^2`.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// Inner product with a direction of matching shapes.
    pub fn dot(&self, other: &GradientStack) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }
}

/// Exact analytic gradient of the loss with respect to every layer.
pub fn gradients(w: &WeightStack, prob: &Problem) -> Result<GradientStack> {
    // loss_collapsed also validates the stack/problem dimension chain
    let _ = loss_collapsed(w, prob)?;
    let layers = w.layers();
    let count = layers.len();
    let m = prob.restricted();

    // suffix[l] = W_{H+1} ... W_{l+2} ... acting above layer l (0-based), so
    // suffix[count-1] = I_{d_y}
    let mut suffix: Vec<Mat> = vec![Mat::eye(w.d_out()); count];
    for l in (0..count - 1).rev() {
        suffix[l] = suffix[l + 1].dot(&layers[l + 1]);
    }
    // prefix[l] = W_l ... W_1, prefix[0] = I_{d_x}
    let mut prefix: Vec<Mat> = vec![Mat::eye(w.d_in()); count];
    for l in 1..count {
        prefix[l] = layers[l - 1].dot(&prefix[l - 1]);
    }

    let residual = collapsed_product(w).dot(m) - prob.y();
    let scale = 2.0 / prob.m();
    let core = residual.dot(&m.t()); // d_y x d_x

    let grads = (0..count)
        .map(|l| (suffix[l].t().dot(&core).dot(&prefix[l].t())) * scale)
        .collect();
    Ok(GradientStack::new(grads))
}

/// Central finite differences `(L(w+h) - L(w-h)) / 2h` on every scalar
/// parameter. Independent verification oracle for [`gradients`].
pub fn fd_gradient(w: &WeightStack, prob: &Problem, h: f64) -> Result<GradientStack> {
    let _ = loss_collapsed(w, prob)?;
    let mut layers = w.layers().to_vec();
    let mut grads: Vec<Mat> = Vec::with_capacity(layers.len());
    for l in 0..layers.len() {
        let (rows, cols) = layers[l].dim();
        let mut g = Mat::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                let orig = layers[l][[i, j]];
                layers[l][[i, j]] = orig + h;
                let plus = eval(&layers, prob)?;
                layers[l][[i, j]] = orig - h;
                let minus = eval(&layers, prob)?;
                layers[l][[i, j]] = orig;
                g[[i, j]] = (plus - minus) / (2.0 * h);
            }
        }
        grads.push(g);
    }
    Ok(GradientStack::new(grads))
}

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-6;

fn eval(layers: &[Mat], prob: &Problem) -> Result<f64> {
    let stack = WeightStack::new(layers.to_vec())?;
    loss_collapsed(&stack, prob)
}

/// Largest per-entry relative deviation between two gradient stacks.
///
/// The denominator is floored at `1e-6` times the largest entry magnitude of
/// either stack, so structurally tiny entries do not blow up the metric.
pub fn max_relative_entry_error(a: &GradientStack, b: &GradientStack) -> f64 {
    let mut scale = 0.0_f64;
    for (ga, gb) in a.layers.iter().zip(&b.layers) {
        for (&x, &y) in ga.iter().zip(gb.iter()) {
            scale = scale.max(x.abs()).max(y.abs());
        }
    }
    if scale == 0.0 {
        return 0.0;
    }
    let floor = 1e-6 * scale;
    let mut worst = 0.0_f64;
    for (ga, gb) in a.layers.iter().zip(&b.layers) {
        for (&x, &y) in ga.iter().zip(gb.iter()) {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
