//! The linear GNN model, its semi-supervised loss, and the exact
//! global-minimum quantities of the induced least-squares problem.
//!
//! The model with `H` layers maps features `X` to `W_{H+1} X_H` where
//! `X_l = W_l X_{l-1} S`; no shift is applied after the last layer. The loss
//! is evaluated only on the labeled columns `I`:
//! `(1/m) || f(X)_{*I} - Y ||_F^2` with `m = n_bar * d_y`.

use ndarray::Axis;

use crate::error::{Error, Result};
use crate::linalg;
use crate::shift::ShiftMatrix;
use crate::Mat;

/// Ordered weights `W_1 .. W_{H+1}` with a validated dimension schedule.
///
/// `W_l` has shape `d_l x d_{l-1}` with `d_0 = d_x` and `d_{H+1} = d_y`; the
/// hidden output dimensions must be non-increasing: `d_1 >= d_2 >= ... >= d_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStack {
    weights: Vec<Mat>,
}

impl WeightStack {
    pub fn new(weights: Vec<Mat>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::parameter(
                "a weight stack needs at least two layers (H >= 1)",
            ));
        }
        for (l, pair) in weights.windows(2).enumerate() {
            if pair[1].ncols() != pair[0].nrows() {
                return Err(Error::shape(format!(
                    "W_{} has {} columns but W_{} has {} rows",
                    l + 2,
                    pair[1].ncols(),
                    l + 1,
                    pair[0].nrows()
                )));
            }
            if pair[1].nrows() > pair[0].nrows() {
                return Err(Error::parameter(format!(
                    "hidden dimensions must be non-increasing: d_{} = {} < d_{} = {}",
                    l + 1,
                    pair[0].nrows(),
                    l + 2,
                    pair[1].nrows()
                )));
            }
        }
        Ok(WeightStack { weights })
    }

    /// Number of hidden layers `H`.
    pub fn depth(&self) -> usize {
        self.weights.len() - 1
    }

    /// Input feature dimension `d_x`.
    pub fn d_in(&self) -> usize {
        self.weights[0].ncols()
    }

    /// Output label dimension `d_y`.
    pub fn d_out(&self) -> usize {
        self.weights[self.weights.len() - 1].nrows()
    }

    /// The dimension schedule `(d_x, d_1, ..., d_H, d_y)`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.weights.len() + 1);
        dims.push(self.d_in());
        dims.extend(self.weights.iter().map(|w| w.nrows()));
        dims
    }

    pub fn layers(&self) -> &[Mat] {
        &self.weights
    }

    /// `W_{index+1}`, i.e. `layer(0)` is `W_1`.
    pub fn layer(&self, index: usize) -> &Mat {
        &self.weights[index]
    }

    pub fn into_layers(self) -> Vec<Mat> {
        self.weights
    }

    /// Total energy `sum_l ||W_l||_F^2`.
    pub fn total_energy(&self) -> f64 {
        self.weights.iter().map(|w| linalg::fro(w).powi(2)).sum()
    }

    /// `max_l || W_l W_l^T - W_{l+1}^T W_{l+1} ||_F`.
    pub fn balance_residual(&self) -> f64 {
        linalg::balancedness_residual(&self.weights)
    }
}

/// A semi-supervised node-regression instance.
///
/// Bundles features `X` (d_x x n), a shift operator, the depth `H`, labels
/// `Y` (d_y x n_bar) and the labeled index set `I`. Columns of `Y` pair
/// positionally with `I`, whose order is preserved. The restriction
/// `M = (X S^H)_{*I}` is computed once at construction.
#[derive(Debug, Clone)]
pub struct Problem {
    x: Mat,
    shift: ShiftMatrix,
    depth: usize,
    y: Mat,
    labeled: Vec<usize>,
    restricted: Mat,
}

impl Problem {
    pub fn new(
        x: Mat,
        shift: ShiftMatrix,
        depth: usize,
        y: Mat,
        labeled: Vec<usize>,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::parameter("depth H must be at least 1"));
        }
        let n = shift.n();
        if x.ncols() != n {
            return Err(Error::shape(format!(
                "X has {} columns but the graph has {} nodes",
                x.ncols(),
                n
            )));
        }
        if labeled.is_empty() {
            return Err(Error::parameter("labeled set must be non-empty"));
        }
        if y.ncols() != labeled.len() {
            return Err(Error::shape(format!(
                "Y has {} columns but the labeled set has {} indices",
                y.ncols(),
                labeled.len()
            )));
        }
        let mut seen = vec![false; n];
        for &i in &labeled {
            if i >= n {
                return Err(Error::parameter(format!(
                    "labeled index {i} out of range for n={n}"
                )));
            }
            if seen[i] {
                return Err(Error::parameter(format!("duplicate labeled index {i}")));
            }
            seen[i] = true;
        }
        let restricted = restrict_columns(&propagate(&x, &shift, depth), &labeled);
        Ok(Problem { x, shift, depth, y, labeled, restricted })
    }

    pub fn feature_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn label_dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn node_count(&self) -> usize {
        self.shift.n()
    }

    pub fn labeled_count(&self) -> usize {
        self.labeled.len()
    }

    /// Normalization constant `m = n_bar * d_y`.
    pub fn m(&self) -> f64 {
        (self.labeled.len() * self.y.nrows()) as f64
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    pub fn shift(&self) -> &ShiftMatrix {
        &self.shift
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    /// The cached restriction `M = (X S^H)_{*I}`, `d_x x n_bar`.
    pub fn restricted(&self) -> &Mat {
        &self.restricted
    }

    fn check_stack(&self, w: &WeightStack) -> Result<()> {
        if w.d_in() != self.feature_dim() {
            return Err(Error::shape(format!(
                "stack expects d_x = {}, problem has {}",
                w.d_in(),
                self.feature_dim()
            )));
        }
        if w.d_out() != self.label_dim() {
            return Err(Error::shape(format!(
                "stack produces d_y = {}, problem has {}",
                w.d_out(),
                self.label_dim()
            )));
        }
        if w.depth() != self.depth {
            return Err(Error::shape(format!(
                "stack depth {} does not match problem depth {}",
                w.depth(),
                self.depth
            )));
        }
        Ok(())
    }
}

/// `X S^depth` by repeated right-multiplication.
fn propagate(x: &Mat, shift: &ShiftMatrix, depth: usize) -> Mat {
    let mut acc = x.clone();
    for _ in 0..depth {
        acc = acc.dot(&shift.matrix);
    }
    acc
}

/// The restriction operator `(.)_{*I}`: select columns at `indices`,
/// preserving their order.
pub fn restrict_columns(m: &Mat, indices: &[usize]) -> Mat {
    m.select(Axis(1), indices)
}

/// Layer-by-layer forward pass: `X_l = W_l X_{l-1} S`, output `W_{H+1} X_H`.
pub fn forward(w: &WeightStack, prob: &Problem) -> Result<Mat> {
    prob.check_stack(w)?;
    let mut acc = prob.x.clone();
    for l in 0..prob.depth {
        acc = w.layer(l).dot(&acc).dot(&prob.shift.matrix);
    }
    Ok(w.layer(prob.depth).dot(&acc))
}

/// The collapsed end-to-end map `W_{H+1} W_H ... W_1`, `d_y x d_x`.
pub fn collapsed_product(w: &WeightStack) -> Mat {
    let mut acc = w.layer(0).clone();
    for l in 1..w.layers().len() {
        acc = w.layer(l).dot(&acc);
    }
    acc
}

/// Mean squared loss on the labeled columns,
/// `(1/m) || forward(W)_{*I} - Y ||_F^2`.
pub fn loss(w: &WeightStack, prob: &Problem) -> Result<f64> {
    let out = forward(w, prob)?;
    let restricted = restrict_columns(&out, &prob.labeled);
    Ok(linalg::fro(&(&restricted - &prob.y)).powi(2) / prob.m())
}

/// Same loss evaluated through the collapsed product and the cached
/// restriction: `(1/m) || W_{[1:H+1]} M - Y ||_F^2`.
///
/// Algebraically identical to [`loss`] (the model is linear); this is the
/// cheap path used inside training loops, where the full `n`-column forward
/// pass would dominate the cost.
pub fn loss_collapsed(w: &WeightStack, prob: &Problem) -> Result<f64> {
    prob.check_stack(w)?;
    let pred = collapsed_product(w).dot(&prob.restricted);
    Ok(linalg::fro(&(&pred - &prob.y)).powi(2) / prob.m())
}

/// The unconstrained least-squares minimum
/// `(1/m) || Y (I - M^dagger M) ||_F^2` over all `d_y x d_x` matrices.
pub fn least_squares_min_loss(prob: &Problem) -> Result<f64> {
    let p = linalg::row_space_projector(&prob.restricted)?;
    let fitted = prob.y.dot(&p);
    Ok(linalg::fro(&(&prob.y - &fitted)).powi(2) / prob.m())
}

/// Global minimum of the GNN loss, exact when the architecture has no
/// bottleneck.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinLoss {
    /// Every hidden dimension is at least `min(d_x, d_y)`, so the rank
    /// constraint is inactive and this is the exact global minimum.
    Exact(f64),
    /// Some hidden layer is a bottleneck; the unconstrained least-squares
    /// value is only a lower bound for the GNN loss.
    LowerBound(f64),
}

impl MinLoss {
    pub fn value(self) -> f64 {
        match self {
            MinLoss::Exact(v) | MinLoss::LowerBound(v) => v,
        }
    }

    pub fn is_exact(self) -> bool {
        matches!(self, MinLoss::Exact(_))
    }
}

/// Global minimum of the loss for an architecture with the given hidden
/// dimensions `(d_1, ..., d_H)`.
pub fn global_min_loss(prob: &Problem, hidden_dims: &[usize]) -> Result<MinLoss> {
    let value = least_squares_min_loss(prob)?;
    let needed = prob.feature_dim().min(prob.label_dim());
    if hidden_dims.iter().all(|&d| d >= needed) {
        Ok(MinLoss::Exact(value))
    } else {
        Ok(MinLoss::LowerBound(value))
    }
}

/// Global minimum for the architecture of a concrete stack.
pub fn global_min_loss_for(prob: &Problem, w: &WeightStack) -> Result<MinLoss> {
    let dims = w.dims();
    global_min_loss(prob, &dims[1..dims.len() - 1])
}

/// The unique least-squares minimizer of minimal Frobenius norm,
/// `W_tilde = Y M^dagger`.
pub fn min_norm_solution(prob: &Problem) -> Result<Mat> {
    let pinv = linalg::pseudoinverse(&prob.restricted)?;
    Ok(prob.y.dot(&pinv))
}
