//! Closed-form theoretical quantities: convergence-rate constants, bound
//! curves, the minimum total weight energy, and spectral predictors for the
//! restricted singular value.

use ndarray_linalg::EigVals;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{min_norm_solution, Problem, WeightStack};
use crate::init::beta_and_radius;
use crate::linalg::{self, sigma_small};
use crate::shift::ShiftMatrix;
use crate::Mat;

/// The rate constants attached to a `(W(0), problem)` pair.
///
/// `alpha_lower = beta sigma_small^2(M) / m` is the exponent of the flow
/// envelope `exp(-alpha t)` and half of it drives the per-step descent
/// contraction `1 - eta alpha / 2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateBundle {
    pub sigma_small_restricted: f64,
    pub beta: f64,
    pub alpha_lower: f64,
    pub m: f64,
}

impl RateBundle {
    /// Exponential decay rate of the flow envelope, per unit time.
    pub fn flow_rate(&self) -> f64 {
        self.alpha_lower
    }

    /// Per-iteration contraction base of gradient descent with step `eta`.
    pub fn descent_factor(&self, eta: f64) -> f64 {
        1.0 - eta * self.alpha_lower / 2.0
    }
}

/// Assemble the rate constants for an initialization on a problem.
///
/// `sigma_small` is taken to be zero (no certificate) when the restriction
/// is numerically all-zero.
pub fn rate_bundle(w0: &WeightStack, prob: &Problem) -> Result<RateBundle> {
    let sigma = match sigma_small(prob.restricted()) {
        Ok(s) => s.value,
        Err(_) => 0.0,
    };
    let (beta, _r) = beta_and_radius(w0)?;
    let m = prob.m();
    Ok(RateBundle {
        sigma_small_restricted: sigma,
        beta,
        alpha_lower: beta * sigma * sigma / m,
        m,
    })
}

/// The theoretical envelope `bound(t) = exp(-alpha t) (L_0 - L_min)`
/// evaluated on a grid of times.
pub fn flow_bound_curve(
    bundle: &RateBundle,
    loss0: f64,
    min_loss: f64,
    ts: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if loss0 < min_loss {
        return Err(Error::parameter(format!(
            "loss0 = {loss0} is below the global minimum {min_loss}"
        )));
    }
    let gap = loss0 - min_loss;
    Ok(ts
        .iter()
        .map(|&t| (t, (-bundle.alpha_lower * t).exp() * gap))
        .collect())
}

/// Minimum total weight energy over all depth-`depth` factorizations of the
/// minimum-norm least-squares solution:
/// `(depth+1) * sum_i sigma_i^{2/(depth+1)}(Y M^dagger)`
/// with `M = (X S^depth)_{*I}`.
pub fn energy_min_value(prob: &Problem, depth: usize) -> Result<f64> {
    if depth == 0 {
        return Err(Error::parameter("depth must be at least 1"));
    }
    let w_tilde = if depth == prob.depth() {
        min_norm_solution(prob)?
    } else {
        // re-restrict at the requested depth
        let mut acc = prob.x().clone();
        for _ in 0..depth {
            acc = acc.dot(&prob.shift().matrix);
        }
        let m = crate::gnn::restrict_columns(&acc, prob.labeled());
        prob.y().dot(&linalg::pseudoinverse(&m)?)
    };
    if linalg::fro(&w_tilde) == 0.0 {
        return Ok(0.0);
    }
    let svd = linalg::svd(&w_tilde)?;
    let cut = svd.rank_tol * svd.sigma_max();
    let exponent = 2.0 / (depth as f64 + 1.0);
    let sum: f64 = svd
        .sigma
        .iter()
        .filter(|&&s| s > cut)
        .map(|&s| s.powf(exponent))
        .sum();
    Ok((depth as f64 + 1.0) * sum)
}

/// Prediction of `E sigma_small((X S^H)_{*I})` over uniformly sampled
/// labeled sets of size `n_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaPrediction {
    /// `n_bar >= d_x`: the general-position regime where the linear scaling
    /// `(n_bar / n) sigma_small(X S^H)` is claimed.
    InRegime(f64),
    /// `n_bar < d_x`: the restriction is necessarily rank-deficient and the
    /// scaling is not claimed; the linear value is still reported.
    BelowFeatureDim(f64),
}

impl SigmaPrediction {
    pub fn value(self) -> f64 {
        match self {
            SigmaPrediction::InRegime(v) | SigmaPrediction::BelowFeatureDim(v) => v,
        }
    }

    pub fn in_regime(self) -> bool {
        matches!(self, SigmaPrediction::InRegime(_))
    }
}

/// `(n_bar / n) * sigma_small(X S^depth)`, flagged by regime.
pub fn expected_sigma_small(
    x: &Mat,
    shift: &ShiftMatrix,
    depth: usize,
    n_bar: usize,
) -> Result<SigmaPrediction> {
    let n = shift.n();
    if x.ncols() != n {
        return Err(Error::shape(format!(
            "X has {} columns but the graph has {n} nodes",
            x.ncols()
        )));
    }
    if n_bar == 0 || n_bar > n {
        return Err(Error::parameter(format!("n_bar = {n_bar} must lie in 1..={n}")));
    }
    let mut acc = x.clone();
    for _ in 0..depth {
        acc = acc.dot(&shift.matrix);
    }
    let sigma = sigma_small(&acc)?;
    let value = n_bar as f64 / n as f64 * sigma.value;
    if n_bar >= x.nrows() {
        Ok(SigmaPrediction::InRegime(value))
    } else {
        Ok(SigmaPrediction::BelowFeatureDim(value))
    }
}

/// Depth-scaling heuristic
/// `lambda_{d_x}(S)^{depth-1} * sigma_small(X S)`, where `lambda_{d_x}` is
/// the `d_x`-th largest eigenvalue magnitude of `S`.
///
/// A diagnostic, not a certified bound; callers should report rather than
/// assert against it.
pub fn depth_scaling_estimate(prob: &Problem, depth: usize) -> Result<f64> {
    let d_x = prob.feature_dim();
    let n = prob.node_count();
    if d_x > n {
        return Err(Error::parameter(format!(
            "d_x = {d_x} exceeds the node count {n}"
        )));
    }
    if depth == 0 {
        return Err(Error::parameter("depth must be at least 1"));
    }
    let xs = prob.x().dot(&prob.shift().matrix);
    let base = sigma_small(&xs)?.value;
    if depth == 1 {
        return Ok(base);
    }
    let eigs = prob.shift().matrix.eigvals()?;
    let mut mags: Vec<f64> = eigs.iter().map(|z| z.norm()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let lambda = mags[d_x - 1];
    Ok(lambda.powi(depth as i32 - 1) * base)
}
