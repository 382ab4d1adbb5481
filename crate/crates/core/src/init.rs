//! Initialization schemes and their validity certificates.
//!
//! Two constructions are provided. The diagonal scheme ([`theorem_init`])
//! zeroes the first layer and fills the others with rectangular identities,
//! the last scaled by `a`; [`min_admissible_a`] returns the smallest scale
//! for which the exponential convergence certificate holds. The balanced
//! scheme ([`balanced_init`]) factors a target end-to-end map into `H + 1`
//! balanced layers whose flow also minimizes the total weight energy.
//!
//! [`validate_init`] evaluates the certificate for an arbitrary start: with
//! `r = min_{l >= 2} sigma_min(W_l(0)) / 2`,
//! `beta = 4^{-(H-1)} prod_{l>=2} sigma_min^2(W_l(0))` and
//! `alpha = beta sigma_small^2(M) / m`, the flow provably converges at rate
//! `exp(-alpha t)` whenever `4 (L(W(0)) - L_min) <= r^2 alpha`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{global_min_loss_for, loss, Problem, WeightStack};
use crate::linalg::{fro, rectangular_diagonal, sigma_min, sigma_small, svd};
use crate::Mat;

/// Balancedness bookkeeping attached to an [`InitReport`] when the start is
/// balanced: the rank-aware feasibility inequality for energy-optimal flows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalancedCheck {
    /// `max_l || W_l W_l^T - W_{l+1}^T W_{l+1} ||_F` at the start.
    pub residual: f64,
    /// `k_bar = min(d_y, rank M)`.
    pub k_bar: usize,
    /// `sigma_{k_bar}(W_1(0))`.
    pub sigma_kbar_w1: f64,
    /// Whether `rank W_1(0) = k_bar` as the energy theorem assumes.
    pub rank_matches: bool,
    /// `L(W(0)) - L_min`.
    pub condition_lhs: f64,
    /// `sigma_{k_bar}^{2H}(W_1(0)) sigma_small^2(M) / (4^{H+1} m)`.
    pub condition_rhs: f64,
    /// Feasibility is reported, never asserted: the balanced construction can
    /// make this inequality unsatisfiable.
    pub feasible: bool,
}

/// Convergence certificate for a concrete initialization on a concrete
/// problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitReport {
    /// Rate constant `beta = 4^{-(H-1)} prod_{l=2}^{H+1} sigma_min^2(W_l(0))`.
    pub beta: f64,
    /// Safety radius `r = min_{l=2..H+1} sigma_min(W_l(0)) / 2`.
    pub r: f64,
    /// `sigma_small((X S^H)_{*I})`; zero when the restriction is all-zero.
    pub sigma_small_restricted: f64,
    /// `alpha = beta sigma_small^2 / m`, the flow exponent per unit time.
    pub alpha_lower: f64,
    /// Loss at the initialization.
    pub loss0: f64,
    /// Global minimum used in the gap (exact unless the stack has a
    /// bottleneck, in which case it is the least-squares lower bound).
    pub min_loss: f64,
    pub min_loss_exact: bool,
    /// `4 (L(W(0)) - L_min)`.
    pub condition_lhs: f64,
    /// `r^2 alpha`.
    pub condition_rhs: f64,
    /// `condition_lhs <= condition_rhs`.
    pub valid: bool,
    /// Present when the start is balanced.
    pub balanced: Option<BalancedCheck>,
}

/// The diagonal initialization: `W_1 = 0`, middle layers rectangular
/// identities, last layer a rectangular diagonal with entries `a`.
///
/// `dims` is the full schedule `(d_x, d_1, ..., d_H, d_y)`.
pub fn theorem_init(dims: &[usize], a: f64) -> Result<WeightStack> {
    if dims.len() < 3 {
        return Err(Error::parameter(
            "dimension schedule needs at least (d_x, d_1, d_y)",
        ));
    }
    if !(a > 0.0) {
        return Err(Error::parameter(format!("a = {a} must be positive")));
    }
    let count = dims.len() - 1; // H + 1 layers
    let mut layers = Vec::with_capacity(count);
    layers.push(Mat::zeros((dims[1], dims[0])));
    for l in 2..count {
        layers.push(rectangular_diagonal(dims[l], dims[l - 1], 1.0));
    }
    if count >= 2 {
        layers.push(rectangular_diagonal(dims[count], dims[count - 1], a));
    }
    WeightStack::new(layers)
}

/// Smallest scale `a` for which `theorem_init(dims, a)` certifies
/// convergence on `prob`:
/// `a^2 = max(1, 4^{H+1} m (L(W(0)) - L_min) / sigma_small^2(M))`
/// with `m (L(W(0)) - L_min) = ||Y||_F^2 - m L_min`.
///
/// The returned value carries a relative headroom of 1e-9 so that
/// [`validate_init`] holds under floating-point evaluation. Errors when the
/// restriction is all-zero (no information reaches the labeled nodes).
pub fn min_admissible_a(prob: &Problem) -> Result<f64> {
    let sigma = sigma_small(prob.restricted()).map_err(|_| {
        Error::domain("sigma_small(M) = 0: no signal reaches the labeled nodes")
    })?;
    let min_loss = crate::gnn::least_squares_min_loss(prob)?;
    let gap_energy = fro(&prob.y()).powi(2) - prob.m() * min_loss; // m * (L0 - Lmin)
    let h = prob.depth();
    let bound = 4.0_f64.powi(h as i32 + 1) * gap_energy / sigma.value.powi(2);
    Ok(bound.max(1.0).sqrt() * (1.0 + 1e-9))
}

/// Balanced factorization of a `d_y x d_x` target map into `H + 1` layers.
///
/// With `target = U_t S_t V_t^T` of numerical rank `k_bar` and
/// `C = S_t^{1/(H+1)}`, the layers are `W_1 = Q_1 C V_t^T P`,
/// `W_l = Q_l C Q_{l-1}^T`, `W_{H+1} = U_t C Q_H^T`, with orthonormal pads
/// `Q_l` and `P` the projector onto the leading-`rank(M)` left singular
/// directions of `M = (X S^H)_{*I}`. The result is balanced, shares one set
/// of non-zero singular values across layers, and reproduces `target` as its
/// collapsed product whenever the target's row space is compatible with `M`;
/// incompatible targets are rejected.
pub fn balanced_init(dims: &[usize], target: &Mat, prob: &Problem) -> Result<WeightStack> {
    if dims.len() < 3 {
        return Err(Error::parameter(
            "dimension schedule needs at least (d_x, d_1, d_y)",
        ));
    }
    let count = dims.len() - 1; // H + 1
    let depth = count - 1;
    let (d_x, d_y) = (dims[0], dims[count]);
    if target.nrows() != d_y || target.ncols() != d_x {
        return Err(Error::shape(format!(
            "target is {}x{}, schedule expects {}x{}",
            target.nrows(),
            target.ncols(),
            d_y,
            d_x
        )));
    }
    let hidden_min = dims[1..count].iter().copied().min().unwrap_or(d_y);
    if d_y > hidden_min {
        return Err(Error::parameter(format!(
            "balanced construction needs d_y = {d_y} <= every hidden dimension (min {hidden_min})"
        )));
    }

    let tol_scale = fro(target).max(1.0);
    let svd_t = svd(target)?;
    let k_bar = svd_t.rank();
    if k_bar == 0 {
        let mut layers = Vec::with_capacity(count);
        for l in 1..=count {
            layers.push(Mat::zeros((dims[l], dims[l - 1])));
        }
        return WeightStack::new(layers);
    }

    let root: Vec<f64> = (0..k_bar)
        .map(|i| svd_t.sigma[i].powf(1.0 / (depth as f64 + 1.0)))
        .collect();
    let u_t = svd_t.u.slice(ndarray::s![.., ..k_bar]).to_owned();
    let v_t = svd_t.v.slice(ndarray::s![.., ..k_bar]).to_owned();

    // projector onto the leading-k left singular directions of M
    let svd_m = svd(prob.restricted())?;
    let k_m = svd_m.rank();
    let u_m = svd_m.u.slice(ndarray::s![.., ..k_m]).to_owned();
    let projector = u_m.dot(&u_m.t());

    let pad = |rows: usize| rectangular_diagonal(rows, k_bar, 1.0);
    let scale_cols = |m: &Mat| -> Mat {
        let mut out = m.clone();
        for (j, &r) in root.iter().enumerate() {
            out.column_mut(j).mapv_inplace(|v| v * r);
        }
        out
    };

    let mut layers = Vec::with_capacity(count);
    // W_1 = Q_1 C V_t^T P
    layers.push(scale_cols(&pad(dims[1])).dot(&v_t.t()).dot(&projector));
    for l in 2..count {
        layers.push(scale_cols(&pad(dims[l])).dot(&pad(dims[l - 1]).t()));
    }
    layers.push(scale_cols(&u_t).dot(&pad(dims[count - 1]).t()));
    let stack = WeightStack::new(layers)?;

    let residual = stack.balance_residual();
    let product_err = fro(&(&crate::gnn::collapsed_product(&stack) - target));
    if residual > 1e-10 * tol_scale.powi(2) || product_err > 1e-8 * tol_scale {
        return Err(Error::parameter(format!(
            "target is incompatible with the restriction: balance residual {residual:.3e}, product error {product_err:.3e}"
        )));
    }
    Ok(stack)
}

/// The rate constant `beta = 4^{-(H-1)} prod_{l=2}^{H+1} sigma_min^2(W_l)`
/// and the safety radius `r = min_{l=2..H+1} sigma_min(W_l) / 2` of a stack.
pub fn beta_and_radius(w: &WeightStack) -> Result<(f64, f64)> {
    let depth = w.depth();
    let mut beta = 4.0_f64.powi(-(depth as i32 - 1));
    let mut r = f64::INFINITY;
    for l in 1..w.layers().len() {
        let smin = sigma_min(w.layer(l))?;
        beta *= smin * smin;
        r = r.min(smin / 2.0);
    }
    Ok((beta, r))
}

/// Evaluate the convergence certificate for an arbitrary start.
///
/// Never errors on rank-deficient or all-zero inputs; those simply report
/// `valid = false` through `beta = 0` or `sigma_small = 0`.
pub fn validate_init(w0: &WeightStack, prob: &Problem) -> Result<InitReport> {
    let depth = w0.depth();
    let loss0 = loss(w0, prob)?;
    let min = global_min_loss_for(prob, w0)?;
    let gap = (loss0 - min.value()).max(0.0);

    let sigma = match sigma_small(prob.restricted()) {
        Ok(s) => s.value,
        Err(_) => 0.0,
    };

    let (beta, r) = beta_and_radius(w0)?;
    let alpha_lower = beta * sigma * sigma / prob.m();
    let condition_lhs = 4.0 * gap;
    let condition_rhs = r * r * alpha_lower;
    let valid = condition_lhs <= condition_rhs;

    let scale = w0
        .layers()
        .iter()
        .map(|w| fro(w).powi(2))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let residual = w0.balance_residual();
    let balanced = if residual <= 1e-8 * scale {
        let k_m = match sigma_small(prob.restricted()) {
            Ok(s) => s.rank,
            Err(_) => 0,
        };
        let k_bar = prob.label_dim().min(k_m);
        let svd_w1 = svd(w0.layer(0))?;
        let sigma_kbar = if k_bar >= 1 && k_bar <= svd_w1.sigma.len() {
            svd_w1.sigma[k_bar - 1]
        } else {
            0.0
        };
        let rhs = sigma_kbar.powi(2 * depth as i32) * sigma * sigma
            / (4.0_f64.powi(depth as i32 + 1) * prob.m());
        Some(BalancedCheck {
            residual,
            k_bar,
            sigma_kbar_w1: sigma_kbar,
            rank_matches: svd_w1.rank() == k_bar,
            condition_lhs: gap,
            condition_rhs: rhs,
            feasible: gap <= rhs,
        })
    } else {
        None
    };

    Ok(InitReport {
        beta,
        r,
        sigma_small_restricted: sigma,
        alpha_lower,
        loss0,
        min_loss: min.value(),
        min_loss_exact: min.is_exact(),
        condition_lhs,
        condition_rhs,
        valid,
        balanced,
    })
}
