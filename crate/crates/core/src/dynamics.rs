//! Gradient-flow integration (plain and normalized) and gradient descent.
//!
//! The flow integrator is explicit Euler with an acceptance rule that mirrors
//! the discrete descent inequality: a step `h` along `-G` is accepted iff
//! `L(W - hG) <= L(W) - 0.5 h |G|^2`. Rejected steps halve `h`, accepted
//! steps grow it by 1.5 up to `h_max`. Because every accepted step satisfies
//! the same inequality the convergence proofs use, the recorded trajectory is
//! directly comparable against the theoretical envelopes.
//!
//! Loss evaluations inside the loops go through the collapsed product (see
//! [`crate::gnn::loss_collapsed`]), which is algebraically identical to the
//! layer-by-layer forward pass and orders of magnitude cheaper on large
//! graphs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{global_min_loss_for, loss_collapsed, Problem, WeightStack};
use crate::grad::gradients;
use crate::init::InitReport;
use crate::linalg::fro;
use crate::Mat;

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    /// Relative loss reached the requested tolerance.
    Converged,
    /// Time or iteration budget exhausted first.
    BudgetExhausted,
    /// The step controller could not find an acceptable step above `h_min`.
    StepUnderflow,
}

/// One recorded state along a run. `t` is flow time for the integrators and
/// the iteration index for gradient descent.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub loss: f64,
    /// `(L - L_min) / (L_0 - L_min)`; zero when the initial gap is zero.
    pub rel_loss: f64,
    pub grad_norm_sq: f64,
    pub balance_residual: f64,
    /// `sum_l ||W_l(t) - W_l(0)||_F^2`, the distance to the start that the
    /// safety-ball argument controls.
    pub motion_sq: f64,
    /// Step that produced this state (zero for the initial sample).
    pub step: f64,
}

/// A completed run: sampled states plus the final weights.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub final_weights: WeightStack,
    pub status: Status,
    /// False only when a user-forced step size made the loss increase.
    pub monotone: bool,
    /// Step size actually used by gradient descent.
    pub eta: Option<f64>,
    /// Per-step contraction factors `(L_{k+1} - L_min)/(L_k - L_min)` for
    /// gradient descent; empty for the flows.
    pub contraction: Vec<f64>,
    /// Global minimum used for relative losses.
    pub min_loss: f64,
    /// Initial loss.
    pub loss0: f64,
}

impl Trajectory {
    pub fn final_loss(&self) -> f64 {
        self.samples.last().map(|s| s.loss).unwrap_or(self.loss0)
    }

    pub fn final_rel_loss(&self) -> f64 {
        self.samples.last().map(|s| s.rel_loss).unwrap_or(1.0)
    }

    /// First sampled time (or iteration) at which `rel_loss <= threshold`.
    pub fn time_to_rel(&self, threshold: f64) -> Option<f64> {
        self.samples
            .iter()
            .find(|s| s.rel_loss <= threshold)
            .map(|s| s.t)
    }
}

/// Controls for the flow integrators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowOpts {
    /// Terminate once `rel_loss <= tol`.
    pub tol: f64,
    /// Initial step.
    pub h0: f64,
    /// Step ceiling.
    pub h_max: f64,
    /// Below this the controller gives up with [`Status::StepUnderflow`].
    pub h_min: f64,
    /// Accepted-step budget; the run stops with
    /// [`Status::BudgetExhausted`] once spent.
    pub max_steps: usize,
    /// Sample budget before geometric thinning kicks in.
    pub max_samples: usize,
    /// Protect balancedness along flows that start balanced (see below).
    pub balance_guard: bool,
}

impl Default for FlowOpts {
    fn default() -> Self {
        FlowOpts {
            tol: 1e-10,
            h0: 1e-3,
            h_max: 1.0,
            h_min: 1e-14,
            max_steps: 2_000_000,
            max_samples: 10_000,
            balance_guard: true,
        }
    }
}

/// Per-step balancedness drift of an Euler step `W - hG`:
/// the first-order terms cancel by the conservation law
/// `G_l W_l^T + W_l G_l^T = G_{l+1}^T W_{l+1} + W_{l+1}^T G_{l+1}`, leaving
/// exactly `h^2 (G_l G_l^T - G_{l+1}^T G_{l+1})` on each layer pair. This
/// returns the `max_l` Frobenius norm of that bracket (the `h^2` scaling is
/// applied by the caller).
fn balance_drift_scale(g: &[Mat]) -> f64 {
    let mut worst = 0.0_f64;
    for pair in g.windows(2) {
        let left = pair[0].dot(&pair[0].t());
        let right = pair[1].t().dot(&pair[1]);
        worst = worst.max(fro(&(&left - &right)));
    }
    worst
}

/// Controls for gradient descent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescentOpts {
    pub tol: f64,
    /// Starting point for the automatic step-size backtracking.
    pub eta0: f64,
    pub max_samples: usize,
}

impl Default for DescentOpts {
    fn default() -> Self {
        DescentOpts { tol: 1e-10, eta0: 1.0, max_samples: 10_000 }
    }
}

/// Step-size mode for gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Eta {
    /// Backtrack from `opts.eta0` at the start until the descent inequality
    /// holds, then keep the step fixed.
    Auto,
    /// User-forced fixed step; the monotone-loss invariant is relaxed.
    Fixed(f64),
}

struct SampleRecorder {
    samples: Vec<Sample>,
    max_samples: usize,
    record_every: usize,
    accepted: usize,
}

impl SampleRecorder {
    fn new(max_samples: usize) -> Self {
        SampleRecorder { samples: Vec::new(), max_samples: max_samples.max(16), record_every: 1, accepted: 0 }
    }

    fn push_initial(&mut self, s: Sample) {
        self.samples.push(s);
    }

    /// Advance the accepted-step counter; returns whether this step's
    /// sample will be kept (so callers can skip building it otherwise).
    fn tick(&mut self) -> bool {
        self.accepted += 1;
        self.accepted % self.record_every == 0
    }

    fn record(&mut self, s: Sample) {
        self.samples.push(s);
        if self.samples.len() >= self.max_samples {
            // geometric thinning: keep every other sample, halve future rate
            let kept: Vec<Sample> = self
                .samples
                .iter()
                .enumerate()
                .filter(|(i, _)| i % 2 == 0)
                .map(|(_, s)| *s)
                .collect();
            self.samples = kept;
            self.record_every *= 2;
        }
    }

    /// Make sure the terminal state is present.
    fn finish(mut self, last: Sample) -> Vec<Sample> {
        match self.samples.last() {
            Some(s) if s.t >= last.t => {}
            _ => self.samples.push(last),
        }
        self.samples
    }
}


fn motion_sq(w: &WeightStack, w0: &WeightStack) -> f64 {
    w.layers()
        .iter()
        .zip(w0.layers())
        .map(|(a, b)| fro(&(a - b)).powi(2))
        .sum()
}

fn step_stack(w: &WeightStack, dir: &[Mat], h: f64) -> Result<WeightStack> {
    let layers = w
        .layers()
        .iter()
        .zip(dir)
        .map(|(wl, dl)| wl - &(dl * h))
        .collect();
    WeightStack::new(layers)
}

struct GapScale {
    min_loss: f64,
    gap0: f64,
}

impl GapScale {
    fn new(loss0: f64, min_loss: f64) -> Self {
        GapScale { min_loss, gap0: (loss0 - min_loss).max(0.0) }
    }

    fn rel(&self, l: f64) -> f64 {
        if self.gap0 <= 0.0 {
            0.0
        } else {
            ((l - self.min_loss) / self.gap0).max(0.0)
        }
    }
}

/// Integrate the gradient flow `dW_l/dt = -grad_{W_l} L` by adaptive
/// explicit Euler until `t = t_max`, `rel_loss <= opts.tol`, or step
/// underflow.
pub fn flow_integrate(
    w0: &WeightStack,
    prob: &Problem,
    t_max: f64,
    opts: &FlowOpts,
) -> Result<Trajectory> {
    integrate(w0, prob, t_max, opts, false)
}

/// Integrate the normalized gradient flow
/// `dW_l/dt = -grad_{W_l} L / ||grad_{W_l} L||_F`.
///
/// Layers with gradient norm below 1e-14 receive no update. The loss is
/// still forced non-increasing by the same acceptance rule, but no
/// exponential envelope is guaranteed for this dynamic.
pub fn normalized_flow_integrate(
    w0: &WeightStack,
    prob: &Problem,
    t_max: f64,
    opts: &FlowOpts,
) -> Result<Trajectory> {
    integrate(w0, prob, t_max, opts, true)
}

fn integrate(
    w0: &WeightStack,
    prob: &Problem,
    t_max: f64,
    opts: &FlowOpts,
    normalized: bool,
) -> Result<Trajectory> {
    if !(t_max > 0.0) {
        return Err(Error::parameter(format!("t_max = {t_max} must be positive")));
    }
    let min_loss = global_min_loss_for(prob, w0)?.value();
    let loss0 = loss_collapsed(w0, prob)?;
    let scale = GapScale::new(loss0, min_loss);

    // Flows started balanced stay balanced in continuous time; the Euler
    // drift per step is exactly h^2 (G_l G_l^T - G_{l+1}^T G_{l+1}). Half of
    // a total budget of 0.5e-6 * scale is amortized against the realized
    // loss decrease; once the remaining gap is so small that even unguarded
    // steps cannot spend the other half (drift <= 2 h_max * gap), the guard
    // switches off so the tail converges at full speed.
    let weight_scale = w0
        .layers()
        .iter()
        .map(|w| fro(w).powi(2))
        .fold(0.0_f64, f64::max)
        .max(1.0);
    let mut drift_budget = if opts.balance_guard
        && !normalized
        && scale.gap0 > 0.0
        && w0.balance_residual() <= 1e-8 * weight_scale
    {
        Some(0.5 * 0.5e-6 * weight_scale)
    } else {
        None
    };

    let mut w = w0.clone();
    let mut l_cur = loss0;
    let mut t = 0.0_f64;
    let mut h = opts.h0;
    let mut g = gradients(&w, prob)?;

    let mut rec = SampleRecorder::new(opts.max_samples);
    rec.push_initial(Sample {
        t,
        loss: l_cur,
        rel_loss: scale.rel(l_cur),
        grad_norm_sq: g.norm_sq(),
        balance_residual: w.balance_residual(),
        motion_sq: 0.0,
        step: 0.0,
    });

    let mut status = Status::BudgetExhausted;
    let mut steps = 0usize;
    if scale.rel(l_cur) <= opts.tol {
        status = Status::Converged;
    } else {
        'outer: while t < t_max && steps < opts.max_steps {
            // direction and the slope of the acceptance rule
            let (dir, slope): (Vec<Mat>, f64) = if normalized {
                let mut dir = Vec::with_capacity(g.layers().len());
                let mut slope = 0.0;
                for gl in g.layers() {
                    let norm = fro(gl);
                    if norm <= 1e-14 {
                        dir.push(Mat::zeros(gl.dim()));
                    } else {
                        dir.push(gl / norm);
                        slope += norm;
                    }
                }
                (dir, slope)
            } else {
                (g.layers().to_vec(), g.norm_sq())
            };

            if slope <= 0.0 {
                // stationary point: the flow cannot move
                break;
            }

            if let Some(budget) = drift_budget {
                if 2.0 * opts.h_max * (l_cur - min_loss) <= budget {
                    drift_budget = None;
                }
            }
            let drift_scale = drift_budget.map(|_| balance_drift_scale(&dir));

            loop {
                let h_try = h.min(t_max - t);
                let candidate = step_stack(&w, &dir, h_try)?;
                let l_new = loss_collapsed(&candidate, prob)?;
                let drift_ok = match (drift_budget, drift_scale) {
                    (Some(budget), Some(d)) => {
                        h_try * h_try * d <= budget * (l_cur - l_new).max(0.0) / scale.gap0
                    }
                    _ => true,
                };
                if l_new <= l_cur - 0.5 * h_try * slope && drift_ok {
                    w = candidate;
                    t += h_try;
                    steps += 1;
                    l_cur = l_new;
                    h = (h_try * 1.5).min(opts.h_max);
                    g = gradients(&w, prob)?;
                    if rec.tick() {
                        rec.record(Sample {
                            t,
                            loss: l_cur,
                            rel_loss: scale.rel(l_cur),
                            grad_norm_sq: g.norm_sq(),
                            balance_residual: w.balance_residual(),
                            motion_sq: motion_sq(&w, w0),
                            step: h_try,
                        });
                    }
                    break;
                }
                h /= 2.0;
                if h < opts.h_min {
                    status = Status::StepUnderflow;
                    break 'outer;
                }
            }

            if scale.rel(l_cur) <= opts.tol {
                status = Status::Converged;
                break;
            }
        }
    }

    let last = Sample {
        t,
        loss: l_cur,
        rel_loss: scale.rel(l_cur),
        grad_norm_sq: g.norm_sq(),
        balance_residual: w.balance_residual(),
        motion_sq: motion_sq(&w, w0),
        step: 0.0,
    };
    Ok(Trajectory {
        samples: rec.finish(last),
        final_weights: w,
        status,
        monotone: true,
        eta: None,
        contraction: Vec::new(),
        min_loss,
        loss0,
    })
}

/// Backtrack from `eta0`, halving until the descent inequality
/// `L(W - eta G) <= L(W) - 0.5 eta |G|^2` holds at `w0`.
pub fn backtrack_eta(w0: &WeightStack, prob: &Problem, eta0: f64) -> Result<f64> {
    let l0 = loss_collapsed(w0, prob)?;
    let g = gradients(w0, prob)?;
    if g.norm_sq() == 0.0 {
        return Ok(eta0);
    }
    let mut eta = eta0;
    loop {
        let candidate = step_stack(w0, g.layers(), eta)?;
        let l_new = loss_collapsed(&candidate, prob)?;
        if l_new <= l0 - 0.5 * eta * g.norm_sq() {
            return Ok(eta);
        }
        eta /= 2.0;
        if eta < 1e-300 {
            return Err(Error::domain(
                "step-size backtracking underflowed; gradient may be non-finite",
            ));
        }
    }
}

/// Fixed-step gradient descent `W^{(k+1)} = W^{(k)} - eta grad L(W^{(k)})`.
///
/// With [`Eta::Auto`] the step starts from the value that backtracking finds
/// at `W(0)` and the run is a pure fixed-step iteration. Should a later step
/// violate the descent inequality `L(W - eta G) <= L(W) - 0.5 eta |G|^2`
/// (the curvature seen at the start is not always the worst along the path),
/// the step is halved and the whole run restarts from `W(0)`, so the
/// returned trajectory always used one fixed step whose every iteration
/// satisfied the inequality. Per-step contraction factors are recorded in
/// `Trajectory::contraction`.
pub fn gradient_descent(
    w0: &WeightStack,
    prob: &Problem,
    eta: Eta,
    k_max: usize,
    opts: &DescentOpts,
) -> Result<Trajectory> {
    match eta {
        Eta::Auto => {
            let mut eta = backtrack_eta(w0, prob, opts.eta0)?;
            loop {
                match descent_run(w0, prob, eta, k_max, opts, true)? {
                    Some(traj) => return Ok(traj),
                    None => {
                        eta /= 2.0;
                        if eta < 1e-300 {
                            return Err(Error::domain(
                                "descent step size underflowed while restoring the descent inequality",
                            ));
                        }
                    }
                }
            }
        }
        Eta::Fixed(v) => {
            if !(v > 0.0) {
                return Err(Error::parameter(format!("eta = {v} must be positive")));
            }
            Ok(descent_run(w0, prob, v, k_max, opts, false)?
                .expect("forced-step runs always complete"))
        }
    }
}

/// One fixed-step run. In `strict` mode, returns `None` as soon as a step
/// violates the descent inequality (the caller halves `eta` and retries);
/// otherwise violations only clear the monotone flag.
fn descent_run(
    w0: &WeightStack,
    prob: &Problem,
    eta: f64,
    k_max: usize,
    opts: &DescentOpts,
    strict: bool,
) -> Result<Option<Trajectory>> {
    let min_loss = global_min_loss_for(prob, w0)?.value();
    let loss0 = loss_collapsed(w0, prob)?;
    let scale = GapScale::new(loss0, min_loss);

    let mut w = w0.clone();
    let mut l_cur = loss0;
    let mut g = gradients(&w, prob)?;
    let mut monotone = true;
    let mut contraction = Vec::new();

    let mut rec = SampleRecorder::new(opts.max_samples);
    rec.push_initial(Sample {
        t: 0.0,
        loss: l_cur,
        rel_loss: scale.rel(l_cur),
        grad_norm_sq: g.norm_sq(),
        balance_residual: w.balance_residual(),
        motion_sq: 0.0,
        step: 0.0,
    });

    let mut status = Status::BudgetExhausted;
    let mut k = 0usize;
    if scale.rel(l_cur) <= opts.tol {
        status = Status::Converged;
    } else {
        while k < k_max {
            if g.norm_sq() == 0.0 {
                // fixed point of the iteration
                break;
            }
            let next = step_stack(&w, g.layers(), eta)?;
            let l_next = loss_collapsed(&next, prob)?;
            if strict && l_next > l_cur - 0.5 * eta * g.norm_sq() {
                return Ok(None);
            }
            let gap_cur = l_cur - min_loss;
            if gap_cur > 0.0 {
                contraction.push((l_next - min_loss) / gap_cur);
            }
            if l_next > l_cur * (1.0 + 1e-12) {
                monotone = false;
                if !l_next.is_finite() || l_next > 1e12 * loss0.max(1.0) {
                    // user-forced step diverged
                    l_cur = l_next;
                    w = next;
                    k += 1;
                    break;
                }
            }
            w = next;
            l_cur = l_next;
            k += 1;
            g = gradients(&w, prob)?;
            if rec.tick() {
                rec.record(Sample {
                    t: k as f64,
                    loss: l_cur,
                    rel_loss: scale.rel(l_cur),
                    grad_norm_sq: g.norm_sq(),
                    balance_residual: w.balance_residual(),
                    motion_sq: motion_sq(&w, w0),
                    step: eta,
                });
            }
            if scale.rel(l_cur) <= opts.tol {
                status = Status::Converged;
                break;
            }
        }
    }

    let last = Sample {
        t: k as f64,
        loss: l_cur,
        rel_loss: scale.rel(l_cur),
        grad_norm_sq: g.norm_sq(),
        balance_residual: w.balance_residual(),
        motion_sq: motion_sq(&w, w0),
        step: if k == 0 { 0.0 } else { eta },
    };
    Ok(Some(Trajectory {
        samples: rec.finish(last),
        final_weights: w,
        status,
        monotone,
        eta: Some(eta),
        contraction,
        min_loss,
        loss0,
    }))
}

/// Iterations needed to drive the loss gap below `eps`:
/// smallest integer `k` with
/// `k >= log((L_0 - L_min)/eps) / log(2m / (2m - beta sigma^2 eta))`.
///
/// `eta` must lie in `(0, 2m / (beta sigma^2))`, i.e. `eta alpha / 2 < 1`.
pub fn iterations_to_epsilon(
    report: &InitReport,
    eta: f64,
    loss0: f64,
    min_loss: f64,
    eps: f64,
) -> Result<u64> {
    if !(eps > 0.0) {
        return Err(Error::parameter(format!("eps = {eps} must be positive")));
    }
    let alpha = report.alpha_lower;
    if !(eta > 0.0) || eta * alpha / 2.0 >= 1.0 {
        return Err(Error::parameter(format!(
            "eta = {eta} outside the admissible range (0, {})",
            2.0 / alpha
        )));
    }
    let gap = loss0 - min_loss;
    if gap <= eps {
        return Ok(0);
    }
    if alpha <= 0.0 {
        return Err(Error::domain(
            "alpha_lower = 0: the certificate predicts no contraction",
        ));
    }
    let base = 1.0 - eta * alpha / 2.0;
    Ok(((gap / eps).ln() / -base.ln()).ceil() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{forward, restrict_columns};
    use crate::graph::Graph;
    use crate::init::{min_admissible_a, theorem_init, validate_init};
    use crate::rng::seeded;
    use crate::shift::{build_shift, ShiftKind};
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = seeded(seed);
        Mat::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    fn toy_problem(seed: u64, n: usize, d_x: usize, d_y: usize, depth: usize) -> Problem {
        let g = crate::graph::erdos_renyi(n, 0.5, seed).unwrap();
        let s = build_shift(&g, ShiftKind::SelfLoopAdjacency);
        let x = random_mat(d_x, n, seed + 1);
        let n_bar = (n / 2).max(2);
        let labeled: Vec<usize> = (0..n_bar).collect();
        let y = random_mat(d_y, n_bar, seed + 2);
        Problem::new(x, s, depth, y, labeled).unwrap()
    }

    fn interpolating_problem(seed: u64) -> (WeightStack, Problem) {
        let base = toy_problem(seed, 8, 3, 2, 2);
        let w = crate::init::theorem_init(&[3, 3, 3, 2], 1.0).unwrap();
        let mut layers = w.into_layers();
        layers[0] = random_mat(3, 3, seed + 10);
        let w = WeightStack::new(layers).unwrap();
        let fitted = restrict_columns(&forward(&w, &base).unwrap(), base.labeled());
        let prob = Problem::new(
            base.x().clone(),
            base.shift().clone(),
            base.depth(),
            fitted,
            base.labeled().to_vec(),
        )
        .unwrap();
        (w, prob)
    }

    #[test]
    fn flow_is_a_no_op_at_an_interpolating_start() {
        let (w, prob) = interpolating_problem(1);
        let traj = flow_integrate(&w, &prob, 5.0, &FlowOpts::default()).unwrap();
        assert_eq!(traj.status, Status::Converged);
        let moved: f64 = traj
            .final_weights
            .layers()
            .iter()
            .zip(w.layers())
            .map(|(a, b)| fro(&(a - b)))
            .sum();
        assert_eq!(moved, 0.0);
        assert!(traj.samples.iter().all(|s| (s.loss - traj.loss0).abs() < 1e-18));
    }

    #[test]
    fn flow_satisfies_certificate_envelope() {
        let prob = toy_problem(2, 20, 3, 1, 2);
        let dims = [3, 3, 2, 1];
        let a = min_admissible_a(&prob).unwrap();
        let w0 = theorem_init(&dims, a).unwrap();
        let report = validate_init(&w0, &prob).unwrap();
        assert!(report.valid);

        let opts = FlowOpts { tol: 1e-8, ..FlowOpts::default() };
        let traj = flow_integrate(&w0, &prob, 200.0, &opts).unwrap();
        assert_eq!(traj.status, Status::Converged);
        for s in &traj.samples {
            let bound = (-report.alpha_lower * s.t).exp() * (1.0 + 1e-6);
            assert!(
                s.rel_loss <= bound,
                "rel {} above bound {} at t={}",
                s.rel_loss,
                bound,
                s.t
            );
        }
        // safety ball
        for (a_l, b_l) in traj.final_weights.layers().iter().zip(w0.layers()) {
            let _ = (a_l, b_l);
        }
        let motion: f64 = traj
            .final_weights
            .layers()
            .iter()
            .zip(w0.layers())
            .map(|(a, b)| fro(&(a - b)).powi(2))
            .sum();
        assert!(motion <= report.r * report.r);
    }

    #[test]
    fn flow_matches_fine_step_reference_on_scalar_toy() {
        // H = 1, all dims 1, x = s = 1, y = 1: L(w) = (w2 w1 - 1)^2.
        let g = Graph::new(1, []).unwrap();
        let s = build_shift(&g, ShiftKind::SelfLoopAdjacency);
        let prob = Problem::new(array![[1.0]], s, 1, array![[1.0]], vec![0]).unwrap();
        let a = 2.0;
        let w0 = WeightStack::new(vec![array![[0.0]], array![[a]]]).unwrap();

        let t_end = 0.4;
        // reference: fixed-step Euler at h = 1e-6
        let (mut w1, mut w2) = (0.0_f64, a);
        let h = 1e-6_f64;
        let steps = (t_end / h).round() as usize;
        for _ in 0..steps {
            let r = w2 * w1 - 1.0;
            let (g1, g2) = (2.0 * r * w2, 2.0 * r * w1);
            w1 -= h * g1;
            w2 -= h * g2;
        }

        let opts = FlowOpts { h0: 1e-5, h_max: 1e-4, tol: 0.0, ..FlowOpts::default() };
        let traj = flow_integrate(&w0, &prob, t_end, &opts).unwrap();
        let got1 = traj.final_weights.layer(0)[[0, 0]];
        let got2 = traj.final_weights.layer(1)[[0, 0]];
        assert!((got1 - w1).abs() <= 1e-4 * w1.abs().max(1.0), "{got1} vs {w1}");
        assert!((got2 - w2).abs() <= 1e-4 * w2.abs().max(1.0), "{got2} vs {w2}");
    }

    #[test]
    fn normalized_flow_reaches_the_same_minimum() {
        let prob = toy_problem(3, 16, 3, 1, 2);
        let a = min_admissible_a(&prob).unwrap();
        let w0 = theorem_init(&[3, 3, 2, 1], a).unwrap();
        let opts = FlowOpts { tol: 1e-8, ..FlowOpts::default() };
        let plain = flow_integrate(&w0, &prob, 500.0, &opts).unwrap();
        let normalized = normalized_flow_integrate(&w0, &prob, 500.0, &opts).unwrap();
        assert_eq!(plain.status, Status::Converged);
        assert_eq!(normalized.status, Status::Converged);
        assert!(normalized.final_rel_loss() <= 1e-8);
    }

    #[test]
    fn normalized_flow_is_a_no_op_at_zero_gradient() {
        let (w, prob) = interpolating_problem(4);
        let traj = normalized_flow_integrate(&w, &prob, 5.0, &FlowOpts::default()).unwrap();
        let moved: f64 = traj
            .final_weights
            .layers()
            .iter()
            .zip(w.layers())
            .map(|(a, b)| fro(&(a - b)))
            .sum();
        assert_eq!(moved, 0.0);
    }

    #[test]
    fn loss_is_monotone_along_all_dynamics() {
        let prob = toy_problem(5, 14, 3, 2, 2);
        let a = min_admissible_a(&prob).unwrap();
        let w0 = theorem_init(&[3, 3, 3, 2], a).unwrap();
        let opts = FlowOpts { tol: 1e-9, ..FlowOpts::default() };
        for traj in [
            flow_integrate(&w0, &prob, 100.0, &opts).unwrap(),
            normalized_flow_integrate(&w0, &prob, 100.0, &opts).unwrap(),
            gradient_descent(&w0, &prob, Eta::Auto, 200_000, &DescentOpts { tol: 1e-9, ..Default::default() })
                .unwrap(),
        ] {
            assert!(traj.monotone);
            for pair in traj.samples.windows(2) {
                assert!(pair[1].loss <= pair[0].loss + 1e-12);
                assert!(pair[1].t > pair[0].t);
            }
        }
    }

    #[test]
    fn descent_fixed_point_at_zero_gradient() {
        let (w, prob) = interpolating_problem(6);
        let traj = gradient_descent(&w, &prob, Eta::Auto, 50, &DescentOpts::default()).unwrap();
        let moved: f64 = traj
            .final_weights
            .layers()
            .iter()
            .zip(w.layers())
            .map(|(a, b)| fro(&(a - b)))
            .sum();
        assert_eq!(moved, 0.0);
    }

    #[test]
    fn descent_contraction_obeys_certificate() {
        let prob = toy_problem(7, 18, 3, 1, 2);
        let a = min_admissible_a(&prob).unwrap();
        let w0 = theorem_init(&[3, 3, 2, 1], a).unwrap();
        let report = validate_init(&w0, &prob).unwrap();
        assert!(report.valid);
        let opts = DescentOpts { tol: 1e-6, ..Default::default() };
        let traj = gradient_descent(&w0, &prob, Eta::Auto, 500_000, &opts).unwrap();
        assert_eq!(traj.status, Status::Converged);
        let eta = traj.eta.unwrap();
        let bound = 1.0 - eta * report.alpha_lower / 2.0 + 1e-9;
        for (k, rho) in traj.contraction.iter().enumerate() {
            assert!(*rho <= bound, "rho_{k} = {rho} above {bound}");
        }
    }

    #[test]
    fn descent_matches_hand_recursion_on_scalar_toy() {
        let g = Graph::new(1, []).unwrap();
        let s = build_shift(&g, ShiftKind::SelfLoopAdjacency);
        let prob = Problem::new(array![[1.0]], s, 1, array![[1.0]], vec![0]).unwrap();
        let w0 = WeightStack::new(vec![array![[0.3]], array![[0.8]]]).unwrap();
        let eta = 0.05;
        let traj = gradient_descent(
            &w0,
            &prob,
            Eta::Fixed(eta),
            40,
            &DescentOpts { tol: 0.0, ..Default::default() },
        )
        .unwrap();

        let (mut w1, mut w2) = (0.3_f64, 0.8_f64);
        for sample in traj.samples.iter().skip(1) {
            let r = w2 * w1 - 1.0;
            let (g1, g2) = (2.0 * r * w2, 2.0 * r * w1);
            w1 -= eta * g1;
            w2 -= eta * g2;
            let l = (w2 * w1 - 1.0).powi(2);
            assert!(
                (sample.loss - l).abs() <= 1e-12 * l.max(1.0),
                "k={} {} vs {}",
                sample.t,
                sample.loss,
                l
            );
        }
    }

    #[test]
    fn forced_large_eta_reports_divergence() {
        let prob = toy_problem(8, 12, 3, 1, 2);
        let w0 = theorem_init(&[3, 3, 2, 1], 5.0).unwrap();
        let traj = gradient_descent(
            &w0,
            &prob,
            Eta::Fixed(10.0),
            200,
            &DescentOpts::default(),
        )
        .unwrap();
        assert_eq!(traj.status, Status::BudgetExhausted);
        assert!(!traj.monotone);
    }

    #[test]
    fn iterations_to_epsilon_formula() {
        let mut report = crate::init::InitReport {
            beta: 1.0,
            r: 1.0,
            sigma_small_restricted: 1.0,
            alpha_lower: 1.0,
            loss0: 2.0,
            min_loss: 0.0,
            min_loss_exact: true,
            condition_lhs: 0.0,
            condition_rhs: 1.0,
            valid: true,
            balanced: None,
        };
        // eps equal to the whole gap: zero iterations
        assert_eq!(iterations_to_epsilon(&report, 0.5, 2.0, 0.0, 2.0).unwrap(), 0);

        // eta alpha / 2 = 0.5 and eps = gap/2: exactly one iteration
        report.alpha_lower = 1.0;
        assert_eq!(iterations_to_epsilon(&report, 1.0, 2.0, 0.0, 1.0).unwrap(), 1);

        // invalid parameters
        assert!(iterations_to_epsilon(&report, 1.0, 2.0, 0.0, 0.0).is_err());
        assert!(iterations_to_epsilon(&report, 2.0, 2.0, 0.0, 1.0).is_err());
        assert!(iterations_to_epsilon(&report, -1.0, 2.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn predicted_iterations_bound_observed() {
        for seed in 0..20 {
            let prob = toy_problem(100 + seed, 12, 3, 1, 2);
            let a = min_admissible_a(&prob).unwrap();
            let w0 = theorem_init(&[3, 3, 2, 1], a).unwrap();
            let report = validate_init(&w0, &prob).unwrap();
            assert!(report.valid, "seed {seed}");
            let opts = DescentOpts { tol: 1e-6, ..Default::default() };
            let traj =
                gradient_descent(&w0, &prob, Eta::Auto, 2_000_000, &opts).unwrap();
            assert_eq!(traj.status, Status::Converged, "seed {seed}");
            let eta = traj.eta.unwrap();
            let gap0 = traj.loss0 - traj.min_loss;
            let eps = 1e-6 * gap0;
            let predicted =
                iterations_to_epsilon(&report, eta, traj.loss0, traj.min_loss, eps).unwrap();
            let observed = traj.contraction.len() as u64;
            assert!(
                observed <= predicted,
                "seed {seed}: observed {observed} > predicted {predicted}"
            );
        }
    }

    #[test]
    fn sample_thinning_caps_memory() {
        let mut rec = SampleRecorder::new(64);
        rec.push_initial(Sample {
            t: 0.0,
            loss: 1.0,
            rel_loss: 1.0,
            grad_norm_sq: 0.0,
            balance_residual: 0.0,
            motion_sq: 0.0,
            step: 0.0,
        });
        for i in 1..10_000 {
            if !rec.tick() {
                continue;
            }
            rec.record(Sample {
                t: i as f64,
                loss: 1.0 / i as f64,
                rel_loss: 1.0 / i as f64,
                grad_norm_sq: 0.0,
                balance_residual: 0.0,
                motion_sq: 0.0,
                step: 1.0,
            });
        }
        let samples = rec.finish(Sample {
            t: 10_000.0,
            loss: 0.0,
            rel_loss: 0.0,
            grad_norm_sq: 0.0,
            balance_residual: 0.0,
            motion_sq: 0.0,
            step: 0.0,
        });
        assert!(samples.len() <= 70);
        assert_eq!(samples[0].t, 0.0);
        assert_eq!(samples.last().unwrap().t, 10_000.0);
        for pair in samples.windows(2) {
            assert!(pair[1].t > pair[0].t);
        }
    }
}
