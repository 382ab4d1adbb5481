//! Synthetic data generation, labeled-set sampling, and the two experiment
//! families: singular-value sweeps over labeled-set sizes and convergence
//! sweeps over graph/shift configurations.
//!
//! Reproducibility scheme: every stochastic ingredient gets its own seed
//! derived from the config's master seed with [`crate::rng::derive`]:
//!
//! * graph for spec index `g` (when the spec carries no seed):
//!   `derive(master, 0x1000 + g)`
//! * feature matrix for spec index `g`: `derive(master, 0x2000 + g)`
//! * labeled set for linear row `r`, replication `j` (with `R` replications
//!   per row): `derive(master, 0x3000 + r * R + j)`
//!
//! Rows of a sweep are therefore independently reproducible, sweeps
//! parallelize across rows without affecting output order, and a repeated
//! run emits byte-identical CSV. Wall-clock timings are reported on standard
//! error only, never serialized.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    flow_integrate, gradient_descent, normalized_flow_integrate, DescentOpts, Eta, FlowOpts,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::gnn::{min_norm_solution, Problem, WeightStack};
use crate::graph::{self, Graph};
use crate::init::{balanced_init, min_admissible_a, theorem_init, validate_init, InitReport};
use crate::linalg::sigma_small;
use crate::rng::{derive, seeded};
use crate::shift::{build_shift, ShiftKind};
use crate::theory::expected_sigma_small;
use crate::Mat;

use rand::Rng;
use rand_distr::StandardNormal;

// ---------------------------------------------------------------------------
// data generation
// ---------------------------------------------------------------------------

/// `d_x x n` matrix of i.i.d. standard normal entries, deterministic per
/// seed (row-major fill order).
pub fn gaussian_features(d_x: usize, n: usize, seed: u64) -> Mat {
    let mut rng = seeded(seed);
    Mat::from_shape_fn((d_x, n), |_| rng.sample(StandardNormal))
}

/// Synthetic scalar labels
/// `y_i = sum_j x_{ji} + eps * sum_{k: {i,k} in E} sum_j x_{jk}`,
/// returned as a `1 x n` matrix.
pub fn synthetic_labels(x: &Mat, g: &Graph, eps: f64) -> Mat {
    let n = g.node_count();
    let col_sums: Vec<f64> = (0..n).map(|i| x.column(i).sum()).collect();
    let mut y = Mat::zeros((1, n));
    for i in 0..n {
        y[[0, i]] = col_sums[i];
    }
    for (u, v) in g.edges() {
        y[[0, u]] += eps * col_sums[v];
        y[[0, v]] += eps * col_sums[u];
    }
    y
}

/// Uniform sample of `n_bar` distinct node indices, sorted ascending.
pub fn sample_labeled_set(n: usize, n_bar: usize, seed: u64) -> Result<Vec<usize>> {
    if n_bar == 0 {
        return Err(Error::parameter(
            "n_bar = 0: the loss is undefined on an empty labeled set",
        ));
    }
    if n_bar > n {
        return Err(Error::parameter(format!("n_bar = {n_bar} exceeds n = {n}")));
    }
    let mut rng = seeded(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, n_bar).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// Graph model specification; `seed` defaults to a value derived from the
/// config's master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum GraphSpec {
    Er { n: usize, p: f64, #[serde(default)] seed: Option<u64> },
    Knn { n: usize, k: usize },
    Sbm { n1: usize, n2: usize, p: f64, q: f64, #[serde(default)] seed: Option<u64> },
    Ba { n: usize, m: usize, #[serde(default)] seed: Option<u64> },
    Csv { path: String },
}

impl GraphSpec {
    pub fn build(&self, fallback_seed: u64) -> Result<Graph> {
        match self {
            GraphSpec::Er { n, p, seed } => graph::erdos_renyi(*n, *p, seed.unwrap_or(fallback_seed)),
            GraphSpec::Knn { n, k } => graph::knn_ring(*n, *k),
            GraphSpec::Sbm { n1, n2, p, q, seed } => {
                graph::sbm(*n1, *n2, *p, *q, seed.unwrap_or(fallback_seed))
            }
            GraphSpec::Ba { n, m, seed } => {
                graph::barabasi_albert(*n, *m, seed.unwrap_or(fallback_seed))
            }
            GraphSpec::Csv { path } => Ok(graph::load_edge_csv(path)?.graph),
        }
    }

    /// Short label for CSV coordinates.
    pub fn label(&self) -> String {
        match self {
            GraphSpec::Er { n, p, .. } => format!("er(n={n};p={p})"),
            GraphSpec::Knn { n, k } => format!("knn(n={n};k={k})"),
            GraphSpec::Sbm { n1, n2, p, q, .. } => format!("sbm(n1={n1};n2={n2};p={p};q={q})"),
            GraphSpec::Ba { n, m, .. } => format!("ba(n={n};m={m})"),
            GraphSpec::Csv { path } => format!("csv({path})"),
        }
    }
}

/// `"auto"` or a number.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum AutoOr {
    Auto(AutoTag),
    Value(f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for AutoOr {
    fn default() -> Self {
        AutoOr::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "kebab-case")]
pub enum InitSpec {
    /// Zero first layer, identity middles, last layer scaled by `a`
    /// (`"auto"` resolves to [`min_admissible_a`]).
    Theorem {
        #[serde(default)]
        a: AutoOr,
    },
    /// Balanced factorization of `target_scale * min_norm_solution`.
    Balanced { target_scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Flow,
    NormalizedFlow,
    Descent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub algo: Algo,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub eta: AutoOr,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_replications() -> usize {
    1
}

fn default_eps() -> f64 {
    0.1
}

/// A full experiment description; the JSON on disk mirrors these field
/// names.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graphs: Vec<GraphSpec>,
    pub shifts: Vec<ShiftKind>,
    pub d_x: usize,
    pub depth: usize,
    /// Hidden layer widths `(d_1, ..., d_H)`; defaults to 32 per layer.
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
    /// Graph-structure weight in the synthetic labels.
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Fraction of nodes that are labeled (convergence sweeps).
    #[serde(default)]
    pub labeled_fraction: Option<f64>,
    /// Grid of labeled-set sizes (sigma sweeps).
    #[serde(default)]
    pub n_bar_grid: Option<Vec<usize>>,
    pub init: InitSpec,
    pub dynamics: DynamicsSpec,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Master seed; all other seeds derive from it.
    pub seed: u64,
    /// Optional feature CSV (overrides Gaussian features; `d_x` then comes
    /// from the file).
    #[serde(default)]
    pub features_csv: Option<String>,
    /// Optional label CSV aligned to the node order (overrides synthetic
    /// labels; may have several rows).
    #[serde(default)]
    pub labels_csv: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::parameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.graphs.is_empty() {
            return Err(Error::parameter("config: graphs must be non-empty"));
        }
        if self.shifts.is_empty() {
            return Err(Error::parameter("config: shifts must be non-empty"));
        }
        if self.replications == 0 {
            return Err(Error::parameter("config: replications must be >= 1"));
        }
        if self.depth == 0 {
            return Err(Error::parameter("config: depth must be >= 1"));
        }
        if let Some(f) = self.labeled_fraction {
            if !(0.0 < f && f <= 1.0) {
                return Err(Error::parameter(format!(
                    "config: labeled_fraction = {f} must lie in (0, 1]"
                )));
            }
        }
        if let Some(h) = &self.hidden {
            if h.len() != self.depth {
                return Err(Error::parameter(format!(
                    "config: hidden has {} entries, depth is {}",
                    h.len(),
                    self.depth
                )));
            }
        }
        Ok(())
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| vec![32; self.depth])
    }

    pub fn graph_seed(&self, graph_index: usize) -> u64 {
        derive(self.seed, 0x1000 + graph_index as u64)
    }

    pub fn feature_seed(&self, graph_index: usize) -> u64 {
        derive(self.seed, 0x2000 + graph_index as u64)
    }

    pub fn label_seed(&self, linear_row: usize, replication: usize) -> u64 {
        derive(
            self.seed,
            0x3000 + (linear_row * self.replications + replication) as u64,
        )
    }
}

// ---------------------------------------------------------------------------
// sweep rows and CSV serialization
// ---------------------------------------------------------------------------

/// One flat record per sweep row. `wall_ms` is diagnostic only and excluded
/// from the CSV so that outputs stay byte-identical across runs.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub row: usize,
    pub graph: String,
    pub shift: ShiftKind,
    pub n: usize,
    pub n_bar: usize,
    pub d_x: usize,
    pub depth: usize,
    pub replications: usize,
    pub sigma_mean: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// `(n_bar / n) sigma_small(X S^H)`, the expectation predictor.
    pub sigma_pred: f64,
    pub final_rel_loss: Option<f64>,
    pub bound_satisfied: Option<bool>,
    #[serde(skip)]
    pub wall_ms: u128,
    pub error: Option<String>,
}

impl SweepRow {
    fn empty(row: usize, graph: String, shift: ShiftKind, n: usize, d_x: usize, depth: usize) -> Self {
        SweepRow {
            row,
            graph,
            shift,
            n,
            n_bar: 0,
            d_x,
            depth,
            replications: 0,
            sigma_mean: f64::NAN,
            sigma_min: f64::NAN,
            sigma_max: f64::NAN,
            sigma_pred: f64::NAN,
            final_rel_loss: None,
            bound_satisfied: None,
            wall_ms: 0,
            error: None,
        }
    }
}

/// Floats in CSV cells carry 17 significant digits, enough to round-trip
/// f64 exactly.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.16e}")
    }
}

pub const SWEEP_CSV_HEADER: &str = "row,graph,shift,n,n_bar,d_x,depth,replications,sigma_mean,sigma_min,sigma_max,sigma_pred,final_rel_loss,bound_satisfied,error";

/// Render sweep rows as CSV, header included, deterministic ordering.
pub fn sweep_rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.row,
            r.graph,
            r.shift,
            r.n,
            r.n_bar,
            r.d_x,
            r.depth,
            r.replications,
            format_float(r.sigma_mean),
            format_float(r.sigma_min),
            format_float(r.sigma_max),
            format_float(r.sigma_pred),
            r.final_rel_loss.map(format_float).unwrap_or_default(),
            r.bound_satisfied.map(|b| b.to_string()).unwrap_or_default(),
            r.error.as_deref().unwrap_or_default(),
        );
        out.push('\n');
    }
    out
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,loss,rel_loss,grad_norm_sq,balance_residual";

/// Render a trajectory as CSV with the stable five-column layout.
pub fn trajectory_to_csv(traj: &Trajectory) -> String {
    let mut out = String::new();
    out.push_str(TRAJECTORY_CSV_HEADER);
    out.push('\n');
    for s in &traj.samples {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            format_float(s.t),
            format_float(s.loss),
            format_float(s.rel_loss),
            format_float(s.grad_norm_sq),
            format_float(s.balance_residual),
        );
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// sigma sweep
// ---------------------------------------------------------------------------

/// For every graph, shift kind and labeled-set size in the grid: sample
/// `replications` uniform labeled sets, measure
/// `sigma_small((X S^H)_{*I})`, and aggregate mean/min/max next to the
/// `(n_bar/n) sigma_small(X S^H)` predictor. Row errors are captured in the
/// `error` column; the sweep itself never aborts.
pub fn sigma_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    crate::linalg::pin_blas_threads();
    cfg.validate()?;
    let grid = cfg
        .n_bar_grid
        .clone()
        .ok_or_else(|| Error::parameter("sigma sweep needs n_bar_grid in the config"))?;
    if grid.is_empty() {
        return Err(Error::parameter("n_bar_grid must be non-empty"));
    }

    // per-graph shared state (graph, features, X S^H per shift) built once
    struct Prepared {
        label: String,
        n: usize,
        propagated: Vec<Mat>,
    }
    let mut prepared = Vec::new();
    for (gi, spec) in cfg.graphs.iter().enumerate() {
        let g = spec.build(cfg.graph_seed(gi))?;
        let x = gaussian_features(cfg.d_x, g.node_count(), cfg.feature_seed(gi));
        let mut propagated = Vec::new();
        for &kind in &cfg.shifts {
            let s = build_shift(&g, kind);
            let mut acc = x.clone();
            for _ in 0..cfg.depth {
                acc = acc.dot(&s.matrix);
            }
            propagated.push(acc);
        }
        prepared.push(Prepared { label: spec.label(), n: g.node_count(), propagated });
    }

    // row descriptors in deterministic config order
    struct Desc {
        row: usize,
        graph_index: usize,
        shift_index: usize,
        nbar_index: usize,
        n_bar: usize,
    }
    let mut descs = Vec::new();
    let mut row = 0usize;
    for gi in 0..cfg.graphs.len() {
        for si in 0..cfg.shifts.len() {
            for (bi, &n_bar) in grid.iter().enumerate() {
                descs.push(Desc { row, graph_index: gi, shift_index: si, nbar_index: bi, n_bar });
                row += 1;
            }
        }
    }

    let rows: Vec<SweepRow> = descs
        .par_iter()
        .map(|d| {
            let start = Instant::now();
            let p = &prepared[d.graph_index];
            let mut out = SweepRow::empty(
                d.row,
                p.label.clone(),
                cfg.shifts[d.shift_index],
                p.n,
                cfg.d_x,
                cfg.depth,
            );
            out.n_bar = d.n_bar;
            out.replications = cfg.replications;

            // labeled sets are shared across shift kinds: the seed depends
            // on (graph, n_bar, replication) only
            let linear_row = d.graph_index * grid.len() + d.nbar_index;
            let work = || -> Result<(f64, f64, f64, f64)> {
                let propagated = &p.propagated[d.shift_index];
                let mut values = Vec::with_capacity(cfg.replications);
                for rep in 0..cfg.replications {
                    let labeled =
                        sample_labeled_set(p.n, d.n_bar, cfg.label_seed(linear_row, rep))?;
                    let restricted = crate::gnn::restrict_columns(propagated, &labeled);
                    values.push(sigma_small(&restricted)?.value);
                }
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                // shared code path with theory::expected_sigma_small
                let full = sigma_small(propagated)?.value;
                let pred = d.n_bar as f64 / p.n as f64 * full;
                Ok((mean, lo, hi, pred))
            };
            match work() {
                Ok((mean, lo, hi, pred)) => {
                    out.sigma_mean = mean;
                    out.sigma_min = lo;
                    out.sigma_max = hi;
                    out.sigma_pred = pred;
                }
                Err(e) => out.error = Some(e.to_string().replace(',', ";")),
            }
            out.wall_ms = start.elapsed().as_millis();
            out
        })
        .collect();

    Ok(rows)
}

// ---------------------------------------------------------------------------
// convergence sweep
// ---------------------------------------------------------------------------

/// Everything needed to train one configured case.
pub struct CaseSetup {
    pub graph: Graph,
    pub problem: Problem,
    pub dims: Vec<usize>,
    pub w0: WeightStack,
    pub report: InitReport,
}

/// Build the problem + initialization for one `(graph, shift, replication)`
/// coordinate of a config.
pub fn prepare_case(
    cfg: &ExperimentConfig,
    graph_index: usize,
    shift: ShiftKind,
    replication: usize,
) -> Result<CaseSetup> {
    cfg.validate()?;
    let spec = cfg
        .graphs
        .get(graph_index)
        .ok_or_else(|| Error::parameter(format!("graph index {graph_index} out of range")))?;
    let g = spec.build(cfg.graph_seed(graph_index))?;
    let n = g.node_count();

    let x = match &cfg.features_csv {
        Some(path) => load_features_csv(path, n)?.features,
        None => gaussian_features(cfg.d_x, n, cfg.feature_seed(graph_index)),
    };
    let labels = match &cfg.labels_csv {
        Some(path) => load_features_csv(path, n)?.features,
        None => synthetic_labels(&x, &g, cfg.eps),
    };
    let d_y = labels.nrows();

    let fraction = cfg.labeled_fraction.unwrap_or(0.75);
    let n_bar = ((fraction * n as f64).round() as usize).clamp(1, n);
    let labeled = sample_labeled_set(n, n_bar, cfg.label_seed(graph_index, replication))?;
    let y = crate::gnn::restrict_columns(&labels, &labeled);

    let s = build_shift(&g, shift);
    let problem = Problem::new(x, s, cfg.depth, y, labeled)?;

    let mut dims = Vec::with_capacity(cfg.depth + 2);
    dims.push(problem.feature_dim());
    dims.extend(cfg.hidden_dims());
    dims.push(d_y);

    let w0 = match &cfg.init {
        InitSpec::Theorem { a } => {
            let a = match a {
                AutoOr::Auto(_) => min_admissible_a(&problem)?,
                AutoOr::Value(v) => *v,
            };
            theorem_init(&dims, a)?
        }
        InitSpec::Balanced { target_scale } => {
            let target = min_norm_solution(&problem)? * *target_scale;
            balanced_init(&dims, &target, &problem)?
        }
    };
    let report = validate_init(&w0, &problem)?;
    Ok(CaseSetup { graph: g, problem, dims, w0, report })
}

/// Run the configured dynamics on a prepared case.
pub fn run_dynamics(
    spec: &DynamicsSpec,
    w0: &WeightStack,
    problem: &Problem,
) -> Result<Trajectory> {
    match spec.algo {
        Algo::Flow | Algo::NormalizedFlow => {
            let t_max = spec
                .t_max
                .ok_or_else(|| Error::parameter("flow dynamics need t_max"))?;
            let opts = FlowOpts { tol: spec.tol, ..FlowOpts::default() };
            if spec.algo == Algo::Flow {
                flow_integrate(w0, problem, t_max, &opts)
            } else {
                normalized_flow_integrate(w0, problem, t_max, &opts)
            }
        }
        Algo::Descent => {
            let k_max = spec
                .k_max
                .ok_or_else(|| Error::parameter("descent dynamics need k_max"))?;
            let opts = DescentOpts { tol: spec.tol, ..DescentOpts::default() };
            let eta = match spec.eta {
                AutoOr::Auto(_) => Eta::Auto,
                AutoOr::Value(v) => Eta::Fixed(v),
            };
            gradient_descent(w0, problem, eta, k_max, &opts)
        }
    }
}

/// Check a run against its certificate. `Some(true/false)` only when the
/// certificate applies (valid init, and an algorithm the theory covers).
pub fn bound_satisfied(
    spec: &DynamicsSpec,
    report: &InitReport,
    traj: &Trajectory,
) -> Option<bool> {
    if !report.valid {
        return None;
    }
    match spec.algo {
        Algo::Flow => Some(traj.samples.iter().all(|s| {
            s.rel_loss <= (-report.alpha_lower * s.t).exp() * (1.0 + 1e-6)
        })),
        Algo::NormalizedFlow => None,
        Algo::Descent => {
            let eta = traj.eta?;
            let bound = 1.0 - eta * report.alpha_lower / 2.0 + 1e-9;
            Some(traj.contraction.iter().all(|rho| *rho <= bound))
        }
    }
}

/// For each `(graph, shift)` coordinate: build the problem, initialize per
/// config, run the configured dynamics, and emit the aggregate row together
/// with the first replication's trajectory.
pub fn convergence_sweep(cfg: &ExperimentConfig) -> Result<Vec<(SweepRow, Option<Trajectory>)>> {
    crate::linalg::pin_blas_threads();
    cfg.validate()?;

    struct Desc {
        row: usize,
        graph_index: usize,
        shift: ShiftKind,
    }
    let mut descs = Vec::new();
    let mut row = 0usize;
    for gi in 0..cfg.graphs.len() {
        for &shift in &cfg.shifts {
            descs.push(Desc { row, graph_index: gi, shift });
            row += 1;
        }
    }

    let rows: Vec<(SweepRow, Option<Trajectory>)> = descs
        .par_iter()
        .map(|d| {
            let start = Instant::now();
            let mut out = SweepRow::empty(
                d.row,
                cfg.graphs[d.graph_index].label(),
                d.shift,
                0,
                cfg.d_x,
                cfg.depth,
            );
            out.replications = cfg.replications;

            let mut first_traj = None;
            let mut work = || -> Result<(SweepRow, Option<Trajectory>)> {
                let mut sigmas = Vec::with_capacity(cfg.replications);
                let mut rels = Vec::with_capacity(cfg.replications);
                let mut bounds: Vec<Option<bool>> = Vec::with_capacity(cfg.replications);
                let mut local = out.clone();
                for rep in 0..cfg.replications {
                    let case = prepare_case(cfg, d.graph_index, d.shift, rep)?;
                    local.n = case.problem.node_count();
                    local.n_bar = case.problem.labeled_count();
                    local.d_x = case.problem.feature_dim();
                    sigmas.push(case.report.sigma_small_restricted);
                    if rep == 0 {
                        let pred = expected_sigma_small(
                            case.problem.x(),
                            case.problem.shift(),
                            cfg.depth,
                            case.problem.labeled_count(),
                        )?;
                        local.sigma_pred = pred.value();
                    }
                    let traj = run_dynamics(&cfg.dynamics, &case.w0, &case.problem)?;
                    rels.push(traj.final_rel_loss());
                    bounds.push(bound_satisfied(&cfg.dynamics, &case.report, &traj));
                    if rep == 0 {
                        first_traj = Some(traj);
                    }
                }
                local.sigma_mean = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
                local.sigma_min = sigmas.iter().cloned().fold(f64::INFINITY, f64::min);
                local.sigma_max = sigmas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                local.final_rel_loss =
                    Some(rels.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
                local.bound_satisfied = if bounds.iter().any(|b| b.is_some()) {
                    Some(bounds.iter().all(|b| b.unwrap_or(true)))
                } else {
                    None
                };
                Ok((local, first_traj.take()))
            };
            let mut result = match work() {
                Ok((r, t)) => (r, t),
                Err(e) => {
                    out.error = Some(e.to_string().replace(',', ";"));
                    (out, None)
                }
            };
            result.0.wall_ms = start.elapsed().as_millis();
            result
        })
        .collect();

    Ok(rows)
}

// ---------------------------------------------------------------------------
// feature CSV loading
// ---------------------------------------------------------------------------

/// Result of [`load_features_csv`]: the z-scored matrix plus warnings.
#[derive(Debug, Clone)]
pub struct FeatureLoad {
    /// `d x n`, each row normalized to zero mean and unit (population)
    /// standard deviation.
    pub features: Mat,
    /// Rows that were constant and left at zero.
    pub constant_rows: Vec<usize>,
    pub skipped_header: bool,
}

/// Load a features (or labels) CSV: one row per feature, `n` comma-separated
/// values per line aligned to the node order of the edge CSV. Rows are
/// z-score normalized with population variance; constant rows become zeros.
pub fn load_features_csv(path: impl AsRef<Path>, n: usize) -> Result<FeatureLoad> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_features_csv(BufReader::new(file), n)
}

fn parse_features_csv(reader: impl BufRead, n: usize) -> Result<FeatureLoad> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut skipped_header = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim_end_matches('\r').trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut values = Vec::with_capacity(n);
        let mut failed_at = None;
        for (col, cell) in trimmed.split(',').enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) => values.push(v),
                Err(_) => {
                    failed_at = Some((col + 1, cell.trim().to_string()));
                    break;
                }
            }
        }
        if let Some((col, cell)) = failed_at {
            if lineno == 1 && !skipped_header {
                skipped_header = true;
                continue;
            }
            return Err(Error::Parse {
                line: lineno,
                message: format!("non-numeric cell {cell:?} in column {col}"),
            });
        }
        if values.len() != n {
            return Err(Error::shape(format!(
                "line {lineno} has {} values, expected {n}",
                values.len()
            )));
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::parameter("feature file contains no data rows"));
    }

    let d = rows.len();
    let mut features = Mat::zeros((d, n));
    let mut constant_rows = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            constant_rows.push(i);
            continue; // leave the row at zero
        }
        let sd = var.sqrt();
        for (j, v) in row.iter().enumerate() {
            features[[i, j]] = (v - mean) / sd;
        }
    }
    Ok(FeatureLoad { features, constant_rows, skipped_header })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn gaussian_features_are_deterministic_and_standard() {
        let a = gaussian_features(30, 200, 7);
        let b = gaussian_features(30, 200, 7);
        assert_eq!(a, b);

        let count = (30 * 200) as f64;
        let mean = a.iter().sum::<f64>() / count;
        assert!(mean.abs() <= 4.0 / count.sqrt(), "mean {mean}");
        let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
        assert!((var - 1.0).abs() <= 0.1, "variance {var}");
    }

    #[test]
    fn labels_without_graph_coupling_are_column_sums() {
        let g = Graph::new(3, []).unwrap();
        let x = ndarray::array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let y = synthetic_labels(&x, &g, 0.7);
        assert_eq!(y, ndarray::array![[5.0, 7.0, 9.0]]);
    }

    #[test]
    fn labels_on_triangle_with_identity_features() {
        let g = Graph::new(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        let x = Mat::eye(3);
        let y = synthetic_labels(&x, &g, 0.1);
        for i in 0..3 {
            assert!((y[[0, i]] - 1.2).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_node_label_ignores_eps() {
        let g = Graph::new(3, [(0, 1)]).unwrap();
        let x = ndarray::array![[1.0, 2.0, 5.0]];
        for eps in [0.0, 0.3, 2.0] {
            let y = synthetic_labels(&x, &g, eps);
            assert_eq!(y[[0, 2]], 5.0);
        }
    }

    #[test]
    fn labeled_set_sampling_contract() {
        let full = sample_labeled_set(6, 6, 1).unwrap();
        assert_eq!(full, vec![0, 1, 2, 3, 4, 5]);

        assert!(sample_labeled_set(6, 0, 1).is_err());
        assert!(sample_labeled_set(6, 7, 1).is_err());

        let a = sample_labeled_set(50, 10, 3).unwrap();
        let b = sample_labeled_set(50, 10, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn labeled_set_sampling_is_roughly_uniform() {
        // mean pairwise overlap of two uniform 10-of-50 subsets is
        // hypergeometric: 10 * 10/50 = 2
        let mut total = 0usize;
        let draws = 1000;
        for seed in 0..draws {
            let a = sample_labeled_set(50, 10, 2 * seed).unwrap();
            let b = sample_labeled_set(50, 10, 2 * seed + 1).unwrap();
            total += a.iter().filter(|i| b.contains(i)).count();
        }
        let mean = total as f64 / draws as f64;
        // sd of the mean is ~ sqrt(1.44/1000) ~ 0.038; allow 5 sigma
        assert!((mean - 2.0).abs() < 0.2, "mean overlap {mean}");
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            graphs: vec![GraphSpec::Er { n: 24, p: 0.3, seed: None }],
            shifts: vec![ShiftKind::Adjacency, ShiftKind::Laplacian],
            d_x: 4,
            depth: 2,
            hidden: Some(vec![4, 3]),
            eps: 0.1,
            labeled_fraction: Some(0.75),
            n_bar_grid: Some(vec![4, 8, 16, 24]),
            init: InitSpec::Theorem { a: AutoOr::default() },
            dynamics: DynamicsSpec {
                algo: Algo::Flow,
                t_max: Some(50.0),
                k_max: None,
                tol: 1e-8,
                eta: AutoOr::default(),
            },
            replications: 3,
            seed: 42,
            features_csv: None,
            labels_csv: None,
        }
    }

    #[test]
    fn sigma_sweep_is_deterministic_and_well_formed() {
        let cfg = small_config();
        let rows1 = sigma_sweep(&cfg).unwrap();
        let rows2 = sigma_sweep(&cfg).unwrap();
        assert_eq!(sweep_rows_to_csv(&rows1), sweep_rows_to_csv(&rows2));
        assert_eq!(rows1.len(), 2 * 4);
        for r in &rows1 {
            assert!(r.error.is_none(), "row {} error {:?}", r.row, r.error);
            // the mean of identical replications can round one ulp past them
            let slack = 1e-12 * r.sigma_mean.abs();
            assert!(r.sigma_min <= r.sigma_mean + slack);
            assert!(r.sigma_mean <= r.sigma_max + slack);
        }
        // full labeled set: sigma is deterministic, mean == min == max and
        // the predictor is exact
        let full = rows1.iter().find(|r| r.n_bar == 24).unwrap();
        assert!((full.sigma_mean - full.sigma_pred).abs() < 1e-10 * full.sigma_pred);
        assert!((full.sigma_mean - full.sigma_min).abs() < 1e-15);
    }

    #[test]
    fn sigma_sweep_predictor_matches_theory_exactly() {
        let cfg = small_config();
        let rows = sigma_sweep(&cfg).unwrap();
        let g = cfg.graphs[0].build(cfg.graph_seed(0)).unwrap();
        let x = gaussian_features(cfg.d_x, g.node_count(), cfg.feature_seed(0));
        for (si, &kind) in cfg.shifts.iter().enumerate() {
            let s = build_shift(&g, kind);
            for (bi, &n_bar) in cfg.n_bar_grid.as_ref().unwrap().iter().enumerate() {
                let row = &rows[si * 4 + bi];
                let pred = expected_sigma_small(&x, &s, cfg.depth, n_bar).unwrap();
                assert_eq!(row.sigma_pred, pred.value(), "row {}", row.row);
            }
        }
    }

    #[test]
    fn convergence_sweep_rows_have_valid_bounds() {
        let mut cfg = small_config();
        cfg.replications = 1;
        let rows = convergence_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        for (row, traj) in &rows {
            assert!(row.error.is_none(), "row {} error {:?}", row.row, row.error);
            assert_eq!(row.bound_satisfied, Some(true), "row {}", row.row);
            let traj = traj.as_ref().unwrap();
            assert!(traj.final_rel_loss() <= 1e-8);
        }
    }

    #[test]
    fn convergence_sweep_determinism_across_thread_counts() {
        let mut cfg = small_config();
        cfg.replications = 1;
        let rows_parallel = convergence_sweep(&cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let rows_serial = pool.install(|| convergence_sweep(&cfg).unwrap());
        let csv_a = sweep_rows_to_csv(&rows_parallel.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>());
        let csv_b = sweep_rows_to_csv(&rows_serial.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>());
        assert_eq!(csv_a, csv_b);
    }

    #[test]
    fn feature_csv_normalization() {
        let load = parse_features_csv("1,2\n5,5\n".as_bytes(), 2).unwrap();
        // first row z-scored: mean 1.5, sd 0.5
        assert!((load.features[[0, 0]] + 1.0).abs() < 1e-12);
        assert!((load.features[[0, 1]] - 1.0).abs() < 1e-12);
        // constant row left at zero and reported
        assert_eq!(load.features[[1, 0]], 0.0);
        assert_eq!(load.constant_rows, vec![1]);

        for i in 0..2 {
            let row = load.features.row(i);
            let mean: f64 = row.sum() / 2.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn feature_csv_errors() {
        // wrong column count
        match parse_features_csv("1,2,3\n".as_bytes(), 2) {
            Err(Error::Shape(_)) => {}
            other => panic!("expected shape error, got {other:?}"),
        }
        // non-numeric cell beyond the header line
        match parse_features_csv("a,b\n1,2\n3,x\n".as_bytes(), 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = small_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&cfg).unwrap());
    }

    #[test]
    fn config_accepts_auto_and_numeric_scalars() {
        let text = r#"{
            "graphs": [{"model": "er", "n": 10, "p": 0.5}],
            "shifts": ["adj", "nlap"],
            "d_x": 3,
            "depth": 1,
            "init": {"scheme": "theorem", "a": 2.5},
            "dynamics": {"algo": "descent", "k_max": 10, "eta": "auto"},
            "seed": 9
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.shifts, vec![ShiftKind::Adjacency, ShiftKind::NormalizedLaplacian]);
        match cfg.init {
            InitSpec::Theorem { a: AutoOr::Value(v) } => assert_eq!(v, 2.5),
            other => panic!("unexpected init {other:?}"),
        }
        assert_eq!(cfg.dynamics.eta, AutoOr::default());
    }
}
