//! Implementations behind the CLI subcommands. Standard output carries
//! machine-readable summaries only; progress notes go to standard error.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use gnnflow::dynamics::backtrack_eta;
use gnnflow::dynamics::iterations_to_epsilon;
use gnnflow::error::{Error, Result};
use gnnflow::experiments::{
    convergence_sweep, prepare_case, run_dynamics, sigma_sweep, sweep_rows_to_csv,
    trajectory_to_csv, AutoOr, ExperimentConfig, GraphSpec,
};
use gnnflow::graph::Graph;
use gnnflow::shift::ShiftKind;
use gnnflow::theory::{energy_min_value, rate_bundle};

/// Overrides shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub shift: Option<ShiftKind>,
    pub model: Option<String>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(kind) = overrides.shift {
        cfg.shifts = vec![kind];
    }
    if let Some(model) = &overrides.model {
        let keep: Vec<GraphSpec> = cfg
            .graphs
            .iter()
            .filter(|g| {
                matches!(
                    (g, model.as_str()),
                    (GraphSpec::Er { .. }, "er")
                        | (GraphSpec::Knn { .. }, "knn")
                        | (GraphSpec::Sbm { .. }, "sbm")
                        | (GraphSpec::Ba { .. }, "ba")
                        | (GraphSpec::Csv { .. }, "csv")
                )
            })
            .cloned()
            .collect();
        if keep.is_empty() {
            return Err(Error::parameter(format!(
                "config has no graph of model {model:?}"
            )));
        }
        cfg.graphs = keep;
    }
    Ok(cfg)
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Emit an edge CSV (`u,v` per line, sorted) for a generated graph.
pub fn graph_to_edge_csv(g: &Graph) -> String {
    let mut out = String::new();
    for (u, v) in g.edges() {
        out.push_str(&format!("{u},{v}\n"));
    }
    out
}

pub fn run_gen_graph(spec: &GraphSpec, seed: u64, out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let g = spec.build(seed)?;
    let path = out.join("edges.csv");
    fs::write(&path, graph_to_edge_csv(&g))?;
    eprintln!(
        "wrote {} ({} nodes, {} edges)",
        path.display(),
        g.node_count(),
        g.edge_count()
    );
    println!(
        "{}",
        serde_json::json!({
            "nodes": g.node_count(),
            "edges": g.edge_count(),
            "path": path.display().to_string(),
        })
    );
    Ok(path)
}

pub fn run_sigma_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let rows = sigma_sweep(cfg)?;
    let wall: u128 = rows.iter().map(|r| r.wall_ms).sum();
    let path = out.join("sigma_sweep.csv");
    fs::write(&path, sweep_rows_to_csv(&rows))?;
    eprintln!("sigma sweep: {} rows in {} ms -> {}", rows.len(), wall, path.display());
    println!(
        "{}",
        serde_json::json!({ "rows": rows.len(), "path": path.display().to_string() })
    );
    Ok(path)
}

pub fn run_convergence_sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    trajectories: bool,
) -> Result<PathBuf> {
    ensure_out_dir(out)?;
    let rows = convergence_sweep(cfg)?;
    let wall: u128 = rows.iter().map(|(r, _)| r.wall_ms).sum();
    let path = out.join("convergence_sweep.csv");
    let flat: Vec<_> = rows.iter().map(|(r, _)| r.clone()).collect();
    fs::write(&path, sweep_rows_to_csv(&flat))?;
    if trajectories {
        for (row, traj) in &rows {
            if let Some(traj) = traj {
                let tpath = out.join(format!("trajectory_{:03}.csv", row.row));
                fs::write(&tpath, trajectory_to_csv(traj))?;
            }
        }
    }
    eprintln!(
        "convergence sweep: {} rows in {} ms -> {}",
        rows.len(),
        wall,
        path.display()
    );
    println!(
        "{}",
        serde_json::json!({ "rows": rows.len(), "path": path.display().to_string() })
    );
    Ok(path)
}

#[derive(Serialize)]
struct TrainSummary {
    status: String,
    final_loss: f64,
    final_rel_loss: f64,
    eta: Option<f64>,
    valid_init: bool,
    sigma_small_restricted: f64,
    alpha_lower: f64,
}

pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let shift = cfg.shifts[0];
    let case = prepare_case(cfg, 0, shift, 0)?;
    eprintln!(
        "training on {} nodes, shift {}, n_bar {}, valid init: {}",
        case.problem.node_count(),
        shift,
        case.problem.labeled_count(),
        case.report.valid
    );
    let traj = run_dynamics(&cfg.dynamics, &case.w0, &case.problem)?;

    fs::write(out.join("trajectory.csv"), trajectory_to_csv(&traj))?;
    let report_json = serde_json::to_string_pretty(&case.report)
        .map_err(|e| Error::parameter(e.to_string()))?;
    fs::write(out.join("init_report.json"), report_json)?;

    let summary = TrainSummary {
        status: format!("{:?}", traj.status),
        final_loss: traj.final_loss(),
        final_rel_loss: traj.final_rel_loss(),
        eta: traj.eta,
        valid_init: case.report.valid,
        sigma_small_restricted: case.report.sigma_small_restricted,
        alpha_lower: case.report.alpha_lower,
    };
    println!(
        "{}",
        serde_json::to_string(&summary).map_err(|e| Error::parameter(e.to_string()))?
    );
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    rate_bundle: gnnflow::theory::RateBundle,
    init_report: gnnflow::init::InitReport,
    min_admissible_a: Option<f64>,
    energy_min_value: f64,
    eta: f64,
    epsilon: f64,
    iterations_to_epsilon: Option<u64>,
}

/// Print the closed-form quantities for the config's first (graph, shift)
/// coordinate.
pub fn run_predict(cfg: &ExperimentConfig) -> Result<()> {
    let shift = cfg.shifts[0];
    let case = prepare_case(cfg, 0, shift, 0)?;
    let bundle = rate_bundle(&case.w0, &case.problem)?;
    let min_a = gnnflow::init::min_admissible_a(&case.problem).ok();
    let energy = energy_min_value(&case.problem, cfg.depth)?;

    let eta = match cfg.dynamics.eta {
        AutoOr::Value(v) => v,
        AutoOr::Auto(_) => backtrack_eta(&case.w0, &case.problem, 1.0)?,
    };
    let gap0 = (case.report.loss0 - case.report.min_loss).max(0.0);
    let epsilon = (cfg.dynamics.tol * gap0).max(f64::MIN_POSITIVE);
    let iterations = iterations_to_epsilon(
        &case.report,
        eta,
        case.report.loss0,
        case.report.min_loss,
        epsilon,
    )
    .ok();

    let prediction = Prediction {
        rate_bundle: bundle,
        init_report: case.report,
        min_admissible_a: min_a,
        energy_min_value: energy,
        eta,
        epsilon,
        iterations_to_epsilon: iterations,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&prediction).map_err(|e| Error::parameter(e.to_string()))?
    );
    Ok(())
}
