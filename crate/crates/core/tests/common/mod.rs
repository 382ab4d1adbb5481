//! Shared instance builders for the integration suites.

use gnnflow::experiments::{gaussian_features, sample_labeled_set, synthetic_labels};
use gnnflow::gnn::{Problem, WeightStack};
use gnnflow::graph::{self, Graph};
use gnnflow::rng::{derive, seeded};
use gnnflow::shift::{build_shift, ShiftKind};
use gnnflow::Mat;

use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
    let mut rng = seeded(seed);
    Mat::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

pub fn random_stack(dims: &[usize], seed: u64) -> WeightStack {
    let layers = (1..dims.len())
        .map(|l| random_mat(dims[l], dims[l - 1], derive(seed, l as u64)))
        .collect();
    WeightStack::new(layers).expect("dims must chain")
}

/// A random instance: seeded graph, Gaussian features, synthetic labels on a
/// uniform labeled set.
pub struct Instance {
    pub graph: Graph,
    pub problem: Problem,
    pub dims: Vec<usize>,
}

pub struct InstanceSpec {
    pub n: usize,
    pub p: f64,
    pub d_x: usize,
    pub hidden: Vec<usize>,
    pub d_y: usize,
    pub depth: usize,
    pub n_bar: usize,
    pub kind: ShiftKind,
}

pub fn build_instance(spec: &InstanceSpec, seed: u64) -> Instance {
    let graph = graph::erdos_renyi(spec.n, spec.p, derive(seed, 1)).unwrap();
    let shift = build_shift(&graph, spec.kind);
    let x = gaussian_features(spec.d_x, spec.n, derive(seed, 2));
    let labeled = sample_labeled_set(spec.n, spec.n_bar, derive(seed, 3)).unwrap();
    let y = if spec.d_y == 1 {
        let labels = synthetic_labels(&x, &graph, 0.1);
        gnnflow::gnn::restrict_columns(&labels, &labeled)
    } else {
        random_mat(spec.d_y, spec.n_bar, derive(seed, 4))
    };
    let problem = Problem::new(x, shift, spec.depth, y, labeled).unwrap();
    let mut dims = vec![spec.d_x];
    dims.extend(spec.hidden.iter().copied());
    dims.push(spec.d_y);
    Instance { graph, problem, dims }
}
