//! Graph shift / aggregation operators built from a [`Graph`].
//!
//! A shift operator is an n-by-n matrix whose off-diagonal sparsity pattern
//! matches the adjacency matrix; it is the neighborhood-aggregation step of
//! the linear GNN.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::Mat;

/// The supported shift-operator constructions.
///
/// `NormalizedSelfLoopAdjacency` is the symmetric normalization
/// `D^{-1/2}(I+A)D^{-1/2}`; the row- and column-stochastic variants
/// `D^{-1}(I+A)` and `(I+A)D^{-1}` are the two other self-loop
/// normalizations in circulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShiftKind {
    Adjacency,
    SelfLoopAdjacency,
    NormalizedSelfLoopAdjacency,
    RowStochasticSelfLoop,
    ColStochasticSelfLoop,
    Laplacian,
    NormalizedLaplacian,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 7] = [
        ShiftKind::Adjacency,
        ShiftKind::SelfLoopAdjacency,
        ShiftKind::NormalizedSelfLoopAdjacency,
        ShiftKind::RowStochasticSelfLoop,
        ShiftKind::ColStochasticSelfLoop,
        ShiftKind::Laplacian,
        ShiftKind::NormalizedLaplacian,
    ];

    /// The exact CLI string for this kind.
    pub fn cli_name(self) -> &'static str {
        match self {
            ShiftKind::Adjacency => "adj",
            ShiftKind::SelfLoopAdjacency => "sl-adj",
            ShiftKind::NormalizedSelfLoopAdjacency => "nsl-adj",
            ShiftKind::RowStochasticSelfLoop => "row-sl",
            ShiftKind::ColStochasticSelfLoop => "col-sl",
            ShiftKind::Laplacian => "lap",
            ShiftKind::NormalizedLaplacian => "nlap",
        }
    }

    /// Symmetric for everything except the one-sided stochastic scalings.
    pub fn is_symmetric(self) -> bool {
        !matches!(
            self,
            ShiftKind::RowStochasticSelfLoop | ShiftKind::ColStochasticSelfLoop
        )
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShiftKind::ALL
            .iter()
            .copied()
            .find(|k| k.cli_name() == s)
            .ok_or_else(|| {
                Error::parameter(format!(
                    "unknown shift kind {s:?}; expected one of adj, sl-adj, nsl-adj, row-sl, col-sl, lap, nlap"
                ))
            })
    }
}

// Serialized form is the CLI string, so JSON configs and CSV cells use the
// same vocabulary as the command line.
impl Serialize for ShiftKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.cli_name())
    }
}

impl<'de> Deserialize<'de> for ShiftKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(|e: Error| D::Error::custom(e.to_string()))
    }
}

/// A dense shift operator tagged with its construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftMatrix {
    pub kind: ShiftKind,
    pub matrix: Mat,
}

impl ShiftMatrix {
    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Build the shift operator of the requested kind.
///
/// `D̂` is the degree matrix of the self-loop adjacency `I + A` (always
/// invertible), `D` the plain degree matrix. For the normalized Laplacian,
/// rows and columns of isolated nodes are set to zero.
pub fn build_shift(g: &Graph, kind: ShiftKind) -> ShiftMatrix {
    let n = g.node_count();
    let a = g.adjacency_matrix();
    let deg: Vec<f64> = g.degrees().iter().map(|&d| d as f64).collect();

    let matrix = match kind {
        ShiftKind::Adjacency => a,
        ShiftKind::SelfLoopAdjacency => {
            let mut s = a;
            for i in 0..n {
                s[[i, i]] += 1.0;
            }
            s
        }
        ShiftKind::NormalizedSelfLoopAdjacency => {
            let mut s = a;
            for i in 0..n {
                s[[i, i]] += 1.0;
            }
            let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / (d + 1.0).sqrt()).collect();
            for i in 0..n {
                for j in 0..n {
                    s[[i, j]] *= inv_sqrt[i] * inv_sqrt[j];
                }
            }
            s
        }
        ShiftKind::RowStochasticSelfLoop => {
            let mut s = a;
            for i in 0..n {
                s[[i, i]] += 1.0;
            }
            for i in 0..n {
                let inv = 1.0 / (deg[i] + 1.0);
                for j in 0..n {
                    s[[i, j]] *= inv;
                }
            }
            s
        }
        ShiftKind::ColStochasticSelfLoop => {
            let mut s = a;
            for i in 0..n {
                s[[i, i]] += 1.0;
            }
            for j in 0..n {
                let inv = 1.0 / (deg[j] + 1.0);
                for i in 0..n {
                    s[[i, j]] *= inv;
                }
            }
            s
        }
        ShiftKind::Laplacian => {
            let mut s = -a;
            for i in 0..n {
                s[[i, i]] += deg[i];
            }
            s
        }
        ShiftKind::NormalizedLaplacian => {
            let inv_sqrt: Vec<f64> =
                deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
            let mut s = Mat::zeros((n, n));
            for i in 0..n {
                if deg[i] > 0.0 {
                    s[[i, i]] = 1.0;
                }
                for j in 0..n {
                    if a[[i, j]] != 0.0 {
                        s[[i, j]] = -inv_sqrt[i] * inv_sqrt[j];
                    }
                }
            }
            s
        }
    };

    ShiftMatrix { kind, matrix }
}
