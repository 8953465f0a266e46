//! Adversaries against the patch ciphers.

mod collision;
mod jigsaw;
mod leak;

pub use collision::{mi_collision, mi_collision_with, COLLISION_AMPLITUDE};
pub use jigsaw::{edge_dissimilarity, jigsaw_solve, puzzle_metrics, solve_pieces, PuzzleMetrics, Relation};
pub use leak::{grad_leak_invert, pearson, single_token_embed_gradient, POWER_ITERATIONS, POWER_TOLERANCE};

use std::fmt::Write as _;

use thiserror::Error;

use crate::pevit::ModelError;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("gradient is zero; nothing to invert")]
    ZeroGradient,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Placement of patch indices on a `rows × cols` board.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arrangement {
    pub rows: usize,
    pub cols: usize,
    /// Row-major slot → patch index.
    pub placement: Vec<Option<usize>>,
}

impl Arrangement {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            placement: vec![None; rows * cols],
        }
    }

    /// Slot `i` holds patch `i`, except where `present[i]` is false.
    pub fn identity(rows: usize, cols: usize, present: impl Fn(usize) -> bool) -> Self {
        Self {
            rows,
            cols,
            placement: (0..rows * cols).map(|i| present(i).then_some(i)).collect(),
        }
    }

    /// True layout of RS ciphertext patches: ciphertext patch `j` came from
    /// slot `perm[j]`.
    pub fn from_key(rows: usize, cols: usize, perm: &[usize], present: impl Fn(usize) -> bool) -> Self {
        let mut out = Self::empty(rows, cols);
        for (j, &src) in perm.iter().enumerate() {
            if present(j) {
                out.placement[src] = Some(j);
            }
        }
        out
    }

    pub fn get(&self, r: usize, c: usize) -> Option<usize> {
        self.placement[r * self.cols + c]
    }

    pub fn placed(&self) -> usize {
        self.placement.iter().flatten().count()
    }

    /// Each patch index appears at most once.
    pub fn is_valid(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.placement.len() == self.rows * self.cols && self.placement.iter().flatten().all(|p| seen.insert(*p))
    }

    /// Text dump: one `slot r c -> patch i` line per filled slot, then the
    /// metric lines when given.
    pub fn dump(&self, metrics: Option<&PuzzleMetrics>) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                if let Some(p) = self.get(r, c) {
                    writeln!(out, "slot {r} {c} -> patch {p}").unwrap();
                }
            }
        }
        if let Some(m) = metrics {
            writeln!(out, "direct={}", m.direct).unwrap();
            writeln!(out, "neighbor={}", m.neighbor).unwrap();
        }
        out
    }
}
