//! Finite-step random-walk density on a neighbor graph.
//!
//! The walk starts from the uniform distribution and follows out-edges
//! uniformly at random. Instead of simulating walkers, the distribution is
//! pushed through the transition matrix exactly. Each step is computed in
//! "pull" form: node `j` sums the contributions of its in-neighbors in
//! ascending source order, so the floating-point result is independent of
//! how rows are scheduled across threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::neighbors::NeighborGraph;

/// Which edges the walk may follow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WalkGraph {
    /// Out-edges of the `q`-NN graph as built.
    #[default]
    Directed,
    /// Union of both orientations, each undirected edge counted once.
    Symmetrized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityEstimate {
    pub pi: Vec<f64>,
    pub steps: usize,
    pub q: usize,
}

/// `ceil(ln n)`, and at least one step.
pub fn default_steps(n: usize) -> usize {
    ((n as f64).ln().ceil() as usize).max(1)
}

pub fn rw_density(g: &NeighborGraph, steps: Option<usize>) -> Result<DensityEstimate> {
    rw_density_with(g, steps, WalkGraph::Directed)
}

pub fn rw_density_with(g: &NeighborGraph, steps: Option<usize>, mode: WalkGraph) -> Result<DensityEstimate> {
    let n = g.n();
    let out = out_lists(g, mode);
    if let Some(i) = out.iter().position(Vec::is_empty) {
        return Err(Error::Degenerate(format!("node {i} has no neighbors; the walk is undefined")));
    }
    let inv_deg: Vec<f64> = out.iter().map(|l| 1.0 / l.len() as f64).collect();

    // incoming[j] = sources i with j in out(i), ascending.
    let mut incoming = vec![Vec::new(); n];
    for (i, list) in out.iter().enumerate() {
        for &j in list {
            incoming[j].push(i);
        }
    }

    let steps = steps.unwrap_or_else(|| default_steps(n));
    let mut pi = vec![1.0 / n as f64; n];
    for step in 0..steps {
        let flow: Vec<f64> = pi.iter().zip(&inv_deg).map(|(p, w)| p * w).collect();
        pi = incoming.par_iter().map(|src| src.iter().map(|&i| flow[i]).sum()).collect();
        let mass: f64 = pi.iter().sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::invariant(format!("walk mass drifted to {mass} after step {}", step + 1)));
        }
    }
    Ok(DensityEstimate { pi, steps, q: g.q() })
}

fn out_lists(g: &NeighborGraph, mode: WalkGraph) -> Vec<Vec<usize>> {
    let n = g.n();
    let mut out: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i).iter().map(|nb| nb.index).collect()).collect();
    if mode == WalkGraph::Symmetrized {
        for i in 0..n {
            for nb in g.neighbors(i) {
                out[nb.index].push(i);
            }
        }
        for list in &mut out {
            list.sort_unstable();
            list.dedup();
        }
    }
    out
}
