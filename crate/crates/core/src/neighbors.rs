//! Exact nearest-neighbor graphs and restricted-pool queries.
//!
//! Everything here orders candidates by `(distance, index)`, so results are
//! fully determined by the data even when distances tie.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::dataset::{euclidean, Dataset};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist: f64,
}

impl Neighbor {
    #[inline]
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

/// Fixed-degree directed neighbor graph stored as one flat adjacency buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    n: usize,
    q: usize,
    requested_q: usize,
    adjacency: Vec<Neighbor>,
}

impl NeighborGraph {
    /// Builds a graph from per-node lists that must all have length `q`.
    pub fn from_lists(lists: Vec<Vec<Neighbor>>, requested_q: usize) -> Result<Self> {
        let n = lists.len();
        let q = lists.first().map_or(0, Vec::len);
        if let Some(bad) = lists.iter().find(|l| l.len() != q) {
            return Err(Error::LengthMismatch { left: bad.len(), right: q });
        }
        for (i, list) in lists.iter().enumerate() {
            if list.iter().any(|nb| nb.index == i || nb.index >= n) {
                return Err(Error::param(format!("neighbor list of node {i} has a self edge or bad index")));
            }
        }
        Ok(Self { n, q, requested_q, adjacency: lists.concat() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Effective degree, `min(requested, n - 1)`.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn requested_q(&self) -> usize {
        self.requested_q
    }

    /// True when the requested degree exceeded `n - 1` and was reduced.
    pub fn clamped(&self) -> bool {
        self.q < self.requested_q
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.adjacency[i * self.q..(i + 1) * self.q]
    }

    /// The first `q` neighbors of every node. Because lists are sorted, this
    /// is exactly the `q`-NN graph.
    pub fn truncated(&self, q: usize) -> Self {
        let keep = q.min(self.q);
        let adjacency = (0..self.n).flat_map(|i| self.neighbors(i)[..keep].iter().copied()).collect();
        Self { n: self.n, q: keep, requested_q: q, adjacency }
    }

    /// One line per node, `node: (nbr,dist) ...`, distances at 9 significant digits.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for i in 0..self.n {
            write!(out, "{i}:")?;
            for nb in self.neighbors(i) {
                write!(out, " ({},{:.8e})", nb.index, nb.dist)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Source of neighbor graphs; lets an approximate index replace brute force.
pub trait NeighborBackend: Sync {
    fn name(&self) -> &'static str;
    fn knn(&self, d: &Dataset, q: usize) -> Result<NeighborGraph>;
}

/// Brute-force backend, `O(n^2 d)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactBackend;

impl NeighborBackend for ExactBackend {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn knn(&self, d: &Dataset, q: usize) -> Result<NeighborGraph> {
        knn_exact(d, q)
    }
}

/// Keeps the `t` smallest candidates by `(dist, index)`, sorted.
fn select_smallest(mut cand: Vec<Neighbor>, t: usize) -> Vec<Neighbor> {
    if t == 0 {
        return Vec::new();
    }
    if cand.len() > t {
        cand.select_nth_unstable_by(t - 1, Neighbor::cmp_key);
        cand.truncate(t);
    }
    cand.sort_unstable_by(Neighbor::cmp_key);
    cand
}

/// Exact `q`-nearest-neighbor graph. `q` is clamped to `n - 1`; check
/// [`NeighborGraph::clamped`].
pub fn knn_exact(d: &Dataset, q: usize) -> Result<NeighborGraph> {
    if q == 0 {
        return Err(Error::param("q must be >= 1"));
    }
    let n = d.n();
    let keep = q.min(n - 1);
    if keep < q {
        log::warn!("neighbor count {q} clamped to n - 1 = {keep}");
    }
    let lists: Vec<Vec<Neighbor>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = d.row(i);
            let cand = (0..n)
                .filter(|&j| j != i)
                .map(|j| Neighbor { index: j, dist: euclidean(xi, d.row(j)) })
                .collect();
            select_smallest(cand, keep)
        })
        .collect();
    Ok(NeighborGraph { n, q: keep, requested_q: q, adjacency: lists.concat() })
}

/// The `min(t, |pool|)` pool members nearest to row `query`.
pub fn nearest_in_pool(d: &Dataset, query: usize, pool: &[usize], t: usize) -> Result<Vec<Neighbor>> {
    nearest_in_pool_point(d, d.row(query), pool, t)
}

/// Same as [`nearest_in_pool`] for an arbitrary query vector.
pub fn nearest_in_pool_point(d: &Dataset, query: &[f64], pool: &[usize], t: usize) -> Result<Vec<Neighbor>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let cand = pool.iter().map(|&j| Neighbor { index: j, dist: euclidean(query, d.row(j)) }).collect();
    Ok(select_smallest(cand, t))
}

/// Mean fraction of true neighbors recovered by `approx`, per node.
pub fn recall(approx: &NeighborGraph, exact: &NeighborGraph) -> Result<f64> {
    if approx.n != exact.n {
        return Err(Error::LengthMismatch { left: approx.n, right: exact.n });
    }
    if exact.q == 0 {
        return Ok(1.0);
    }
    let total: usize = (0..exact.n)
        .map(|i| {
            let truth: Vec<usize> = exact.neighbors(i).iter().map(|nb| nb.index).collect();
            approx.neighbors(i).iter().filter(|nb| truth.contains(&nb.index)).count()
        })
        .sum();
    Ok(total as f64 / (exact.n * exact.q) as f64)
}
