//! Core-directed nearest-neighbor graph and its edge weights.
//!
//! A point in layer `j >= 1` links to its `t` nearest points among all
//! strictly inner layers `0..j`. Core points have no out-edges. Edges
//! therefore always point inward, which is what makes layer-by-layer
//! propagation well defined.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::flowrank::LayerPartition;
use crate::neighbors::nearest_in_pool;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CdnnEdge {
    pub target: usize,
    pub dist: f64,
    /// Zero until [`weight_edges`] runs.
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightKernel {
    /// `exp(-max(0, d - rho) / sigma_u)` with a per-node bandwidth fitted so
    /// the raw weights sum to `log2(max(s, 2))`.
    #[default]
    UmapLocal,
    /// `1 / (1 + d)`.
    Linear,
    /// `exp(-(d - rho)^2)`.
    GlobalGaussian,
}

impl WeightKernel {
    pub const ALL: [WeightKernel; 3] = [WeightKernel::UmapLocal, WeightKernel::Linear, WeightKernel::GlobalGaussian];

    pub fn name(self) -> &'static str {
        match self {
            WeightKernel::UmapLocal => "umap_local",
            WeightKernel::Linear => "linear",
            WeightKernel::GlobalGaussian => "global_gaussian",
        }
    }
}

impl fmt::Display for WeightKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightKernel::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::param(format!("unknown kernel {s:?}; expected umap_local, linear or global_gaussian")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CdnnGraph {
    t: usize,
    layer_of: Vec<usize>,
    edges: Vec<Vec<CdnnEdge>>,
    kernel: Option<WeightKernel>,
    weighted: bool,
}

impl CdnnGraph {
    /// Graph from caller-supplied weighted edges. Checks that every edge
    /// points into a strictly inner layer and that weights are valid.
    pub fn from_weighted_edges(p: &LayerPartition, t: usize, edges: Vec<Vec<CdnnEdge>>) -> Result<Self> {
        if edges.len() != p.n() {
            return Err(Error::LengthMismatch { left: edges.len(), right: p.n() });
        }
        let layer_of = p.layer_of();
        for (u, list) in edges.iter().enumerate() {
            if list.len() > t || list.iter().any(|e| e.target >= p.n() || layer_of[e.target] >= layer_of[u]) {
                return Err(Error::param(format!("edges of {u} must number at most t and point inward")));
            }
            check_node(u, list)?;
        }
        Ok(Self { t, layer_of, edges, kernel: None, weighted: true })
    }

    pub fn n(&self) -> usize {
        self.edges.len()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Out-edges of `u`, nearest first.
    pub fn edges(&self, u: usize) -> &[CdnnEdge] {
        &self.edges[u]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    pub fn layer_of(&self) -> &[usize] {
        &self.layer_of
    }

    pub fn kernel(&self) -> Option<WeightKernel> {
        self.kernel
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    /// CSV edge list with header `u,v,dist,weight`.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "u,v,dist,weight")?;
        for (u, list) in self.edges.iter().enumerate() {
            for e in list {
                writeln!(out, "{u},{},{},{}", e.target, e.dist, e.weight)?;
            }
        }
        Ok(())
    }
}

/// Links every non-core point to its `t` nearest points in the inner layers.
pub fn build_cdnn(d: &Dataset, p: &LayerPartition, t: usize) -> Result<CdnnGraph> {
    if t == 0 {
        return Err(Error::param("t must be >= 1"));
    }
    if p.n() != d.n() {
        return Err(Error::LengthMismatch { left: p.n(), right: d.n() });
    }
    if p.core().is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut edges = vec![Vec::new(); d.n()];
    let mut pool: Vec<usize> = p.core().to_vec();
    for layer in &p.layers[1..] {
        let lists: Vec<Vec<CdnnEdge>> = layer
            .par_iter()
            .map(|&u| {
                nearest_in_pool(d, u, &pool, t).map(|nbrs| {
                    nbrs.into_iter().map(|nb| CdnnEdge { target: nb.index, dist: nb.dist, weight: 0.0 }).collect()
                })
            })
            .collect::<Result<_>>()?;
        for (&u, list) in layer.iter().zip(lists) {
            edges[u] = list;
        }
        pool.extend_from_slice(layer);
    }
    Ok(CdnnGraph { t, layer_of: p.layer_of(), edges, kernel: None, weighted: false })
}

const UMAP_REL_TOL: f64 = 1e-5;
const UMAP_MAX_STEPS: usize = 200;

/// Bandwidth for which `sum exp(-max(0, d - rho) / sigma)` hits `target`.
/// Doubles or halves to bracket the root, then bisects. If the target is
/// below the number of distances tied at `rho` it is unreachable and the
/// smallest bandwidth tried is returned.
pub fn umap_sigma(dists: &[f64], target: f64) -> f64 {
    let rho = dists[0];
    let total = |sigma: f64| dists.iter().map(|&d| (-(d - rho).max(0.0) / sigma).exp()).sum::<f64>();
    let (mut lo, mut hi, mut mid) = (0.0f64, f64::INFINITY, 1.0f64);
    for _ in 0..UMAP_MAX_STEPS {
        let s = total(mid);
        if (s - target).abs() <= UMAP_REL_TOL * target {
            break;
        }
        if s > target {
            hi = mid;
        } else {
            lo = mid;
        }
        let next = if hi.is_infinite() { mid * 2.0 } else { 0.5 * (lo + hi) };
        if next == mid {
            break;
        }
        mid = next;
    }
    mid
}

fn raw_weights(dists: &[f64], kernel: WeightKernel) -> Vec<f64> {
    let rho = dists[0];
    match kernel {
        WeightKernel::UmapLocal => {
            let target = (dists.len().max(2) as f64).log2();
            let sigma = umap_sigma(dists, target);
            dists.iter().map(|&d| (-(d - rho).max(0.0) / sigma).exp()).collect()
        }
        WeightKernel::Linear => dists.iter().map(|&d| 1.0 / (1.0 + d)).collect(),
        WeightKernel::GlobalGaussian => dists.iter().map(|&d| (-(d - rho).powi(2)).exp()).collect(),
    }
}

/// Per-node normalized weights for the given kernel. Raw weights are floored
/// at the smallest normal double so that no edge underflows to zero.
pub fn node_weights(dists: &[f64], kernel: WeightKernel) -> Vec<f64> {
    match dists.len() {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => {
            let raw: Vec<f64> = raw_weights(dists, kernel).into_iter().map(|w| w.max(f64::MIN_POSITIVE)).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|w| w / sum).collect()
        }
    }
}

pub fn weight_edges(mut g: CdnnGraph, kernel: WeightKernel) -> Result<CdnnGraph> {
    g.edges.par_iter_mut().enumerate().try_for_each(|(u, list)| {
        let dists: Vec<f64> = list.iter().map(|e| e.dist).collect();
        let w = node_weights(&dists, kernel);
        for (e, w) in list.iter_mut().zip(&w) {
            e.weight = *w;
        }
        check_node(u, list)
    })?;
    g.kernel = Some(kernel);
    g.weighted = true;
    Ok(g)
}

fn check_node(u: usize, list: &[CdnnEdge]) -> Result<()> {
    if list.is_empty() {
        return Ok(());
    }
    let sum: f64 = list.iter().map(|e| e.weight).sum();
    if (sum - 1.0).abs() > 1e-9 || list.iter().any(|e| !(e.weight > 0.0)) {
        return Err(Error::invariant(format!("node {u}: weights must be positive and sum to 1, sum is {sum}")));
    }
    if list.windows(2).any(|w| w[1].weight > w[0].weight * (1.0 + 1e-12)) {
        return Err(Error::invariant(format!("node {u}: weights increase with distance")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_setup(n: usize, l: usize, seed: u64) -> (Dataset, LayerPartition) {
        let mut rng = crate::rng::StageRng::seed_from_u64(seed);
        let d = Dataset::new(n, 2, (0..2 * n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for a in (1..n).rev() {
            perm.swap(a, rng.random_range(0..=a));
        }
        (d, LayerPartition::from_ranking(perm, l).unwrap())
    }

    #[test]
    fn two_layers_full_degree() {
        let (d, p) = random_setup(40, 2, 1);
        let g = build_cdnn(&d, &p, 5).unwrap();
        let layer = p.layer_of();
        for u in 0..40 {
            if layer[u] == 0 {
                assert!(g.edges(u).is_empty());
            } else {
                assert_eq!(g.edges(u).len(), 5);
                assert!(g.edges(u).iter().all(|e| layer[e.target] == 0));
            }
        }
        assert_eq!(g.edge_count(), 20 * 5);
    }

    #[test]
    fn edges_point_inward_and_count_formula() {
        let (d, p) = random_setup(53, 5, 2);
        let t = 4;
        let g = build_cdnn(&d, &p, t).unwrap();
        let layer = p.layer_of();
        let mut expected = 0;
        let mut inner = p.layers[0].len();
        for l in &p.layers[1..] {
            expected += l.len() * t.min(inner);
            inner += l.len();
        }
        assert_eq!(g.edge_count(), expected);
        for u in 0..53 {
            assert!(g.edges(u).iter().all(|e| layer[e.target] < layer[u]));
        }
    }

    #[test]
    fn t1_matches_scan_oracle() {
        let (d, p) = random_setup(60, 4, 3);
        let g = build_cdnn(&d, &p, 1).unwrap();
        let layer = p.layer_of();
        for u in 0..60 {
            if layer[u] == 0 {
                continue;
            }
            let mut best = (f64::INFINITY, usize::MAX);
            for v in 0..60 {
                if layer[v] < layer[u] {
                    let cand = (d.dist(u, v), v);
                    if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                        best = cand;
                    }
                }
            }
            assert_eq!(g.edges(u)[0].target, best.1);
        }
    }

    #[test]
    fn singleton_and_equal_distance_weights() {
        for k in WeightKernel::ALL {
            assert_eq!(node_weights(&[3.7], k), vec![1.0]);
            let w = node_weights(&[2.0; 4], k);
            assert!(w.iter().all(|x| (x - 0.25).abs() < 1e-15), "{k}: {w:?}");
        }
    }

    #[test]
    fn linear_kernel_rational_oracle() {
        let w = node_weights(&[1.0, 2.0, 4.0], WeightKernel::Linear);
        for (got, want) in w.iter().zip([15.0 / 31.0, 10.0 / 31.0, 6.0 / 31.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn umap_bisection_hits_target() {
        let mut rng = crate::rng::StageRng::seed_from_u64(4);
        for s in 2..25 {
            let mut dists: Vec<f64> = (0..s).map(|_| rng.random::<f64>() * 5.0).collect();
            dists.sort_by(f64::total_cmp);
            let target = (s as f64).log2();
            let sigma = umap_sigma(&dists, target);
            let achieved: f64 = dists.iter().map(|&d| (-(d - dists[0]).max(0.0) / sigma).exp()).sum();
            assert!((achieved - target).abs() < 1e-4, "s={s}: {achieved} vs {target}");
        }
    }

    #[test]
    fn umap_extreme_gap_stays_positive() {
        let w = node_weights(&[1.0, 1.0, 1e6], WeightKernel::UmapLocal);
        assert!(w.iter().all(|&x| x > 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighting_validates_every_node() {
        let (d, p) = random_setup(80, 4, 5);
        for k in WeightKernel::ALL {
            let g = weight_edges(build_cdnn(&d, &p, 6).unwrap(), k).unwrap();
            assert_eq!(g.kernel(), Some(k));
            for u in 0..80 {
                let e = g.edges(u);
                if !e.is_empty() {
                    assert!((e.iter().map(|x| x.weight).sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn kernel_names_round_trip() {
        for k in WeightKernel::ALL {
            assert_eq!(k.name().parse::<WeightKernel>().unwrap(), k);
        }
        assert!("cosine".parse::<WeightKernel>().is_err());
    }

    #[test]
    fn edge_list_dump() {
        let (d, p) = random_setup(6, 2, 6);
        let g = weight_edges(build_cdnn(&d, &p, 1).unwrap(), WeightKernel::Linear).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3);
        assert!(text.starts_with("u,v,dist,weight\n"));
    }
}
