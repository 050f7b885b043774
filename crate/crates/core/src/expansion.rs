//! Layer-wise expansion and the end-to-end pipeline.
//!
//! Stages, in order: random-walk density on the `q`-NN graph, FlowRank and
//! layer partition, clustering of the core block, the core-directed graph,
//! and propagation of memberships from the core outward.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::cdnn::{build_cdnn, weight_edges, CdnnGraph, WeightKernel};
use crate::corecluster::{gmm_fit, kmeans, kmeans_oneshot_restarts, GmmOptions, KMeansOptions, MembershipMatrix};
use crate::dataset::Dataset;
use crate::density::{rw_density_with, DensityEstimate, WalkGraph};
use crate::error::{Error, Result};
use crate::flowrank::{flowrank_on, partition_layers, FlowRankScores, LayerPartition};
use crate::neighbors::knn_exact;
use crate::rng::derive_seed;

/// Clustering algorithm applied to the core (or to everything, when run plain).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algo {
    KMeans,
    Gmm,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::KMeans => "kmeans",
            Algo::Gmm => "gmm",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Algo::KMeans),
            "gmm" => Ok(Algo::Gmm),
            _ => Err(Error::param(format!("unknown algorithm {s:?}; expected kmeans or gmm"))),
        }
    }
}

/// How K-Means is run on the core.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CoreVariant {
    /// Lloyd to convergence, best of `n_init`.
    #[default]
    Full,
    /// Seeding plus a single Lloyd step, best of `2 ceil(ln m)` restarts.
    OneShot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorespectParams {
    /// Degree of the density graph.
    pub q: usize,
    /// Ascent neighborhood size.
    pub r: usize,
    /// Out-degree of the core-directed graph.
    pub t: usize,
    /// Number of equal-size rank blocks; block 0 is the core.
    pub layers: usize,
    pub kernel: WeightKernel,
    pub seed: u64,
    pub core_variant: CoreVariant,
    pub walk: WalkGraph,
    /// Walk length; `ceil(ln n)` when absent.
    pub steps: Option<usize>,
    /// Seeds inside these are ignored; stage seeds derive from `seed`.
    pub kmeans: KMeansOptions,
    pub gmm: GmmOptions,
}

impl Default for CorespectParams {
    fn default() -> Self {
        Self {
            q: 40,
            r: 20,
            t: 20,
            layers: 10,
            kernel: WeightKernel::UmapLocal,
            seed: 0,
            core_variant: CoreVariant::Full,
            walk: WalkGraph::Directed,
            steps: None,
            kmeans: KMeansOptions::default(),
            gmm: GmmOptions::default(),
        }
    }
}

impl CorespectParams {
    /// Neighborhood sizes for small datasets.
    pub fn small() -> Self {
        Self { q: 20, r: 10, t: 10, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("q", self.q), ("r", self.r), ("t", self.t), ("layers", self.layers)] {
            if v == 0 {
                return Err(Error::param(format!("{name} must be >= 1")));
            }
        }
        if self.steps == Some(0) {
            return Err(Error::param("walk steps must be >= 1"));
        }
        Ok(())
    }
}

/// Wall-clock seconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub neighbors: f64,
    pub density: f64,
    pub flowrank: f64,
    pub core: f64,
    pub cdnn: f64,
    pub expansion: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.neighbors + self.density + self.flowrank + self.core + self.cdnn + self.expansion
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringResult {
    pub labels: Vec<usize>,
    /// One row per point, in dataset order.
    pub membership: MembershipMatrix,
    /// Weight-times-membership multiply-adds performed during expansion.
    pub work_count: u64,
    pub edge_count: usize,
    pub timing: StageTimings,
    /// True when no expansion ran (single layer or plain run).
    pub expansion_skipped: bool,
}

/// A pipeline result together with its intermediate products.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub result: ClusteringResult,
    pub density: Option<DensityEstimate>,
    pub scores: Option<FlowRankScores>,
    pub partition: LayerPartition,
    pub graph: Option<CdnnGraph>,
    /// Core labels as produced by the core algorithm, in core order.
    pub core_labels: Vec<usize>,
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed().as_secs_f64();
    out
}

/// Propagates core memberships outward, one layer at a time.
pub fn expand(p: &LayerPartition, g: &CdnnGraph, core: &MembershipMatrix) -> Result<ClusteringResult> {
    let n = p.n();
    let k = core.k;
    if g.n() != n {
        return Err(Error::LengthMismatch { left: g.n(), right: n });
    }
    if !g.is_weighted() {
        return Err(Error::param("expansion needs a weighted graph"));
    }
    let mut values = vec![0.0; n * k];
    let mut filled = vec![false; n];
    for (pos, &u) in core.rows.iter().enumerate() {
        values[u * k..(u + 1) * k].copy_from_slice(core.row(pos));
        filled[u] = true;
    }
    if core.rows.len() != p.core().len() || p.core().iter().any(|&u| !filled[u]) {
        return Err(Error::param("core membership must cover exactly the first layer"));
    }

    let start = Instant::now();
    let mut work = 0u64;
    for (j, layer) in p.layers.iter().enumerate().skip(1) {
        let rows: Vec<Vec<f64>> = layer
            .par_iter()
            .map(|&u| {
                let edges = g.edges(u);
                if edges.is_empty() {
                    return Err(Error::invariant(format!("point {u} in layer {j} has no inward edges")));
                }
                let mut acc = vec![0.0; k];
                for e in edges {
                    if !filled[e.target] {
                        return Err(Error::invariant(format!("edge {u} -> {} reads an unset membership row", e.target)));
                    }
                    for (a, m) in acc.iter_mut().zip(&values[e.target * k..(e.target + 1) * k]) {
                        *a += e.weight * m;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        for (&u, row) in layer.iter().zip(rows) {
            work += (k * g.edges(u).len()) as u64;
            values[u * k..(u + 1) * k].copy_from_slice(&row);
            filled[u] = true;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();

    let edge_count = g.edge_count();
    if work != (k * edge_count) as u64 || work > (n * g.t() * k) as u64 {
        return Err(Error::invariant(format!("work count {work} disagrees with {edge_count} edges")));
    }
    let membership = MembershipMatrix::new((0..n).collect(), k, values)?;
    let labels = membership.labels();
    Ok(ClusteringResult {
        labels,
        membership,
        work_count: work,
        edge_count,
        timing: StageTimings { expansion: elapsed, ..Default::default() },
        expansion_skipped: p.num_layers() == 1,
    })
}

/// Runs the core algorithm on `subset` with the pipeline's "core" stream.
pub fn cluster_subset(d: &Dataset, subset: &[usize], algo: Algo, k: usize, params: &CorespectParams) -> Result<MembershipMatrix> {
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    if subset.len() < k {
        return Err(Error::TooFewPoints { needed: k, got: subset.len() });
    }
    let seed = derive_seed(params.seed, "core");
    match (algo, params.core_variant) {
        (Algo::KMeans, CoreVariant::Full) => Ok(kmeans(d, subset, k, &KMeansOptions { seed, ..params.kmeans })?.membership),
        (Algo::KMeans, CoreVariant::OneShot) => Ok(kmeans_oneshot_restarts(d, subset, k, seed)?.membership),
        (Algo::Gmm, _) => Ok(gmm_fit(d, subset, k, &GmmOptions { seed, ..params.gmm })?.membership),
    }
}

/// The algorithm alone on the whole dataset.
pub fn plain(d: &Dataset, algo: Algo, k: usize, params: &CorespectParams) -> Result<ClusteringResult> {
    params.validate()?;
    let all: Vec<usize> = (0..d.n()).collect();
    let mut timing = StageTimings::default();
    let membership = timed(&mut timing.core, || cluster_subset(d, &all, algo, k, params))?;
    let labels = membership.labels();
    Ok(ClusteringResult { labels, membership, work_count: 0, edge_count: 0, timing, expansion_skipped: true })
}

pub fn corespect(d: &Dataset, algo: Algo, k: usize, params: &CorespectParams) -> Result<ClusteringResult> {
    Ok(corespect_detailed(d, algo, k, params)?.result)
}

/// Density, FlowRank and layers only.
pub fn rank_points(d: &Dataset, params: &CorespectParams, timing: &mut StageTimings) -> Result<(DensityEstimate, FlowRankScores, LayerPartition)> {
    params.validate()?;
    let n = d.n();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    if params.layers > n {
        return Err(Error::param(format!("layers = {} exceeds n = {n}", params.layers)));
    }
    let graph = timed(&mut timing.neighbors, || knn_exact(d, params.q.max(params.r)))?;
    let density = timed(&mut timing.density, || rw_density_with(&graph.truncated(params.q), params.steps, params.walk))?;
    let scores = timed(&mut timing.flowrank, || flowrank_on(&graph.truncated(params.r), &density.pi, params.r))?;
    let partition = partition_layers(&scores, params.layers)?;
    Ok((density, scores, partition))
}

pub fn corespect_detailed(d: &Dataset, algo: Algo, k: usize, params: &CorespectParams) -> Result<PipelineRun> {
    params.validate()?;
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    if params.layers == 1 {
        let result = plain(d, algo, k, params)?;
        let partition = LayerPartition::from_ranking((0..d.n()).collect(), 1)?;
        return Ok(PipelineRun {
            core_labels: result.labels.clone(),
            result,
            density: None,
            scores: None,
            partition,
            graph: None,
        });
    }
    if d.n() < k * params.layers {
        log::warn!("n = {} is below k * layers = {}; the core may be too small", d.n(), k * params.layers);
    }
    let mut timing = StageTimings::default();
    let (density, scores, partition) = rank_points(d, params, &mut timing)?;
    let mut run = corespect_with_partition_timed(d, algo, k, params, partition, timing)?;
    run.density = Some(density);
    run.scores = Some(scores);
    Ok(run)
}

/// Pipeline from a given layer partition (skips density and FlowRank).
pub fn corespect_with_partition(d: &Dataset, algo: Algo, k: usize, params: &CorespectParams, partition: LayerPartition) -> Result<PipelineRun> {
    params.validate()?;
    corespect_with_partition_timed(d, algo, k, params, partition, StageTimings::default())
}

fn corespect_with_partition_timed(
    d: &Dataset,
    algo: Algo,
    k: usize,
    params: &CorespectParams,
    partition: LayerPartition,
    mut timing: StageTimings,
) -> Result<PipelineRun> {
    if partition.n() != d.n() {
        return Err(Error::LengthMismatch { left: partition.n(), right: d.n() });
    }
    let core = partition.core();
    if k > core.len() {
        return Err(Error::param(format!("k = {k} exceeds the core size {}", core.len())));
    }
    let membership = timed(&mut timing.core, || cluster_subset(d, core, algo, k, params))?;
    let core_labels = membership.labels();
    if partition.num_layers() == 1 {
        let labels = membership.labels();
        let result = ClusteringResult { labels, membership, work_count: 0, edge_count: 0, timing, expansion_skipped: true };
        return Ok(PipelineRun { result, density: None, scores: None, partition, graph: None, core_labels });
    }
    let graph = timed(&mut timing.cdnn, || weight_edges(build_cdnn(d, &partition, params.t)?, params.kernel))?;
    let mut result = expand(&partition, &graph, &membership)?;
    timing.expansion = result.timing.expansion;
    result.timing = timing;
    Ok(PipelineRun { result, density: None, scores: None, partition, graph: Some(graph), core_labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdnn::CdnnEdge;
    use rand::{Rng, SeedableRng};

    fn tiny_graph_case(rows: Vec<Vec<f64>>, edges_of_last: Vec<(usize, f64)>) -> ClusteringResult {
        // points 0..m-1 form the core, point m is the only outer one
        let m = rows.len();
        let p = LayerPartition::from_layer_labels(&(0..=m).map(|i| usize::from(i == m)).collect::<Vec<_>>()).unwrap();
        let mut edges = vec![Vec::new(); m + 1];
        edges[m] = edges_of_last.iter().map(|&(target, weight)| CdnnEdge { target, dist: 1.0, weight }).collect();
        let g = CdnnGraph::from_weighted_edges(&p, edges_of_last.len(), edges).unwrap();
        let core = MembershipMatrix::new((0..m).collect(), rows[0].len(), rows.concat()).unwrap();
        expand(&p, &g, &core).unwrap()
    }

    #[test]
    fn single_neighbor_copies_row() {
        let r = tiny_graph_case(vec![vec![0.3, 0.1, 0.9]], vec![(0, 1.0)]);
        assert_eq!(r.membership.row(1), &[0.3, 0.1, 0.9]);
        assert_eq!(r.labels, vec![1, 1]);
    }

    #[test]
    fn equal_mix_ties_to_lowest_cluster() {
        let r = tiny_graph_case(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(r.membership.row(2), &[0.5, 0.5]);
        assert_eq!(r.labels[2], 0);
        assert_eq!(r.work_count, 4);
    }

    /// Straight-line reference: sequential, explicit per-layer barrier.
    fn naive_expand(p: &LayerPartition, g: &CdnnGraph, core: &MembershipMatrix) -> Vec<usize> {
        let n = p.n();
        let k = core.k;
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
        for (pos, &u) in core.rows.iter().enumerate() {
            rows[u] = Some(core.row(pos).to_vec());
        }
        for layer in &p.layers[1..] {
            let mut fresh = Vec::new();
            for &u in layer {
                let mut acc = vec![0.0; k];
                for e in g.edges(u) {
                    let src = rows[e.target].as_ref().unwrap();
                    for c in 0..k {
                        acc[c] += e.weight * src[c];
                    }
                }
                fresh.push((u, acc));
            }
            for (u, acc) in fresh {
                rows[u] = Some(acc);
            }
        }
        rows.into_iter()
            .map(|r| {
                let r = r.unwrap();
                let mut best = 0;
                for c in 1..k {
                    if r[c] < r[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = crate::rng::StageRng::seed_from_u64(50);
        let n = 50;
        let d = Dataset::new(n, 2, (0..2 * n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        for a in (1..n).rev() {
            perm.swap(a, rng.random_range(0..=a));
        }
        let p = LayerPartition::from_ranking(perm, 3).unwrap();
        let g = weight_edges(build_cdnn(&d, &p, 2).unwrap(), WeightKernel::UmapLocal).unwrap();
        let core_vals: Vec<f64> = (0..p.core().len() * 3).map(|_| rng.random::<f64>()).collect();
        let core = MembershipMatrix::new(p.core().to_vec(), 3, core_vals).unwrap();
        let r = expand(&p, &g, &core).unwrap();
        assert_eq!(r.labels, naive_expand(&p, &g, &core));
        assert_eq!(r.work_count, 3 * g.edge_count() as u64);
    }

    #[test]
    fn rejects_wrong_core_and_unweighted_graph() {
        let d = Dataset::new(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let p = LayerPartition::from_layer_labels(&[0, 0, 1, 1]).unwrap();
        let raw = build_cdnn(&d, &p, 1).unwrap();
        let core = MembershipMatrix::new(vec![0, 1], 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(expand(&p, &raw, &core).is_err());
        let g = weight_edges(raw, WeightKernel::Linear).unwrap();
        let wrong = MembershipMatrix::new(vec![0, 2], 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(expand(&p, &g, &wrong).is_err());
    }

    #[test]
    fn algo_names() {
        assert_eq!("kmeans".parse::<Algo>().unwrap(), Algo::KMeans);
        assert_eq!("gmm".parse::<Algo>().unwrap(), Algo::Gmm);
        assert!("dbscan".parse::<Algo>().is_err());
    }
}
