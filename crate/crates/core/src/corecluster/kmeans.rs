use rand::Rng;
use rayon::prelude::*;

use super::MembershipMatrix;
use crate::dataset::{squared_euclidean, Dataset};
use crate::error::{Error, Result};
use crate::rng::{indexed_rng, stage_rng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansOptions {
    pub n_init: usize,
    pub max_iter: usize,
    /// Convergence threshold on the summed squared center shift, relative to
    /// the mean per-feature variance of the clustered points.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self { n_init: 10, max_iter: 300, tol: 1e-4, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansModel {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k x dim`.
    pub centers: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansModel {
    pub fn center(&self, c: usize) -> &[f64] {
        &self.centers[c * self.dim..(c + 1) * self.dim]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub model: KMeansModel,
    /// Distances to every center; rows follow the subset order.
    pub membership: MembershipMatrix,
    /// Cluster of each subset position.
    pub labels: Vec<usize>,
    /// Objective of every restart, in restart order.
    pub run_objectives: Vec<f64>,
}

fn check_subset(d: &Dataset, subset: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    if subset.len() < k {
        return Err(Error::TooFewPoints { needed: k, got: subset.len() });
    }
    if let Some(&bad) = subset.iter().find(|&&i| i >= d.n()) {
        return Err(Error::param(format!("subset index {bad} out of range")));
    }
    Ok(())
}

/// K-Means++ seeding: `k x dim` centers.
pub fn kmeans_pp_init(d: &Dataset, subset: &[usize], k: usize, seed: u64) -> Result<Vec<f64>> {
    kmeans_pp_init_with(d, subset, k, &mut stage_rng(seed, "kmeans++"))
}

pub fn kmeans_pp_init_with<R: Rng>(d: &Dataset, subset: &[usize], k: usize, rng: &mut R) -> Result<Vec<f64>> {
    check_subset(d, subset, k)?;
    let m = subset.len();
    let dim = d.dim();
    let mut centers = Vec::with_capacity(k * dim);
    let first = subset[rng.random_range(0..m)];
    centers.extend_from_slice(d.row(first));
    let mut nearest: Vec<f64> = subset.iter().map(|&i| squared_euclidean(d.row(i), d.row(first))).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pos = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (p, w) in nearest.iter().enumerate() {
                acc += w;
                if acc > u && *w > 0.0 {
                    pick = Some(p);
                    break;
                }
            }
            // rounding left u beyond the running sum
            pick.unwrap_or_else(|| nearest.iter().rposition(|w| *w > 0.0).unwrap_or(m - 1))
        } else {
            rng.random_range(0..m)
        };
        let chosen = d.row(subset[pos]).to_vec();
        for (w, &i) in nearest.iter_mut().zip(subset) {
            *w = w.min(squared_euclidean(d.row(i), &chosen));
        }
        centers.extend_from_slice(&chosen);
    }
    Ok(centers)
}

/// Nearest center and squared distance for every subset position.
fn assign(d: &Dataset, subset: &[usize], centers: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    let dim = d.dim();
    subset
        .par_iter()
        .map(|&i| {
            let x = d.row(i);
            let mut best = (0, f64::INFINITY);
            for c in 0..k {
                let s = squared_euclidean(x, &centers[c * dim..(c + 1) * dim]);
                if s < best.1 {
                    best = (c, s);
                }
            }
            best
        })
        .unzip()
}

/// Cluster means; an empty cluster is moved onto the point currently
/// farthest from its own center.
fn update(d: &Dataset, subset: &[usize], labels: &[usize], sq: &[f64], old: &[f64], k: usize) -> Vec<f64> {
    let dim = d.dim();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (&i, &c) in subset.iter().zip(labels) {
        counts[c] += 1;
        for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(d.row(i)) {
            *s += x;
        }
    }
    let mut centers = old.to_vec();
    let mut donors: Vec<usize> = Vec::new();
    if counts.contains(&0) {
        donors = (0..subset.len()).collect();
        donors.sort_by(|&a, &b| sq[b].total_cmp(&sq[a]).then(a.cmp(&b)));
    }
    let mut next_donor = 0;
    for c in 0..k {
        let dst = &mut centers[c * dim..(c + 1) * dim];
        if counts[c] > 0 {
            for (o, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                *o = s / counts[c] as f64;
            }
        } else {
            let pos = donors[next_donor.min(donors.len() - 1)];
            next_donor += 1;
            log::debug!("k-means: empty cluster {c} re-seeded at subset position {pos}");
            dst.copy_from_slice(d.row(subset[pos]));
        }
    }
    centers
}

fn mean_feature_variance(d: &Dataset, subset: &[usize]) -> f64 {
    let dim = d.dim();
    let m = subset.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in subset {
        for (mu, x) in mean.iter_mut().zip(d.row(i)) {
            *mu += x;
        }
    }
    mean.iter_mut().for_each(|mu| *mu /= m);
    let mut var = 0.0;
    for &i in subset {
        var += squared_euclidean(d.row(i), &mean);
    }
    var / m / dim as f64
}

struct LloydRun {
    centers: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn lloyd(d: &Dataset, subset: &[usize], k: usize, mut centers: Vec<f64>, max_iter: usize, tol_abs: f64) -> Result<LloydRun> {
    let mut prev = f64::INFINITY;
    for it in 1..=max_iter {
        let (labels, sq) = assign(d, subset, &centers, k);
        let obj: f64 = sq.iter().sum();
        if obj > prev + 1e-9 * (1.0 + prev.abs()) {
            return Err(Error::invariant(format!("k-means objective rose from {prev} to {obj} at iteration {it}")));
        }
        prev = obj;
        let next = update(d, subset, &labels, &sq, &centers, k);
        let shift = squared_euclidean(&next, &centers);
        centers = next;
        if shift <= tol_abs {
            return Ok(LloydRun { centers, iterations: it, converged: true });
        }
    }
    Ok(LloydRun { centers, iterations: max_iter, converged: false })
}

/// Distances to `centers` as membership, labels by argmin, objective of those labels.
fn finish(d: &Dataset, subset: &[usize], k: usize, centers: Vec<f64>, iterations: usize, converged: bool) -> Result<(KMeansModel, MembershipMatrix)> {
    let dim = d.dim();
    let cs = &centers;
    let values: Vec<f64> = subset
        .par_iter()
        .flat_map_iter(|&i| {
            let x = d.row(i);
            (0..k).map(move |c| squared_euclidean(x, &cs[c * dim..(c + 1) * dim]).sqrt())
        })
        .collect();
    let membership = MembershipMatrix::new(subset.to_vec(), k, values)?;
    let objective = (0..membership.len()).map(|p| membership.row(p)[membership.label(p)].powi(2)).sum();
    let model = KMeansModel { k, dim, centers, objective, iterations, converged };
    Ok((model, membership))
}

/// Lloyd's algorithm from K-Means++ seeds, best of `n_init` restarts.
pub fn kmeans(d: &Dataset, subset: &[usize], k: usize, opts: &KMeansOptions) -> Result<KMeansFit> {
    check_subset(d, subset, k)?;
    if opts.n_init == 0 || opts.max_iter == 0 {
        return Err(Error::param("n_init and max_iter must be >= 1"));
    }
    let tol_abs = opts.tol * mean_feature_variance(d, subset);
    let runs: Vec<Result<(KMeansModel, MembershipMatrix)>> = (0..opts.n_init)
        .into_par_iter()
        .map(|r| {
            let mut rng = indexed_rng(opts.seed, "kmeans-restart", r as u64);
            let init = kmeans_pp_init_with(d, subset, k, &mut rng)?;
            let run = lloyd(d, subset, k, init, opts.max_iter, tol_abs)?;
            finish(d, subset, k, run.centers, run.iterations, run.converged)
        })
        .collect();
    pick_best(runs)
}

fn pick_best(runs: Vec<Result<(KMeansModel, MembershipMatrix)>>) -> Result<KMeansFit> {
    let runs: Vec<(KMeansModel, MembershipMatrix)> = runs.into_iter().collect::<Result<_>>()?;
    let run_objectives: Vec<f64> = runs.iter().map(|(m, _)| m.objective).collect();
    let mut best = 0;
    for (r, obj) in run_objectives.iter().enumerate() {
        if *obj < run_objectives[best] {
            best = r;
        }
    }
    let (model, membership) = runs.into_iter().nth(best).expect("at least one run");
    let labels = membership.labels();
    Ok(KMeansFit { model, membership, labels, run_objectives })
}

/// `2 * ceil(ln m)` independent runs of seeding plus exactly one
/// assignment/update step; the run with the lowest objective wins.
pub fn kmeans_oneshot_restarts(d: &Dataset, subset: &[usize], k: usize, seed: u64) -> Result<KMeansFit> {
    check_subset(d, subset, k)?;
    let runs = (2 * ((subset.len() as f64).ln().ceil() as usize)).max(1);
    let out: Vec<Result<(KMeansModel, MembershipMatrix)>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = indexed_rng(seed, "kmeans-oneshot", r as u64);
            let init = kmeans_pp_init_with(d, subset, k, &mut rng)?;
            let (labels, sq) = assign(d, subset, &init, k);
            let centers = update(d, subset, &labels, &sq, &init, k);
            finish(d, subset, k, centers, 1, false)
        })
        .collect();
    pick_best(out)
}

/// What to score in [`kmeans_objective`].
#[derive(Clone, Copy, Debug)]
pub enum ObjectiveInput<'a> {
    /// Each point charged to its nearest center (row-major `k x dim`).
    Centers { centers: &'a [f64], k: usize },
    /// One label per subset position; centers are the cluster means.
    Labels(&'a [usize]),
}

/// Sum of squared distances from each point to its center.
pub fn kmeans_objective(d: &Dataset, subset: &[usize], input: ObjectiveInput<'_>) -> Result<f64> {
    match input {
        ObjectiveInput::Centers { centers, k } => {
            if k == 0 || centers.len() != k * d.dim() {
                return Err(Error::LengthMismatch { left: centers.len(), right: k * d.dim() });
            }
            let (_, sq) = assign(d, subset, centers, k);
            Ok(sq.iter().sum())
        }
        ObjectiveInput::Labels(labels) => {
            if labels.len() != subset.len() {
                return Err(Error::LengthMismatch { left: labels.len(), right: subset.len() });
            }
            let dim = d.dim();
            let k = labels.iter().max().map_or(0, |m| m + 1);
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (&i, &c) in subset.iter().zip(labels) {
                counts[c] += 1;
                for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(d.row(i)) {
                    *s += x;
                }
            }
            let empty = counts.iter().filter(|&&c| c == 0).count();
            if empty > 0 {
                log::warn!("k-means objective: {empty} empty clusters contribute 0");
            }
            for c in 0..k {
                if counts[c] > 0 {
                    sums[c * dim..(c + 1) * dim].iter_mut().for_each(|s| *s /= counts[c] as f64);
                }
            }
            Ok(subset
                .iter()
                .zip(labels)
                .map(|(&i, &c)| squared_euclidean(d.row(i), &sums[c * dim..(c + 1) * dim]))
                .sum())
        }
    }
}
