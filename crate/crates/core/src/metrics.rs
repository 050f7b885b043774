//! External clustering scores and neighborhood diagnostics.

use std::collections::BTreeMap;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rayon::prelude::*;

use crate::cdnn::CdnnGraph;
use crate::corecluster::{kmeans_objective, ObjectiveInput};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::neighbors::nearest_in_pool;

/// Joint label counts of two labelings over the same points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContingencyTable {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub counts: Vec<u64>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
    pub n: u64,
}

fn dense_ids(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    for &l in labels {
        let next = map.len();
        map.entry(l).or_insert(next);
    }
    (labels.iter().map(|l| map[l]).collect(), map.len())
}

impl ContingencyTable {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
        }
        let (a, rows) = dense_ids(a);
        let (b, cols) = dense_ids(b);
        let mut counts = vec![0u64; rows * cols];
        for (&x, &y) in a.iter().zip(&b) {
            counts[x * cols + y] += 1;
        }
        let row_sums = (0..rows).map(|r| counts[r * cols..(r + 1) * cols].iter().sum()).collect();
        let col_sums = (0..cols).map(|c| (0..rows).map(|r| counts[r * cols + c]).sum()).collect();
        Ok(Self { rows, cols, counts, row_sums, col_sums, n: a.len() as u64 })
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.counts[r * self.cols + c]
    }
}

fn pairs(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    let index: f64 = t.counts.iter().map(|&c| pairs(c)).sum();
    let sa: f64 = t.row_sums.iter().map(|&c| pairs(c)).sum();
    let sb: f64 = t.col_sums.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both labelings trivial in the same way (all singletons or one block)
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// How the mutual information is normalized in [`nmi_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NmiNormalization {
    #[default]
    Arithmetic,
    Geometric,
    Min,
    Max,
}

fn entropy(sums: &[u64], n: f64) -> f64 {
    sums.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}

pub fn mutual_information(t: &ContingencyTable) -> f64 {
    let n = t.n as f64;
    let mut mi = 0.0;
    for r in 0..t.rows {
        for c in 0..t.cols {
            let nij = t.get(r, c);
            if nij > 0 {
                let nij = nij as f64;
                mi += nij / n * (n * nij / (t.row_sums[r] as f64 * t.col_sums[c] as f64)).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Normalized mutual information, arithmetic-mean normalization.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    nmi_with(a, b, NmiNormalization::Arithmetic)
}

pub fn nmi_with(a: &[usize], b: &[usize], norm: NmiNormalization) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    if t.rows == 1 && t.cols == 1 {
        return Ok(1.0);
    }
    let mi = mutual_information(&t);
    if mi == 0.0 {
        return Ok(0.0);
    }
    let n = t.n as f64;
    let (ha, hb) = (entropy(&t.row_sums, n), entropy(&t.col_sums, n));
    let denom = match norm {
        NmiNormalization::Arithmetic => 0.5 * (ha + hb),
        NmiNormalization::Geometric => (ha * hb).sqrt(),
        NmiNormalization::Min => ha.min(hb),
        NmiNormalization::Max => ha.max(hb),
    };
    Ok((mi / denom).min(1.0))
}

/// Largest fraction of points on which the labelings agree under a
/// one-to-one matching of their clusters (optimal assignment).
pub fn best_match_accuracy(a: &[usize], b: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(a, b)?;
    if t.n == 0 {
        return Ok(1.0);
    }
    let size = t.rows.max(t.cols);
    let weights = Matrix::from_fn(size, size, |(r, c)| if r < t.rows && c < t.cols { t.get(r, c) as i64 } else { 0 });
    let (total, _) = kuhn_munkres(&weights);
    Ok(total as f64 / t.n as f64)
}

pub fn misclassification_rate(truth: &[usize], pred: &[usize]) -> Result<f64> {
    Ok(1.0 - best_match_accuracy(truth, pred)?)
}

/// K-Means objectives of two labelings, on the core and on all points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveReport {
    /// Core-derived labeling, scored on core points only.
    pub core_labels_on_core: f64,
    /// Full-data labeling, scored on core points only.
    pub full_labels_on_core: f64,
    /// Core-derived labeling, scored on all points.
    pub core_labels_on_full: f64,
    /// Full-data labeling, scored on all points.
    pub full_labels_on_full: f64,
}

/// `labels_full` comes from clustering all points at once; `labels_core` is
/// a labeling of all points whose core part comes from clustering the core
/// alone (such as a pipeline result).
pub fn subset_kmeans_objective_report(d: &Dataset, labels_full: &[usize], labels_core: &[usize], core: &[usize]) -> Result<ObjectiveReport> {
    if core.is_empty() {
        return Err(Error::EmptyPool);
    }
    for l in [labels_full, labels_core] {
        if l.len() != d.n() {
            return Err(Error::LengthMismatch { left: l.len(), right: d.n() });
        }
    }
    let all: Vec<usize> = (0..d.n()).collect();
    let restrict = |l: &[usize]| core.iter().map(|&i| l[i]).collect::<Vec<_>>();
    Ok(ObjectiveReport {
        core_labels_on_core: kmeans_objective(d, core, ObjectiveInput::Labels(&restrict(labels_core)))?,
        full_labels_on_core: kmeans_objective(d, core, ObjectiveInput::Labels(&restrict(labels_full)))?,
        core_labels_on_full: kmeans_objective(d, &all, ObjectiveInput::Labels(labels_core))?,
        full_labels_on_full: kmeans_objective(d, &all, ObjectiveInput::Labels(labels_full))?,
    })
}

#[derive(Clone, Copy, Debug)]
pub enum NeighborMetric<'a> {
    Euclidean,
    /// Shortest-path length over the graph's edges taken as undirected, with
    /// Euclidean edge lengths.
    CdnnPath(&'a CdnnGraph),
}

/// Mean fraction of each query's `q` nearest pool members (the query itself
/// excluded) that share its label.
pub fn nn_label_agreement(d: &Dataset, labels: &[usize], queries: &[usize], pool: &[usize], q: usize, metric: NeighborMetric<'_>) -> Result<f64> {
    if labels.len() != d.n() {
        return Err(Error::LengthMismatch { left: labels.len(), right: d.n() });
    }
    if q == 0 {
        return Err(Error::param("q must be >= 1"));
    }
    if queries.is_empty() {
        return Err(Error::param("no query points"));
    }
    let graph = match metric {
        NeighborMetric::CdnnPath(g) => {
            if g.n() != d.n() {
                return Err(Error::LengthMismatch { left: g.n(), right: d.n() });
            }
            let mut ug = UnGraph::<(), f64>::with_capacity(g.n(), g.edge_count());
            for _ in 0..g.n() {
                ug.add_node(());
            }
            for u in 0..g.n() {
                for e in g.edges(u) {
                    ug.add_edge(NodeIndex::new(u), NodeIndex::new(e.target), e.dist);
                }
            }
            Some(ug)
        }
        NeighborMetric::Euclidean => None,
    };
    let fractions: Vec<f64> = queries
        .par_iter()
        .map(|&x| {
            let others: Vec<usize> = pool.iter().copied().filter(|&p| p != x).collect();
            if others.is_empty() {
                return Err(Error::EmptyPool);
            }
            let nearest: Vec<usize> = match &graph {
                None => nearest_in_pool(d, x, &others, q)?.into_iter().map(|nb| nb.index).collect(),
                Some(ug) => {
                    let dist = dijkstra(ug, NodeIndex::new(x), None, |e| *e.weight());
                    let mut ranked: Vec<(f64, usize)> = others
                        .iter()
                        .map(|&p| (dist.get(&NodeIndex::new(p)).copied().unwrap_or(f64::INFINITY), p))
                        .collect();
                    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    ranked.into_iter().take(q).map(|(_, p)| p).collect()
                }
            };
            let same = nearest.iter().filter(|&&p| labels[p] == labels[x]).count();
            Ok(same as f64 / nearest.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(fractions.iter().sum::<f64>() / fractions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Rand-index pair counts by enumerating all pairs.
    fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut total) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                total += 1.0;
                if sa && sb {
                    both += 1.0;
                }
                if sa {
                    only_a += 1.0;
                }
                if sb {
                    only_b += 1.0;
                }
            }
        }
        let expected = only_a * only_b / total;
        let max = 0.5 * (only_a + only_b);
        if max == expected {
            1.0
        } else {
            (both - expected) / (max - expected)
        }
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        let v = ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        // pairs: 2 same-in-a, 2 same-in-b, 0 in both; expected 2*2/6
        assert!((v - (0.0 - 2.0 / 3.0) / (2.0 - 2.0 / 3.0)).abs() < 1e-15);
        assert!((v - ari_by_pairs(&[0, 0, 1, 1], &[0, 1, 0, 1])).abs() < 1e-15);
        assert!(ari(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[5, 5, 3, 3, 9]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nmi(&[0, 1, 0, 1], &[0, 0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_matches_direct_summation() {
        let mut rng = crate::rng::StageRng::seed_from_u64(12);
        let a: Vec<usize> = (0..12).map(|_| rng.random_range(0..3)).collect();
        let b: Vec<usize> = (0..12).map(|_| rng.random_range(0..4)).collect();
        let n = 12.0;
        let mut mi = 0.0;
        let (mut ha, mut hb) = (0.0, 0.0);
        for x in 0..3 {
            let pa = a.iter().filter(|&&v| v == x).count() as f64 / n;
            if pa > 0.0 {
                ha -= pa * pa.ln();
            }
            for y in 0..4 {
                let pb = b.iter().filter(|&&v| v == y).count() as f64 / n;
                let pab = (0..12).filter(|&i| a[i] == x && b[i] == y).count() as f64 / n;
                if pab > 0.0 {
                    mi += pab * (pab / (pa * pb)).ln();
                }
            }
        }
        for y in 0..4 {
            let pb = b.iter().filter(|&&v| v == y).count() as f64 / n;
            if pb > 0.0 {
                hb -= pb * pb.ln();
            }
        }
        let want = mi / (0.5 * (ha + hb));
        assert!((nmi(&a, &b).unwrap() - want).abs() < 1e-12);
        let geo = nmi_with(&a, &b, NmiNormalization::Geometric).unwrap();
        assert!((geo - mi / (ha * hb).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(best_match_accuracy(&[0, 1, 1, 2], &[0, 1, 1, 2]).unwrap(), 1.0);
        assert_eq!(best_match_accuracy(&[0, 1, 1, 0], &[1, 0, 0, 1]).unwrap(), 1.0);
        assert_eq!(best_match_accuracy(&[0, 0, 0, 1], &[0, 0, 0, 0]).unwrap(), 0.75);
    }

    #[test]
    fn accuracy_matches_permutations() {
        let mut rng = crate::rng::StageRng::seed_from_u64(3);
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for _ in 0..20 {
            let a: Vec<usize> = (0..9).map(|_| rng.random_range(0..3)).collect();
            let b: Vec<usize> = (0..9).map(|_| rng.random_range(0..3)).collect();
            let best = perms
                .iter()
                .map(|p| (0..9).filter(|&i| p[a[i]] == b[i]).count())
                .max()
                .unwrap();
            assert!((best_match_accuracy(&a, &b).unwrap() - best as f64 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn objective_report_cases() {
        let d = Dataset::new(4, 1, vec![0.0, 2.0, 10.0, 12.0]).unwrap();
        let labels = [0, 0, 1, 1];
        let r = subset_kmeans_objective_report(&d, &labels, &labels, &[0, 1]).unwrap();
        assert_eq!(r.core_labels_on_core, r.full_labels_on_core);
        let one = [0, 0, 0, 0];
        let r = subset_kmeans_objective_report(&d, &one, &labels, &[0, 1, 2, 3]).unwrap();
        // total scatter around the mean 6: 36 + 16 + 16 + 36
        assert!((r.full_labels_on_full - 104.0).abs() < 1e-12);
        assert!((r.core_labels_on_full - 4.0).abs() < 1e-12);
        assert!(subset_kmeans_objective_report(&d, &one, &labels, &[]).is_err());
    }

    #[test]
    fn agreement_micro_instance() {
        // pool: point 0 (label 0) at x=0, point 1 (label 1) at x=10
        let d = Dataset::new(4, 1, vec![0.0, 10.0, 2.0, 7.0]).unwrap();
        let labels = [0, 1, 1, 1];
        // query 2 is nearer to 0 (disagree), query 3 nearer to 1 (agree)
        let v = nn_label_agreement(&d, &labels, &[2, 3], &[0, 1], 1, NeighborMetric::Euclidean).unwrap();
        assert_eq!(v, 0.5);
        let same = nn_label_agreement(&d, &[1, 1, 1, 1], &[2, 3], &[0, 1], 1, NeighborMetric::Euclidean).unwrap();
        assert_eq!(same, 1.0);
    }

    #[test]
    fn path_metric_uses_graph_and_ranks_unreachable_last() {
        use crate::cdnn::{build_cdnn, weight_edges, WeightKernel};
        use crate::flowrank::LayerPartition;
        let d = Dataset::new(4, 1, vec![0.0, 10.0, 1.0, 11.0]).unwrap();
        let p = LayerPartition::from_layer_labels(&[0, 0, 1, 1]).unwrap();
        let g = weight_edges(build_cdnn(&d, &p, 1).unwrap(), WeightKernel::Linear).unwrap();
        let labels = [0, 1, 0, 1];
        let v = nn_label_agreement(&d, &labels, &[0, 1], &[0, 1, 2, 3], 1, NeighborMetric::CdnnPath(&g)).unwrap();
        assert_eq!(v, 1.0);
        // from 2 only 0 is reachable; 1 and 3 are ranked after it
        let w = nn_label_agreement(&d, &labels, &[2], &[1, 3], 2, NeighborMetric::CdnnPath(&g)).unwrap();
        assert_eq!(w, 0.0);
    }
}
