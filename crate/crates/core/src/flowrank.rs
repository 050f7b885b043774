//! Ascending-walk expectations, FlowRank scores and layer partitions.
//!
//! From a point `i`, the ascending walk moves uniformly to one of the `r`
//! nearest points with strictly larger density and stops at a point with no
//! such neighbor. `z_i` is the expected density where it stops. Because every
//! move strictly increases density, the ascent structure is a DAG and `z` is
//! computed exactly by one pass in decreasing-density order.

use crate::dataset::Dataset;
use crate::density::DensityEstimate;
use crate::error::{Error, Result};
use crate::neighbors::{knn_exact, NeighborGraph};

/// Largest double below 1. Scores of points that can ascend are capped here
/// so rounding never promotes them to a local maximum.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowRankScores {
    pub score: Vec<f64>,
    pub z: Vec<f64>,
    pub pi: Vec<f64>,
    pub r: usize,
    /// Points with no strictly denser neighbor among their `r` nearest.
    pub local_max: Vec<bool>,
    /// Points whose density was exactly zero; their score is set to 0.
    pub zero_density: Vec<usize>,
}

impl FlowRankScores {
    pub fn n(&self) -> usize {
        self.score.len()
    }
}

/// Indices `j` in the ascent neighborhood of `i` with `pi[j] > pi[i]`.
fn ascent_set<'a>(g: &'a NeighborGraph, pi: &'a [f64], i: usize) -> impl Iterator<Item = usize> + 'a {
    g.neighbors(i).iter().map(|nb| nb.index).filter(move |&j| pi[j] > pi[i])
}

/// Exact expected terminal density of the ascending walk.
pub fn rarw_expectation(d: &Dataset, pi: &DensityEstimate, r: usize) -> Result<Vec<f64>> {
    let g = ascent_graph(d, pi, r)?;
    rarw_expectation_on(&g, &pi.pi)
}

/// Same as [`rarw_expectation`] with precomputed ascent neighborhoods.
pub fn rarw_expectation_on(g: &NeighborGraph, pi: &[f64]) -> Result<Vec<f64>> {
    if g.n() != pi.len() {
        return Err(Error::LengthMismatch { left: g.n(), right: pi.len() });
    }
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.sort_by(|&a, &b| pi[b].total_cmp(&pi[a]).then(a.cmp(&b)));
    let mut z = vec![f64::NAN; pi.len()];
    for &i in &order {
        let (mut sum, mut count, mut floor) = (0.0, 0usize, f64::INFINITY);
        for j in ascent_set(g, pi, i) {
            sum += z[j];
            floor = floor.min(z[j]);
            count += 1;
        }
        z[i] = if count == 0 {
            pi[i]
        } else {
            // a mean can round below its smallest term; it never may here
            (sum / count as f64).max(floor)
        };
    }
    Ok(z)
}

fn ascent_graph(d: &Dataset, pi: &DensityEstimate, r: usize) -> Result<NeighborGraph> {
    if r == 0 {
        return Err(Error::param("r must be >= 1"));
    }
    if pi.pi.len() != d.n() {
        return Err(Error::LengthMismatch { left: pi.pi.len(), right: d.n() });
    }
    if d.n() == 1 {
        return NeighborGraph::from_lists(vec![Vec::new()], r);
    }
    knn_exact(d, r)
}

pub fn flowrank(d: &Dataset, pi: &DensityEstimate, r: usize) -> Result<FlowRankScores> {
    let g = ascent_graph(d, pi, r)?;
    flowrank_on(&g, &pi.pi, r)
}

/// FlowRank with precomputed ascent neighborhoods (`g` must be the `r`-NN graph).
pub fn flowrank_on(g: &NeighborGraph, pi: &[f64], r: usize) -> Result<FlowRankScores> {
    if let Some(i) = pi.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::param(format!("density of point {i} is {}, expected a finite value >= 0", pi[i])));
    }
    let z = rarw_expectation_on(g, pi)?;
    let n = pi.len();
    let mut score = vec![0.0; n];
    let mut local_max = vec![false; n];
    let mut zero_density = Vec::new();
    for i in 0..n {
        local_max[i] = ascent_set(g, pi, i).next().is_none();
        if pi[i] == 0.0 {
            zero_density.push(i);
            continue;
        }
        score[i] = if local_max[i] { 1.0 } else { (pi[i] / z[i]).min(BELOW_ONE) };
    }
    if !zero_density.is_empty() {
        log::warn!("{} points have zero density and score 0", zero_density.len());
    }
    let scores = FlowRankScores { score, z, pi: pi.to_vec(), r, local_max, zero_density };
    check_scores(&scores)?;
    Ok(scores)
}

fn check_scores(s: &FlowRankScores) -> Result<()> {
    for i in 0..s.n() {
        if s.pi[i] == 0.0 {
            continue;
        }
        if !(s.pi[i] <= s.z[i] && s.score[i] > 0.0 && s.score[i] <= 1.0) {
            return Err(Error::invariant(format!(
                "point {i}: pi {} z {} score {}",
                s.pi[i], s.z[i], s.score[i]
            )));
        }
        if (s.score[i] == 1.0) != s.local_max[i] {
            return Err(Error::invariant(format!("point {i}: score 1 must coincide with a local maximum")));
        }
    }
    Ok(())
}

/// An ordered split of all indices into blocks, densest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerPartition {
    pub layers: Vec<Vec<usize>>,
    /// All indices, highest ranked first.
    pub ranking: Vec<usize>,
}

impl LayerPartition {
    /// Cuts a ranking into `l` contiguous blocks; the first `n mod l` blocks
    /// receive one extra element.
    pub fn from_ranking(ranking: Vec<usize>, l: usize) -> Result<Self> {
        let n = ranking.len();
        if l == 0 || l > n {
            return Err(Error::param(format!("layer count {l} outside 1..={n}")));
        }
        let mut seen = vec![false; n];
        for &i in &ranking {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::param("ranking is not a permutation"));
            }
        }
        let (base, extra) = (n / l, n % l);
        let mut layers = Vec::with_capacity(l);
        let mut start = 0;
        for j in 0..l {
            let len = base + usize::from(j < extra);
            layers.push(ranking[start..start + len].to_vec());
            start += len;
        }
        Ok(Self { layers, ranking })
    }

    /// Partition given directly by per-point layer labels `0..l`. The
    /// ranking lists layer 0 first, indices ascending within a layer.
    pub fn from_layer_labels(labels: &[usize]) -> Result<Self> {
        let l = labels.iter().max().map_or(0, |m| m + 1);
        let mut layers = vec![Vec::new(); l];
        for (i, &j) in labels.iter().enumerate() {
            layers[j].push(i);
        }
        if layers.iter().any(Vec::is_empty) {
            return Err(Error::param("layer labels must cover a contiguous range 0..l"));
        }
        let ranking = layers.concat();
        Ok(Self { layers, ranking })
    }

    pub fn n(&self) -> usize {
        self.ranking.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn core(&self) -> &[usize] {
        &self.layers[0]
    }

    /// Layer index of every point.
    pub fn layer_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.n()];
        for (j, layer) in self.layers.iter().enumerate() {
            for &i in layer {
                out[i] = j;
            }
        }
        out
    }

    /// Position of every point in the ranking.
    pub fn rank_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.n()];
        for (pos, &i) in self.ranking.iter().enumerate() {
            out[i] = pos;
        }
        out
    }
}

/// Ranks by `(score desc, pi desc, index asc)` and cuts into `l` blocks.
pub fn partition_layers(s: &FlowRankScores, l: usize) -> Result<LayerPartition> {
    let mut ranking: Vec<usize> = (0..s.n()).collect();
    ranking.sort_by(|&a, &b| {
        s.score[b].total_cmp(&s.score[a]).then(s.pi[b].total_cmp(&s.pi[a])).then(a.cmp(&b))
    });
    LayerPartition::from_ranking(ranking, l)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerPreservation {
    /// Ordered pairs `(x, x')` in the same cluster with `x` in a strictly
    /// inner true layer.
    pub pairs: u64,
    /// Of those, pairs where `x` ranks above `x'`.
    pub concordant: u64,
    /// `concordant / pairs`; 1 when there are no pairs.
    pub fraction: f64,
}

/// How close a ranking is to being layer-preserving against known layers.
/// Runs in `O(n * l)`.
pub fn layer_preservation_check(p: &LayerPartition, true_layers: &[usize], clusters: &[usize]) -> Result<LayerPreservation> {
    let n = p.n();
    if true_layers.len() != n || clusters.len() != n {
        return Err(Error::LengthMismatch { left: true_layers.len().min(clusters.len()), right: n });
    }
    let l = true_layers.iter().max().map_or(0, |m| m + 1);
    let k = clusters.iter().max().map_or(0, |m| m + 1);
    // seen[c][j] = points of cluster c, true layer j, already passed in rank order
    let mut seen = vec![vec![0u64; l]; k];
    let mut concordant = 0u64;
    for &i in &p.ranking {
        let (c, j) = (clusters[i], true_layers[i]);
        concordant += seen[c][..j].iter().sum::<u64>();
        seen[c][j] += 1;
    }
    let mut pairs = 0u64;
    for counts in &seen {
        let mut inner = 0u64;
        for &cnt in counts {
            pairs += inner * cnt;
            inner += cnt;
        }
    }
    let fraction = if pairs == 0 { 1.0 } else { concordant as f64 / pairs as f64 };
    Ok(LayerPreservation { pairs, concordant, fraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::Neighbor;
    use rand::{Rng, SeedableRng};

    fn chain() -> (NeighborGraph, Vec<f64>) {
        // 0 sees only 1, 1 sees only 2, 2 sees only 1
        let lists = vec![
            vec![Neighbor { index: 1, dist: 1.0 }],
            vec![Neighbor { index: 2, dist: 1.0 }],
            vec![Neighbor { index: 1, dist: 1.0 }],
        ];
        (NeighborGraph::from_lists(lists, 1).unwrap(), vec![0.1, 0.2, 0.7])
    }

    #[test]
    fn chain_expectation_and_scores() {
        let (g, pi) = chain();
        assert_eq!(rarw_expectation_on(&g, &pi).unwrap(), vec![0.7, 0.7, 0.7]);
        let s = flowrank_on(&g, &pi, 1).unwrap();
        assert_eq!(s.score[2], 1.0);
        assert!((s.score[1] - 2.0 / 7.0).abs() < 1e-15);
        assert!((s.score[0] - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_density_all_local_maxima() {
        let d = Dataset::new(6, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let pi = DensityEstimate { pi: vec![1.0 / 6.0; 6], steps: 0, q: 0 };
        let s = flowrank(&d, &pi, 2).unwrap();
        assert!(s.score.iter().all(|&v| v == 1.0));
        let z = rarw_expectation(&d, &pi, 2).unwrap();
        assert_eq!(z, pi.pi);
    }

    #[test]
    fn zero_density_reported() {
        let (g, _) = chain();
        let s = flowrank_on(&g, &[0.0, 0.3, 0.7], 1).unwrap();
        assert_eq!(s.zero_density, vec![0]);
        assert_eq!(s.score[0], 0.0);
    }

    /// Simulates the walk `walks` times from every start; returns means and standard errors.
    fn monte_carlo(g: &NeighborGraph, pi: &[f64], walks: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = crate::rng::StageRng::seed_from_u64(seed);
        (0..pi.len())
            .map(|start| {
                let (mut s1, mut s2) = (0.0, 0.0);
                for _ in 0..walks {
                    let mut cur = start;
                    loop {
                        let up: Vec<usize> = g.neighbors(cur).iter().map(|nb| nb.index).filter(|&j| pi[j] > pi[cur]).collect();
                        if up.is_empty() {
                            break;
                        }
                        cur = up[rng.random_range(0..up.len())];
                    }
                    s1 += pi[cur];
                    s2 += pi[cur] * pi[cur];
                }
                let mean = s1 / walks as f64;
                let var = (s2 / walks as f64 - mean * mean).max(0.0);
                (mean, (var / walks as f64).sqrt())
            })
            .collect()
    }

    #[test]
    fn line_of_eight_matches_monte_carlo() {
        let mut rng = crate::rng::StageRng::seed_from_u64(77);
        let d = Dataset::new(8, 1, (0..8).map(|i| i as f64).collect()).unwrap();
        let raw: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let pi: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let g = knn_exact(&d, 2).unwrap();
        let z = rarw_expectation_on(&g, &pi).unwrap();
        for (i, (mean, se)) in monte_carlo(&g, &pi, 200_000, 5).into_iter().enumerate() {
            assert!((z[i] - mean).abs() <= 3.0 * se + 1e-12, "point {i}: {} vs {mean} +- {se}", z[i]);
        }
    }

    #[test]
    fn partition_sizes_and_order() {
        let s = FlowRankScores {
            score: vec![0.5, 0.9, 0.1, 1.0, 0.3, 0.7, 0.2],
            z: vec![1.0; 7],
            pi: vec![0.1; 7],
            r: 1,
            local_max: vec![false; 7],
            zero_density: vec![],
        };
        let p = partition_layers(&s, 3).unwrap();
        assert_eq!(p.layers.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 2]);
        assert_eq!(p.ranking, vec![3, 1, 5, 0, 4, 6, 2]);
        assert_eq!(partition_layers(&s, 1).unwrap().layers.len(), 1);
        assert!(partition_layers(&s, 0).is_err());
        assert!(partition_layers(&s, 8).is_err());
        let full = partition_layers(&s, 7).unwrap();
        assert!(full.layers.iter().all(|b| b.len() == 1));
    }

    #[test]
    fn ties_fall_back_to_pi_then_index() {
        let s = FlowRankScores {
            score: vec![1.0, 1.0, 1.0, 0.5],
            z: vec![1.0; 4],
            pi: vec![0.2, 0.3, 0.2, 0.3],
            r: 1,
            local_max: vec![true, true, true, false],
            zero_density: vec![],
        };
        assert_eq!(partition_layers(&s, 1).unwrap().ranking, vec![1, 0, 2, 3]);
    }

    #[test]
    fn preservation_check_extremes_and_random() {
        let labels = vec![0, 0, 1, 1, 0, 0, 1, 1];
        let layers = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let exact = LayerPartition::from_layer_labels(&layers).unwrap();
        assert_eq!(layer_preservation_check(&exact, &layers, &labels).unwrap().fraction, 1.0);
        let mut rev = exact.ranking.clone();
        rev.reverse();
        let reversed = LayerPartition::from_ranking(rev, 2).unwrap();
        assert_eq!(layer_preservation_check(&reversed, &layers, &labels).unwrap().fraction, 0.0);

        let n = 400;
        let layers: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        let clusters: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let mut rng = crate::rng::StageRng::seed_from_u64(1);
        let mut total = 0.0;
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..n).collect();
            for a in (1..n).rev() {
                perm.swap(a, rng.random_range(0..=a));
            }
            let p = LayerPartition::from_ranking(perm, 2).unwrap();
            total += layer_preservation_check(&p, &layers, &clusters).unwrap().fraction;
        }
        assert!((total / 20.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn from_layer_labels_rejects_gaps() {
        assert!(LayerPartition::from_layer_labels(&[0, 2, 2]).is_err());
        let p = LayerPartition::from_layer_labels(&[1, 0, 1, 0]).unwrap();
        assert_eq!(p.layers, vec![vec![1, 3], vec![0, 2]]);
        assert_eq!(p.layer_of(), vec![1, 0, 1, 0]);
    }
}
