//! Synthetic layered core-periphery data.
//!
//! Every cluster is a nested family of regions `X_0 ⊂ X_1 ⊂ ... ⊂ X_{l-1}`,
//! where `X_j` is the set of points within `R_j = rho_0 + j * width` of a
//! circular arc of half-angle `theta_j` (arc radius `R_arc`, lying in the
//! plane of the first two coordinates). Layer `j` is `X_j \ X_{j-1}`. With
//! every `theta_j = 0` the arc is a point and the layers are a ball and
//! concentric shells. Giving the outer layers growing angles makes them curl
//! into crescents that wrap around the other cluster.
//!
//! Layer `j` holds `n_0 * Vol(L_j) / (C^j Vol(L_0))` points, so densities drop
//! by a factor `C` per layer. A candidate point in layer `j` is kept only if
//! its nearest own-cluster point of layer `j - 1` is at most `delta` times as
//! far as the nearest layer `j - 1` point of any other cluster.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::{euclidean, Dataset};
use crate::error::{Error, Result};
use crate::rng::{indexed_rng, stage_rng};

#[derive(Clone, Debug, PartialEq)]
pub struct LcpdmParams {
    pub k: usize,
    pub layers: usize,
    pub dim: usize,
    /// `rho_0`.
    pub core_radius: f64,
    /// Radial width added per layer.
    pub layer_width: f64,
    /// Density ratio `C > 1` between consecutive layers.
    pub density_ratio: f64,
    /// Bound on max intra-core over min inter-core distance, in `(0, 0.5)`.
    pub separation: f64,
    /// Alignment bound `delta` in `(0, 1)`.
    pub alignment: f64,
    /// Core points per cluster, unless `core_sizes` overrides it.
    pub n_core: usize,
    pub seed: u64,
    /// Distance between cluster centers; derived from the other parameters
    /// when absent.
    pub center_distance: Option<f64>,
    /// Per-cluster core sizes.
    pub core_sizes: Option<Vec<usize>>,
    /// Radius of the arcs the layers curl along; `8 * rho_0` when absent.
    pub arc_radius: Option<f64>,
    /// Growth factor of the arc angle increments per layer; `C` when absent.
    pub tail_growth: Option<f64>,
}

impl LcpdmParams {
    /// Two planar clusters of three layers.
    pub fn new(seed: u64) -> Self {
        Self {
            k: 2,
            layers: 3,
            dim: 2,
            core_radius: 1.0,
            layer_width: 0.5,
            density_ratio: 2.0,
            separation: 0.3,
            alignment: 0.95,
            n_core: 500,
            seed,
            center_distance: None,
            core_sizes: None,
            arc_radius: None,
            tail_growth: None,
        }
    }

    /// Settings used with [`gen_entangled`]: six thin layers with steep
    /// density decay, so the crescents are sparse but long.
    pub fn entangled_default(seed: u64) -> Self {
        Self { layers: 6, layer_width: 0.1, density_ratio: 2.5, n_core: 300, ..Self::new(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::param(m));
        if self.k == 0 {
            return fail("k must be >= 1".into());
        }
        if self.layers < 2 {
            return fail(format!("need at least 2 layers, got {}", self.layers));
        }
        if self.dim < 2 {
            return fail(format!("dimension must be >= 2, got {}", self.dim));
        }
        if !(self.density_ratio > 1.0) {
            return fail(format!("density ratio must exceed 1, got {}", self.density_ratio));
        }
        if !(self.separation > 0.0 && self.separation < 0.5) {
            return fail(format!("separation must lie in (0, 0.5), got {}", self.separation));
        }
        if !(self.alignment > 0.0 && self.alignment < 1.0) {
            return fail(format!("alignment must lie in (0, 1), got {}", self.alignment));
        }
        if !(self.core_radius > 0.0 && self.layer_width > 0.0) {
            return fail("core radius and layer width must be positive".into());
        }
        match &self.core_sizes {
            Some(s) if s.len() != self.k || s.contains(&0) => fail(format!("core_sizes needs {} positive entries", self.k)),
            None if self.n_core == 0 => fail("n_core must be >= 1".into()),
            _ => Ok(()),
        }
    }

    fn core_size(&self, i: usize) -> usize {
        self.core_sizes.as_ref().map_or(self.n_core, |s| s[i])
    }

    fn radius(&self, j: usize) -> f64 {
        self.core_radius + j as f64 * self.layer_width
    }

    fn arc_radius(&self) -> f64 {
        self.arc_radius.unwrap_or(8.0 * self.core_radius)
    }
}

/// Region family of one cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct TubeGeometry {
    /// Center of the arc's circle.
    pub origin: Vec<f64>,
    pub arc_radius: f64,
    /// Angle of the arc midpoint in the first coordinate plane.
    pub mid_angle: f64,
    /// `theta_j` per layer.
    pub half_angles: Vec<f64>,
    /// `R_j` per layer.
    pub radii: Vec<f64>,
}

fn unit_ball_volume(d: usize) -> f64 {
    // V_d = V_{d-2} * 2 pi / d
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * PI / d as f64,
    }
}

fn wrap_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

impl TubeGeometry {
    fn dim(&self) -> usize {
        self.origin.len()
    }

    fn endpoint(&self, angle: f64) -> Vec<f64> {
        let mut e = self.origin.clone();
        e[0] += self.arc_radius * angle.cos();
        e[1] += self.arc_radius * angle.sin();
        e
    }

    /// Arc midpoint, the center of the core.
    pub fn center(&self) -> Vec<f64> {
        self.endpoint(self.mid_angle)
    }

    /// Distance from `x` to the arc of layer `j`.
    pub fn arc_distance(&self, x: &[f64], j: usize) -> f64 {
        let theta = self.half_angles[j];
        let (a, b) = (x[0] - self.origin[0], x[1] - self.origin[1]);
        let w2: f64 = x[2..].iter().zip(&self.origin[2..]).map(|(p, o)| (p - o) * (p - o)).sum();
        if theta > 0.0 {
            let rel = wrap_angle(b.atan2(a) - self.mid_angle);
            if rel.abs() <= theta {
                let radial = a.hypot(b) - self.arc_radius;
                return (radial * radial + w2).sqrt();
            }
        }
        let e1 = self.endpoint(self.mid_angle + theta);
        let e2 = self.endpoint(self.mid_angle - theta);
        euclidean(x, &e1).min(euclidean(x, &e2))
    }

    /// Membership in `X_j`.
    pub fn in_region(&self, x: &[f64], j: usize) -> bool {
        self.arc_distance(x, j) <= self.radii[j]
    }

    /// Membership in layer `j`, with a relative slack for boundary rounding.
    pub fn in_layer(&self, x: &[f64], j: usize, slack: f64) -> bool {
        let outer = self.arc_distance(x, j) <= self.radii[j] * (1.0 + slack);
        outer && (j == 0 || self.arc_distance(x, j - 1) > self.radii[j - 1] * (1.0 - slack))
    }

    /// Volume of `X_j`: swept cross-section plus the two end caps.
    pub fn region_volume(&self, j: usize) -> f64 {
        let d = self.dim();
        let r = self.radii[j];
        2.0 * self.half_angles[j] * self.arc_radius * unit_ball_volume(d - 1) * r.powi(d as i32 - 1)
            + unit_ball_volume(d) * r.powi(d as i32)
    }

    pub fn layer_volume(&self, j: usize) -> f64 {
        if j == 0 {
            self.region_volume(0)
        } else {
            self.region_volume(j) - self.region_volume(j - 1)
        }
    }

    /// Uniform draw from `X_j`.
    fn sample_region<R: Rng>(&self, j: usize, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let r = self.radii[j];
        let theta = self.half_angles[j];
        let body = 2.0 * theta * self.arc_radius * unit_ball_volume(d - 1) * r.powi(d as i32 - 1);
        let caps = unit_ball_volume(d) * r.powi(d as i32);
        if rng.random::<f64>() * (body + caps) < body {
            loop {
                let phi = self.mid_angle + theta * (2.0 * rng.random::<f64>() - 1.0);
                let cross = ball_point(d - 1, r, rng);
                let u = cross[0];
                // the swept volume element grows with the distance from the axis
                if rng.random::<f64>() * (self.arc_radius + r) > self.arc_radius + u {
                    continue;
                }
                let mut x = self.origin.clone();
                x[0] += (self.arc_radius + u) * phi.cos();
                x[1] += (self.arc_radius + u) * phi.sin();
                for (xm, wm) in x[2..].iter_mut().zip(&cross[1..]) {
                    *xm += wm;
                }
                return x;
            }
        }
        let mut y = ball_point(d, r, rng);
        let (angle, tangent) = if rng.random::<bool>() {
            let a = self.mid_angle + theta;
            (a, [-a.sin(), a.cos()])
        } else {
            let a = self.mid_angle - theta;
            (a, [a.sin(), -a.cos()])
        };
        if y[0] * tangent[0] + y[1] * tangent[1] < 0.0 {
            y.iter_mut().for_each(|v| *v = -*v);
        }
        let mut x = self.endpoint(angle);
        for (xm, ym) in x.iter_mut().zip(&y) {
            *xm += ym;
        }
        x
    }
}

fn ball_point<R: Rng>(d: usize, r: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let scale = r * rng.random::<f64>().powf(1.0 / d as f64) / norm;
            return v.into_iter().map(|x| x * scale).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    /// Points with cluster labels.
    pub dataset: Dataset,
    pub true_layers: Vec<usize>,
    pub params: LcpdmParams,
    pub geometry: Vec<TubeGeometry>,
    /// `counts[i][j]` points in layer `j` of cluster `i`.
    pub counts: Vec<Vec<usize>>,
    /// Fraction of in-layer candidates dropped by the alignment test.
    pub rejection_rate: f64,
}

impl SynthDataset {
    pub fn labels(&self) -> &[usize] {
        self.dataset.labels().expect("synthetic data is labeled")
    }

    /// Generating density of every point, normalized to sum to one.
    pub fn analytic_density(&self) -> Vec<f64> {
        let labels = self.labels();
        let raw: Vec<f64> = (0..self.dataset.n())
            .map(|p| {
                let (i, j) = (labels[p], self.true_layers[p]);
                self.counts[i][j] as f64 / self.geometry[i].layer_volume(j)
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    /// Points that fall outside the layer they were generated in.
    pub fn region_violations(&self) -> usize {
        let labels = self.labels();
        (0..self.dataset.n())
            .filter(|&p| !self.geometry[labels[p]].in_layer(self.dataset.row(p), self.true_layers[p], 1e-9))
            .count()
    }

    fn members(&self, i: usize, j: usize) -> Vec<usize> {
        let labels = self.labels();
        (0..self.dataset.n()).filter(|&p| labels[p] == i && self.true_layers[p] == j).collect()
    }

    pub fn core_indices(&self) -> Vec<usize> {
        (0..self.dataset.n()).filter(|&p| self.true_layers[p] == 0).collect()
    }

    /// Max intra-core distance over min inter-core distance.
    pub fn measured_separation(&self) -> f64 {
        let k = self.params.k;
        let cores: Vec<Vec<usize>> = (0..k).map(|i| self.members(i, 0)).collect();
        let d = &self.dataset;
        let mut intra = 0.0f64;
        let mut inter = f64::INFINITY;
        for (i, ci) in cores.iter().enumerate() {
            for (a, &p) in ci.iter().enumerate() {
                for &q in &ci[a + 1..] {
                    intra = intra.max(d.dist(p, q));
                }
                for cj in &cores[i + 1..] {
                    for &q in cj {
                        inter = inter.min(d.dist(p, q));
                    }
                }
            }
        }
        intra / inter
    }

    /// Largest own-versus-other inner-layer distance ratio of any outer point.
    pub fn measured_alignment(&self) -> f64 {
        let (k, l) = (self.params.k, self.params.layers);
        let d = &self.dataset;
        let mut worst = 0.0f64;
        for j in 1..l {
            let inner: Vec<Vec<usize>> = (0..k).map(|i| self.members(i, j - 1)).collect();
            for i in 0..k {
                for p in self.members(i, j) {
                    let own = inner[i].iter().map(|&q| d.dist(p, q)).fold(f64::INFINITY, f64::min);
                    let other = (0..k)
                        .filter(|&c| c != i)
                        .flat_map(|c| inner[c].iter())
                        .map(|&q| d.dist(p, q))
                        .fold(f64::INFINITY, f64::min);
                    worst = worst.max(own / other);
                }
            }
        }
        worst
    }
}

/// Baseline layer counts from the volume formula.
pub fn layer_counts(p: &LcpdmParams, geometry: &[TubeGeometry]) -> Vec<Vec<usize>> {
    geometry
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let n0 = p.core_size(i) as f64;
            let v0 = g.layer_volume(0);
            (0..p.layers)
                .map(|j| {
                    if j == 0 {
                        p.core_size(i)
                    } else {
                        let c = n0 * g.layer_volume(j) / (p.density_ratio.powi(j as i32) * v0);
                        (c.round() as usize).max(1)
                    }
                })
                .collect()
        })
        .collect()
}

/// Minimum center distance satisfying the separation and alignment bounds.
fn default_center_distance(p: &LcpdmParams) -> f64 {
    let l = p.layers;
    let by_separation = 2.0 * p.core_radius * (1.0 + 1.0 / p.separation);
    let by_alignment = p.radius(l - 1) + p.radius(l - 2) + p.layer_width / p.alignment;
    by_separation.max(by_alignment)
}

/// Concentric ball-and-shell clusters with centers far enough apart that the
/// core separation bound holds.
pub fn gen_separable(p: &LcpdmParams) -> Result<SynthDataset> {
    p.validate()?;
    let dist = match p.center_distance {
        Some(dc) => {
            let need = 2.0 * p.core_radius * (1.0 + 1.0 / p.separation);
            if dc < need {
                return Err(Error::param(format!(
                    "center distance {dc} too small: cores of radius {} need at least {need} to keep separation <= {}",
                    p.core_radius, p.separation
                )));
            }
            let outer = 2.0 * p.radius(p.layers - 1);
            if p.k > 1 && dc <= outer {
                return Err(Error::param(format!("center distance {dc} lets outer layers of diameter {outer} overlap")));
            }
            dc
        }
        None => default_center_distance(p),
    };
    let centers: Vec<Vec<f64>> = (0..p.k)
        .map(|i| {
            let mut c = vec![0.0; p.dim];
            if p.k == 2 {
                c[0] = if i == 0 { -dist / 2.0 } else { dist / 2.0 };
            } else if p.k > 2 {
                let ring = dist / (2.0 * (PI / p.k as f64).sin());
                let a = 2.0 * PI * i as f64 / p.k as f64;
                c[0] = ring * a.cos();
                c[1] = ring * a.sin();
            }
            c
        })
        .collect();
    let arc = p.arc_radius();
    let geometry = centers
        .into_iter()
        .map(|c| {
            let mut origin = c;
            origin[1] -= arc;
            TubeGeometry {
                origin,
                arc_radius: arc,
                mid_angle: FRAC_PI_2,
                half_angles: vec![0.0; p.layers],
                radii: (0..p.layers).map(|j| p.radius(j)).collect(),
            }
        })
        .collect();
    generate(p, geometry)
}

/// Two clusters whose outer layers curl into interleaving crescents.
/// `tail_curl = 0` gives the concentric family of [`gen_separable`];
/// the outermost layer spans `tail_curl * 180` degrees of arc.
pub fn gen_entangled(p: &LcpdmParams, tail_curl: f64) -> Result<SynthDataset> {
    p.validate()?;
    if p.k != 2 {
        return Err(Error::param(format!("entangled generator needs k = 2, got {}", p.k)));
    }
    if !(0.0..2.0).contains(&tail_curl) {
        return Err(Error::param(format!("tail_curl must lie in [0, 2), got {tail_curl}")));
    }
    let l = p.layers;
    let arc = p.arc_radius();
    let r_max = p.radius(l - 1);
    if r_max >= arc {
        return Err(Error::param(format!("outer radius {r_max} must stay below the arc radius {arc}")));
    }
    let theta_max = tail_curl * FRAC_PI_2;
    // the two end caps of one crescent must not touch
    if theta_max > FRAC_PI_2 && 2.0 * arc * (PI - theta_max).sin() <= 2.0 * r_max {
        return Err(Error::param("crescent ends overlap; lower tail_curl or the layer widths"));
    }
    let growth = p.tail_growth.unwrap_or(p.density_ratio);
    let mut cum = vec![0.0];
    for j in 1..l {
        cum.push(cum[j - 1] + growth.powi(j as i32 - 1));
    }
    let half_angles: Vec<f64> = cum.iter().map(|c| theta_max * c / cum[l - 1]).collect();
    let radii: Vec<f64> = (0..l).map(|j| p.radius(j)).collect();
    let mut origins = vec![vec![-arc / 2.0, 0.0], vec![arc / 2.0, 0.0]];
    for o in &mut origins {
        o.resize(p.dim, 0.0);
    }
    let geometry = origins
        .into_iter()
        .zip([FRAC_PI_2, -FRAC_PI_2])
        .map(|(origin, mid_angle)| TubeGeometry {
            origin,
            arc_radius: arc,
            mid_angle,
            half_angles: half_angles.clone(),
            radii: radii.clone(),
        })
        .collect();
    let out = generate(p, geometry)?;
    let mu = out.measured_separation();
    if mu > p.separation {
        return Err(Error::param(format!("cores too close: measured separation {mu} exceeds {}", p.separation)));
    }
    Ok(out)
}

const OVERSAMPLE_CAP: usize = 100;
/// Draws from `X_j` allowed per accepted point before giving up on a thin layer.
const REGION_DRAW_CAP: usize = 100_000;

fn generate(p: &LcpdmParams, geometry: Vec<TubeGeometry>) -> Result<SynthDataset> {
    let counts = layer_counts(p, &geometry);
    let (k, l) = (p.k, p.layers);
    let mut points: Vec<Vec<Vec<Vec<f64>>>> = vec![Vec::with_capacity(l); k];
    let (mut tried, mut rejected) = (0usize, 0usize);
    for j in 0..l {
        let prev: Vec<&[Vec<f64>]> = if j == 0 { Vec::new() } else { (0..k).map(|i| points[i][j - 1].as_slice()).collect() };
        let layer: Vec<(Vec<Vec<f64>>, usize, usize)> = (0..k)
            .into_par_iter()
            .map(|i| {
                let mut rng = indexed_rng(p.seed, "synth-layer", (i * l + j) as u64);
                let g = &geometry[i];
                let need = counts[i][j];
                let mut acc = Vec::with_capacity(need);
                let (mut cand, mut rej, mut draws) = (0usize, 0usize, 0usize);
                while acc.len() < need {
                    draws += 1;
                    if draws > REGION_DRAW_CAP * need {
                        return Err(Error::Degenerate(format!("layer {j} of cluster {i} is too thin to sample")));
                    }
                    let x = g.sample_region(j, &mut rng);
                    if j > 0 && g.in_region(&x, j - 1) {
                        continue;
                    }
                    if j > 0 && k > 1 {
                        cand += 1;
                        if cand > OVERSAMPLE_CAP * need {
                            return Err(Error::Degenerate(format!(
                                "alignment rejection exceeded {OVERSAMPLE_CAP}x oversampling in layer {j} of cluster {i}"
                            )));
                        }
                        let own = nearest(&x, prev[i]);
                        let other = (0..k).filter(|&c| c != i).map(|c| nearest(&x, prev[c])).fold(f64::INFINITY, f64::min);
                        if own > p.alignment * other {
                            rej += 1;
                            continue;
                        }
                    }
                    acc.push(x);
                }
                Ok((acc, cand, rej))
            })
            .collect::<Result<_>>()?;
        for (i, (pts, cand, rej)) in layer.into_iter().enumerate() {
            points[i].push(pts);
            tried += cand;
            rejected += rej;
        }
    }

    let mut order: Vec<(usize, usize, usize)> = Vec::new();
    for (i, cl) in points.iter().enumerate() {
        for (j, layer) in cl.iter().enumerate() {
            order.extend((0..layer.len()).map(|m| (i, j, m)));
        }
    }
    let mut rng = stage_rng(p.seed, "synth-shuffle");
    for a in (1..order.len()).rev() {
        order.swap(a, rng.random_range(0..=a));
    }
    let n = order.len();
    let mut values = Vec::with_capacity(n * p.dim);
    let mut labels = Vec::with_capacity(n);
    let mut true_layers = Vec::with_capacity(n);
    for &(i, j, m) in &order {
        values.extend_from_slice(&points[i][j][m]);
        labels.push(i);
        true_layers.push(j);
    }
    let mut dataset = Dataset::new(n, p.dim, values)?;
    // labels are already 0..k; with_labels would only relabel if a cluster were empty
    dataset = dataset.with_labels(&labels)?;
    Ok(SynthDataset {
        dataset,
        true_layers,
        params: p.clone(),
        geometry,
        counts,
        rejection_rate: if tried == 0 { 0.0 } else { rejected as f64 / tried as f64 },
    })
}

fn nearest(x: &[f64], pool: &[Vec<f64>]) -> f64 {
    pool.iter().map(|y| euclidean(x, y)).fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - PI).abs() < 1e-15);
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-14);
    }

    #[test]
    fn two_layer_equal_volume_count() {
        // shell 1 has the same area as the unit disk when R_1 = sqrt(2)
        let p = LcpdmParams { layers: 2, layer_width: 2f64.sqrt() - 1.0, n_core: 400, ..LcpdmParams::new(3) };
        let s = gen_separable(&p).unwrap();
        for c in &s.counts {
            assert!((c[1] as i64 - 200).abs() <= 1, "{c:?}");
        }
    }

    #[test]
    fn separable_respects_bounds_and_regions() {
        let s = gen_separable(&LcpdmParams::new(5)).unwrap();
        assert_eq!(s.region_violations(), 0);
        assert!(s.measured_separation() <= s.params.separation);
        assert!(s.measured_alignment() <= s.params.alignment);
        assert_eq!(s.dataset.n(), s.counts.iter().flatten().sum::<usize>());
    }

    #[test]
    fn too_close_centers_rejected() {
        let p = LcpdmParams { center_distance: Some(3.0), ..LcpdmParams::new(1) };
        let err = gen_separable(&p).unwrap_err().to_string();
        assert!(err.contains("too small"), "{err}");
    }

    #[test]
    fn empirical_density_ratio_matches() {
        // area of each layer from point-in-region Monte Carlo, not the volume formula
        let s = gen_separable(&LcpdmParams { n_core: 2000, ..LcpdmParams::new(8) }).unwrap();
        let mut rng = crate::rng::StageRng::seed_from_u64(99);
        for (i, g) in s.geometry.iter().enumerate() {
            let c = g.center();
            let half = g.radii[s.params.layers - 1];
            let draws = 400_000;
            let mut hits = vec![0usize; s.params.layers];
            for _ in 0..draws {
                let x = [c[0] + half * (2.0 * rng.random::<f64>() - 1.0), c[1] + half * (2.0 * rng.random::<f64>() - 1.0)];
                if let Some(j) = (0..s.params.layers).find(|&j| g.in_layer(&x, j, 0.0)) {
                    hits[j] += 1;
                }
            }
            let box_area = 4.0 * half * half;
            let dens: Vec<f64> =
                (0..s.params.layers).map(|j| s.counts[i][j] as f64 / (box_area * hits[j] as f64 / draws as f64)).collect();
            for w in dens.windows(2) {
                let ratio = w[0] / w[1];
                assert!((ratio / s.params.density_ratio - 1.0).abs() < 0.15, "ratio {ratio}");
            }
        }
    }

    #[test]
    fn entangled_defaults_hold_bounds() {
        let s = gen_entangled(&LcpdmParams::entangled_default(2), 1.6).unwrap();
        assert_eq!(s.region_violations(), 0);
        assert!(s.measured_alignment() <= s.params.alignment);
        assert!(s.measured_alignment() < 1.0);
        assert!(s.rejection_rate > 0.0 && s.rejection_rate < 0.9);
    }

    #[test]
    fn curl_zero_is_concentric() {
        let s = gen_entangled(&LcpdmParams::entangled_default(4), 0.0).unwrap();
        assert!(s.geometry.iter().all(|g| g.half_angles.iter().all(|&a| a == 0.0)));
        let g = &s.geometry[0];
        for j in 1..s.params.layers {
            let expected = PI * (g.radii[j].powi(2) - g.radii[j - 1].powi(2));
            assert!((g.layer_volume(j) - expected).abs() < 1e-12);
        }
        assert_eq!(s.region_violations(), 0);
    }

    #[test]
    fn arc_sampling_is_uniform_across_the_tube() {
        // half the tube body has half the volume; compare both angular halves
        let g = TubeGeometry {
            origin: vec![0.0, 0.0],
            arc_radius: 5.0,
            mid_angle: 0.0,
            half_angles: vec![1.0],
            radii: vec![1.0],
        };
        let mut rng = crate::rng::StageRng::seed_from_u64(3);
        let n = 200_000;
        let (mut middle, mut middle_outer) = (0usize, 0usize);
        for _ in 0..n {
            let x = g.sample_region(0, &mut rng);
            assert!(g.arc_distance(&x, 0) <= 1.0 + 1e-12);
            if x[1].atan2(x[0]).abs() <= 0.5 {
                middle += 1;
                if x[0].hypot(x[1]) > 5.0 {
                    middle_outer += 1;
                }
            }
        }
        // the middle half of the body: area theta * R * 2r = 10 out of 20 + pi
        let frac = middle as f64 / n as f64;
        assert!((frac - 10.0 / (20.0 + PI)).abs() < 0.01, "{frac}");
        // outside the arc the sweep is longer: (R r + r^2 / 2) / (2 R r) = 0.55
        let outer = middle_outer as f64 / middle as f64;
        assert!((outer - 0.55).abs() < 0.01, "{outer}");
    }

    #[test]
    fn deterministic_under_seed() {
        let a = gen_entangled(&LcpdmParams::entangled_default(9), 1.6).unwrap();
        let b = gen_entangled(&LcpdmParams::entangled_default(9), 1.6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_params() {
        assert!(gen_separable(&LcpdmParams { density_ratio: 1.0, ..LcpdmParams::new(0) }).is_err());
        assert!(gen_separable(&LcpdmParams { separation: 0.5, ..LcpdmParams::new(0) }).is_err());
        assert!(gen_separable(&LcpdmParams { alignment: 1.0, ..LcpdmParams::new(0) }).is_err());
        assert!(gen_separable(&LcpdmParams { layers: 1, ..LcpdmParams::new(0) }).is_err());
        assert!(gen_entangled(&LcpdmParams { k: 3, ..LcpdmParams::entangled_default(0) }, 1.0).is_err());
    }
}
