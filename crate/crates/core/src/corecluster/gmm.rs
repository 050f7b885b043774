use nalgebra::DMatrix;
use rayon::prelude::*;

use super::kmeans::{kmeans, KMeansOptions};
use super::MembershipMatrix;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmmOptions {
    pub max_iter: usize,
    /// Stop once the per-sample mean log-likelihood changes by less than this.
    pub tol: f64,
    /// Ridge added to every covariance diagonal.
    pub reg: f64,
    pub seed: u64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-3, reg: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub k: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    /// Row-major `k x dim`.
    pub means: Vec<f64>,
    /// One row-major `dim x dim` matrix per component, ridge included.
    pub covariances: Vec<Vec<f64>>,
    /// Mean per-sample log-likelihood under the returned parameters.
    pub log_likelihood: f64,
    /// Per-sample log-likelihood at every E-step.
    pub ll_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Ridge actually used; larger than requested only after a Cholesky failure.
    pub reg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Negated posteriors; rows follow the subset order.
    pub membership: MembershipMatrix,
    pub labels: Vec<usize>,
}

/// Mixture parameters with Cholesky factors of the precisions ready for the E-step.
struct Params {
    weights: Vec<f64>,
    means: Vec<f64>,
    covs: Vec<DMatrix<f64>>,
    /// Row-major `L^-1` for each component, where `cov = L L^T`.
    inv_chol: Vec<Vec<f64>>,
    log_det: Vec<f64>,
}

const MAX_RIDGE_ESCALATIONS: usize = 8;

fn m_step(d: &Dataset, subset: &[usize], resp: &[f64], k: usize, reg: f64) -> Result<(Params, f64)> {
    let dim = d.dim();
    let m = subset.len();
    let mut nk = vec![10.0 * f64::EPSILON; k];
    let mut means = vec![0.0; k * dim];
    for (p, &i) in subset.iter().enumerate() {
        let x = d.row(i);
        for c in 0..k {
            let r = resp[p * k + c];
            nk[c] += r;
            for (mu, xv) in means[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *mu += r * xv;
            }
        }
    }
    for c in 0..k {
        means[c * dim..(c + 1) * dim].iter_mut().for_each(|mu| *mu /= nk[c]);
    }
    let raw: Vec<DMatrix<f64>> = (0..k)
        .into_par_iter()
        .map(|c| {
            let mu = &means[c * dim..(c + 1) * dim];
            let mut cov = DMatrix::<f64>::zeros(dim, dim);
            let mut diff = vec![0.0; dim];
            for (p, &i) in subset.iter().enumerate() {
                let r = resp[p * k + c];
                if r == 0.0 {
                    continue;
                }
                for ((dv, xv), mv) in diff.iter_mut().zip(d.row(i)).zip(mu) {
                    *dv = xv - mv;
                }
                for a in 0..dim {
                    let ra = r * diff[a];
                    for b in 0..=a {
                        cov[(a, b)] += ra * diff[b];
                    }
                }
            }
            for a in 0..dim {
                for b in 0..=a {
                    let v = cov[(a, b)] / nk[c];
                    cov[(a, b)] = v;
                    cov[(b, a)] = v;
                }
            }
            cov
        })
        .collect();

    let mut ridge = reg;
    for _ in 0..=MAX_RIDGE_ESCALATIONS {
        if let Some(params) = factor(&raw, ridge, &nk, m, means.clone()) {
            return Ok((params, ridge));
        }
        log::warn!("gmm: covariance not positive definite with ridge {ridge}, increasing");
        ridge = if ridge > 0.0 { ridge * 10.0 } else { 1e-12 };
    }
    Err(Error::Degenerate(format!("gmm covariances stay singular up to ridge {ridge}")))
}

fn factor(raw: &[DMatrix<f64>], ridge: f64, nk: &[f64], m: usize, means: Vec<f64>) -> Option<Params> {
    let dim = raw.first().map_or(0, DMatrix::nrows);
    let mut covs = Vec::with_capacity(raw.len());
    let mut inv_chol = Vec::with_capacity(raw.len());
    let mut log_det = Vec::with_capacity(raw.len());
    for cov in raw {
        let cov = cov + DMatrix::<f64>::identity(dim, dim) * ridge;
        let chol = cov.clone().cholesky()?;
        let l = chol.l();
        let diag_ok = (0..dim).all(|a| l[(a, a)] > 0.0 && l[(a, a)].is_finite());
        if !diag_ok {
            return None;
        }
        let linv = l.solve_lower_triangular(&DMatrix::identity(dim, dim))?;
        log_det.push(2.0 * (0..dim).map(|a| l[(a, a)].ln()).sum::<f64>());
        inv_chol.push((0..dim * dim).map(|e| linv[(e / dim, e % dim)]).collect());
        covs.push(cov);
    }
    let weights = nk.iter().map(|n| n / m as f64).collect();
    Some(Params { weights, means, covs, inv_chol, log_det })
}

/// Posteriors and the mean per-sample log-likelihood.
fn e_step(d: &Dataset, subset: &[usize], p: &Params, k: usize) -> (Vec<f64>, f64) {
    let dim = d.dim();
    let norm = dim as f64 * (2.0 * std::f64::consts::PI).ln();
    let rows: Vec<(Vec<f64>, f64)> = subset
        .par_iter()
        .map(|&i| {
            let x = d.row(i);
            let mut logp = vec![0.0; k];
            let mut diff = vec![0.0; dim];
            for c in 0..k {
                for ((dv, xv), mv) in diff.iter_mut().zip(x).zip(&p.means[c * dim..(c + 1) * dim]) {
                    *dv = xv - mv;
                }
                let linv = &p.inv_chol[c];
                let mut maha = 0.0;
                for a in 0..dim {
                    let y: f64 = linv[a * dim..a * dim + a + 1].iter().zip(&diff).map(|(l, v)| l * v).sum();
                    maha += y * y;
                }
                logp[c] = p.weights[c].ln() - 0.5 * (norm + p.log_det[c] + maha);
            }
            let top = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + logp.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
            let post = logp.iter().map(|v| (v - lse).exp()).collect();
            (post, lse)
        })
        .collect();
    let ll = rows.iter().map(|r| r.1).sum::<f64>() / subset.len() as f64;
    (rows.into_iter().flat_map(|r| r.0).collect(), ll)
}

/// EM for a full-covariance Gaussian mixture, started from one K-Means run.
pub fn gmm_fit(d: &Dataset, subset: &[usize], k: usize, opts: &GmmOptions) -> Result<GmmFit> {
    if opts.max_iter == 0 || !(opts.reg >= 0.0) || !(opts.tol >= 0.0) {
        return Err(Error::param("gmm needs max_iter >= 1, reg >= 0 and tol >= 0"));
    }
    let init = kmeans(
        d,
        subset,
        k,
        &KMeansOptions { n_init: 1, seed: derive_seed(opts.seed, "gmm-init"), ..Default::default() },
    )?;
    let mut resp = vec![0.0; subset.len() * k];
    for (p, &c) in init.labels.iter().enumerate() {
        resp[p * k + c] = 1.0;
    }
    let (mut params, mut reg) = m_step(d, subset, &resp, k, opts.reg)?;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        let (r, ll) = e_step(d, subset, &params, k);
        resp = r;
        let prev = history.last().copied();
        history.push(ll);
        if prev.is_some_and(|p: f64| (ll - p).abs() < opts.tol) {
            converged = true;
            break;
        }
        let (next, used) = m_step(d, subset, &resp, k, opts.reg)?;
        params = next;
        reg = reg.max(used);
        iterations += 1;
    }
    if !converged {
        let (r, ll) = e_step(d, subset, &params, k);
        resp = r;
        history.push(ll);
    }
    if let Some(w) = history.windows(2).find(|w| w[1] < w[0] - 1e-8) {
        log::warn!("gmm log-likelihood decreased from {} to {}", w[0], w[1]);
    }

    let membership = MembershipMatrix::new(subset.to_vec(), k, resp.iter().map(|r| -r).collect())?;
    let labels = membership.labels();
    let dim = d.dim();
    let model = GmmModel {
        k,
        dim,
        weights: params.weights,
        means: params.means,
        covariances: params.covs.iter().map(|c| (0..dim * dim).map(|e| c[(e / dim, e % dim)]).collect()).collect(),
        log_likelihood: *history.last().expect("at least one E-step"),
        ll_history: history,
        iterations,
        converged,
        reg,
    };
    Ok(GmmFit { model, membership, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_component_closed_form() {
        let mut rng = crate::rng::StageRng::seed_from_u64(1);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let vals: Vec<f64> = (0..200).map(|i| normal.sample(&mut rng) * if i % 2 == 0 { 2.0 } else { 0.5 }).collect();
        let d = Dataset::new(100, 2, vals).unwrap();
        let subset: Vec<usize> = (0..100).collect();
        let fit = gmm_fit(&d, &subset, 1, &GmmOptions::default()).unwrap();
        let mean: Vec<f64> = (0..2).map(|j| (0..100).map(|i| d.row(i)[j]).sum::<f64>() / 100.0).collect();
        for j in 0..2 {
            assert!((fit.model.means[j] - mean[j]).abs() < 1e-9);
        }
        for a in 0..2 {
            for b in 0..2 {
                let s = (0..100).map(|i| (d.row(i)[a] - mean[a]) * (d.row(i)[b] - mean[b])).sum::<f64>() / 100.0;
                let want = s + if a == b { 1e-6 } else { 0.0 };
                assert!((fit.model.covariances[0][a * 2 + b] - want).abs() < 1e-9);
            }
        }
        assert!(fit.membership.values.iter().all(|&v| (v + 1.0).abs() < 1e-12));
        assert!((fit.model.weights[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_separated_means() {
        let sigma = 1.0;
        for seed in 0..10u64 {
            let mut rng = crate::rng::StageRng::seed_from_u64(100 + seed);
            let normal = Normal::new(0.0, sigma).unwrap();
            let truth = [[-10.0, 0.0], [10.0, 3.0]];
            let mut vals = Vec::new();
            for c in &truth {
                for _ in 0..2000 {
                    vals.push(c[0] + normal.sample(&mut rng));
                    vals.push(c[1] + normal.sample(&mut rng));
                }
            }
            let d = Dataset::new(4000, 2, vals).unwrap();
            let subset: Vec<usize> = (0..4000).collect();
            let fit = gmm_fit(&d, &subset, 2, &GmmOptions { seed, ..Default::default() }).unwrap();
            for t in &truth {
                let close = (0..2).any(|c| {
                    let m = &fit.model.means[c * 2..c * 2 + 2];
                    ((m[0] - t[0]).powi(2) + (m[1] - t[1]).powi(2)).sqrt() < 0.1 * sigma
                });
                assert!(close, "seed {seed}: means {:?}", fit.model.means);
            }
            let ll = &fit.model.ll_history;
            assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-8), "{ll:?}");
            for p in 0..fit.membership.len() {
                assert!((fit.membership.row(p).iter().sum::<f64>() + 1.0).abs() < 1e-9);
            }
            assert!((fit.model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn likelihood_monotone_on_overlapping_mixture() {
        let mut rng = crate::rng::StageRng::seed_from_u64(8);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let vals: Vec<f64> = (0..900).map(|i| normal.sample(&mut rng) + if i < 450 { 0.0 } else { 1.5 }).collect();
        let d = Dataset::new(300, 3, vals).unwrap();
        let subset: Vec<usize> = (0..300).collect();
        let fit = gmm_fit(&d, &subset, 3, &GmmOptions { tol: 0.0, max_iter: 50, ..Default::default() }).unwrap();
        let ll = &fit.model.ll_history;
        assert!(ll.len() > 2);
        assert!(ll.windows(2).all(|w| w[1] >= w[0] - 1e-8), "{ll:?}");
    }

    #[test]
    fn duplicate_points_stay_finite() {
        let d = Dataset::new(6, 2, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
        let fit = gmm_fit(&d, &[0, 1, 2, 3, 4, 5], 2, &GmmOptions::default()).unwrap();
        assert!(fit.membership.values.iter().all(|v| v.is_finite()));
        assert_ne!(fit.labels[0], fit.labels[5]);
    }
}
