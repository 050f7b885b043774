//! Clustering algorithms applied to the core, and their membership rows.

mod gmm;
mod kmeans;

pub use gmm::{gmm_fit, GmmFit, GmmModel, GmmOptions};
pub use kmeans::{
    kmeans, kmeans_objective, kmeans_oneshot_restarts, kmeans_pp_init, kmeans_pp_init_with, KMeansFit, KMeansModel,
    KMeansOptions, ObjectiveInput,
};

use crate::error::{Error, Result};

/// Per-point cluster affinities over a subset of points. Lower is stronger.
#[derive(Clone, Debug, PartialEq)]
pub struct MembershipMatrix {
    /// Dataset index of each row.
    pub rows: Vec<usize>,
    pub k: usize,
    /// Row-major `rows.len() x k`.
    pub values: Vec<f64>,
}

impl MembershipMatrix {
    pub fn new(rows: Vec<usize>, k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("membership needs k >= 1"));
        }
        if values.len() != rows.len() * k {
            return Err(Error::LengthMismatch { left: values.len(), right: rows.len() * k });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("membership values must be finite"));
        }
        Ok(Self { rows, k, values })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    #[inline]
    pub fn row(&self, pos: usize) -> &[f64] {
        &self.values[pos * self.k..(pos + 1) * self.k]
    }

    /// Cluster of row `pos`; ties go to the lowest cluster index.
    #[inline]
    pub fn label(&self, pos: usize) -> usize {
        argmin(self.row(pos))
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|p| self.label(p)).collect()
    }
}

/// Index of the smallest entry, the first one on ties.
#[inline]
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_ties_lowest() {
        assert_eq!(argmin(&[0.5, 0.5]), 0);
        assert_eq!(argmin(&[2.0, 1.0, 1.0]), 1);
    }

    #[test]
    fn membership_shapes() {
        assert!(MembershipMatrix::new(vec![0, 1], 2, vec![0.0; 3]).is_err());
        let m = MembershipMatrix::new(vec![4, 9], 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.labels(), vec![1, 0]);
    }
}
