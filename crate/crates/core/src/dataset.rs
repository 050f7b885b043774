//! Point matrices, CSV ingestion and preprocessing.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::StageRng;

/// An `n x d` matrix of finite reals, row-major, with optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    values: Vec<f64>,
    labels: Option<Vec<usize>>,
    ids: Option<Vec<String>>,
    columns: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from a row-major buffer of `n * d` values.
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::param(format!("dataset must be non-empty, got {n}x{d}")));
        }
        if values.len() != n * d {
            return Err(Error::LengthMismatch { left: values.len(), right: n * d });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "non-finite value at row {}, column {}",
                pos / d + 1,
                pos % d + 1
            )));
        }
        let columns = (0..d).map(|j| format!("x{j}")).collect();
        Ok(Self { n, d, values, labels: None, ids: None, columns })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::LengthMismatch { left: bad.len(), right: d });
        }
        Self::new(n, d, rows.concat())
    }

    /// Attaches labels, relabeling them onto `0..k` in ascending order of the raw values.
    pub fn with_labels(mut self, raw: &[usize]) -> Result<Self> {
        if raw.len() != self.n {
            return Err(Error::LengthMismatch { left: raw.len(), right: self.n });
        }
        self.labels = Some(relabel(raw));
        Ok(self)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.n {
            return Err(Error::LengthMismatch { left: ids.len(), right: self.n });
        }
        self.ids = Some(ids);
        Ok(self)
    }

    pub fn with_columns(mut self, columns: Vec<String>) -> Result<Self> {
        if columns.len() != self.d {
            return Err(Error::LengthMismatch { left: columns.len(), right: self.d });
        }
        self.columns = columns;
        Ok(self)
    }

    /// Same rows and metadata, new feature matrix (possibly of another width).
    fn with_values(&self, d: usize, values: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(self.n, d, values)?;
        out.labels = self.labels.clone();
        out.ids = self.ids.clone();
        if d == self.d {
            out.columns = self.columns.clone();
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Number of distinct ground-truth classes, if labels are present.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1))
    }

    /// Rows `indices` in the given order. Labels are carried over unchanged
    /// (not relabeled), so they stay comparable with the parent dataset.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::param("cannot select an empty subset"));
        }
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(indices.len(), self.d, values)?;
        out.columns = self.columns.clone();
        out.labels = self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        out.ids = self.ids.as_ref().map(|ids| indices.iter().map(|&i| ids[i].clone()).collect());
        Ok(out)
    }

    /// Euclidean distance between rows `i` and `j`.
    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        euclidean(self.row(i), self.row(j))
    }
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

/// Maps arbitrary non-negative labels onto `0..k`, preserving their order.
pub fn relabel(raw: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    for &l in raw {
        map.entry(l).or_insert(0usize);
    }
    for (next, v) in map.values_mut().enumerate() {
        *v = next;
    }
    raw.iter().map(|l| map[l]).collect()
}

/// Options for [`load_csv_with`].
#[derive(Clone, Debug, Default)]
pub struct CsvOptions {
    /// Column holding ground-truth labels; removed from the features.
    pub label_column: Option<String>,
    /// Columns dropped from the features without being interpreted.
    pub skip_columns: Vec<String>,
}

/// Reads a headered, comma-separated file of reals.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let opts = CsvOptions { label_column: label_column.map(str::to_owned), ..Default::default() };
    load_csv_with(path, &opts)
}

pub fn load_csv_with(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(BufReader::new(file));
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_owned())
        .collect();

    let label_idx = match &opts.label_column {
        Some(name) => Some(
            header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.clone()))?,
        ),
        None => None,
    };
    let mut skip = vec![false; header.len()];
    for name in &opts.skip_columns {
        let idx = header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.clone()))?;
        skip[idx] = true;
    }
    if let Some(i) = label_idx {
        skip[i] = true;
    }
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| !skip[c]).collect();
    if feature_cols.is_empty() {
        return Err(Error::Csv("no feature columns".into()));
    }

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    let mut n = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        if record.len() != header.len() {
            return Err(Error::Csv(format!(
                "row {} has {} fields, header has {}",
                r + 1,
                record.len(),
                header.len()
            )));
        }
        for &c in &feature_cols {
            let cell = record[c].trim();
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::Parse {
                        row: r + 1,
                        column: c + 1,
                        name: header[c].clone(),
                        value: cell.to_owned(),
                    })
                }
            }
        }
        if let Some(li) = label_idx {
            raw_labels.push(record[li].trim().to_owned());
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Csv("no data rows".into()));
    }

    let columns = feature_cols.iter().map(|&c| header[c].clone()).collect();
    let mut ds = Dataset::new(n, feature_cols.len(), values)?.with_columns(columns)?;
    if label_idx.is_some() {
        ds.labels = Some(relabel_strings(&raw_labels));
    }
    Ok(ds)
}

/// Integer if every label parses as one (numeric order), otherwise lexical order.
fn relabel_strings(raw: &[String]) -> Vec<usize> {
    let numeric: Option<Vec<i64>> = raw.iter().map(|s| s.parse::<i64>().ok()).collect();
    match numeric {
        Some(nums) => {
            let mut map = BTreeMap::new();
            for &v in &nums {
                map.entry(v).or_insert(0usize);
            }
            for (next, v) in map.values_mut().enumerate() {
                *v = next;
            }
            nums.iter().map(|v| map[v]).collect()
        }
        None => {
            let mut map = BTreeMap::new();
            for v in raw {
                map.entry(v.as_str()).or_insert(0usize);
            }
            for (next, v) in map.values_mut().enumerate() {
                *v = next;
            }
            raw.iter().map(|v| map[v.as_str()]).collect()
        }
    }
}

/// Writes the dataset as CSV. Values use the shortest representation that
/// parses back to the same double. `extra` appends integer columns.
pub fn write_csv<W: Write>(d: &Dataset, out: W, extra: &[(&str, &[usize])]) -> Result<()> {
    for (name, col) in extra {
        if col.len() != d.n {
            return Err(Error::param(format!("extra column {name} has {} rows, expected {}", col.len(), d.n)));
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = d.columns.iter().map(String::as_str).collect();
    if d.labels.is_some() {
        header.push("label");
    }
    header.extend(extra.iter().map(|(name, _)| *name));
    w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
    let mut fields = Vec::with_capacity(header.len());
    for i in 0..d.n {
        fields.clear();
        fields.extend(d.row(i).iter().map(|v| format!("{v}")));
        if let Some(l) = &d.labels {
            fields.push(l[i].to_string());
        }
        fields.extend(extra.iter().map(|(_, col)| col[i].to_string()));
        w.write_record(&fields).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
    write_csv(d, std::io::BufWriter::new(file), &[])
}

/// `x -> ln(1 + x)` elementwise.
pub fn log_normalize(d: &Dataset) -> Result<Dataset> {
    if let Some(pos) = d.values.iter().position(|&v| v < 0.0) {
        return Err(Error::NegativeValue { row: pos / d.d + 1, column: pos % d.d + 1, value: d.values[pos] });
    }
    d.with_values(d.d, d.values.iter().map(|v| v.ln_1p()).collect())
}

/// Principal axes of a dataset.
#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `m` unit vectors of length `d`, by descending explained variance.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl Pca {
    pub fn transform(&self, d: &Dataset) -> Result<Dataset> {
        let m = self.components.len();
        let mut out = Vec::with_capacity(d.n * m);
        let mut centered = vec![0.0; d.d];
        for row in d.rows() {
            for ((c, x), mu) in centered.iter_mut().zip(row).zip(&self.mean) {
                *c = x - mu;
            }
            out.extend(self.components.iter().map(|v| v.iter().zip(&centered).map(|(a, b)| a * b).sum::<f64>()));
        }
        d.with_values(m, out)
    }
}

/// Above this width the top eigenvectors come from subspace iteration instead
/// of a full dense eigendecomposition.
pub const DENSE_EIGEN_MAX_DIM: usize = 512;
const EIGEN_RESIDUAL_TOL: f64 = 1e-10;

pub fn fit_pca(d: &Dataset, m: usize) -> Result<Pca> {
    if m == 0 || m > d.n.min(d.d) {
        return Err(Error::param(format!("pca dimension {m} outside 1..={}", d.n.min(d.d))));
    }
    let mut mean = vec![0.0; d.d];
    for row in d.rows() {
        for (mu, x) in mean.iter_mut().zip(row) {
            *mu += x;
        }
    }
    mean.iter_mut().for_each(|mu| *mu /= d.n as f64);
    let centered = DMatrix::from_fn(d.n, d.d, |i, j| d.values[i * d.d + j] - mean[j]);
    let denom = (d.n.max(2) - 1) as f64;
    let cov = (centered.transpose() * &centered) / denom;

    let (values, vectors) = if d.d <= DENSE_EIGEN_MAX_DIM {
        top_eigen_dense(cov, m)
    } else {
        subspace_iteration(&cov, m, EIGEN_RESIDUAL_TOL, 10_000)?
    };
    let components = vectors.into_iter().map(canonical_sign).collect();
    Ok(Pca { mean, components, explained_variance: values })
}

pub fn pca_reduce(d: &Dataset, m: usize) -> Result<Dataset> {
    fit_pca(d, m)?.transform(d)
}

fn canonical_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

fn top_eigen_dense(cov: DMatrix<f64>, m: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order[..m].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = order[..m].iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    (values, vectors)
}

/// Top-`m` eigenpairs of a symmetric PSD matrix by block power iteration with
/// Rayleigh-Ritz extraction. Converged when every residual
/// `||A v - lambda v||` is below `tol * lambda_max`.
pub fn subspace_iteration(a: &DMatrix<f64>, m: usize, tol: f64, max_iter: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let d = a.nrows();
    let block = (m + 8).min(d);
    let mut rng = StageRng::seed_from_u64(0x5eed_0f_9ca);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut q = DMatrix::from_fn(d, block, |_, _| normal.sample(&mut rng)).qr().q();
    for _ in 0..max_iter {
        q = (a * &q).qr().q();
        let t = q.transpose() * a * &q;
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
        let ritz = &q * &eig.eigenvectors;
        let scale = eig.eigenvalues[order[0]].abs().max(f64::MIN_POSITIVE);
        let converged = order[..m].iter().all(|&i| {
            let v = ritz.column(i);
            (a * v - v * eig.eigenvalues[i]).norm() <= tol * scale
        });
        if converged {
            let values = order[..m].iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
            let vectors = order[..m].iter().map(|&i| ritz.column(i).iter().copied().collect()).collect();
            return Ok((values, vectors));
        }
        q = ritz;
    }
    Err(Error::Degenerate(format!("subspace iteration did not converge in {max_iter} iterations")))
}

/// Isotropic Gaussian perturbation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// Adds an independent `N(0, sigma^2)` draw to every coordinate, in row-major order.
pub fn add_gaussian_noise(d: &Dataset, spec: NoiseSpec) -> Result<Dataset> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::param(format!("noise sigma must be a finite value >= 0, got {}", spec.sigma)));
    }
    if spec.sigma == 0.0 {
        return Ok(d.clone());
    }
    let mut rng = StageRng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.sigma).map_err(|e| Error::param(e.to_string()))?;
    let values = d.values.iter().map(|x| x + normal.sample(&mut rng)).collect();
    d.with_values(d.d, values)
}
