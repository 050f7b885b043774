//! Command-line surface and the run configuration echoed into reports.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use corespect::{Algo, CorespectParams, WeightKernel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "corespect", version, about = "Core-first clustering enhancement")]
pub struct Cli {
    /// Re-run the configuration stored in a report.json.
    #[arg(long, value_name = "REPORT")]
    pub config: Option<PathBuf>,

    /// Output directory for a replayed run.
    #[arg(long, requires = "config", default_value = ".")]
    pub output_dir: PathBuf,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster a CSV with the core-first pipeline (or the algorithm alone).
    Cluster(RunArgs),
    /// Emit density, ascent expectation, score and layer per point.
    Rank(RunArgs),
    /// Generate a layered synthetic dataset.
    Synth(SynthArgs),
    /// Score a label file against ground truth.
    Eval(EvalArgs),
    /// ARI of plain and core-first clustering under Gaussian perturbation.
    NoiseSweep(RunArgs),
    /// Accuracy on ranked prefixes: clustering the prefix vs expanding the core.
    FractionCurve(RunArgs),
    /// Neighbor-label agreement and objective comparison on core vs periphery.
    Diagnose(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Cluster(_) => "cluster",
            Command::Rank(_) => "rank",
            Command::Synth(_) => "synth",
            Command::Eval(_) => "eval",
            Command::NoiseSweep(_) => "noise-sweep",
            Command::FractionCurve(_) => "fraction-curve",
            Command::Diagnose(_) => "diagnose",
        }
    }
}

/// Flags shared by every command that runs the pipeline. This is also the
/// config echo written into report.json.
#[derive(Clone, Debug, Args, Serialize, Deserialize, PartialEq)]
pub struct RunArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Column holding ground-truth labels; excluded from the features.
    #[arg(long)]
    pub label_column: Option<String>,
    /// Column holding true layer indices (as written by `synth`); excluded
    /// from the features and used by `diagnose`.
    #[arg(long)]
    pub layer_column: Option<String>,
    /// kmeans or gmm.
    #[arg(long, default_value = "kmeans")]
    pub algo: String,
    /// Number of clusters; inferred from the label column when omitted.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 40)]
    pub q: usize,
    #[arg(long, default_value_t = 20)]
    pub r: usize,
    #[arg(long, default_value_t = 20)]
    pub t: usize,
    #[arg(long, default_value_t = 10)]
    pub layers: usize,
    /// umap_local, linear or global_gaussian.
    #[arg(long, default_value = "umap_local")]
    pub kernel: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Apply ln(1 + x) to every feature first.
    #[arg(long)]
    pub log_normalize: bool,
    /// Project onto this many principal components (after log-normalization).
    #[arg(long)]
    pub pca_dim: Option<usize>,
    /// Noise levels for noise-sweep, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub sigma: Vec<f64>,
    /// Repetitions; repetition i uses seed + i.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Run the algorithm on all points, without the core-first pipeline.
    #[arg(long)]
    pub plain: bool,
    /// Also write per-stage wall-clock times to timings.json.
    #[arg(long)]
    pub timings: bool,
    /// diagnose: fraction of top-ranked points used as the neighbor pool.
    #[arg(long, default_value_t = 0.2)]
    pub pool_fraction: f64,
    /// diagnose: fraction of bottom-ranked points used as queries.
    #[arg(long, default_value_t = 0.2)]
    pub query_fraction: f64,
    /// diagnose: neighbors per query.
    #[arg(long, default_value_t = 10)]
    pub nn_q: usize,
    /// Not part of the config echo, so reports do not depend on where they
    /// were written.
    #[arg(long, default_value = ".")]
    #[serde(skip, default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

/// What a report records about how it was produced.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub command: String,
    #[serde(flatten)]
    pub args: RunArgs,
}

/// Validated, parsed view of [`RunArgs`].
#[derive(Clone, Debug)]
pub struct Resolved {
    pub algo: Algo,
    pub params: CorespectParams,
}

impl RunArgs {
    pub fn resolve(&self) -> CliResult<Resolved> {
        if self.k == Some(0) {
            return Err(CliError::Config("k must be ≥ 1".into()));
        }
        for (name, v) in [("q", self.q), ("r", self.r), ("t", self.t), ("layers", self.layers), ("reps", self.reps), ("nn-q", self.nn_q)] {
            if v == 0 {
                return Err(CliError::Config(format!("{name} must be ≥ 1")));
            }
        }
        if self.pca_dim == Some(0) {
            return Err(CliError::Config("pca-dim must be ≥ 1".into()));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
            return Err(CliError::Config(format!("sigma must be a finite value ≥ 0, got {s}")));
        }
        for (name, f) in [("pool-fraction", self.pool_fraction), ("query-fraction", self.query_fraction)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CliError::Config(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        let algo: Algo = self.algo.parse().map_err(|e: corespect::Error| CliError::Config(e.to_string()))?;
        let kernel: WeightKernel = self.kernel.parse().map_err(|e: corespect::Error| CliError::Config(e.to_string()))?;
        let params = CorespectParams {
            q: self.q,
            r: self.r,
            t: self.t,
            layers: self.layers,
            kernel,
            seed: self.seed,
            ..CorespectParams::default()
        };
        Ok(Resolved { algo, params })
    }
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    /// separable or entangled.
    #[arg(long, default_value = "separable")]
    pub kind: String,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Layers per cluster (default 3, or 6 for entangled).
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Points in each core (default 500, or 300 for entangled).
    #[arg(long)]
    pub n_core: Option<usize>,
    /// Density ratio between consecutive layers (default 2, or 2.5 for entangled).
    #[arg(long)]
    pub density_ratio: Option<f64>,
    /// Layer width (default 0.5, or 0.1 for entangled).
    #[arg(long)]
    pub layer_width: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.95)]
    pub alignment: f64,
    /// entangled: how far the tails bend, in units of a quarter turn.
    #[arg(long, default_value_t = 1.6)]
    pub curl: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    /// CSV holding ground truth.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Predicted labels as written by `cluster` (index,label).
    #[arg(long)]
    pub pred: PathBuf,
}
