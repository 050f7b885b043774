//! report.json contents. Every field is a pure function of the config and
//! the input, so reports from two identical runs compare equal byte for byte.
//! Wall-clock times live in timings.json for that reason.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub config: RunConfig,
    pub data: DataSummary,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pipeline: Option<PipelineSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<MetricSummary>,
    pub repetitions: Vec<RepRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub noise_sweep: Option<Vec<SweepRow>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fraction_curve: Option<Vec<FractionRow>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DataSummary {
    pub n: usize,
    pub dim: usize,
    pub k: usize,
    /// Distinct ground-truth classes, when labels were supplied.
    pub classes: Option<usize>,
}

/// Structure of the first repetition's pipeline run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PipelineSummary {
    pub method: String,
    pub expansion_skipped: bool,
    pub core_size: usize,
    pub layers: usize,
    pub edge_count: usize,
    pub work_count: u64,
}

/// Mean and the largest absolute deviation from it.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub max_dev: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: 0.0, max_dev: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let max_dev = values.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
        Stat { mean, max_dev }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricSummary {
    pub ari: Stat,
    pub nmi: Stat,
    pub accuracy: Stat,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub work_count: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ari: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub algo: String,
    pub mean_ari: f64,
    pub max_dev: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FractionRow {
    pub x: f64,
    pub points: usize,
    pub plain_accuracy: f64,
    pub corespect_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Agreement {
    pub euclidean: f64,
    /// Absent when the run has a single layer (no graph).
    pub cdnn_path: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Diagnostics {
    pub pool_size: usize,
    pub query_size: usize,
    pub nn_q: usize,
    /// Bottom-ranked queries against the top-ranked pool.
    pub periphery_to_top: Agreement,
    /// Top-ranked queries against the rest of the top-ranked pool.
    pub top_to_top: Agreement,
    /// K-Means objectives; "core" labels are the pipeline's, "full" the plain run's.
    pub objective: Objectives,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layer_preservation: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Objectives {
    pub core_labels_on_core: f64,
    pub full_labels_on_core: f64,
    pub core_labels_on_full: f64,
    pub full_labels_on_full: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TimingRecord {
    pub rep: usize,
    pub neighbors: f64,
    pub density: f64,
    pub flowrank: f64,
    pub core: f64,
    pub cdnn: f64,
    pub expansion: f64,
    pub total: f64,
}

impl TimingRecord {
    pub fn new(rep: usize, t: &corespect::StageTimings) -> Self {
        TimingRecord {
            rep,
            neighbors: t.neighbors,
            density: t.density,
            flowrank: t.flowrank,
            core: t.core,
            cdnn: t.cdnn,
            expansion: t.expansion,
            total: t.total(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub ari: f64,
    pub nmi: f64,
    pub accuracy: f64,
    pub n: usize,
    pub k_pred: usize,
    pub k_true: usize,
}
