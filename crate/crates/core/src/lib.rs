//! Core-periphery clustering enhancement.
//!
//! The pipeline ranks points by a random-walk density score, clusters only
//! the densest block ("core") with an off-the-shelf algorithm, and then pushes
//! the core's cluster memberships outward, one density layer at a time, over
//! a graph whose edges always point toward denser layers.
//!
//! ```no_run
//! use corespect::{corespect, synth, Algo, CorespectParams};
//!
//! let data = synth::gen_entangled(&synth::LcpdmParams::entangled_default(7), 1.6).unwrap();
//! let result = corespect(&data.dataset, Algo::KMeans, 2, &CorespectParams::default()).unwrap();
//! let truth = data.dataset.labels().unwrap();
//! println!("ARI = {:.3}", corespect::metrics::ari(truth, &result.labels).unwrap());
//! ```

pub mod cdnn;
pub mod corecluster;
pub mod dataset;
pub mod density;
mod error;
pub mod expansion;
pub mod flowrank;
pub mod metrics;
pub mod neighbors;
pub mod rng;
pub mod synth;

pub use cdnn::{build_cdnn, weight_edges, CdnnEdge, CdnnGraph, WeightKernel};
pub use corecluster::{GmmModel, GmmOptions, KMeansModel, KMeansOptions, MembershipMatrix};
pub use dataset::{Dataset, NoiseSpec};
pub use density::{rw_density, DensityEstimate, WalkGraph};
pub use error::{Error, Result};
pub use expansion::{
    corespect, corespect_detailed, corespect_with_partition, expand, plain, Algo, ClusteringResult, CoreVariant,
    CorespectParams, PipelineRun, StageTimings,
};
pub use flowrank::{flowrank, partition_layers, rarw_expectation, FlowRankScores, LayerPartition};
pub use neighbors::{knn_exact, nearest_in_pool, Neighbor, NeighborGraph};
