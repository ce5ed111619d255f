//! Stimulus generation, response scoring and human/model comparison metrics
//! for minimal recognizable configurations (MIRCs) in ego-centric action
//! video.

pub mod artifact;
pub mod dataset;
pub mod features;
pub mod geometry;
pub mod metrics;
pub mod reduction;
pub mod scoring;
pub mod scramble;
pub mod seed;
pub mod stats;
pub mod tree;

use thiserror::Error;

/// Any library error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Artifact(#[from] artifact::ArtifactError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Reduction(#[from] reduction::ReductionError),
    #[error(transparent)]
    Scoring(#[from] scoring::ScoringError),
    #[error(transparent)]
    Scramble(#[from] scramble::ScrambleError),
    #[error(transparent)]
    Tree(#[from] tree::TreeError),
}
