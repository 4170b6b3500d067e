//! Out-of-distribution evaluation toolkit for LiDAR 3D object detectors.
//!
//! The crate consumes serialized detector outputs and answers one question:
//! how well does a per-box unknown score `p_OOD` separate objects of
//! never-trained classes from known ones? It provides
//!
//! - [`matcher`]: greedy, confidence-ordered matching of predictions to ground truth,
//! - [`metrics`]: AUROC, FPR-95 and both precision–recall areas,
//! - [`scorers`]: single-stage scores computed from logits and detector confidence,
//! - [`probe`] and [`head`]: the two-stage MLP head and its feature extraction,
//! - [`forge`]: pseudo-unknown generators used to train that head,
//! - [`synth`]: a procedural world and detector emulator for desk-scale experiments,
//! - [`io`]: the JSON/blob dataset format.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar for the common cases. Dataset I/O, generators and the
//! synthetic world work in `f64`.

pub mod forge;
pub mod geometry;
pub mod head;
pub mod io;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod num;
pub mod probe;
pub mod scorers;
pub mod synth;

pub use num::Real;

pub type Box3D64 = model::Box3D<f64>;
pub type Box3D32 = model::Box3D<f32>;
pub type Detection64 = model::Detection<f64>;
pub type Detection32 = model::Detection<f32>;
pub type GroundTruth64 = model::GroundTruthObject<f64>;
pub type PointCloud64 = model::PointCloud<f64>;
pub type Scan64 = model::Scan<f64>;
pub type Scan32 = model::Scan<f32>;
pub type FeatureMap64 = probe::FeatureMap<f64>;
pub type FeatureMap32 = probe::FeatureMap<f32>;
pub type MlpHead64 = head::MlpHead<f64>;
pub type MlpHead32 = head::MlpHead<f32>;
pub type HeadInput64 = head::HeadInput<f64>;
pub type ScoredSample64 = metrics::ScoredSample<f64>;
