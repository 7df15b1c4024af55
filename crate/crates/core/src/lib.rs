//! Growth-regime identification for entity-by-year panels.
//!
//! Trajectories of annual percentage growth are row-standardised, projected
//! onto their leading principal components and clustered with k-means++,
//! with k chosen by the silhouette. Regime mean series feed percentile shock
//! detection and a lagged-correlation propagation network; permutation nulls
//! and a planted-truth generator back every stage.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod embed;
pub mod error;
pub mod io;
pub mod linalg;
pub mod panel;
pub mod pipeline;
pub mod propagation;
pub mod regimes;
pub mod rng;
pub mod robustness;
pub mod scalar;
pub mod stats;
pub mod synth;
pub mod zonal;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Panel = panel::Panel<f64>;
pub type GrowthMatrix = panel::GrowthMatrix<f64>;
pub type Embedding = embed::Embedding<f64>;
pub type Clustering = cluster::Clustering<f64>;
pub type KSelectionReport = cluster::KSelectionReport<f64>;
pub type NullSilhouetteReport = cluster::NullSilhouetteReport<f64>;
pub type RegimeTrajectories = regimes::RegimeTrajectories<f64>;
pub type ShockTable = regimes::ShockTable<f64>;
pub type PropagationNetwork = propagation::PropagationNetwork<f64>;
pub type SpatialDecayTable = propagation::SpatialDecayTable<f64>;
pub type GridRaster = zonal::GridRaster<f64>;
pub type ZonalPanel = zonal::ZonalPanel<f64>;
