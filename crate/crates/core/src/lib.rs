//! Reconstruction toolkit for free-breathing golden-angle radial cine MRI.
//!
//! The crate covers the whole chain from a synthetic multi-coil acquisition
//! to evaluated images: noise prewhitening, cardiac binning and respiratory
//! gating, coil compression, NUFFT-based SENSE modelling, iterative and
//! unrolled reconstruction, and image-quality metrics.

// `!(x > 0.0)` is used on purpose so NaN is rejected; index loops mirror the maths
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod array_io;
pub mod coil;
pub mod error;
pub mod fft;
pub mod linalg;
pub mod metrics;
pub mod nufft;
pub mod phantom;
pub mod pipeline;
pub mod preprocess;
pub mod recon;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    BinnedKSpace, CineImage, DcfWeights, PhaseBin, PhysioTrace, RadialKSpace, SensitivityMaps, Trajectory, Validate,
    Violation, C64,
};
