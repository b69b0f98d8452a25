//! Near-field millimeter-wave FMCW SAR imaging on a planar scan aperture:
//! signal simulation, radar/pose stream synchronization, channel
//! calibration, range migration and backprojection imaging, and evaluation
//! metrics.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod signal_model;
pub mod stream_sync;

pub use calibration::{
    compensate, condition_cube, estimate_from_cube, estimate_phase_rate, estimate_reference_point, CalibrationModel,
    EstimationMode, SgParams,
};
pub use error::{Error, Result};
pub use imaging::{
    backprojection_image, magnitude_image, peak_profile, rma_image, BeamProfile, ComplexImage, ImageGrid, ProfileAxis,
    RmaOptions,
};
pub use metrics::{DepthMap, ErrorCdf};
pub use signal_model::{
    inject_channel_error, simulate_cube, ApertureGrid, ChannelError, PointScatterer, RadarConfig, RawDataCube, Scene,
    SimulationOptions,
};
pub use stream_sync::{assemble_cube, TimestampedFrame, TimestampedPose};
