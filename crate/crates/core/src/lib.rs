//! Multi-band Wi-Fi time-of-flight toolkit.
//!
//! Commodity Wi-Fi radios cannot timestamp packets precisely enough to range
//! indoors, but they can hop across many narrow frequency bands. This crate
//! simulates multipath channel measurements across those bands (with packet
//! detection delay, carrier frequency offset, and noise), recovers
//! sub-nanosecond time-of-flight by inverting the resulting non-uniform DFT
//! under a sparsity prior, and composes the per-antenna estimates into 2D
//! device-to-device positions and a follow-distance controller.
//!
//! Modules mirror the pipeline stages:
//!
//! - [`band_plan`]: the non-contiguous Wi-Fi spectrum model and its
//!   unambiguous delay range.
//! - [`channel_sim`]: ground-truth scenes and impaired CSI sweep synthesis.
//! - [`csi_pipeline`]: per-band cleanup — zero-subcarrier interpolation,
//!   reciprocity combining, packet averaging.
//! - [`tof_solver`]: sparse inverse-NDFT, peak extraction, and a CRT-style
//!   grid-search baseline.
//! - [`localization`]: distances, geometric outlier rejection, 2D
//!   multilateration, motion disambiguation.
//! - [`hop_protocol`]: discrete-event simulation of the channel-hopping
//!   handshake.
//! - [`follow_controller`]: the negative-feedback distance tracker.
//! - [`experiment`]: scenario files, reproducible experiment runners, and
//!   CSV/JSON outputs behind the CLI.

pub mod band_plan;
pub mod channel_sim;
pub mod csi_pipeline;
pub mod error;
pub mod experiment;
pub mod follow_controller;
pub mod hop_protocol;
pub mod localization;
pub mod math;
pub mod tof_solver;

pub use band_plan::{default_band_plan, unambiguous_range, Band, BandPlan};
pub use channel_sim::{
    paths_from_scene, synthesize_sweep, true_channel, AntennaSweep, CfoModel, CsiMeasurement,
    Direction, ImpairmentConfig, PathComponent, Reflector, Scene, SweepSchedule,
};
pub use csi_pipeline::{
    average_sweeps, interpolate_zero_subcarrier, process_sweep, quartic_combine,
    reciprocal_combine, BandChannel, CombineMode, PipelineConfig,
};
pub use error::{Error, Result};
pub use localization::{
    disambiguate_by_motion, distances_from_tofs, geometric_outlier_reject, localize, DistanceEntry,
    DistanceSet, Position2D,
};
pub use tof_solver::{
    crt_estimate, first_peak, invert_ndft, ndft_adjoint, ndft_apply, sparsify, spectral_norm,
    DelayGrid, MultipathProfile, NdftOperator, SolverConfig, ToFEstimate,
};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
