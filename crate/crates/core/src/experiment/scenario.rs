//! Scenario files: JSON with explicit units in field names (`_ns`, `_m`,
//! `_db`, ...) converted into SI-unit domain configs at the parse boundary.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::band_plan::BandPlan;
use crate::channel_sim::{CfoModel, ImpairmentConfig, Reflector, Scene, SweepSchedule};
use crate::csi_pipeline::{CombineMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::follow_controller::{TrackerConfig, Waypoint};
use crate::hop_protocol::ProtocolConfig;
use crate::tof_solver::{DelayGrid, SolverConfig};

fn complex(v: [f64; 2]) -> Complex64 {
    Complex64::new(v[0], v[1])
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Inline band plan; absent means the default 35-band plan.
    #[serde(default)]
    pub band_plan: Option<BandPlan>,
    #[serde(default)]
    pub scene: Option<SceneSpec>,
    #[serde(default)]
    pub random_scene: Option<RandomSceneSpec>,
    #[serde(default)]
    pub impairments: ImpairmentSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub pipeline: PipelineSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub calibration: Option<CalibrationRecord>,
    /// Ground-truth distance for `calibrate` runs.
    #[serde(default)]
    pub known_distance_m: Option<f64>,
    #[serde(default)]
    pub protocol: Option<ProtocolSpec>,
    #[serde(default)]
    pub localize: Option<LocalizeSpec>,
    #[serde(default)]
    pub follow: Option<FollowSpec>,
    #[serde(default)]
    pub bounds: Bounds,
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub tx_position_m: [f64; 2],
    pub rx_antennas_m: Vec<[f64; 2]>,
    #[serde(default)]
    pub reflectors: Vec<ReflectorSpec>,
}

/// A reflector either placed explicitly or positioned so the bounce path
/// tx -> reflector -> first antenna has an exact length.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectorSpec {
    #[serde(default)]
    pub position_m: Option<[f64; 2]>,
    #[serde(default)]
    pub path_length_m: Option<f64>,
    pub coefficient: [f64; 2],
}

impl SceneSpec {
    pub fn build(&self) -> Result<Scene> {
        let mut reflectors = Vec::with_capacity(self.reflectors.len());
        for r in &self.reflectors {
            let coefficient = complex(r.coefficient);
            let reflector = match (r.position_m, r.path_length_m) {
                (Some(position), None) => Reflector {
                    position,
                    coefficient,
                },
                (None, Some(len)) => Reflector::for_path_length(
                    self.tx_position_m,
                    self.rx_antennas_m[0],
                    len,
                    coefficient,
                )?,
                _ => {
                    return Err(Error::InvalidConfig(
                        "reflector needs exactly one of position_m / path_length_m".into(),
                    ))
                }
            };
            reflectors.push(reflector);
        }
        let scene = Scene {
            tx_position: self.tx_position_m,
            rx_antennas: self.rx_antennas_m.clone(),
            reflectors,
        };
        scene.validate()?;
        Ok(scene)
    }
}

/// Per-trial random geometry: the transmitter lands uniformly in a distance
/// annulus around the antenna centroid, and each reflector adds a bounce
/// path longer than the direct one by a uniform excess.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSceneSpec {
    pub direct_range_m: [f64; 2],
    #[serde(default = "default_extra_path")]
    pub extra_path_m: [f64; 2],
    #[serde(default)]
    pub reflector_count: usize,
    #[serde(default = "default_coeff_range")]
    pub coefficient_mag_range: [f64; 2],
    #[serde(default = "default_antennas")]
    pub rx_antennas_m: Vec<[f64; 2]>,
}

fn default_extra_path() -> [f64; 2] {
    [0.5, 10.0]
}

fn default_coeff_range() -> [f64; 2] {
    [0.3, 1.0]
}

fn default_antennas() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0]]
}

impl RandomSceneSpec {
    pub fn build(&self, rng: &mut ChaCha8Rng) -> Result<Scene> {
        let cx = self.rx_antennas_m.iter().map(|a| a[0]).sum::<f64>()
            / self.rx_antennas_m.len() as f64;
        let cy = self.rx_antennas_m.iter().map(|a| a[1]).sum::<f64>()
            / self.rx_antennas_m.len() as f64;
        let d0 = rng.gen_range(self.direct_range_m[0]..=self.direct_range_m[1]);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let tx = [cx + d0 * theta.cos(), cy + d0 * theta.sin()];
        let mut reflectors = Vec::with_capacity(self.reflector_count);
        for _ in 0..self.reflector_count {
            let extra = rng.gen_range(self.extra_path_m[0]..=self.extra_path_m[1]);
            let mag =
                rng.gen_range(self.coefficient_mag_range[0]..=self.coefficient_mag_range[1]);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let direct = ((tx[0] - self.rx_antennas_m[0][0]).powi(2)
                + (tx[1] - self.rx_antennas_m[0][1]).powi(2))
            .sqrt();
            reflectors.push(Reflector::for_path_length(
                tx,
                self.rx_antennas_m[0],
                direct + extra,
                Complex64::from_polar(mag, phase),
            )?);
        }
        let scene = Scene {
            tx_position: tx,
            rx_antennas: self.rx_antennas_m.clone(),
            reflectors,
        };
        scene.validate()?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ImpairmentSpec {
    #[serde(default)]
    pub detection_delay_median_ns: f64,
    #[serde(default)]
    pub detection_delay_stddev_ns: f64,
    /// Fixed CFO in Hz; mutually exclusive with `cfo_ppm`.
    #[serde(default)]
    pub cfo_hz: Option<f64>,
    /// CFO drawn uniformly in +-ppm of each band's carrier per hop.
    #[serde(default)]
    pub cfo_ppm: Option<f64>,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub kappa: Option<[f64; 2]>,
    #[serde(default)]
    pub fwd_rev_gap_us: f64,
    #[serde(default)]
    pub hardware_delay_ns: f64,
}

impl ImpairmentSpec {
    pub fn build(&self) -> Result<ImpairmentConfig> {
        let cfo = match (self.cfo_hz, self.cfo_ppm) {
            (None, None) => CfoModel::Off,
            (Some(hz), None) => CfoModel::Fixed { hz },
            (None, Some(ppm)) => CfoModel::UniformPpm { ppm },
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfig(
                    "set at most one of cfo_hz / cfo_ppm".into(),
                ))
            }
        };
        Ok(ImpairmentConfig {
            detection_delay_median: self.detection_delay_median_ns * 1e-9,
            detection_delay_stddev: self.detection_delay_stddev_ns * 1e-9,
            cfo,
            snr_db: self.snr_db,
            kappa: self.kappa.map_or(Complex64::new(1.0, 0.0), complex),
            fwd_rev_gap: self.fwd_rev_gap_us * 1e-6,
            hardware_delay: self.hardware_delay_ns * 1e-9,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub band_dwell_ms: f64,
    pub packets_per_band: usize,
    pub packet_spacing_us: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            band_dwell_ms: 2.4,
            packets_per_band: 3,
            packet_spacing_us: 400.0,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> SweepSchedule {
        SweepSchedule {
            band_dwell: self.band_dwell_ms * 1e-3,
            packets_per_band: self.packets_per_band,
            packet_spacing: self.packet_spacing_us * 1e-6,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    /// "raw" (exponent 1), "reciprocity" (2), or "quartic" (4).
    pub combine: String,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        PipelineSpec {
            combine: "reciprocity".into(),
        }
    }
}

impl PipelineSpec {
    pub fn mode(&self) -> Result<CombineMode> {
        match self.combine.as_str() {
            "raw" => Ok(CombineMode::Raw),
            "reciprocity" => Ok(CombineMode::Reciprocity),
            "quartic" => Ok(CombineMode::Quartic),
            other => Err(Error::InvalidConfig(format!(
                "unknown combine mode {other:?} (raw|reciprocity|quartic)"
            ))),
        }
    }

    pub fn build(&self, kappa: Complex64) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            mode: self.mode()?,
            kappa,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub tau_min_ns: f64,
    pub tau_max_ns: f64,
    pub step_ns: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            tau_min_ns: 0.0,
            tau_max_ns: 200.0,
            step_ns: 0.05,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<DelayGrid> {
        DelayGrid::new(
            self.tau_min_ns * 1e-9,
            self.tau_max_ns * 1e-9,
            self.step_ns * 1e-9,
        )
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_alpha_scale")]
    pub alpha_scale: f64,
    #[serde(default = "default_epsilon_scale")]
    pub epsilon_scale: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_peak_frac")]
    pub peak_threshold_frac: f64,
    #[serde(default = "default_crt_tol")]
    pub crt_phase_tolerance_rad: f64,
}

fn default_alpha_scale() -> f64 {
    0.1
}
fn default_epsilon_scale() -> f64 {
    1e-6
}
fn default_max_iters() -> usize {
    20_000
}
fn default_peak_frac() -> f64 {
    0.2
}
fn default_crt_tol() -> f64 {
    0.3
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            grid: GridSpec::default(),
            alpha: None,
            alpha_scale: default_alpha_scale(),
            epsilon_scale: default_epsilon_scale(),
            max_iters: default_max_iters(),
            peak_threshold_frac: default_peak_frac(),
            crt_phase_tolerance_rad: default_crt_tol(),
        }
    }
}

impl SolverSpec {
    pub fn build(&self) -> SolverConfig {
        SolverConfig {
            alpha: self.alpha,
            alpha_scale: self.alpha_scale,
            epsilon: None,
            epsilon_scale: self.epsilon_scale,
            max_iters: self.max_iters,
            peak_threshold_frac: self.peak_threshold_frac,
        }
    }
}

/// Output of a `calibrate` run, consumed by later runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    pub kappa: [f64; 2],
    pub tof_offset_ns: f64,
}

impl CalibrationRecord {
    pub fn kappa_complex(&self) -> Complex64 {
        complex(self.kappa)
    }

    pub fn tof_offset(&self) -> f64 {
        self.tof_offset_ns * 1e-9
    }
}

impl Default for CalibrationRecord {
    fn default() -> Self {
        CalibrationRecord {
            kappa: [1.0, 0.0],
            tof_offset_ns: 0.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    #[serde(default = "default_dwell_ms")]
    pub dwell_ms: f64,
    #[serde(default = "default_ack_timeout_ms")]
    pub ack_timeout_ms: f64,
    #[serde(default)]
    pub retune_latency_us: f64,
    #[serde(default)]
    pub default_band: usize,
    #[serde(default)]
    pub loss_probability: f64,
    #[serde(default = "default_airtime_us")]
    pub control_airtime_us: f64,
    #[serde(default = "default_turnaround_us")]
    pub ack_turnaround_us: f64,
}

fn default_dwell_ms() -> f64 {
    2.4
}
fn default_ack_timeout_ms() -> f64 {
    1.0
}
fn default_airtime_us() -> f64 {
    100.0
}
fn default_turnaround_us() -> f64 {
    50.0
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec {
            dwell_ms: default_dwell_ms(),
            ack_timeout_ms: default_ack_timeout_ms(),
            retune_latency_us: 0.0,
            default_band: 0,
            loss_probability: 0.0,
            control_airtime_us: default_airtime_us(),
            ack_turnaround_us: default_turnaround_us(),
        }
    }
}

impl ProtocolSpec {
    pub fn build(&self) -> ProtocolConfig {
        ProtocolConfig {
            dwell: self.dwell_ms * 1e-3,
            ack_timeout: self.ack_timeout_ms * 1e-3,
            retune_latency: self.retune_latency_us * 1e-6,
            default_band: self.default_band,
            loss_probability: self.loss_probability,
            control_airtime: self.control_airtime_us * 1e-6,
            ack_turnaround: self.ack_turnaround_us * 1e-6,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizeSpec {
    /// Receive-antenna anchor positions.
    pub anchors_m: Vec<[f64; 2]>,
    /// True positions fall uniformly in this distance annulus around the
    /// anchor centroid.
    pub range_m: [f64; 2],
    /// Synthetic mode: per-anchor Gaussian distance noise (fast). Absent
    /// means every trial runs the full CSI pipeline per antenna.
    #[serde(default)]
    pub distance_noise_sigma_m: Option<f64>,
    #[serde(default)]
    pub outlier_slack_frac: Option<f64>,
    #[serde(default)]
    pub outlier_slack_abs_m: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FollowSpec {
    /// Inline `[t, x, y]` waypoints.
    pub trajectory: Vec<[f64; 3]>,
    #[serde(default)]
    pub noise_sigma_m: f64,
    /// Heavy-tail component: fraction of measurements inflated by a gross
    /// positive error (a missed direct path).
    #[serde(default)]
    pub outlier_probability: f64,
    #[serde(default = "default_outlier_magnitude")]
    pub outlier_magnitude_m: [f64; 2],
    pub follower_start_m: [f64; 2],
    pub duration_s: f64,
    #[serde(default)]
    pub tracker: TrackerSpec,
}

fn default_outlier_magnitude() -> [f64; 2] {
    [1.0, 3.0]
}

impl FollowSpec {
    pub fn waypoints(&self) -> Vec<Waypoint> {
        self.trajectory
            .iter()
            .map(|w| Waypoint {
                t: w[0],
                x: w[1],
                y: w[2],
            })
            .collect()
    }

    pub fn noise(&self) -> crate::follow_controller::NoiseModel {
        crate::follow_controller::NoiseModel {
            sigma: self.noise_sigma_m,
            outlier_probability: self.outlier_probability,
            outlier_magnitude: self.outlier_magnitude_m,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerSpec {
    #[serde(default = "default_target_m")]
    pub target_distance_m: f64,
    #[serde(default = "default_gain")]
    pub step_gain: f64,
    #[serde(default = "default_max_step_m")]
    pub max_step_m: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_outlier_sigma")]
    pub outlier_sigma: f64,
    #[serde(default = "default_rate_hz")]
    pub rate_hz: f64,
}

fn default_target_m() -> f64 {
    1.4
}
fn default_gain() -> f64 {
    0.6
}
fn default_max_step_m() -> f64 {
    0.25
}
fn default_window() -> usize {
    12
}
fn default_outlier_sigma() -> f64 {
    5.0
}
fn default_rate_hz() -> f64 {
    12.0
}

impl Default for TrackerSpec {
    fn default() -> Self {
        TrackerSpec {
            target_distance_m: default_target_m(),
            step_gain: default_gain(),
            max_step_m: default_max_step_m(),
            window: default_window(),
            outlier_sigma: default_outlier_sigma(),
            rate_hz: default_rate_hz(),
        }
    }
}

impl TrackerSpec {
    pub fn build(&self) -> TrackerConfig {
        TrackerConfig {
            target_distance: self.target_distance_m,
            step_gain: self.step_gain,
            max_step: self.max_step_m,
            window: self.window,
            outlier_sigma: self.outlier_sigma,
            rate_hz: self.rate_hz,
        }
    }
}

/// Acceptance bounds checked after a run; the process exits nonzero when
/// any bound present in the scenario is violated.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    #[serde(default)]
    pub median_tof_error_ns_max: Option<f64>,
    #[serde(default)]
    pub p95_tof_error_ns_max: Option<f64>,
    #[serde(default)]
    pub median_position_error_m_max: Option<f64>,
    #[serde(default)]
    pub median_sweep_ms_max: Option<f64>,
    #[serde(default)]
    pub require_synchronized: Option<bool>,
    #[serde(default)]
    pub rmse_m_max: Option<f64>,
    #[serde(default)]
    pub median_rmse_m_max: Option<f64>,
}

impl Scenario {
    pub fn band_plan(&self) -> Result<BandPlan> {
        match &self.band_plan {
            Some(plan) => {
                plan.validate()?;
                Ok(plan.clone())
            }
            None => Ok(crate::band_plan::default_band_plan()),
        }
    }
}
