//! Experiment runners: load a scenario, fan seeded trials out over workers,
//! write per-trial CSV plus one JSON summary, and flag violated bounds.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;

use super::scenario::{CalibrationRecord, LocalizeSpec, Scenario};
use crate::band_plan::BandPlan;
use crate::channel_sim::{synthesize_sweep, Scene};
use crate::csi_pipeline::{process_sweep, BandChannel, CombineMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::follow_controller::{simulate_follow, write_trajectory_csv};
use crate::hop_protocol::run_sweep;
use crate::localization::{
    distances_from_tofs, geometric_outlier_reject, localize, DistanceSet, OutlierConfig,
};
use crate::math::{derive_seed, median, quantile, wrap_phase};
use crate::tof_solver::{
    crt_estimate, dominant_peaks, first_peak, invert_ndft_with, NdftOperator, SolverConfig,
    ToFEstimate,
};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Tof,
    Profile,
    Localize,
    Sweep,
    Follow,
    Calibrate,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tof" => Ok(ExperimentKind::Tof),
            "profile" => Ok(ExperimentKind::Profile),
            "localize" => Ok(ExperimentKind::Localize),
            "sweep" => Ok(ExperimentKind::Sweep),
            "follow" => Ok(ExperimentKind::Follow),
            "calibrate" => Ok(ExperimentKind::Calibrate),
            other => Err(Error::InvalidConfig(format!(
                "unknown experiment kind {other:?}"
            ))),
        }
    }
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Tof => "tof",
            ExperimentKind::Profile => "profile",
            ExperimentKind::Localize => "localize",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Follow => "follow",
            ExperimentKind::Calibrate => "calibrate",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario_path: PathBuf,
    pub kind: ExperimentKind,
    /// Overrides the scenario's trial count.
    pub trials: Option<usize>,
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Dotted-path JSON overrides applied before parsing,
    /// e.g. `("solver.alpha_scale", "0.01")`.
    pub overrides: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: Value,
    /// False when any bound present in the scenario was violated.
    pub bounds_ok: bool,
    pub artifacts: Vec<PathBuf>,
}

/// Load, run, and write one experiment.
pub fn run(spec: &ExperimentSpec) -> Result<RunReport> {
    let text = fs::read_to_string(&spec.scenario_path).map_err(|e| Error::Scenario {
        path: spec.scenario_path.display().to_string(),
        msg: e.to_string(),
    })?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::Scenario {
        path: spec.scenario_path.display().to_string(),
        msg: format!("JSON parse error at line {}, column {}: {e}", e.line(), e.column()),
    })?;
    for (path, raw) in &spec.overrides {
        apply_override(&mut value, path, raw)?;
    }
    let mut scenario: Scenario =
        serde_json::from_value(value).map_err(|e| Error::Scenario {
            path: spec.scenario_path.display().to_string(),
            msg: e.to_string(),
        })?;
    if let Some(trials) = spec.trials {
        scenario.trials = trials;
    }
    if let Some(seed) = spec.seed {
        scenario.seed = seed;
    }
    if scenario.trials == 0 {
        return Err(Error::InvalidConfig("trial count must be >= 1".into()));
    }

    let outcome = match spec.kind {
        ExperimentKind::Tof => run_tof(&scenario)?,
        ExperimentKind::Profile => run_profile(&scenario)?,
        ExperimentKind::Localize => run_localize(&scenario)?,
        ExperimentKind::Sweep => run_sweep_experiment(&scenario)?,
        ExperimentKind::Follow => run_follow(&scenario)?,
        ExperimentKind::Calibrate => run_calibrate(&scenario)?,
    };

    fs::create_dir_all(&spec.out_dir)?;
    let mut artifacts = Vec::new();
    for (name, content) in &outcome.files {
        let path = spec.out_dir.join(name);
        fs::write(&path, content)?;
        artifacts.push(path);
    }
    let summary = json!({
        "experiment": spec.kind.as_str(),
        "scenario": scenario.name,
        "trials": scenario.trials,
        "seed": scenario.seed,
        "metrics": outcome.metrics,
        "bounds": {
            "ok": outcome.violated.is_empty(),
            "violated": outcome.violated,
        },
    });
    let summary_path = spec.out_dir.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    artifacts.push(summary_path);
    Ok(RunReport {
        bounds_ok: outcome.violated.is_empty(),
        summary,
        artifacts,
    })
}

/// Set a dotted-path field in the scenario JSON. The raw value is parsed as
/// JSON when possible, else taken as a string.
fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let parsed: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        let obj = cursor.as_object_mut().ok_or_else(|| {
            Error::InvalidConfig(format!("override path {path:?}: {segment:?} is not an object"))
        })?;
        if last {
            obj.insert(segment.to_string(), parsed);
            return Ok(());
        }
        cursor = obj
            .entry(segment.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

struct Outcome {
    files: Vec<(String, String)>,
    metrics: Value,
    violated: Vec<String>,
}

/// Everything needed to run scene -> sweep -> pipeline -> solver once.
struct TofContext {
    plan: BandPlan,
    operator: NdftOperator,
    solver: SolverConfig,
    pipeline: PipelineConfig,
    crt_tolerance: f64,
    calibration: CalibrationRecord,
}

impl TofContext {
    fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let plan = scenario.band_plan()?;
        let grid = scenario.solver.grid.build()?;
        let operator = NdftOperator::new(&plan.center_frequencies(), grid)?;
        let calibration = scenario.calibration.unwrap_or_default();
        let pipeline = scenario.pipeline.build(calibration.kappa_complex())?;
        Ok(TofContext {
            plan,
            operator,
            solver: scenario.solver.build(),
            pipeline,
            crt_tolerance: scenario.solver.crt_phase_tolerance_rad,
            calibration,
        })
    }
}

struct TofTrial {
    true_tof: f64,
    est: ToFEstimate,
    est_tof: f64,
    crt_tof: f64,
    converged: bool,
}

/// One full pipeline pass for one antenna link.
fn tof_trial(
    ctx: &TofContext,
    scenario: &Scenario,
    scene: &Scene,
    antenna: usize,
    sweep_seed: u64,
) -> Result<TofTrial> {
    let sweeps = synthesize_sweep(
        scene,
        &ctx.plan,
        &scenario.impairments.build()?,
        &scenario.schedule.build(),
        sweep_seed,
    )?;
    let channels = process_sweep(&sweeps[antenna], &ctx.pipeline)?;
    let (h, exponent) = channel_vector(&channels)?;
    let profile = invert_ndft_with(&ctx.operator, &h, &ctx.solver, exponent)?;
    let est = first_peak(&profile, &ctx.solver)?;
    let est_tof = est.seconds - ctx.calibration.tof_offset();
    let phases: Vec<f64> = h.iter().map(|c| c.arg()).collect();
    let crt = crt_estimate(
        &phases,
        ctx.operator.frequencies(),
        ctx.operator.grid(),
        ctx.crt_tolerance,
    )?;
    let crt_tof = crt.seconds / f64::from(exponent) - ctx.calibration.tof_offset();
    Ok(TofTrial {
        true_tof: scene.direct_delay(antenna)?,
        est_tof,
        crt_tof,
        converged: profile.diagnostics.converged,
        est,
    })
}

fn channel_vector(channels: &[BandChannel]) -> Result<(Vec<Complex64>, u32)> {
    let exponent = channels.first().ok_or(Error::EmptyCombine)?.exponent;
    let h = channels.iter().map(|c| c.value).collect();
    Ok((h, exponent))
}

fn trial_scene(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Result<Scene> {
    match (&scenario.scene, &scenario.random_scene) {
        (Some(spec), None) => spec.build(),
        (None, Some(spec)) => spec.build(rng),
        (Some(_), Some(_)) => Err(Error::InvalidConfig(
            "set exactly one of scene / random_scene".into(),
        )),
        (None, None) => Err(Error::InvalidConfig(
            "experiment needs a scene or random_scene".into(),
        )),
    }
}

fn run_tof(scenario: &Scenario) -> Result<Outcome> {
    let ctx = TofContext::from_scenario(scenario)?;
    let rows: Result<Vec<TofTrial>> = (0..scenario.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, trial as u64));
            let scene = trial_scene(scenario, &mut rng)?;
            let sweep_seed = rng.gen();
            tof_trial(&ctx, scenario, &scene, 0, sweep_seed)
        })
        .collect();
    let rows = rows?;

    let mut csv = String::from(
        "trial,true_tof_ns,est_tof_ns,error_ns,crt_tof_ns,crt_error_ns,peak_count,converged\n",
    );
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            i,
            r.true_tof * 1e9,
            r.est_tof * 1e9,
            (r.est_tof - r.true_tof) * 1e9,
            r.crt_tof * 1e9,
            (r.crt_tof - r.true_tof) * 1e9,
            r.est.profile_peak_count,
            r.converged,
        );
    }

    let abs_err: Vec<f64> = rows
        .iter()
        .map(|r| (r.est_tof - r.true_tof).abs() * 1e9)
        .collect();
    let crt_err: Vec<f64> = rows
        .iter()
        .map(|r| (r.crt_tof - r.true_tof).abs() * 1e9)
        .collect();
    let peak_counts: Vec<f64> = rows.iter().map(|r| r.est.profile_peak_count as f64).collect();
    let metrics = json!({
        "median_abs_error_ns": median(&abs_err),
        "p95_abs_error_ns": quantile(&abs_err, 0.95),
        "crt_median_abs_error_ns": median(&crt_err),
        "crt_p95_abs_error_ns": quantile(&crt_err, 0.95),
        "mean_dominant_peaks": peak_counts.iter().sum::<f64>() / peak_counts.len() as f64,
        "converged_fraction":
            rows.iter().filter(|r| r.converged).count() as f64 / rows.len() as f64,
    });

    let mut violated = Vec::new();
    if let Some(bound) = scenario.bounds.median_tof_error_ns_max {
        if median(&abs_err) > bound {
            violated.push("median_tof_error_ns_max".to_string());
        }
    }
    if let Some(bound) = scenario.bounds.p95_tof_error_ns_max {
        if quantile(&abs_err, 0.95) > bound {
            violated.push("p95_tof_error_ns_max".to_string());
        }
    }
    Ok(Outcome {
        files: vec![("tof.csv".into(), csv)],
        metrics,
        violated,
    })
}

fn run_profile(scenario: &Scenario) -> Result<Outcome> {
    let ctx = TofContext::from_scenario(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, 0));
    let scene = trial_scene(scenario, &mut rng)?;
    let sweep_seed = rng.gen();
    let sweeps = synthesize_sweep(
        &scene,
        &ctx.plan,
        &scenario.impairments.build()?,
        &scenario.schedule.build(),
        sweep_seed,
    )?;
    let channels = process_sweep(&sweeps[0], &ctx.pipeline)?;
    let (h, exponent) = channel_vector(&channels)?;
    let profile = invert_ndft_with(&ctx.operator, &h, &ctx.solver, exponent)?;
    let est = first_peak(&profile, &ctx.solver)?;
    let peaks = dominant_peaks(&profile, ctx.solver.peak_threshold_frac);

    let mut profile_csv = Vec::new();
    profile.write_csv(&mut profile_csv)?;
    let metrics = json!({
        "tof_ns": (est.seconds - ctx.calibration.tof_offset()) * 1e9,
        "exponent": exponent,
        "peaks": peaks
            .iter()
            .map(|&(tau, mag)| json!({"tau_ns": tau * 1e9, "magnitude": mag}))
            .collect::<Vec<_>>(),
        "converged": profile.diagnostics.converged,
        "iterations": profile.diagnostics.iterations,
        "nonzero_fraction": profile.nonzero_fraction(),
    });
    Ok(Outcome {
        files: vec![(
            "profile.csv".into(),
            String::from_utf8(profile_csv).expect("utf8 csv"),
        )],
        metrics,
        violated: Vec::new(),
    })
}

struct LocalizeTrial {
    truth: [f64; 2],
    est: [f64; 2],
    error: f64,
}

fn run_localize(scenario: &Scenario) -> Result<Outcome> {
    let spec = scenario
        .localize
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("localize experiment needs a localize section".into()))?;
    if spec.anchors_m.len() < 2 {
        return Err(Error::InvalidConfig("localize needs >= 2 anchors".into()));
    }
    let outlier = OutlierConfig {
        slack_frac: spec.outlier_slack_frac.unwrap_or(0.10),
        slack_abs: spec.outlier_slack_abs_m.unwrap_or(0.10),
    };
    let rows: Result<Vec<LocalizeTrial>> = (0..scenario.trials)
        .into_par_iter()
        .map(|trial| localize_trial(scenario, spec, &outlier, trial))
        .collect();
    let rows = rows?;

    let mut csv = String::from("trial,true_x_m,true_y_m,est_x_m,est_y_m,error_m\n");
    for (i, r) in rows.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            i, r.truth[0], r.truth[1], r.est[0], r.est[1], r.error
        );
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let metrics = json!({
        "median_error_m": median(&errors),
        "p95_error_m": quantile(&errors, 0.95),
    });
    let mut violated = Vec::new();
    if let Some(bound) = scenario.bounds.median_position_error_m_max {
        if median(&errors) > bound {
            violated.push("median_position_error_m_max".to_string());
        }
    }
    Ok(Outcome {
        files: vec![("localize.csv".into(), csv)],
        metrics,
        violated,
    })
}

fn localize_trial(
    scenario: &Scenario,
    spec: &LocalizeSpec,
    outlier: &OutlierConfig,
    trial: usize,
) -> Result<LocalizeTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, trial as u64));
    let anchors = &spec.anchors_m;
    let cx = anchors.iter().map(|a| a[0]).sum::<f64>() / anchors.len() as f64;
    let cy = anchors.iter().map(|a| a[1]).sum::<f64>() / anchors.len() as f64;
    let r = rng.gen_range(spec.range_m[0]..=spec.range_m[1]);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let truth = [cx + r * theta.cos(), cy + r * theta.sin()];

    let distances = match spec.distance_noise_sigma_m {
        Some(sigma) => {
            // Synthetic mode: true distances plus Gaussian noise standing in
            // for the ToF pipeline's error distribution.
            use rand_distr::{Distribution, Normal};
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            DistanceSet {
                entries: anchors
                    .iter()
                    .enumerate()
                    .map(|(i, a)| crate::localization::DistanceEntry {
                        rx_antenna: i,
                        tx_antenna: 0,
                        meters: (((truth[0] - a[0]).powi(2) + (truth[1] - a[1]).powi(2)).sqrt()
                            + normal.sample(&mut rng))
                        .max(0.0),
                        confidence: 1.0,
                    })
                    .collect(),
            }
        }
        None => {
            // Full pipeline: per-antenna CSI sweeps through the solver.
            let ctx = TofContext::from_scenario(scenario)?;
            let scene = Scene {
                tx_position: truth,
                rx_antennas: anchors.clone(),
                reflectors: Vec::new(),
            };
            let sweep_seed = rng.gen();
            let mut estimates = Vec::with_capacity(anchors.len());
            for antenna in 0..anchors.len() {
                let t = tof_trial(&ctx, scenario, &scene, antenna, sweep_seed)?;
                let mut est = t.est;
                est.seconds = t.est_tof;
                estimates.push((antenna, 0usize, est));
            }
            distances_from_tofs(&estimates, 0.0)
        }
    };

    // Outlier rejection is a best-effort filter: when it cannot keep two
    // consistent entries the raw set goes to the least-squares stage.
    let filtered = match geometric_outlier_reject(&distances, anchors, &[[0.0, 0.0]], outlier) {
        Ok(set) => set,
        Err(Error::InsufficientDistances { .. }) => distances.clone(),
        Err(e) => return Err(e),
    };
    let (pos, _) = localize(&filtered, anchors)?;
    let error = ((pos.x - truth[0]).powi(2) + (pos.y - truth[1]).powi(2)).sqrt();
    Ok(LocalizeTrial {
        truth,
        est: [pos.x, pos.y],
        error,
    })
}

fn run_sweep_experiment(scenario: &Scenario) -> Result<Outcome> {
    let plan = scenario.band_plan()?;
    let config = scenario.protocol.clone().unwrap_or_default().build();
    let mut csv = String::from("trial,duration_ms,timeouts,reverted,synchronized\n");
    let mut durations = Vec::with_capacity(scenario.trials);
    let mut all_synchronized = true;
    let mut total_timeouts = 0usize;
    let mut events_csv = None;
    for trial in 0..scenario.trials {
        let trace = run_sweep(&plan, &config, derive_seed(scenario.seed, trial as u64))?;
        if trial == 0 {
            let mut buf = Vec::new();
            trace.write_events_csv(&mut buf)?;
            events_csv = Some(String::from_utf8(buf).expect("utf8 csv"));
        }
        all_synchronized &= trace.synchronized_end;
        total_timeouts += trace.timeouts;
        durations.push(trace.total_duration * 1e3);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            trial,
            trace.total_duration * 1e3,
            trace.timeouts,
            trace.reverted_to_default,
            trace.synchronized_end
        );
    }
    let metrics = json!({
        "median_ms": median(&durations),
        "p95_ms": quantile(&durations, 0.95),
        "max_ms": quantile(&durations, 1.0),
        "all_synchronized": all_synchronized,
        "total_timeouts": total_timeouts,
        // Air time a data flow loses to one localization request.
        "airtime_stolen_per_request_ms": median(&durations),
    });
    let mut violated = Vec::new();
    if let Some(bound) = scenario.bounds.median_sweep_ms_max {
        if median(&durations) > bound {
            violated.push("median_sweep_ms_max".to_string());
        }
    }
    if scenario.bounds.require_synchronized == Some(true) && !all_synchronized {
        violated.push("require_synchronized".to_string());
    }
    let mut files = vec![("sweep.csv".into(), csv)];
    if let Some(events) = events_csv {
        files.push(("events.csv".into(), events));
    }
    Ok(Outcome {
        files,
        metrics,
        violated,
    })
}

fn run_follow(scenario: &Scenario) -> Result<Outcome> {
    let spec = scenario
        .follow
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("follow experiment needs a follow section".into()))?;
    let waypoints = spec.waypoints();
    let tracker = spec.tracker.build();
    let mut runs_csv = String::from("trial,rmse_m\n");
    let mut rmses = Vec::with_capacity(scenario.trials);
    let mut trace_csv = None;
    for trial in 0..scenario.trials {
        let trace = simulate_follow(
            &waypoints,
            &spec.noise(),
            spec.follower_start_m,
            spec.duration_s,
            &tracker,
            derive_seed(scenario.seed, trial as u64),
        )?;
        if trial == 0 {
            let mut csv = String::from(
                "time_s,true_distance_m,measured_m,command_m,follower_x_m,follower_y_m,device_x_m,device_y_m\n",
            );
            for t in &trace.ticks {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{}",
                    t.time,
                    t.true_distance,
                    t.measured_distance,
                    t.command,
                    t.follower[0],
                    t.follower[1],
                    t.device[0],
                    t.device[1]
                );
            }
            trace_csv = Some(csv);
        }
        rmses.push(trace.rmse);
        let _ = writeln!(runs_csv, "{},{}", trial, trace.rmse);
    }
    let metrics = json!({
        "rmse_m": rmses[0],
        "median_rmse_m": median(&rmses),
    });
    let mut violated = Vec::new();
    if let Some(bound) = scenario.bounds.rmse_m_max {
        if rmses[0] > bound {
            violated.push("rmse_m_max".to_string());
        }
    }
    if let Some(bound) = scenario.bounds.median_rmse_m_max {
        if median(&rmses) > bound {
            violated.push("median_rmse_m_max".to_string());
        }
    }
    let mut trajectory_csv = Vec::new();
    write_trajectory_csv(&waypoints, &mut trajectory_csv)?;
    let mut files = vec![
        ("runs.csv".into(), runs_csv),
        (
            "trajectory.csv".into(),
            String::from_utf8(trajectory_csv).expect("utf8 csv"),
        ),
    ];
    if let Some(trace) = trace_csv {
        files.push(("trace.csv".into(), trace));
    }
    Ok(Outcome {
        files,
        metrics,
        violated,
    })
}

/// One-time calibration against a device at a known distance: estimate the
/// constant ToF offset (front-end delays) and the reciprocity constant
/// kappa, and write a calibration record for later runs.
fn run_calibrate(scenario: &Scenario) -> Result<Outcome> {
    let known_distance = scenario.known_distance_m.ok_or_else(|| {
        Error::InvalidConfig("calibrate experiment needs known_distance_m".into())
    })?;
    let plan = scenario.band_plan()?;
    let grid = scenario.solver.grid.build()?;
    let operator = NdftOperator::new(&plan.center_frequencies(), grid)?;
    let solver = scenario.solver.build();
    // Calibration runs uncalibrated: kappa = 1 into the reciprocity product.
    let pipeline = PipelineConfig {
        mode: scenario.pipeline.mode()?,
        kappa: Complex64::new(1.0, 0.0),
    };
    if pipeline.mode != CombineMode::Reciprocity {
        return Err(Error::InvalidConfig(
            "calibrate runs use combine = \"reciprocity\"".into(),
        ));
    }
    let scene = match &scenario.scene {
        Some(spec) => spec.build()?,
        None => Scene {
            tx_position: [known_distance, 0.0],
            rx_antennas: vec![[0.0, 0.0]],
            reflectors: Vec::new(),
        },
    };
    let tau_known = known_distance / SPEED_OF_LIGHT;
    let amplitude = 1.0 / known_distance;

    let mut kappas = Vec::with_capacity(scenario.trials);
    let mut offsets = Vec::with_capacity(scenario.trials);
    for trial in 0..scenario.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, trial as u64));
        let sweep_seed = rng.gen();
        let sweeps = synthesize_sweep(
            &scene,
            &plan,
            &scenario.impairments.build()?,
            &scenario.schedule.build(),
            sweep_seed,
        )?;
        let channels = process_sweep(&sweeps[0], &pipeline)?;
        let (h, exponent) = channel_vector(&channels)?;
        let e = f64::from(exponent);
        let profile = invert_ndft_with(&operator, &h, &solver, exponent)?;
        let coarse_total = first_peak(&profile, &solver)?.seconds;

        // Refine the total delay below the grid step: after removing the
        // coarse delay, the residual phase is linear in frequency with the
        // kappa phase as intercept.
        let freqs = operator.frequencies();
        let f_mean = freqs.iter().sum::<f64>() / freqs.len() as f64;
        let residuals: Vec<f64> = h
            .iter()
            .zip(freqs)
            .map(|(v, &f)| {
                wrap_phase(v.arg() + 2.0 * std::f64::consts::PI * f * e * coarse_total)
            })
            .collect();
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (&f, &ph) in freqs.iter().zip(&residuals) {
            let x = f - f_mean;
            sxx += x * x;
            sxy += x * ph;
        }
        let slope = sxy / sxx;
        let delta = -slope / (2.0 * std::f64::consts::PI * e);
        let total = coarse_total + delta;
        offsets.push(total - tau_known);

        // kappa = measured / predicted clean channel power.
        let kappa_est: Complex64 = h
            .iter()
            .zip(freqs)
            .map(|(v, &f)| {
                let pred = Complex64::from_polar(
                    amplitude.powf(e),
                    -2.0 * std::f64::consts::PI * f * e * total,
                );
                v / pred
            })
            .sum::<Complex64>()
            / freqs.len() as f64;
        kappas.push(kappa_est);
    }
    let kappa = kappas.iter().sum::<Complex64>() / kappas.len() as f64;
    let offset = offsets.iter().sum::<f64>() / offsets.len() as f64;
    let record = CalibrationRecord {
        kappa: [kappa.re, kappa.im],
        tof_offset_ns: offset * 1e9,
    };
    let metrics = json!({
        "kappa_re": kappa.re,
        "kappa_im": kappa.im,
        "kappa_magnitude": kappa.norm(),
        "kappa_phase_rad": kappa.arg(),
        "tof_offset_ns": record.tof_offset_ns,
    });
    Ok(Outcome {
        files: vec![(
            "calibration.json".into(),
            serde_json::to_string_pretty(&record)? + "\n",
        )],
        metrics,
        violated: Vec::new(),
    })
}
