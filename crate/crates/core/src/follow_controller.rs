//! Negative-feedback distance controller: keep a follower at a target
//! distance from a moving device using noisy distance measurements, with
//! windowed averaging and MAD outlier rejection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::math::{mad, median};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    /// Distance the follower holds to the device.
    pub target_distance: f64,
    /// Proportional gain on the distance error, in (0, 1].
    pub step_gain: f64,
    /// Largest displacement per control tick.
    pub max_step: f64,
    /// Measurements averaged per control decision.
    pub window: usize,
    /// Samples further than this many MADs from the window median are
    /// dropped before averaging.
    pub outlier_sigma: f64,
    /// Control rate; one sweep-derived measurement arrives per tick.
    pub rate_hz: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            target_distance: 1.4,
            step_gain: 0.6,
            max_step: 0.25,
            window: 12,
            outlier_sigma: 5.0,
            rate_hz: 12.0,
        }
    }
}

impl TrackerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.target_distance > 0.0) {
            return Err(Error::InvalidConfig("target_distance must be > 0".into()));
        }
        if !(self.step_gain > 0.0 && self.step_gain <= 1.0) {
            return Err(Error::InvalidConfig("step_gain must be in (0, 1]".into()));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be >= 1".into()));
        }
        if !(self.rate_hz > 0.0) {
            return Err(Error::InvalidConfig("rate_hz must be > 0".into()));
        }
        Ok(())
    }
}

/// Displacement along the follower-to-device bearing for one tick:
/// `clamp(gain * (measured - target), +-max_step)`. Positive moves toward
/// the device (measured too far), negative away.
pub fn controller_step(measured_distance: f64, config: &TrackerConfig) -> f64 {
    (config.step_gain * (measured_distance - config.target_distance))
        .clamp(-config.max_step, config.max_step)
}

/// Robust window estimate: drop samples beyond `outlier_sigma * MAD` of the
/// window median, then average the survivors. A zero MAD (constant window)
/// keeps only samples equal to the median.
pub fn robust_distance(window: &[f64], config: &TrackerConfig) -> f64 {
    assert!(!window.is_empty());
    let med = median(window);
    let spread = mad(window);
    let survivors: Vec<f64> = window
        .iter()
        .copied()
        .filter(|v| (v - med).abs() <= config.outlier_sigma * spread)
        .collect();
    if survivors.is_empty() {
        med
    } else {
        survivors.iter().sum::<f64>() / survivors.len() as f64
    }
}

/// A timestamped device waypoint; the device moves piecewise-linearly
/// between waypoints and parks at the last one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

/// Device position at time `t` along the waypoint path.
pub fn trajectory_position(waypoints: &[Waypoint], t: f64) -> [f64; 2] {
    assert!(!waypoints.is_empty());
    if t <= waypoints[0].t {
        return [waypoints[0].x, waypoints[0].y];
    }
    for w in waypoints.windows(2) {
        if t <= w[1].t {
            let span = w[1].t - w[0].t;
            let frac = if span > 0.0 { (t - w[0].t) / span } else { 1.0 };
            return [
                w[0].x + frac * (w[1].x - w[0].x),
                w[0].y + frac * (w[1].y - w[0].y),
            ];
        }
    }
    let last = waypoints.last().unwrap();
    [last.x, last.y]
}

/// Distance measurement error model: a Gaussian core plus occasional gross
/// outliers (a missed direct path inflates the distance by meters; this is
/// the tail the MAD rejection in [`robust_distance`] exists for).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    /// Probability that a measurement is an outlier.
    pub outlier_probability: f64,
    /// Outliers add a positive offset drawn uniformly from this range.
    pub outlier_magnitude: [f64; 2],
}

impl NoiseModel {
    pub fn gaussian(sigma: f64) -> Self {
        NoiseModel {
            sigma,
            outlier_probability: 0.0,
            outlier_magnitude: [0.0, 0.0],
        }
    }
}

/// One control tick of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowTick {
    pub time: f64,
    pub true_distance: f64,
    pub measured_distance: f64,
    pub command: f64,
    pub follower: [f64; 2],
    pub device: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowTrace {
    pub ticks: Vec<FollowTick>,
    /// RMS of (true distance - target) over all ticks.
    pub rmse: f64,
}

/// Closed-loop simulation: at each tick the follower measures its distance
/// to the device (true distance plus Gaussian noise), averages the recent
/// window robustly, and steps along the known bearing to the device.
/// `duration` is covered at `config.rate_hz`; deterministic per seed.
pub fn simulate_follow(
    trajectory: &[Waypoint],
    noise: &NoiseModel,
    follower_start: [f64; 2],
    duration: f64,
    config: &TrackerConfig,
    seed: u64,
) -> Result<FollowTrace> {
    config.validate()?;
    if trajectory.is_empty() {
        return Err(Error::InvalidConfig("trajectory needs >= 1 waypoint".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = if noise.sigma > 0.0 {
        Some(Normal::new(0.0, noise.sigma).expect("finite sigma"))
    } else {
        None
    };
    let dt = 1.0 / config.rate_hz;
    let steps = (duration / dt).floor() as usize;
    let mut follower = follower_start;
    let mut window: Vec<f64> = Vec::with_capacity(config.window);
    let mut ticks = Vec::with_capacity(steps);
    let mut sq_sum = 0.0;
    for i in 0..steps {
        let t = i as f64 * dt;
        let device = trajectory_position(trajectory, t);
        let dx = device[0] - follower[0];
        let dy = device[1] - follower[1];
        let true_distance = (dx * dx + dy * dy).sqrt();
        let mut measured =
            (true_distance + gaussian.map_or(0.0, |n| n.sample(&mut rng))).max(0.0);
        if noise.outlier_probability > 0.0 {
            use rand::Rng;
            if rng.gen_bool(noise.outlier_probability) {
                measured += rng.gen_range(noise.outlier_magnitude[0]..=noise.outlier_magnitude[1]);
            }
        }
        if window.len() == config.window {
            window.remove(0);
        }
        window.push(measured);
        let filtered = robust_distance(&window, config);
        let command = controller_step(filtered, config);
        // Step along the (known) bearing to the device.
        if true_distance > 1e-12 {
            follower[0] += command * dx / true_distance;
            follower[1] += command * dy / true_distance;
        }
        sq_sum += (true_distance - config.target_distance).powi(2);
        ticks.push(FollowTick {
            time: t,
            true_distance,
            measured_distance: measured,
            command,
            follower,
            device,
        });
    }
    let rmse = if ticks.is_empty() {
        0.0
    } else {
        (sq_sum / ticks.len() as f64).sqrt()
    };
    Ok(FollowTrace { ticks, rmse })
}

/// Trajectory CSV: `t,x,y` rows.
pub fn write_trajectory_csv<W: Write>(waypoints: &[Waypoint], mut w: W) -> Result<()> {
    writeln!(w, "t,x,y")?;
    for p in waypoints {
        writeln!(w, "{},{},{}", p.t, p.x, p.y)?;
    }
    Ok(())
}

/// Parse a `t,x,y` trajectory CSV.
pub fn read_trajectory_csv<R: BufRead>(r: R) -> Result<Vec<Waypoint>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "t,x,y" {
                return Err(Error::Csv {
                    line: 1,
                    msg: format!("unexpected header {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Csv {
                line: lineno + 1,
                msg: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::Csv {
                line: lineno + 1,
                msg: format!("bad number {s:?}"),
            })
        };
        out.push(Waypoint {
            t: parse(fields[0])?,
            x: parse(fields[1])?,
            y: parse(fields[2])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn controller_step_examples() {
        let config = TrackerConfig {
            step_gain: 0.5,
            max_step: 0.2,
            ..TrackerConfig::default()
        };
        assert_eq!(controller_step(config.target_distance, &config), 0.0);
        // Too far by 0.5 m: clamp to +0.2 toward the device.
        assert_eq!(controller_step(config.target_distance + 0.5, &config), 0.2);
        // Too close by 0.3 m: move 0.15 m away.
        assert!(
            (controller_step(config.target_distance - 0.3, &config) + 0.15).abs() < 1e-12
        );
    }

    #[test]
    fn robust_distance_examples() {
        let config = TrackerConfig::default();
        assert_eq!(robust_distance(&[1.4; 5], &config), 1.4);
        let mut w = vec![1.4; 9];
        w.push(6.0);
        assert!((robust_distance(&w, &config) - 1.4).abs() < 1e-12);
        assert_eq!(robust_distance(&[2.0], &config), 2.0);
    }

    #[test]
    fn robust_distance_estimator_stddev_shrinks() {
        // Gaussian sigma = 0.15, window 12: estimator stddev ~ 0.15/sqrt(12).
        use rand::Rng;
        let config = TrackerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 0.15).unwrap();
        let mut estimates = Vec::new();
        for _ in 0..800 {
            let w: Vec<f64> = (0..12).map(|_| 1.4 + normal.sample(&mut rng)).collect();
            estimates.push(robust_distance(&w, &config));
        }
        let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
        let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
            / estimates.len() as f64)
            .sqrt();
        let expected = 0.15 / 12f64.sqrt();
        assert!(sd > expected * 0.7 && sd < expected * 1.4, "sd {sd}");
        let _ = rng.gen::<u8>();
    }

    #[test]
    fn stationary_zero_noise_converges_geometrically() {
        // Geometric per-tick contraction is a single-sample property; a
        // wider window only adds lag, so the noiseless check runs window 1.
        let config = TrackerConfig {
            window: 1,
            ..TrackerConfig::default()
        };
        let traj = [Waypoint {
            t: 0.0,
            x: 0.0,
            y: 0.0,
        }];
        // Start 1 m too far.
        let trace = simulate_follow(
            &traj,
            &NoiseModel::gaussian(0.0),
            [config.target_distance + 1.0, 0.0],
            2.0,
            &config,
            0,
        )
        .unwrap();
        let err_at = |i: usize| (trace.ticks[i].true_distance - config.target_distance).abs();
        assert!(err_at(10) < 1e-3, "error after 10 ticks: {}", err_at(10));
        // Geometric contraction outside the clamp region.
        for i in 4..10 {
            assert!(err_at(i + 1) <= err_at(i) * (1.0 - config.step_gain) + 1e-12);
        }
    }

    #[test]
    fn averaging_window_beats_single_sample() {
        // Paired seeds: same device path and noise stream, window 12 vs 1.
        // The edge of the window comes from MAD rejection of the outlier
        // tail; the loop gain is sized for the window's group delay.
        let traj: Vec<Waypoint> = circle_walk(1.4, 1.0, 40.0);
        let noise = NoiseModel {
            sigma: 0.15,
            outlier_probability: 0.05,
            outlier_magnitude: [1.0, 3.0],
        };
        for seed in 0..5 {
            let mut config = TrackerConfig {
                step_gain: 0.15,
                ..TrackerConfig::default()
            };
            config.window = 12;
            let t12 = simulate_follow(&traj, &noise, [0.0, 0.0], 40.0, &config, seed).unwrap();
            config.window = 1;
            let t1 = simulate_follow(&traj, &noise, [0.0, 0.0], 40.0, &config, seed).unwrap();
            assert!(
                t12.rmse < t1.rmse,
                "window 12 rmse {} vs window 1 rmse {}",
                t12.rmse,
                t1.rmse
            );
            assert!(t12.rmse < 0.10, "window 12 rmse {}", t12.rmse);
        }
    }

    #[test]
    fn averaging_monotone_for_stationary_user() {
        // Wider windows never hurt a stationary user under outlier-bearing
        // noise (paired seeds).
        let traj = [Waypoint {
            t: 0.0,
            x: 0.0,
            y: 0.0,
        }];
        let noise = NoiseModel {
            sigma: 0.15,
            outlier_probability: 0.05,
            outlier_magnitude: [1.0, 3.0],
        };
        for seed in 0..4 {
            let mut last = f64::INFINITY;
            for window in [1usize, 4, 12] {
                let config = TrackerConfig {
                    step_gain: 0.15,
                    window,
                    ..TrackerConfig::default()
                };
                let trace =
                    simulate_follow(&traj, &noise, [1.4, 0.0], 60.0, &config, seed).unwrap();
                assert!(
                    trace.rmse <= last,
                    "seed {seed} window {window}: {} > {last}",
                    trace.rmse
                );
                last = trace.rmse;
            }
        }
    }

    /// Device walks a circle of radius `r` around the origin at `speed`.
    pub(crate) fn circle_walk(r: f64, speed: f64, duration: f64) -> Vec<Waypoint> {
        let n = (duration * 8.0) as usize;
        (0..=n)
            .map(|i| {
                let t = duration * i as f64 / n as f64;
                let theta = speed * t / r;
                Waypoint {
                    t,
                    x: r * theta.cos(),
                    y: r * theta.sin(),
                }
            })
            .collect()
    }

    #[test]
    fn trajectory_interpolation() {
        let traj = [
            Waypoint {
                t: 0.0,
                x: 0.0,
                y: 0.0,
            },
            Waypoint {
                t: 2.0,
                x: 4.0,
                y: 0.0,
            },
        ];
        assert_eq!(trajectory_position(&traj, -1.0), [0.0, 0.0]);
        assert_eq!(trajectory_position(&traj, 1.0), [2.0, 0.0]);
        assert_eq!(trajectory_position(&traj, 5.0), [4.0, 0.0]);
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let traj = circle_walk(1.0, 1.0, 3.0);
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let back = read_trajectory_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn invalid_configs_rejected() {
        let traj = [Waypoint {
            t: 0.0,
            x: 0.0,
            y: 0.0,
        }];
        let noise = NoiseModel::gaussian(0.0);
        let bad = TrackerConfig {
            step_gain: 0.0,
            ..TrackerConfig::default()
        };
        assert!(simulate_follow(&traj, &noise, [1.0, 0.0], 1.0, &bad, 0).is_err());
        let bad = TrackerConfig {
            window: 0,
            ..TrackerConfig::default()
        };
        assert!(simulate_follow(&traj, &noise, [1.0, 0.0], 1.0, &bad, 0).is_err());
    }
}
