//! Distances from ToF estimates, geometric outlier rejection, 2D
//! multilateration by range-residual least squares, and motion-based
//! disambiguation of mirror solutions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tof_solver::ToFEstimate;
use crate::SPEED_OF_LIGHT;

/// One measured distance between a receive antenna and a transmit antenna.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceEntry {
    pub rx_antenna: usize,
    pub tx_antenna: usize,
    pub meters: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DistanceSet {
    pub entries: Vec<DistanceEntry>,
}

/// Convert per-antenna-pair ToF estimates into distances:
/// `c * (tof - calibration_offset)`, clamped at zero.
pub fn distances_from_tofs(
    estimates: &[(usize, usize, ToFEstimate)],
    calibration_offset: f64,
) -> DistanceSet {
    DistanceSet {
        entries: estimates
            .iter()
            .map(|&(rx_antenna, tx_antenna, est)| DistanceEntry {
                rx_antenna,
                tx_antenna,
                meters: (SPEED_OF_LIGHT * (est.seconds - calibration_offset)).max(0.0),
                confidence: est.peak_magnitude,
            })
            .collect(),
    }
}

/// Slack allowed on top of the antenna baseline when checking triangle
/// feasibility: `slack_frac * baseline + slack_abs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierConfig {
    pub slack_frac: f64,
    pub slack_abs: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        OutlierConfig {
            slack_frac: 0.10,
            slack_abs: 0.10,
        }
    }
}

/// Drop distance estimates that cannot fit the known antenna geometry.
///
/// For two entries sharing a tx antenna, the distances to rx antennas `j`
/// and `k` must satisfy `|d_j - d_k| <= baseline_jk + slack` (and
/// symmetrically for shared rx antennas). Entries violating the most
/// constraints are removed greedily until the set is consistent.
pub fn geometric_outlier_reject(
    distances: &DistanceSet,
    rx_positions: &[[f64; 2]],
    tx_positions: &[[f64; 2]],
    config: &OutlierConfig,
) -> Result<DistanceSet> {
    let mut kept: Vec<DistanceEntry> = distances.entries.clone();
    loop {
        let violations = count_violations(&kept, rx_positions, tx_positions, config);
        let worst = violations
            .iter()
            .enumerate()
            .max_by_key(|(_, &v)| v)
            .map(|(i, &v)| (i, v));
        match worst {
            Some((i, v)) if v > 0 => {
                kept.remove(i);
            }
            _ => break,
        }
    }
    if kept.len() < 2 {
        return Err(Error::InsufficientDistances {
            got: kept.len(),
            needed: 2,
        });
    }
    Ok(DistanceSet { entries: kept })
}

fn count_violations(
    entries: &[DistanceEntry],
    rx_positions: &[[f64; 2]],
    tx_positions: &[[f64; 2]],
    config: &OutlierConfig,
) -> Vec<usize> {
    let mut violations = vec![0usize; entries.len()];
    for i in 0..entries.len() {
        for j in i + 1..entries.len() {
            let (a, b) = (&entries[i], &entries[j]);
            let baseline = if a.tx_antenna == b.tx_antenna {
                dist2(rx_positions[a.rx_antenna], rx_positions[b.rx_antenna])
            } else if a.rx_antenna == b.rx_antenna {
                dist2(tx_positions[a.tx_antenna], tx_positions[b.tx_antenna])
            } else {
                continue;
            };
            let slack = config.slack_frac * baseline + config.slack_abs;
            if (a.meters - b.meters).abs() > baseline + slack {
                violations[i] += 1;
                violations[j] += 1;
            }
        }
    }
    violations
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// A 2D position with the RMS circle misfit of the surviving distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Position2D {
    pub x: f64,
    pub y: f64,
    /// Root-mean-square of `||x - anchor|| - distance` over the anchors.
    pub residual: f64,
}

/// Intersect distance circles into a transmitter position.
///
/// Minimizes the sum of squared range residuals by Gauss-Newton with
/// Levenberg damping, started from eight points on a ring around the anchor
/// centroid; the best minimum wins. With exactly two anchors, or collinear
/// anchors, the mirror of the solution across the anchor axis fits equally
/// well and is returned as the second candidate.
pub fn localize(
    distances: &DistanceSet,
    rx_positions: &[[f64; 2]],
) -> Result<(Position2D, Option<Position2D>)> {
    // Collapse entries to one distance per rx anchor (confidence-weighted
    // mean when several tx antennas contribute).
    let mut per_anchor: Vec<(usize, f64, f64)> = Vec::new(); // (anchor, sum w*d, sum w)
    for e in &distances.entries {
        if e.rx_antenna >= rx_positions.len() {
            return Err(Error::DegenerateGeometry(format!(
                "distance references unknown antenna {}",
                e.rx_antenna
            )));
        }
        let w = e.confidence.max(1e-12);
        match per_anchor.iter_mut().find(|(a, _, _)| *a == e.rx_antenna) {
            Some(acc) => {
                acc.1 += w * e.meters;
                acc.2 += w;
            }
            None => per_anchor.push((e.rx_antenna, w * e.meters, w)),
        }
    }
    if per_anchor.len() < 2 {
        return Err(Error::InsufficientDistances {
            got: per_anchor.len(),
            needed: 2,
        });
    }
    let anchors: Vec<[f64; 2]> = per_anchor.iter().map(|&(a, _, _)| rx_positions[a]).collect();
    let dists: Vec<f64> = per_anchor.iter().map(|&(_, wd, w)| wd / w).collect();

    let cx = anchors.iter().map(|a| a[0]).sum::<f64>() / anchors.len() as f64;
    let cy = anchors.iter().map(|a| a[1]).sum::<f64>() / anchors.len() as f64;
    let ring = dists.iter().sum::<f64>() / dists.len() as f64;
    let ring = ring.max(0.1);

    let mut best: Option<([f64; 2], f64)> = None;
    for s in 0..8 {
        let angle = 2.0 * std::f64::consts::PI * s as f64 / 8.0;
        let start = [cx + ring * angle.cos(), cy + ring * angle.sin()];
        if let Some((p, cost)) = gauss_newton(start, &anchors, &dists) {
            if best.is_none() || cost < best.unwrap().1 {
                best = Some((p, cost));
            }
        }
    }
    let (p, cost) = best.ok_or(Error::LocalizationFailed)?;
    let residual = (cost / anchors.len() as f64).sqrt();
    let primary = Position2D {
        x: p[0],
        y: p[1],
        residual,
    };

    let mirror = mirror_across_anchor_axis(p, &anchors).map(|[mx, my]| Position2D {
        x: mx,
        y: my,
        residual,
    });
    Ok((primary, mirror))
}

fn gauss_newton(start: [f64; 2], anchors: &[[f64; 2]], dists: &[f64]) -> Option<([f64; 2], f64)> {
    let mut x = start;
    let mut lambda = 1e-9;
    let mut cost = range_cost(x, anchors, dists);
    for _ in 0..200 {
        // Normal equations J^T J dx = -J^T r for range residuals.
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (anchor, &d) in anchors.iter().zip(dists) {
            let dx = x[0] - anchor[0];
            let dy = x[1] - anchor[1];
            let r = (dx * dx + dy * dy).sqrt().max(1e-12);
            let res = r - d;
            let jx = dx / r;
            let jy = dy / r;
            a11 += jx * jx;
            a12 += jx * jy;
            a22 += jy * jy;
            b1 += jx * res;
            b2 += jy * res;
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        let mut solved = false;
        for _ in 0..30 {
            let d11 = a11 + lambda;
            let d22 = a22 + lambda;
            let det = d11 * d22 - a12 * a12;
            if det.abs() < 1e-30 {
                lambda = (lambda * 10.0).max(1e-9);
                continue;
            }
            sx = -(d22 * b1 - a12 * b2) / det;
            sy = -(d11 * b2 - a12 * b1) / det;
            let trial = [x[0] + sx, x[1] + sy];
            let trial_cost = range_cost(trial, anchors, dists);
            if trial_cost <= cost {
                x = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                solved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !solved {
            break;
        }
        if (sx * sx + sy * sy).sqrt() < 1e-12 {
            break;
        }
    }
    if cost.is_finite() {
        Some((x, cost))
    } else {
        None
    }
}

fn range_cost(x: [f64; 2], anchors: &[[f64; 2]], dists: &[f64]) -> f64 {
    anchors
        .iter()
        .zip(dists)
        .map(|(a, &d)| {
            let r = dist2(x, *a);
            (r - d).powi(2)
        })
        .sum()
}

/// Mirror `p` across the line through the anchors when they are collinear
/// (always for two anchors). `None` when the anchors span the plane or the
/// point lies on the axis.
fn mirror_across_anchor_axis(p: [f64; 2], anchors: &[[f64; 2]]) -> Option<[f64; 2]> {
    if anchors.len() < 2 {
        return None;
    }
    let a0 = anchors[0];
    // Longest direction between anchor 0 and any other anchor.
    let mut dir = [0.0, 0.0];
    let mut len = 0.0;
    for a in &anchors[1..] {
        let d = [a[0] - a0[0], a[1] - a0[1]];
        let l = (d[0] * d[0] + d[1] * d[1]).sqrt();
        if l > len {
            len = l;
            dir = [d[0] / l, d[1] / l];
        }
    }
    if len == 0.0 {
        return None;
    }
    // Collinear when every anchor's perpendicular offset is tiny.
    let collinear = anchors.iter().all(|a| {
        let rx = a[0] - a0[0];
        let ry = a[1] - a0[1];
        (rx * dir[1] - ry * dir[0]).abs() < 1e-9 * len.max(1.0)
    });
    if !collinear {
        return None;
    }
    let rx = p[0] - a0[0];
    let ry = p[1] - a0[1];
    let along = rx * dir[0] + ry * dir[1];
    let perp = [rx - along * dir[0], ry - along * dir[1]];
    if (perp[0] * perp[0] + perp[1] * perp[1]).sqrt() < 1e-12 {
        return None;
    }
    Some([p[0] - 2.0 * perp[0], p[1] - 2.0 * perp[1]])
}

/// Pick between two candidate positions using a known displacement of the
/// receiver and the distance measured after moving: the candidate whose
/// predicted post-move distance better matches wins. The flag reports a
/// prediction tie (first candidate returned).
pub fn disambiguate_by_motion(
    candidates: (Position2D, Position2D),
    movement: [f64; 2],
    post_move_distance: f64,
) -> (Position2D, bool) {
    let predict = |c: &Position2D| dist2([c.x, c.y], movement);
    let e0 = (predict(&candidates.0) - post_move_distance).abs();
    let e1 = (predict(&candidates.1) - post_move_distance).abs();
    if (e0 - e1).abs() < 1e-12 {
        (candidates.0, true)
    } else if e0 <= e1 {
        (candidates.0, false)
    } else {
        (candidates.1, false)
    }
}
