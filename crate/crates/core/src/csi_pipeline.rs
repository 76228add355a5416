//! Per-band CSI cleanup: interpolate the unmeasured zero subcarrier (which
//! carries no packet detection delay), cancel CFO by combining the forward
//! and reverse measurements, average packets, and track how many factors of
//! the physical channel the running value contains.

use num_complex::Complex64;
use std::collections::BTreeMap;

use crate::channel_sim::{AntennaSweep, CsiMeasurement, Direction};
use crate::error::{Error, Result};
use crate::math::{unwrap_phases, CubicSpline};

/// One clean per-band complex channel value.
///
/// `exponent` records how many factors of the physical channel the value
/// contains: 1 = raw interpolated channel, 2 = reciprocity product,
/// 4 = the squared product used where hardware reports phase modulo pi/2.
/// Delays read off a profile computed from these values scale by the same
/// factor, so downstream ToF = first peak delay / exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandChannel {
    pub band_index: usize,
    pub value: Complex64,
    pub exponent: u32,
}

/// Estimate the channel at the (unmeasured) zero subcarrier by fitting
/// natural cubic splines to unwrapped phase and to magnitude across the
/// subcarrier index and evaluating both at k = 0.
///
/// Detection delay adds a phase term linear in k that vanishes at k = 0;
/// because the spline is a linear operator that reproduces linear data
/// exactly, the interpolated value is invariant to it.
pub fn interpolate_zero_subcarrier(m: &CsiMeasurement) -> Result<Complex64> {
    let mut pairs: Vec<(i32, Complex64)> = m
        .subcarriers
        .iter()
        .copied()
        .zip(m.values.iter().copied())
        .collect();
    pairs.sort_by_key(|(k, _)| *k);
    let neg = pairs.iter().filter(|(k, _)| *k < 0).count();
    let pos = pairs.iter().filter(|(k, _)| *k > 0).count();
    if neg < 4 || pos < 4 {
        return Err(Error::InsufficientSubcarriers {
            band: m.band_index,
            needed: 4,
            got_neg: neg,
            got_pos: pos,
        });
    }
    let ks: Vec<i32> = pairs.iter().map(|(k, _)| *k).collect();
    let xs: Vec<f64> = ks.iter().map(|&k| f64::from(k)).collect();
    let raw_phases: Vec<f64> = pairs.iter().map(|(_, v)| v.arg()).collect();
    let mags: Vec<f64> = pairs.iter().map(|(_, v)| v.norm()).collect();
    let phases = unwrap_phases(&ks, &raw_phases);
    let phase0 = CubicSpline::new(&xs, &phases).eval(0.0);
    let mag0 = CubicSpline::new(&xs, &mags).eval(0.0).max(0.0);
    Ok(Complex64::from_polar(mag0, phase0))
}

/// Combine the forward measurement with the reverse one:
/// fwd * rev / kappa. CFO phase cancels because the two directions see
/// opposite frequency offsets; the result carries the channel squared.
pub fn reciprocal_combine(
    band_index: usize,
    fwd: Complex64,
    rev: Complex64,
    kappa: Complex64,
) -> Result<BandChannel> {
    if kappa.norm() == 0.0 {
        return Err(Error::ZeroKappa);
    }
    Ok(BandChannel {
        band_index,
        value: fwd * rev / kappa,
        exponent: 2,
    })
}

/// Square a reciprocity product for bands whose hardware reports phase
/// modulo pi/2; the profile's first peak then sits at four times the
/// time-of-flight.
pub fn quartic_combine(channel: &BandChannel) -> Result<BandChannel> {
    if channel.exponent != 2 {
        return Err(Error::WrongExponent {
            expected: 2,
            got: channel.exponent,
        });
    }
    Ok(BandChannel {
        band_index: channel.band_index,
        value: channel.value * channel.value,
        exponent: 4,
    })
}

/// Complex mean of repeated measurements of one band. All inputs must share
/// the band index and exponent.
pub fn average_sweeps(channels: &[BandChannel]) -> Result<BandChannel> {
    let first = channels.first().ok_or(Error::EmptyCombine)?;
    for c in channels {
        if c.exponent != first.exponent {
            return Err(Error::MixedExponents(first.exponent, c.exponent));
        }
        if c.band_index != first.band_index {
            return Err(Error::InvalidConfig(format!(
                "averaging across bands {} and {}",
                first.band_index, c.band_index
            )));
        }
    }
    let mean = channels.iter().map(|c| c.value).sum::<Complex64>() / channels.len() as f64;
    Ok(BandChannel {
        band_index: first.band_index,
        value: mean,
        exponent: first.exponent,
    })
}

/// How a sweep is reduced to one value per band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    /// Interpolate the forward packets only; exponent 1. Valid when no CFO
    /// is present (reverse packets are ignored).
    Raw,
    /// Reciprocity product per packet pair, then average; exponent 2.
    Reciprocity,
    /// Reciprocity product squared; exponent 4.
    Quartic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub mode: CombineMode,
    /// Calibrated transmit/receive chain constant divided out of each
    /// reciprocity product.
    pub kappa: Complex64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: CombineMode::Reciprocity,
            kappa: Complex64::new(1.0, 0.0),
        }
    }
}

/// Reduce one antenna's sweep to a clean `BandChannel` per band, ordered by
/// band index: interpolate each packet's zero subcarrier, combine packet
/// pairs according to the mode, and average over packets.
pub fn process_sweep(sweep: &AntennaSweep, config: &PipelineConfig) -> Result<Vec<BandChannel>> {
    let mut by_band: BTreeMap<usize, (Vec<&CsiMeasurement>, Vec<&CsiMeasurement>)> =
        BTreeMap::new();
    for m in &sweep.measurements {
        let entry = by_band.entry(m.band_index).or_default();
        match m.direction {
            Direction::Forward => entry.0.push(m),
            Direction::Reverse => entry.1.push(m),
        }
    }
    let mut out = Vec::with_capacity(by_band.len());
    for (band_index, (mut fwd, mut rev)) in by_band {
        fwd.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).expect("finite time"));
        rev.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).expect("finite time"));
        let per_packet: Vec<BandChannel> = match config.mode {
            CombineMode::Raw => fwd
                .iter()
                .map(|m| {
                    Ok(BandChannel {
                        band_index,
                        value: interpolate_zero_subcarrier(m)?,
                        exponent: 1,
                    })
                })
                .collect::<Result<_>>()?,
            CombineMode::Reciprocity | CombineMode::Quartic => {
                let pairs = fwd.len().min(rev.len());
                if pairs == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "band {band_index}: no forward/reverse packet pair"
                    )));
                }
                let mut combined = Vec::with_capacity(pairs);
                for (mf, mr) in fwd.iter().zip(rev.iter()) {
                    let f0 = interpolate_zero_subcarrier(mf)?;
                    let r0 = interpolate_zero_subcarrier(mr)?;
                    let mut c = reciprocal_combine(band_index, f0, r0, config.kappa)?;
                    if config.mode == CombineMode::Quartic {
                        c = quartic_combine(&c)?;
                    }
                    combined.push(c);
                }
                combined
            }
        };
        out.push(average_sweeps(&per_packet)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band_plan::default_band_plan;
    use crate::channel_sim::{
        synthesize_sweep, CfoModel, ImpairmentConfig, Reflector, Scene, SweepSchedule,
    };
    use crate::math::angular_distance;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn measurement_from_fn(f: impl Fn(i32) -> Complex64) -> CsiMeasurement {
        let subcarriers: Vec<i32> = (-15..=15).filter(|&k| k != 0).collect();
        let values = subcarriers.iter().map(|&k| f(k)).collect();
        CsiMeasurement {
            band_index: 0,
            direction: Direction::Forward,
            subcarriers,
            values,
            timestamp: 0.0,
        }
    }

    #[test]
    fn interpolating_a_constant_returns_it() {
        let c = Complex64::new(0.3, -0.8);
        let m = measurement_from_fn(|_| c);
        let got = interpolate_zero_subcarrier(&m).unwrap();
        assert!((got - c).norm() < 1e-12);
    }

    #[test]
    fn detection_delay_vanishes_at_zero_subcarrier() {
        // Single path, f0 = 2.412 GHz: phase at k=0 must be -2 pi f0 tau
        // for any detection delay.
        let band = &default_band_plan().bands[0];
        let tau = 2e-9;
        for delta in [0.0, 300e-9] {
            let m = measurement_from_fn(|k| {
                let f_k = band.center_hz + f64::from(k) * band.spacing_hz;
                Complex64::from_polar(1.0, -2.0 * PI * f_k * tau)
                    * Complex64::from_polar(1.0, -2.0 * PI * (f_k - band.center_hz) * delta)
            });
            let got = interpolate_zero_subcarrier(&m).unwrap();
            let expected = -2.0 * PI * band.center_hz * tau;
            assert!(
                angular_distance(got.arg(), expected) < 1e-9,
                "delta {delta}: {} vs {}",
                got.arg(),
                expected
            );
        }
    }

    #[test]
    fn delta_300ns_matches_delta_zero_in_multipath() {
        let band = &default_band_plan().bands[5];
        let paths = [(1.0, 5.2e-9), (0.4, 10.0e-9), (0.25, 16.0e-9)];
        let chan = |k: i32, delta: f64| {
            let f_k = band.center_hz + f64::from(k) * band.spacing_hz;
            let h: Complex64 = paths
                .iter()
                .map(|&(a, t)| Complex64::from_polar(a, -2.0 * PI * f_k * t))
                .sum();
            h * Complex64::from_polar(1.0, -2.0 * PI * (f_k - band.center_hz) * delta)
        };
        let clean = interpolate_zero_subcarrier(&measurement_from_fn(|k| chan(k, 0.0))).unwrap();
        let delayed =
            interpolate_zero_subcarrier(&measurement_from_fn(|k| chan(k, 300e-9))).unwrap();
        assert!(angular_distance(clean.arg(), delayed.arg()) < 1e-9);
        assert!((clean.norm() - delayed.norm()).abs() < 1e-9 * clean.norm());
    }

    #[test]
    fn too_few_subcarriers_is_an_error() {
        let m = CsiMeasurement {
            band_index: 2,
            direction: Direction::Forward,
            subcarriers: vec![-3, -2, -1, 1, 2, 3],
            values: vec![Complex64::new(1.0, 0.0); 6],
            timestamp: 0.0,
        };
        assert!(matches!(
            interpolate_zero_subcarrier(&m),
            Err(Error::InsufficientSubcarriers { band: 2, .. })
        ));
    }

    #[test]
    fn reciprocal_combine_cancels_symmetric_rotation() {
        let h = Complex64::new(0.6, -0.2);
        let rot = Complex64::from_polar(1.0, 1.234);
        let one = Complex64::new(1.0, 0.0);
        let c = reciprocal_combine(0, h * rot, h / rot, one).unwrap();
        assert_eq!(c.exponent, 2);
        assert!((c.value - h * h).norm() < 1e-14);
        assert!(matches!(
            reciprocal_combine(0, h, h, Complex64::new(0.0, 0.0)),
            Err(Error::ZeroKappa)
        ));
    }

    #[test]
    fn timestamp_gap_leaves_cfo_residual() {
        // CFO 10 kHz and a 50 us gap leave a residual of 2 pi * 10 kHz * 50 us.
        let f0 = 5.5e9;
        let tau = 3e-9;
        let cfo = 10e3;
        let (t1, t2) = (1.0e-3, 1.05e-3);
        let h = Complex64::from_polar(1.0, -2.0 * PI * f0 * tau);
        let fwd = h * Complex64::from_polar(1.0, 2.0 * PI * cfo * t1);
        let rev = h * Complex64::from_polar(1.0, -2.0 * PI * cfo * t2);
        let c = reciprocal_combine(0, fwd, rev, Complex64::new(1.0, 0.0)).unwrap();
        let residual = angular_distance(c.value.arg(), (h * h).arg());
        assert!((residual - 2.0 * PI * cfo * 50e-6).abs() < 1e-9);
        assert!((residual - PI).abs() < 1e-3);
    }

    #[test]
    fn quartic_doubles_phase() {
        let one = BandChannel {
            band_index: 0,
            value: Complex64::new(1.0, 0.0),
            exponent: 2,
        };
        let q = quartic_combine(&one).unwrap();
        assert_eq!(q.exponent, 4);
        assert!((q.value - Complex64::new(1.0, 0.0)).norm() < 1e-15);

        let phi = 0.7;
        let c = BandChannel {
            band_index: 1,
            value: Complex64::from_polar(0.9, phi),
            exponent: 2,
        };
        let q = quartic_combine(&c).unwrap();
        assert!(angular_distance(q.value.arg(), 2.0 * phi) < 1e-12);

        let raw = BandChannel {
            band_index: 0,
            value: one.value,
            exponent: 1,
        };
        assert!(matches!(
            quartic_combine(&raw),
            Err(Error::WrongExponent { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn averaging_identical_values_is_identity() {
        let c = BandChannel {
            band_index: 3,
            value: Complex64::new(0.4, 0.1),
            exponent: 2,
        };
        let avg = average_sweeps(&[c, c, c]).unwrap();
        assert_eq!(avg.band_index, c.band_index);
        assert_eq!(avg.exponent, c.exponent);
        assert!((avg.value - c.value).norm() < 1e-15);
        let other = BandChannel {
            band_index: 3,
            value: c.value,
            exponent: 1,
        };
        assert!(matches!(
            average_sweeps(&[c, other]),
            Err(Error::MixedExponents(2, 1))
        ));
    }

    #[test]
    fn averaging_shrinks_phase_noise_like_sqrt_n() {
        // Monte-Carlo: phase stddev of the N-packet mean scales ~1/sqrt(N).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = Complex64::from_polar(1.0, 0.9);
        let sigma = 0.1;
        let reps = 600;
        let stddev_for = |n: usize, rng: &mut ChaCha8Rng| {
            let mut errs = Vec::with_capacity(reps);
            for _ in 0..reps {
                let chans: Vec<BandChannel> = (0..n)
                    .map(|_| BandChannel {
                        band_index: 0,
                        value: h * Complex64::from_polar(
                            1.0,
                            sigma * rng.sample::<f64, _>(rand_distr::StandardNormal),
                        ),
                        exponent: 2,
                    })
                    .collect();
                let avg = average_sweeps(&chans).unwrap();
                errs.push(crate::math::wrap_phase(avg.value.arg() - h.arg()));
            }
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / errs.len() as f64).sqrt()
        };
        let s4 = stddev_for(4, &mut rng);
        let s16 = stddev_for(16, &mut rng);
        let s64 = stddev_for(64, &mut rng);
        assert!(s16 < s4 / 1.5 && s16 > s4 / 3.0, "s4={s4} s16={s16}");
        assert!(s64 < s16 / 1.5 && s64 > s16 / 3.0, "s16={s16} s64={s64}");
    }

    #[test]
    fn symmetric_gaps_average_out_cfo_residual() {
        // Residual phases +-phi with symmetric gaps: the mean has less phase
        // error than any single measurement.
        let h = Complex64::from_polar(1.0, -1.1);
        let phi = 0.4;
        let chans: Vec<BandChannel> = [phi, -phi, phi, -phi]
            .iter()
            .map(|&p| BandChannel {
                band_index: 0,
                value: h * Complex64::from_polar(1.0, p),
                exponent: 2,
            })
            .collect();
        let avg = average_sweeps(&chans).unwrap();
        let avg_err = angular_distance(avg.value.arg(), h.arg());
        assert!(avg_err < 1e-12, "residual {avg_err}");
    }

    #[test]
    fn pipeline_output_invariant_to_detection_delay() {
        let plan = default_band_plan();
        let tx = [2.0, 0.0];
        let rx = [0.0, 0.0];
        let scene = Scene {
            tx_position: tx,
            rx_antennas: vec![rx],
            reflectors: vec![
                Reflector::for_path_length(tx, rx, 3.5, Complex64::new(0.7, 0.2)).unwrap(),
            ],
        };
        let run = |median: f64, stddev: f64| {
            let imp = ImpairmentConfig {
                detection_delay_median: median,
                detection_delay_stddev: stddev,
                ..ImpairmentConfig::default()
            };
            let sweeps =
                synthesize_sweep(&scene, &plan, &imp, &SweepSchedule::default(), 21).unwrap();
            process_sweep(&sweeps[0], &PipelineConfig::default()).unwrap()
        };
        let clean = run(0.0, 0.0);
        let delayed = run(177e-9, 24.76e-9);
        for (c, d) in clean.iter().zip(&delayed) {
            assert!(
                angular_distance(c.value.arg(), d.value.arg()) < 1e-6,
                "band {}",
                c.band_index
            );
        }
    }

    #[test]
    fn pipeline_output_invariant_to_cfo_at_equal_timestamps() {
        let plan = default_band_plan();
        let scene = Scene {
            tx_position: [1.5, 0.4],
            rx_antennas: vec![[0.0, 0.0]],
            reflectors: vec![],
        };
        let run = |cfo: CfoModel| {
            let imp = ImpairmentConfig {
                cfo,
                fwd_rev_gap: 0.0,
                ..ImpairmentConfig::default()
            };
            let sweeps =
                synthesize_sweep(&scene, &plan, &imp, &SweepSchedule::default(), 3).unwrap();
            process_sweep(&sweeps[0], &PipelineConfig::default()).unwrap()
        };
        let reference = run(CfoModel::Off);
        for hz in [-50e3, -7e3, 13e3, 50e3] {
            let got = run(CfoModel::Fixed { hz });
            for (r, g) in reference.iter().zip(&got) {
                assert!(
                    angular_distance(r.value.arg(), g.value.arg()) < 1e-6,
                    "cfo {hz} band {}",
                    r.band_index
                );
            }
        }
    }
}
