//! Ground-truth multipath geometry and CSI sweep synthesis.
//!
//! Scenes are 2D: a transmitter, one or more receive antennas, and point
//! reflectors with complex reflection coefficients (single bounce). The
//! synthesizer turns a scene into per-band, per-subcarrier channel
//! measurements carrying the impairments a real radio adds: packet detection
//! delay, carrier frequency offset, the transmit/receive chain constant, and
//! additive noise. It is the oracle the estimation pipeline is validated
//! against.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use crate::band_plan::BandPlan;
use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

/// One propagation path: delay and complex amplitude (magnitude is the
/// attenuation, phase the reflection phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathComponent {
    pub delay: f64,
    pub amplitude: Complex64,
}

/// A point reflector with a complex reflection coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflector {
    pub position: [f64; 2],
    pub coefficient: Complex64,
}

impl Reflector {
    /// Place a reflector on the perpendicular bisector of the tx-rx segment
    /// so the bounce path tx -> reflector -> rx has exactly `total_length`.
    /// Scenes for known-delay experiments are built this way.
    pub fn for_path_length(
        tx: [f64; 2],
        rx: [f64; 2],
        total_length: f64,
        coefficient: Complex64,
    ) -> Result<Reflector> {
        let dx = rx[0] - tx[0];
        let dy = rx[1] - tx[1];
        let base = (dx * dx + dy * dy).sqrt();
        if total_length <= base {
            return Err(Error::DegenerateGeometry(format!(
                "bounce path {total_length} m must exceed the direct distance {base} m"
            )));
        }
        // Ellipse with foci tx, rx: semi-major a, semi-minor b.
        let a = total_length / 2.0;
        let b = (a * a - base * base / 4.0).sqrt();
        let mid = [(tx[0] + rx[0]) / 2.0, (tx[1] + rx[1]) / 2.0];
        // Unit normal to the tx->rx direction.
        let (nx, ny) = if base > 0.0 {
            (-dy / base, dx / base)
        } else {
            (0.0, 1.0)
        };
        Ok(Reflector {
            position: [mid[0] + b * nx, mid[1] + b * ny],
            coefficient,
        })
    }
}

/// Ground-truth geometry: transmitter, receive antennas, reflectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub tx_position: [f64; 2],
    pub rx_antennas: Vec<[f64; 2]>,
    pub reflectors: Vec<Reflector>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.rx_antennas.is_empty() {
            return Err(Error::DegenerateGeometry(
                "scene needs at least one receive antenna".into(),
            ));
        }
        for (i, a) in self.rx_antennas.iter().enumerate() {
            for b in &self.rx_antennas[i + 1..] {
                if a == b {
                    return Err(Error::DegenerateGeometry(
                        "receive antennas must be pairwise distinct".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Propagation delay of the direct path to `antenna`.
    pub fn direct_delay(&self, antenna: usize) -> Result<f64> {
        Ok(distance(self.tx_position, self.rx_antennas[antenna]) / SPEED_OF_LIGHT)
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Expand a scene into propagation paths for one receive antenna: the direct
/// path plus one single-bounce path per reflector, sorted by delay.
/// Amplitudes fall off as 1/total-distance; reflected paths are additionally
/// scaled by the reflection coefficient.
pub fn paths_from_scene(scene: &Scene, antenna: usize) -> Result<Vec<PathComponent>> {
    scene.validate()?;
    let rx = *scene
        .rx_antennas
        .get(antenna)
        .ok_or_else(|| Error::DegenerateGeometry(format!("no antenna {antenna}")))?;
    let direct = distance(scene.tx_position, rx);
    if direct < 1e-9 {
        return Err(Error::DegenerateGeometry(
            "transmitter and receiver coincide".into(),
        ));
    }
    let mut paths = vec![PathComponent {
        delay: direct / SPEED_OF_LIGHT,
        amplitude: Complex64::new(1.0 / direct, 0.0),
    }];
    for r in &scene.reflectors {
        let total = distance(scene.tx_position, r.position) + distance(r.position, rx);
        if total < 1e-9 {
            return Err(Error::DegenerateGeometry(
                "reflector coincides with both endpoints".into(),
            ));
        }
        paths.push(PathComponent {
            delay: total / SPEED_OF_LIGHT,
            amplitude: r.coefficient / total,
        });
    }
    paths.sort_by(|a, b| a.delay.partial_cmp(&b.delay).expect("finite delays"));
    Ok(paths)
}

/// The physical channel at frequency `f`: sum over paths of
/// a_k * exp(-j 2 pi f tau_k).
pub fn true_channel(paths: &[PathComponent], f: f64) -> Complex64 {
    paths
        .iter()
        .map(|p| p.amplitude * Complex64::from_polar(1.0, -2.0 * PI * f * p.delay))
        .sum()
}

/// Carrier-frequency-offset model. The offset is redrawn on every hop
/// (oscillators re-lock per retune); both directions of a hop share it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CfoModel {
    Off,
    /// Fixed tx-rx offset in Hz for every band.
    Fixed { hz: f64 },
    /// Uniform in +-ppm of each band's carrier.
    UniformPpm { ppm: f64 },
}

impl Default for CfoModel {
    fn default() -> Self {
        CfoModel::Off
    }
}

/// Impairments applied during sweep synthesis. The default is the clean
/// channel: no detection delay, no CFO, no noise, kappa = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpairmentConfig {
    /// Median of the truncated-Gaussian packet detection delay (seconds).
    pub detection_delay_median: f64,
    pub detection_delay_stddev: f64,
    pub cfo: CfoModel,
    /// Per-subcarrier SNR in dB; `None` disables noise.
    pub snr_db: Option<f64>,
    /// Transmit/receive chain constant applied to the reverse measurement.
    pub kappa: Complex64,
    /// Timestamp separation between a packet and its acknowledgment. The
    /// sign alternates between packets so residual CFO phase cancels in the
    /// packet average.
    pub fwd_rev_gap: f64,
    /// Constant front-end delay added to every path in both directions;
    /// removed later by calibration, not by the pipeline.
    pub hardware_delay: f64,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        ImpairmentConfig {
            detection_delay_median: 0.0,
            detection_delay_stddev: 0.0,
            cfo: CfoModel::Off,
            snr_db: None,
            kappa: Complex64::new(1.0, 0.0),
            fwd_rev_gap: 0.0,
            hardware_delay: 0.0,
        }
    }
}

/// Packet timing of a synthesized sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSchedule {
    /// Dwell per band; band i starts at i * dwell.
    pub band_dwell: f64,
    /// Forward/reverse packet pairs captured per band.
    pub packets_per_band: usize,
    /// Spacing between successive packet pairs within a band.
    pub packet_spacing: f64,
}

impl Default for SweepSchedule {
    fn default() -> Self {
        SweepSchedule {
            band_dwell: 2.4e-3,
            packets_per_band: 3,
            packet_spacing: 400e-6,
        }
    }
}

/// Measurement direction: `Forward` is the packet measured at the receiver,
/// `Reverse` the acknowledgment measured back at the transmitter (which
/// carries the kappa constant).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

/// One per-band, per-direction channel measurement across subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiMeasurement {
    pub band_index: usize,
    pub direction: Direction,
    pub subcarriers: Vec<i32>,
    pub values: Vec<Complex64>,
    pub timestamp: f64,
}

/// All measurements for one tx -> rx-antenna link over a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaSweep {
    pub antenna: usize,
    pub measurements: Vec<CsiMeasurement>,
}

/// Synthesize a full sweep: every band, both directions,
/// `schedule.packets_per_band` packet pairs, for every receive antenna.
///
/// Per band the CFO is drawn once (both directions and all antennas share
/// it, as they share the radio pair); the detection delay is drawn per
/// packet and per direction. Deterministic for a given seed.
pub fn synthesize_sweep(
    scene: &Scene,
    plan: &BandPlan,
    impairments: &ImpairmentConfig,
    schedule: &SweepSchedule,
    seed: u64,
) -> Result<Vec<AntennaSweep>> {
    scene.validate()?;
    plan.validate()?;
    if schedule.packets_per_band == 0 {
        return Err(Error::InvalidConfig("packets_per_band must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths: Vec<Vec<PathComponent>> = (0..scene.rx_antennas.len())
        .map(|a| paths_from_scene(scene, a))
        .collect::<Result<_>>()?;

    let mut sweeps: Vec<AntennaSweep> = (0..scene.rx_antennas.len())
        .map(|antenna| AntennaSweep {
            antenna,
            measurements: Vec::with_capacity(plan.len() * 2 * schedule.packets_per_band),
        })
        .collect();

    for band in &plan.bands {
        let cfo_hz = match impairments.cfo {
            CfoModel::Off => 0.0,
            CfoModel::Fixed { hz } => hz,
            CfoModel::UniformPpm { ppm } => {
                let bound = ppm * 1e-6 * band.center_hz;
                rng.gen_range(-bound..=bound)
            }
        };
        let band_start = band.index as f64 * schedule.band_dwell;
        for packet in 0..schedule.packets_per_band {
            let t_fwd = band_start + packet as f64 * schedule.packet_spacing;
            // Alternate which side of the pair is measured first so the
            // per-pair CFO residual is symmetric around zero.
            let gap_sign = if packet % 2 == 0 { 1.0 } else { -1.0 };
            let t_rev = t_fwd + gap_sign * impairments.fwd_rev_gap;
            for &(direction, t) in &[(Direction::Forward, t_fwd), (Direction::Reverse, t_rev)] {
                let delta = draw_detection_delay(impairments, &mut rng);
                for (antenna, antenna_paths) in paths.iter().enumerate() {
                    let mut values = Vec::with_capacity(band.subcarriers.len());
                    for &k in &band.subcarriers {
                        let f_k = band.center_hz + f64::from(k) * band.spacing_hz;
                        let mut v: Complex64 = antenna_paths
                            .iter()
                            .map(|p| {
                                p.amplitude
                                    * Complex64::from_polar(
                                        1.0,
                                        -2.0 * PI
                                            * f_k
                                            * (p.delay + impairments.hardware_delay),
                                    )
                            })
                            .sum();
                        // Detection delay rotates baseband subcarriers
                        // relative to the band center; it vanishes at k=0.
                        v *= Complex64::from_polar(
                            1.0,
                            -2.0 * PI * (f_k - band.center_hz) * delta,
                        );
                        match direction {
                            Direction::Forward => {
                                v *= Complex64::from_polar(1.0, 2.0 * PI * cfo_hz * t);
                            }
                            Direction::Reverse => {
                                v *= impairments.kappa
                                    * Complex64::from_polar(1.0, -2.0 * PI * cfo_hz * t);
                            }
                        }
                        values.push(v);
                    }
                    if let Some(snr_db) = impairments.snr_db {
                        add_noise(&mut values, snr_db, &mut rng);
                    }
                    sweeps[antenna].measurements.push(CsiMeasurement {
                        band_index: band.index,
                        direction,
                        subcarriers: band.subcarriers.clone(),
                        values,
                        timestamp: t,
                    });
                }
            }
        }
    }
    Ok(sweeps)
}

fn draw_detection_delay(impairments: &ImpairmentConfig, rng: &mut ChaCha8Rng) -> f64 {
    if impairments.detection_delay_median <= 0.0 && impairments.detection_delay_stddev <= 0.0 {
        return 0.0;
    }
    if impairments.detection_delay_stddev <= 0.0 {
        return impairments.detection_delay_median;
    }
    let normal = Normal::new(
        impairments.detection_delay_median,
        impairments.detection_delay_stddev,
    )
    .expect("finite delay parameters");
    // Truncate at zero; with the reported moments negative draws are rare.
    for _ in 0..1000 {
        let d = normal.sample(rng);
        if d >= 0.0 {
            return d;
        }
    }
    0.0
}

fn add_noise(values: &mut [Complex64], snr_db: f64, rng: &mut ChaCha8Rng) {
    let power: f64 =
        values.iter().map(|v| v.norm_sqr()).sum::<f64>() / values.len().max(1) as f64;
    let noise_var = power / 10f64.powf(snr_db / 10.0);
    let sigma = (noise_var / 2.0).sqrt();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in values {
        *v += Complex64::new(normal.sample(rng), normal.sample(rng));
    }
}

/// CSV schema for sweep dumps: `band_index,direction,k,re,im,timestamp`,
/// one row per subcarrier, rows grouped by measurement.
pub fn write_sweep_csv<W: Write>(measurements: &[CsiMeasurement], mut w: W) -> Result<()> {
    writeln!(w, "band_index,direction,k,re,im,timestamp")?;
    for m in measurements {
        let dir = match m.direction {
            Direction::Forward => "forward",
            Direction::Reverse => "reverse",
        };
        for (&k, v) in m.subcarriers.iter().zip(&m.values) {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                m.band_index, dir, k, v.re, v.im, m.timestamp
            )?;
        }
    }
    Ok(())
}

/// Parse a sweep dump produced by [`write_sweep_csv`] (or recorded hardware
/// traces in the same schema). Consecutive rows with the same band,
/// direction, and timestamp form one measurement.
pub fn read_sweep_csv<R: BufRead>(r: R) -> Result<Vec<CsiMeasurement>> {
    let mut out: Vec<CsiMeasurement> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line.trim() != "band_index,direction,k,re,im,timestamp" {
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
        if fields.len() != 6 {
            return Err(Error::Csv {
                line: lineno + 1,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let parse_err = |field: &str, what: &str| Error::Csv {
            line: lineno + 1,
            msg: format!("bad {what}: {field:?}"),
        };
        let band_index: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(fields[0], "band_index"))?;
        let direction = match fields[1].trim() {
            "forward" => Direction::Forward,
            "reverse" => Direction::Reverse,
            other => return Err(parse_err(other, "direction")),
        };
        let k: i32 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(fields[2], "k"))?;
        let re: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| parse_err(fields[3], "re"))?;
        let im: f64 = fields[4]
            .trim()
            .parse()
            .map_err(|_| parse_err(fields[4], "im"))?;
        let timestamp: f64 = fields[5]
            .trim()
            .parse()
            .map_err(|_| parse_err(fields[5], "timestamp"))?;
        let same_group = out.last().is_some_and(|m: &CsiMeasurement| {
            m.band_index == band_index && m.direction == direction && m.timestamp == timestamp
        });
        if same_group {
            let m = out.last_mut().expect("non-empty");
            m.subcarriers.push(k);
            m.values.push(Complex64::new(re, im));
        } else {
            out.push(CsiMeasurement {
                band_index,
                direction,
                subcarriers: vec![k],
                values: vec![Complex64::new(re, im)],
                timestamp,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band_plan::default_band_plan;

    fn one_path_scene(dist: f64) -> Scene {
        Scene {
            tx_position: [dist, 0.0],
            rx_antennas: vec![[0.0, 0.0]],
            reflectors: vec![],
        }
    }

    #[test]
    fn direct_path_delay() {
        let paths = paths_from_scene(&one_path_scene(0.6), 0).unwrap();
        assert_eq!(paths.len(), 1);
        assert!((paths[0].delay - 0.6 / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!((paths[0].delay * 1e9 - 2.0).abs() < 0.01);
        assert!((paths[0].amplitude.re - 1.0 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn three_path_scene_delays() {
        // Path lengths 1.56 m / 3.0 m / 4.8 m.
        let tx = [1.56, 0.0];
        let rx = [0.0, 0.0];
        let scene = Scene {
            tx_position: tx,
            rx_antennas: vec![rx],
            reflectors: vec![
                Reflector::for_path_length(tx, rx, 3.0, Complex64::new(0.8, 0.0)).unwrap(),
                Reflector::for_path_length(tx, rx, 4.8, Complex64::new(0.9, 0.0)).unwrap(),
            ],
        };
        let paths = paths_from_scene(&scene, 0).unwrap();
        let ns: Vec<f64> = paths.iter().map(|p| p.delay * 1e9).collect();
        // Oracle: direct division of the intended lengths by c.
        for (got, len) in ns.iter().zip([1.56, 3.0, 4.8]) {
            assert!((got - len / SPEED_OF_LIGHT * 1e9).abs() < 1e-9, "{got} vs {len}");
        }
        assert!((ns[0] - 5.2).abs() < 0.01);
        assert!((ns[1] - 10.0).abs() < 0.01);
        assert!((ns[2] - 16.0).abs() < 0.02);
        // Amplitudes descend.
        let mags: Vec<f64> = paths.iter().map(|p| p.amplitude.norm()).collect();
        assert!(mags[0] > mags[1] && mags[1] > mags[2]);
    }

    #[test]
    fn exact_direct_division_oracle() {
        let paths = paths_from_scene(&one_path_scene(3.0), 0).unwrap();
        assert!((paths[0].delay - 3.0 / SPEED_OF_LIGHT).abs() < 1e-20);
        assert!((paths[0].delay * 1e9 - 10.0069).abs() < 1e-3);
    }

    #[test]
    fn coincident_endpoints_error() {
        let scene = Scene {
            tx_position: [0.0, 0.0],
            rx_antennas: vec![[0.0, 0.0]],
            reflectors: vec![],
        };
        assert!(matches!(
            paths_from_scene(&scene, 0),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn true_channel_examples() {
        let p = [PathComponent {
            delay: 0.0,
            amplitude: Complex64::new(1.0, 0.0),
        }];
        let h = true_channel(&p, 5.0e9);
        assert!((h - Complex64::new(1.0, 0.0)).norm() < 1e-15);

        let p = [PathComponent {
            delay: 2e-9,
            amplitude: Complex64::new(1.0, 0.0),
        }];
        let h = true_channel(&p, 2.4e9);
        let expected = crate::math::wrap_phase(-2.0 * PI * 4.8);
        assert!(crate::math::angular_distance(h.arg(), expected) < 1e-12);

        // Destructive interference: two equal paths half a period apart.
        let f = 2.0e9;
        let p = [
            PathComponent {
                delay: 1e-9,
                amplitude: Complex64::new(1.0, 0.0),
            },
            PathComponent {
                delay: 1e-9 + 0.5 / f,
                amplitude: Complex64::new(1.0, 0.0),
            },
        ];
        assert!(true_channel(&p, f).norm() < 1e-12);
    }

    #[test]
    fn clean_sweep_matches_true_channel_exactly() {
        let plan = default_band_plan();
        let scene = one_path_scene(0.6);
        let sweeps = synthesize_sweep(
            &scene,
            &plan,
            &ImpairmentConfig::default(),
            &SweepSchedule::default(),
            7,
        )
        .unwrap();
        let paths = paths_from_scene(&scene, 0).unwrap();
        for m in &sweeps[0].measurements {
            let band = &plan.bands[m.band_index];
            for (&k, v) in m.subcarriers.iter().zip(&m.values) {
                let f_k = band.subcarrier_frequency(k).unwrap();
                assert!((v - true_channel(&paths, f_k)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn same_seed_reproduces() {
        let plan = default_band_plan();
        let scene = one_path_scene(1.0);
        let imp = ImpairmentConfig {
            detection_delay_median: 177e-9,
            detection_delay_stddev: 24.76e-9,
            cfo: CfoModel::UniformPpm { ppm: 20.0 },
            snr_db: Some(20.0),
            ..ImpairmentConfig::default()
        };
        let a = synthesize_sweep(&scene, &plan, &imp, &SweepSchedule::default(), 123).unwrap();
        let b = synthesize_sweep(&scene, &plan, &imp, &SweepSchedule::default(), 123).unwrap();
        assert_eq!(a, b);
        let c = synthesize_sweep(&scene, &plan, &imp, &SweepSchedule::default(), 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forward_reverse_product_cancels_cfo_at_equal_timestamps() {
        let plan = default_band_plan();
        let scene = one_path_scene(1.0);
        let mut reference = None;
        for cfo_hz in [0.0, 1e3, -27e3, 50e3] {
            let imp = ImpairmentConfig {
                cfo: CfoModel::Fixed { hz: cfo_hz },
                fwd_rev_gap: 0.0,
                ..ImpairmentConfig::default()
            };
            let sweeps =
                synthesize_sweep(&scene, &plan, &imp, &SweepSchedule::default(), 5).unwrap();
            let m = &sweeps[0].measurements;
            let product = m[0].values[0] * m[1].values[0];
            match reference {
                None => reference = Some(product),
                Some(r) => assert!(
                    (product - r).norm() < 1e-9 * r.norm(),
                    "cfo {cfo_hz}: {product} vs {r}"
                ),
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let plan = default_band_plan();
        let scene = one_path_scene(2.0);
        let imp = ImpairmentConfig {
            snr_db: Some(25.0),
            ..ImpairmentConfig::default()
        };
        let sweeps = synthesize_sweep(&scene, &plan, &imp, &SweepSchedule::default(), 9).unwrap();
        let mut buf = Vec::new();
        write_sweep_csv(&sweeps[0].measurements, &mut buf).unwrap();
        let back = read_sweep_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back, sweeps[0].measurements);
    }
}
