//! The non-contiguous Wi-Fi spectrum model: bands, center frequencies,
//! subcarrier grids, and the unambiguous delay range they support.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::wrap_phase;

/// One Wi-Fi frequency band: a center frequency plus a symmetric grid of
/// measured OFDM subcarriers. In measured mode the zero subcarrier is absent
/// (it overlaps the DC offset and carries no data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub index: usize,
    pub center_hz: f64,
    pub spacing_hz: f64,
    pub subcarriers: Vec<i32>,
}

impl Band {
    /// Frequency of subcarrier `k`: center + k * spacing.
    ///
    /// `k` must be one of the band's measured subcarriers or 0.
    pub fn subcarrier_frequency(&self, k: i32) -> Result<f64> {
        if k != 0 && !self.subcarriers.contains(&k) {
            return Err(Error::InvalidSubcarrier {
                band: self.index,
                k,
            });
        }
        Ok(self.center_hz + f64::from(k) * self.spacing_hz)
    }

    fn validate(&self) -> Result<()> {
        if self.center_hz <= 0.0 || self.spacing_hz <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "band {}: center and spacing must be positive",
                self.index
            )));
        }
        let mut seen = self.subcarriers.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.subcarriers.len() {
            return Err(Error::InvalidConfig(format!(
                "band {}: duplicate subcarrier indices",
                self.index
            )));
        }
        if self.subcarriers.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "band {}: measured subcarriers must exclude k=0",
                self.index
            )));
        }
        Ok(())
    }
}

/// An ordered set of bands with pairwise-distinct center frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPlan {
    pub bands: Vec<Band>,
}

impl BandPlan {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        let plan = BandPlan { bands };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::InvalidConfig("band plan is empty".into()));
        }
        for band in &self.bands {
            band.validate()?;
        }
        for (i, a) in self.bands.iter().enumerate() {
            for b in &self.bands[i + 1..] {
                if a.center_hz == b.center_hz {
                    return Err(Error::InvalidConfig(format!(
                        "bands {} and {} share center frequency {} Hz",
                        a.index, b.index, a.center_hz
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// Center frequencies in band order.
    pub fn center_frequencies(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.center_hz).collect()
    }

    /// Sub-plan containing only the 2.4 GHz group (centers below 3 GHz),
    /// reindexed from 0.
    pub fn group_2g4(&self) -> BandPlan {
        self.filtered(|b| b.center_hz < 3.0e9)
    }

    /// Sub-plan containing only the 5 GHz group, reindexed from 0.
    pub fn group_5g(&self) -> BandPlan {
        self.filtered(|b| b.center_hz >= 3.0e9)
    }

    fn filtered(&self, keep: impl Fn(&Band) -> bool) -> BandPlan {
        let bands = self
            .bands
            .iter()
            .filter(|b| keep(b))
            .enumerate()
            .map(|(i, b)| Band {
                index: i,
                ..b.clone()
            })
            .collect();
        BandPlan { bands }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: BandPlan = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }
}

/// 802.11n 20 MHz OFDM subcarrier spacing.
pub const SUBCARRIER_SPACING_HZ: f64 = 312_500.0;

/// US 2.4 GHz channels 1-11, 20 MHz channelization (centers 5 MHz apart).
const CHANNELS_2G4: [u32; 11] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

/// US 5 GHz 20 MHz channels including the DFS ranges (52-64, 100-140):
/// UNII-1, UNII-2A, UNII-2C, UNII-3. 24 channels.
const CHANNELS_5G: [u32; 24] = [
    36, 40, 44, 48, 52, 56, 60, 64, 100, 104, 108, 112, 116, 120, 124, 128, 132, 136, 140, 149,
    153, 157, 161, 165,
];

/// The default 35-band plan: 11 channels at 2.4 GHz plus 24 channels at
/// 5 GHz (DFS included), each with 30 measured subcarriers at +-1..+-15.
///
/// The exact channel list is a documented reconstruction from US 802.11
/// channelization; every algorithm takes a `BandPlan` input, so scenarios
/// can substitute their own.
pub fn default_band_plan() -> BandPlan {
    let subcarriers: Vec<i32> = (-15..=15).filter(|&k| k != 0).collect();
    let mut bands = Vec::with_capacity(35);
    for &ch in &CHANNELS_2G4 {
        bands.push((2407.0 + 5.0 * f64::from(ch)) * 1e6);
    }
    for &ch in &CHANNELS_5G {
        bands.push((5000.0 + 5.0 * f64::from(ch)) * 1e6);
    }
    let bands = bands
        .into_iter()
        .enumerate()
        .map(|(index, center_hz)| Band {
            index,
            center_hz,
            spacing_hz: SUBCARRIER_SPACING_HZ,
            subcarriers: subcarriers.clone(),
        })
        .collect();
    BandPlan { bands }
}

/// Options for the empirical ambiguity search behind [`unambiguous_range`].
#[derive(Debug, Clone)]
pub struct AmbiguityScan {
    /// Smallest delay separation considered distinct (matches the solver
    /// grid resolution by default).
    pub min_delta: f64,
    /// Search cap; if no confusable separation is found below it, the cap is
    /// returned as a lower bound.
    pub max_delta: f64,
}

impl Default for AmbiguityScan {
    fn default() -> Self {
        AmbiguityScan {
            min_delta: 0.1e-9,
            max_delta: 2.0e-6,
        }
    }
}

/// Largest delay span over which the multi-band phase signature is unique.
///
/// Two delays are confusable when every band's phase differs by less than
/// `phase_tolerance`; since the per-band phase difference depends only on the
/// delay separation, the search scans separations directly and returns the
/// first confusable one. A coarse pass with per-band slack flags candidate
/// windows which a fine pass then confirms, so windows cannot be stepped
/// over. Runs with [`AmbiguityScan::default`].
pub fn unambiguous_range(plan: &BandPlan, phase_tolerance: f64) -> f64 {
    unambiguous_range_with(plan, phase_tolerance, &AmbiguityScan::default())
}

/// [`unambiguous_range`] with explicit scan bounds.
pub fn unambiguous_range_with(plan: &BandPlan, phase_tolerance: f64, scan: &AmbiguityScan) -> f64 {
    assert!(!plan.is_empty(), "band plan is empty");
    assert!(phase_tolerance > 0.0);
    let freqs = plan.center_frequencies();
    let f_max = freqs.iter().cloned().fold(0.0, f64::max);
    // Phase at the fastest band moves by at most `phase_tolerance` per coarse
    // step, so a window where all bands stay within the tolerance cannot be
    // skipped once the coarse threshold carries one step of slack.
    let coarse = phase_tolerance / (2.0 * std::f64::consts::PI * f_max);
    let fine = coarse / 16.0;
    let confusable_at = |delta: f64, tol: f64| -> bool {
        freqs
            .iter()
            .all(|&f| wrap_phase(2.0 * std::f64::consts::PI * f * delta).abs() < tol)
    };
    let mut delta = scan.min_delta;
    while delta < scan.max_delta {
        if confusable_at(delta, 2.0 * phase_tolerance) {
            // Fine confirmation around the flagged coarse sample.
            let lo = (delta - coarse).max(scan.min_delta);
            let hi = delta + coarse;
            let mut d = lo;
            while d <= hi {
                if confusable_at(d, phase_tolerance) {
                    return d;
                }
                d += fine;
            }
        }
        delta += coarse;
    }
    scan.max_delta
}
