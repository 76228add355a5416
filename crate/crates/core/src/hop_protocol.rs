//! Discrete-event simulation of the transmitter-driven channel-hopping
//! handshake.
//!
//! The transmitter dwells on a band (capturing CSI), then issues a control
//! packet advertising the next band; the receiver acknowledges and retunes,
//! and the transmitter follows once the acknowledgment arrives. Either side
//! reverts to the default band after silence: the transmitter when no
//! acknowledgment arrives within the timeout, the receiver when it hears
//! nothing for a dwell plus that timeout. A band's capture only commits when
//! the handshake that follows it succeeds, so captures never happen with the
//! receiver absent.
//!
//! Time is integer nanoseconds end to end; runs are bit-reproducible per
//! seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

use crate::band_plan::BandPlan;
use crate::error::{Error, Result};
use crate::math::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolConfig {
    /// Time spent per band; the closing handshake rides in its tail.
    pub dwell: f64,
    /// How long the transmitter retries a handshake before reverting.
    pub ack_timeout: f64,
    /// Radio retune latency per hop.
    pub retune_latency: f64,
    /// Band index both sides fall back to.
    pub default_band: usize,
    /// Per-transmission loss probability (applies to control packets and
    /// acknowledgments independently).
    pub loss_probability: f64,
    /// Airtime of a control packet (and of an acknowledgment).
    pub control_airtime: f64,
    /// Receiver turnaround before the acknowledgment starts.
    pub ack_turnaround: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            dwell: 2.4e-3,
            ack_timeout: 1.0e-3,
            retune_latency: 0.0,
            default_band: 0,
            loss_probability: 0.0,
            control_airtime: 100e-6,
            ack_turnaround: 50e-6,
        }
    }
}

impl ProtocolConfig {
    fn validate(&self, plan: &BandPlan) -> Result<()> {
        let span = self.handshake_span();
        if self.dwell <= span {
            return Err(Error::InvalidConfig(format!(
                "dwell {} s must exceed the handshake span {} s",
                self.dwell, span
            )));
        }
        if self.ack_timeout < span {
            return Err(Error::InvalidConfig(
                "ack_timeout must cover at least one handshake attempt".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.loss_probability) {
            return Err(Error::InvalidConfig(
                "loss_probability must be in [0, 1)".into(),
            ));
        }
        if self.default_band >= plan.len() {
            return Err(Error::InvalidConfig(format!(
                "default_band {} outside plan of {} bands",
                self.default_band,
                plan.len()
            )));
        }
        Ok(())
    }

    /// Control + turnaround + acknowledgment.
    pub fn handshake_span(&self) -> f64 {
        2.0 * self.control_airtime + self.ack_turnaround
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeId {
    Tx,
    Rx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventType {
    CaptureStart,
    ControlSent,
    ControlLost,
    AckSent,
    AckLost,
    Retune,
    Revert,
    Complete,
}

impl EventType {
    pub fn as_str(self) -> &'static str {
        match self {
            EventType::CaptureStart => "capture_start",
            EventType::ControlSent => "control_sent",
            EventType::ControlLost => "control_lost",
            EventType::AckSent => "ack_sent",
            EventType::AckLost => "ack_lost",
            EventType::Retune => "retune",
            EventType::Revert => "revert",
            EventType::Complete => "complete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub node: NodeId,
    pub event: EventType,
    pub band: usize,
}

/// Outcome of one full sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTrace {
    /// Committed capture start times, in commit order (one per band).
    pub capture_times: Vec<(usize, f64)>,
    /// Time until every band was captured and both nodes were parked back
    /// on the default band.
    pub total_duration: f64,
    /// Revert-to-default events across both nodes.
    pub timeouts: usize,
    pub reverted_to_default: bool,
    /// Both nodes parked on the default band when the simulation drained.
    pub synchronized_end: bool,
    pub events: Vec<TraceEvent>,
}

impl SweepTrace {
    /// Export the event log as `event_time,node,event_type,band`.
    pub fn write_events_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "event_time,node,event_type,band")?;
        for e in &self.events {
            let node = match e.node {
                NodeId::Tx => "tx",
                NodeId::Rx => "rx",
            };
            writeln!(w, "{},{},{},{}", e.time, node, e.event.as_str(), e.band)?;
        }
        Ok(())
    }
}

/// Loss decisions per transmission: seeded Bernoulli draws, or a scripted
/// prefix (used by the exhaustive loss-pattern checks) followed by no loss.
enum LossSource {
    Random(ChaCha8Rng, f64),
    Scripted(Vec<bool>, usize),
}

impl LossSource {
    fn lost(&mut self) -> bool {
        match self {
            LossSource::Random(rng, p) => *p > 0.0 && rng.gen_bool(*p),
            LossSource::Scripted(pattern, next) => {
                let v = pattern.get(*next).copied().unwrap_or(false);
                *next += 1;
                v
            }
        }
    }
}

/// Run one sweep with seeded random losses.
pub fn run_sweep(plan: &BandPlan, config: &ProtocolConfig, seed: u64) -> Result<SweepTrace> {
    let loss = LossSource::Random(ChaCha8Rng::seed_from_u64(seed), config.loss_probability);
    simulate(plan, config, loss)
}

/// Run one sweep with a scripted loss prefix (transmissions beyond the
/// pattern are delivered). Drives the protocol model checks.
pub fn run_sweep_with_losses(
    plan: &BandPlan,
    config: &ProtocolConfig,
    pattern: &[bool],
) -> Result<SweepTrace> {
    let loss = LossSource::Scripted(pattern.to_vec(), 0);
    simulate(plan, config, loss)
}

/// Sorted sweep durations over `trials` seeded runs.
pub fn sweep_duration_cdf(
    plan: &BandPlan,
    config: &ProtocolConfig,
    trials: usize,
    base_seed: u64,
) -> Result<Vec<f64>> {
    let mut durations = Vec::with_capacity(trials);
    for t in 0..trials {
        let trace = run_sweep(plan, config, derive_seed(base_seed, t as u64))?;
        durations.push(trace.total_duration);
    }
    durations.sort_by(|a, b| a.partial_cmp(b).expect("finite durations"));
    Ok(durations)
}

const NS: f64 = 1e9;

fn ns(seconds: f64) -> u64 {
    (seconds * NS).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ev {
    TxDwellEnd { epoch: u64 },
    TxAckWindow { epoch: u64 },
    TxArrive { band: usize },
    /// Control packet delivery at the receiver.
    ControlArrive { epoch: u64, band: usize, next: usize },
    /// Receiver finished transmitting the acknowledgment.
    RxAckSent { next: usize },
    /// Acknowledgment delivery at the transmitter.
    AckArrive { epoch: u64, band: usize },
    RxArrive { band: usize },
    RxQuiet { epoch: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TxState {
    Dwelling,
    AwaitAck { epoch: u64, next: usize, first_attempt: u64 },
    Retuning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RxState {
    Listening,
    Acking,
    Retuning,
}

struct Engine<'a> {
    plan: &'a BandPlan,
    config: &'a ProtocolConfig,
    loss: LossSource,
    queue: BinaryHeap<Reverse<(u64, u64, EvKey)>>,
    seq: u64,
    events: Vec<TraceEvent>,
    // tx
    tx_band: usize,
    tx_state: TxState,
    tx_epoch: u64,
    cur: usize,
    pending_capture: Option<(usize, u64)>,
    captures: Vec<(usize, u64)>,
    // rx
    rx_band: usize,
    rx_state: RxState,
    rx_epoch: u64,
    timeouts: usize,
    completed_at: Option<u64>,
}

/// Heap entries need a total order; events are keyed by (time, seq) and the
/// payload rides along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct EvKey(u64);

fn simulate(plan: &BandPlan, config: &ProtocolConfig, loss: LossSource) -> Result<SweepTrace> {
    config.validate(plan)?;
    let mut payloads: Vec<Ev> = Vec::new();
    let mut engine = Engine {
        plan,
        config,
        loss,
        queue: BinaryHeap::new(),
        seq: 0,
        events: Vec::new(),
        tx_band: config.default_band,
        tx_state: TxState::Retuning,
        tx_epoch: 0,
        cur: 0,
        pending_capture: None,
        captures: Vec::new(),
        rx_band: config.default_band,
        rx_state: RxState::Listening,
        rx_epoch: 0,
        timeouts: 0,
        completed_at: None,
    };

    // Both nodes start parked on the default band at t = 0.
    engine.schedule(&mut payloads, 0, Ev::TxArrive {
        band: config.default_band,
    });
    engine.arm_rx_quiet(&mut payloads, 0);

    let event_limit = 2_000_000usize;
    let mut processed = 0usize;
    while let Some(Reverse((t, _, key))) = engine.queue.pop() {
        processed += 1;
        if processed > event_limit {
            break;
        }
        let ev = payloads[key.0 as usize];
        engine.handle(&mut payloads, t, ev);
    }

    let synchronized_end = engine.tx_band == config.default_band
        && engine.rx_band == config.default_band
        && engine.rx_state == RxState::Listening;
    let total = engine.completed_at.unwrap_or_else(|| {
        engine
            .events
            .last()
            .map(|e| ns(e.time))
            .unwrap_or(0)
    });
    Ok(SweepTrace {
        capture_times: engine
            .captures
            .iter()
            .map(|&(b, t)| (b, t as f64 / NS))
            .collect(),
        total_duration: total as f64 / NS,
        timeouts: engine.timeouts,
        reverted_to_default: engine.timeouts > 0,
        synchronized_end,
        events: engine.events,
    })
}

impl<'a> Engine<'a> {
    fn schedule(&mut self, payloads: &mut Vec<Ev>, t: u64, ev: Ev) {
        let key = EvKey(payloads.len() as u64);
        payloads.push(ev);
        self.queue.push(Reverse((t, self.seq, key)));
        self.seq += 1;
    }

    fn log(&mut self, t: u64, node: NodeId, event: EventType, band: usize) {
        self.events.push(TraceEvent {
            time: t as f64 / NS,
            node,
            event,
            band,
        });
    }

    fn rx_quiet_ns(&self) -> u64 {
        ns(self.config.dwell + self.config.ack_timeout + self.config.handshake_span())
    }

    fn arm_rx_quiet(&mut self, payloads: &mut Vec<Ev>, now: u64) {
        self.rx_epoch += 1;
        let epoch = self.rx_epoch;
        let deadline = now + self.rx_quiet_ns();
        self.schedule(payloads, deadline, Ev::RxQuiet { epoch });
    }

    /// The band the transmitter wants both nodes on next.
    fn advertised_next(&self) -> usize {
        if self.pending_capture.is_some() {
            if self.cur + 1 < self.plan.len() {
                self.plan.bands[self.cur + 1].index
            } else {
                self.config.default_band
            }
        } else if self.cur < self.plan.len() {
            self.plan.bands[self.cur].index
        } else {
            self.config.default_band
        }
    }

    fn send_control(&mut self, payloads: &mut Vec<Ev>, now: u64, first_attempt: Option<u64>) {
        let next = self.advertised_next();
        self.tx_epoch += 1;
        let epoch = self.tx_epoch;
        self.tx_state = TxState::AwaitAck {
            epoch,
            next,
            first_attempt: first_attempt.unwrap_or(now),
        };
        let air = ns(self.config.control_airtime);
        let span = ns(self.config.handshake_span());
        if self.loss.lost() {
            self.log(now, NodeId::Tx, EventType::ControlLost, self.tx_band);
        } else {
            self.log(now, NodeId::Tx, EventType::ControlSent, self.tx_band);
            self.schedule(payloads, now + air, Ev::ControlArrive {
                epoch,
                band: self.tx_band,
                next,
            });
        }
        // The ack, if any, lands exactly at the window end; expire just after.
        self.schedule(payloads, now + span + 1, Ev::TxAckWindow { epoch });
    }

    fn tx_revert(&mut self, payloads: &mut Vec<Ev>, now: u64) {
        self.timeouts += 1;
        self.pending_capture = None;
        self.log(now, NodeId::Tx, EventType::Revert, self.config.default_band);
        self.tx_state = TxState::Retuning;
        // Re-enter through the arrival logic even when already home: if the
        // outstanding band is the default one its dwell restarts there.
        let t = if self.tx_band == self.config.default_band {
            now
        } else {
            now + ns(self.config.retune_latency)
        };
        self.schedule(payloads, t, Ev::TxArrive {
            band: self.config.default_band,
        });
    }

    fn handle(&mut self, payloads: &mut Vec<Ev>, t: u64, ev: Ev) {
        match ev {
            Ev::TxArrive { band } => {
                self.tx_band = band;
                let done_capturing = self.cur >= self.plan.len();
                if done_capturing && band == self.config.default_band {
                    if self.completed_at.is_none() {
                        self.completed_at = Some(t);
                        self.log(t, NodeId::Tx, EventType::Complete, band);
                    }
                    return;
                }
                if !done_capturing && band == self.plan.bands[self.cur].index {
                    // Both sides were advertised here; capture, then hand
                    // off at the dwell tail.
                    self.tx_state = TxState::Dwelling;
                    self.pending_capture = Some((band, t));
                    self.log(t, NodeId::Tx, EventType::CaptureStart, band);
                    self.tx_epoch += 1;
                    let end = t + ns(self.config.dwell) - ns(self.config.handshake_span());
                    self.schedule(payloads, end, Ev::TxDwellEnd {
                        epoch: self.tx_epoch,
                    });
                } else {
                    // Off-sequence (rendezvous on default): advertise the
                    // outstanding band immediately.
                    self.send_control(payloads, t, None);
                }
            }
            Ev::TxDwellEnd { epoch } => {
                if self.tx_state == TxState::Dwelling && epoch == self.tx_epoch {
                    self.send_control(payloads, t, None);
                }
            }
            Ev::TxAckWindow { epoch } => {
                let TxState::AwaitAck {
                    epoch: cur_epoch,
                    first_attempt,
                    ..
                } = self.tx_state
                else {
                    return;
                };
                if epoch != cur_epoch {
                    return;
                }
                if t.saturating_sub(first_attempt) >= ns(self.config.ack_timeout) {
                    self.tx_revert(payloads, t);
                } else {
                    self.send_control(payloads, t, Some(first_attempt));
                }
            }
            Ev::ControlArrive { epoch, band, next } => {
                if self.rx_state != RxState::Listening || self.rx_band != band {
                    return;
                }
                self.rx_state = RxState::Acking;
                self.rx_epoch += 1;
                let done = t + ns(self.config.ack_turnaround) + ns(self.config.control_airtime);
                if self.loss.lost() {
                    self.log(t, NodeId::Rx, EventType::AckLost, band);
                } else {
                    self.log(t, NodeId::Rx, EventType::AckSent, band);
                    self.schedule(payloads, done, Ev::AckArrive { epoch, band });
                }
                self.schedule(payloads, done, Ev::RxAckSent { next });
            }
            Ev::RxAckSent { next } => {
                if self.rx_state != RxState::Acking {
                    return;
                }
                if next == self.rx_band {
                    self.rx_state = RxState::Listening;
                    self.arm_rx_quiet(payloads, t);
                } else {
                    self.rx_state = RxState::Retuning;
                    self.rx_epoch += 1;
                    self.log(t, NodeId::Rx, EventType::Retune, next);
                    let arrive = t + ns(self.config.retune_latency);
                    self.schedule(payloads, arrive, Ev::RxArrive { band: next });
                }
            }
            Ev::RxArrive { band } => {
                self.rx_band = band;
                self.rx_state = RxState::Listening;
                self.arm_rx_quiet(payloads, t);
            }
            Ev::AckArrive { epoch, band } => {
                let TxState::AwaitAck {
                    epoch: cur_epoch,
                    next,
                    ..
                } = self.tx_state
                else {
                    return;
                };
                if epoch != cur_epoch || self.tx_band != band {
                    return;
                }
                // Handshake success: commit the pending capture.
                if let Some((b, start)) = self.pending_capture.take() {
                    self.captures.push((b, start));
                    self.cur += 1;
                }
                if next == self.tx_band {
                    // Homing handshake acknowledged while already parked on
                    // the default band.
                    debug_assert!(self.cur >= self.plan.len());
                    if self.cur >= self.plan.len() && self.completed_at.is_none() {
                        self.completed_at = Some(t);
                        self.log(t, NodeId::Tx, EventType::Complete, self.tx_band);
                    }
                    self.tx_state = TxState::Dwelling;
                } else {
                    self.tx_state = TxState::Retuning;
                    self.log(t, NodeId::Tx, EventType::Retune, next);
                    let arrive = t + ns(self.config.retune_latency);
                    self.schedule(payloads, arrive, Ev::TxArrive { band: next });
                }
            }
            Ev::RxQuiet { epoch } => {
                if self.rx_state != RxState::Listening || epoch != self.rx_epoch {
                    return;
                }
                if self.rx_band != self.config.default_band {
                    self.timeouts += 1;
                    self.log(t, NodeId::Rx, EventType::Revert, self.config.default_band);
                    self.rx_state = RxState::Retuning;
                    let arrive = t + ns(self.config.retune_latency);
                    self.schedule(payloads, arrive, Ev::RxArrive {
                        band: self.config.default_band,
                    });
                }
                // Parked on default: no timer to re-arm.
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::band_plan::default_band_plan;
    use crate::math::{median, quantile};

    #[test]
    fn zero_loss_sweep_is_dwell_times_bands() {
        let plan = default_band_plan();
        let config = ProtocolConfig::default();
        let trace = run_sweep(&plan, &config, 1).unwrap();
        assert_eq!(trace.capture_times.len(), 35);
        assert!((trace.total_duration - 0.084).abs() < 2e-3, "{}", trace.total_duration);
        assert_eq!(trace.timeouts, 0);
        assert!(trace.synchronized_end);
        // Capture timestamps strictly increase.
        for w in trace.capture_times.windows(2) {
            assert!(w[1].1 > w[0].1);
        }
    }

    #[test]
    fn single_band_sweep_is_about_one_dwell() {
        let plan = BandPlan::new(vec![default_band_plan().bands[0].clone()]).unwrap();
        let config = ProtocolConfig::default();
        let trace = run_sweep(&plan, &config, 1).unwrap();
        assert!((trace.total_duration - config.dwell).abs() < 1e-4);
    }

    #[test]
    fn losses_extend_but_still_synchronize() {
        let plan = default_band_plan();
        let config = ProtocolConfig {
            loss_probability: 0.2,
            ..ProtocolConfig::default()
        };
        let clean = run_sweep(&plan, &ProtocolConfig::default(), 0).unwrap();
        for seed in 0..20 {
            let trace = run_sweep(&plan, &config, seed).unwrap();
            assert!(trace.total_duration > clean.total_duration);
            assert!(trace.synchronized_end, "seed {seed}");
            assert_eq!(trace.capture_times.len(), 35, "seed {seed}");
            let mut bands: Vec<usize> = trace.capture_times.iter().map(|c| c.0).collect();
            bands.sort_unstable();
            bands.dedup();
            assert_eq!(bands.len(), 35, "every band captured once");
        }
    }

    /// Model check: every loss pattern across the first six transmissions
    /// still captures every band and ends with both nodes on the default
    /// band.
    #[test]
    fn exhaustive_loss_patterns_terminate_synchronized() {
        let plan = BandPlan::new(default_band_plan().bands[..3].to_vec()).unwrap();
        let config = ProtocolConfig {
            retune_latency: 20e-6,
            ..ProtocolConfig::default()
        };
        for pattern_bits in 0..(1u32 << 6) {
            let pattern: Vec<bool> = (0..6).map(|b| pattern_bits & (1 << b) != 0).collect();
            let trace = run_sweep_with_losses(&plan, &config, &pattern).unwrap();
            assert_eq!(trace.capture_times.len(), 3, "pattern {pattern:?}");
            assert!(trace.synchronized_end, "pattern {pattern:?}");
        }
    }

    #[test]
    fn duration_cdf_zero_loss_is_degenerate() {
        let plan = default_band_plan();
        let config = ProtocolConfig::default();
        let durations = sweep_duration_cdf(&plan, &config, 16, 9).unwrap();
        assert!(durations.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn duration_cdf_with_loss() {
        let plan = default_band_plan();
        let config = ProtocolConfig {
            loss_probability: 0.05,
            ..ProtocolConfig::default()
        };
        let durations = sweep_duration_cdf(&plan, &config, 100, 3).unwrap();
        let med = median(&durations);
        assert!(med >= 0.084 && med < 0.120, "median {med}");
        assert!(quantile(&durations, 1.0) < 0.5);
    }

    #[test]
    fn three_ms_dwell_is_within_coherence_envelope() {
        let plan = default_band_plan();
        let config = ProtocolConfig {
            dwell: 3.0e-3,
            ..ProtocolConfig::default()
        };
        let trace = run_sweep(&plan, &config, 1).unwrap();
        assert!(trace.total_duration >= 0.084 && trace.total_duration <= 0.106);
    }

    #[test]
    fn events_csv_export() {
        let plan = BandPlan::new(default_band_plan().bands[..2].to_vec()).unwrap();
        let trace = run_sweep(&plan, &ProtocolConfig::default(), 4).unwrap();
        let mut buf = Vec::new();
        trace.write_events_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("event_time,node,event_type,band\n"));
        assert!(text.contains("capture_start"));
        assert!(text.contains("complete"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let plan = default_band_plan();
        let bad = ProtocolConfig {
            dwell: 100e-6,
            ..ProtocolConfig::default()
        };
        assert!(run_sweep(&plan, &bad, 0).is_err());
        let bad = ProtocolConfig {
            loss_probability: 1.0,
            ..ProtocolConfig::default()
        };
        assert!(run_sweep(&plan, &bad, 0).is_err());
        let bad = ProtocolConfig {
            default_band: 99,
            ..ProtocolConfig::default()
        };
        assert!(run_sweep(&plan, &bad, 0).is_err());
    }
}
