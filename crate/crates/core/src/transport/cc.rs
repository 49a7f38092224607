//! Simplified congestion-control models.
//!
//! Every protocol exposes the same surface: a pacing rate, an optional
//! in-flight cap, and reactions to acknowledgements and (classified) losses.
//! Window-based protocols convert their window to a rate as
//! `window * packet_bits / rtt_estimate`. All rates are clamped to
//! `[one packet per RTT, link bitrate]`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::LossCause;
use crate::error::SimError;
use crate::sim::{RngStream, Seconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    Bbr,
    Copa,
    Cubic,
    Eaatp,
    Indigo,
    Verus,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::Bbr,
        Protocol::Copa,
        Protocol::Cubic,
        Protocol::Eaatp,
        Protocol::Indigo,
        Protocol::Verus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Bbr => "BBR",
            Protocol::Copa => "Copa",
            Protocol::Cubic => "CUBIC",
            Protocol::Eaatp => "EAATP",
            Protocol::Indigo => "Indigo",
            Protocol::Verus => "Verus",
        }
    }

    /// Whether the protocol reads every loss as congestion.
    pub fn loss_is_congestion(self) -> bool {
        !matches!(self, Protocol::Eaatp)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SimError::Input(format!("unknown protocol `{s}`")))
    }
}

/// Tunables for all six models. Immutable for the duration of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcParams {
    pub rtt_gain: f64,
    pub initial_window: f64,
    pub cubic_c: f64,
    pub cubic_beta: f64,
    pub bbr_startup_gain: f64,
    pub bbr_probe_gains: [f64; 8],
    pub bbr_filter_rounds: u32,
    pub copa_delta: f64,
    pub indigo_noise: (f64, f64),
    pub indigo_backoff: f64,
    pub verus_increase: f64,
    pub verus_decrease: f64,
    /// Queueing delay below `verus_grow_threshold * serialization` lets Verus grow.
    pub verus_grow_threshold: f64,
    /// Queueing delay above `verus_spike_fraction * rtt_min` is a delay spike.
    pub verus_spike_fraction: f64,
    pub eaatp_accuracy: f64,
}

impl Default for CcParams {
    fn default() -> Self {
        Self {
            rtt_gain: 1.0 / 8.0,
            initial_window: 10.0,
            cubic_c: 0.4,
            cubic_beta: 0.7,
            bbr_startup_gain: 2.885,
            bbr_probe_gains: [1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            bbr_filter_rounds: 10,
            copa_delta: 0.5,
            indigo_noise: (0.95, 1.05),
            indigo_backoff: 0.85,
            verus_increase: 1.1,
            verus_decrease: 0.5,
            verus_grow_threshold: 2.0,
            verus_spike_fraction: 0.5,
            eaatp_accuracy: 0.95,
        }
    }
}

/// What the sender knows about the path when computing a rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathInfo {
    pub bitrate_bps: f64,
    pub packet_bits: f64,
    /// `bitrate / active flows` on the shared bottleneck.
    pub fair_share_bps: f64,
}

impl PathInfo {
    pub fn serialization(&self) -> Seconds {
        self.packet_bits / self.bitrate_bps
    }
}

pub fn fair_share(bitrate_bps: f64, active_flows: usize) -> f64 {
    assert!(active_flows >= 1, "fair share needs at least one active flow");
    bitrate_bps / active_flows as f64
}

/// Returns `true_cause` with probability `accuracy`, else the other cause.
pub fn classify_loss(true_cause: LossCause, accuracy: f64, rng: &mut RngStream) -> LossCause {
    let truth = true_cause.coarse();
    if rng.chance(accuracy) {
        truth
    } else {
        match truth {
            LossCause::Congestion => LossCause::Channel,
            _ => LossCause::Congestion,
        }
    }
}

/// Information carried by an acknowledgement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckInfo {
    pub now: Seconds,
    pub rtt_sample: Seconds,
    pub bytes: u32,
    /// Flow-wide delivered bytes including this packet.
    pub delivered: u64,
    /// Flow-wide delivered bytes when this packet was sent.
    pub delivered_at_send: u64,
    /// Time of the most recent delivery when this packet was sent.
    pub delivered_time_at_send: Seconds,
    /// Sent while the flow had nothing else to send.
    pub app_limited: bool,
    /// Sent when the packet filled the congestion window.
    pub window_limited: bool,
}

#[derive(Debug, Clone)]
struct CubicState {
    cwnd: f64,
    ssthresh: f64,
    w_max: f64,
    k: f64,
    epoch_start: Option<Seconds>,
    last_reduction: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BbrMode {
    Startup,
    Drain,
    ProbeBw,
}

#[derive(Debug, Clone)]
struct BbrState {
    mode: BbrMode,
    btl_bw: f64,
    samples: VecDeque<(u64, f64)>,
    round: u64,
    next_round_delivered: u64,
    full_bw: f64,
    full_bw_rounds: u32,
    phase: usize,
    phase_start: Seconds,
}

#[derive(Debug, Clone)]
struct CopaState {
    cwnd: f64,
    velocity: f64,
    increasing: bool,
    same_direction_rtts: u32,
    epoch_start: Seconds,
    epoch_increasing: Option<bool>,
}

#[derive(Debug, Clone)]
struct IndigoState {
    noise: f64,
    backoff: bool,
    epoch_start: Seconds,
    rng: RngStream,
}

#[derive(Debug, Clone)]
struct VerusState {
    rate: f64,
    /// Loss recovery: the rate is cut until the next epoch.
    backoff: bool,
    epoch_start: Seconds,
    epoch_max_rtt: Seconds,
    epoch_acks: u32,
    last_reduction: Seconds,
}

#[derive(Debug, Clone)]
struct EaatpState {
    rate: Option<f64>,
    rng: RngStream,
    congestion_calls: u64,
    channel_calls: u64,
}

#[derive(Debug, Clone)]
enum Model {
    Cubic(CubicState),
    Bbr(BbrState),
    Copa(CopaState),
    Indigo(IndigoState),
    Verus(VerusState),
    Eaatp(EaatpState),
}

/// Per-flow congestion-control state.
#[derive(Debug, Clone)]
pub struct CcState {
    protocol: Protocol,
    params: CcParams,
    rtt_estimate: Option<Seconds>,
    initial_rtt: Seconds,
    rtt_min: Seconds,
    model: Model,
}

impl CcState {
    /// `initial_rtt` is used until the first sample arrives; `rng` feeds the
    /// protocols that randomise (Indigo's noise, EAATP's loss classifier).
    pub fn new(protocol: Protocol, params: CcParams, initial_rtt: Seconds, rng: RngStream) -> Self {
        let model = match protocol {
            Protocol::Cubic => Model::Cubic(CubicState {
                cwnd: params.initial_window,
                ssthresh: f64::INFINITY,
                w_max: 0.0,
                k: 0.0,
                epoch_start: None,
                last_reduction: f64::NEG_INFINITY,
            }),
            Protocol::Bbr => Model::Bbr(BbrState {
                mode: BbrMode::Startup,
                btl_bw: 0.0,
                samples: VecDeque::new(),
                round: 0,
                next_round_delivered: 0,
                full_bw: 0.0,
                full_bw_rounds: 0,
                phase: (rng.clone().next_u64() % 8) as usize,
                phase_start: 0.0,
            }),
            Protocol::Copa => Model::Copa(CopaState {
                cwnd: params.initial_window,
                velocity: 1.0,
                increasing: true,
                same_direction_rtts: 0,
                epoch_start: 0.0,
                epoch_increasing: None,
            }),
            Protocol::Indigo => Model::Indigo(IndigoState {
                noise: 1.0,
                backoff: false,
                epoch_start: 0.0,
                rng,
            }),
            Protocol::Verus => Model::Verus(VerusState {
                rate: 0.0,
                backoff: false,
                epoch_start: 0.0,
                epoch_max_rtt: 0.0,
                epoch_acks: 0,
                last_reduction: f64::NEG_INFINITY,
            }),
            Protocol::Eaatp => Model::Eaatp(EaatpState {
                rate: None,
                rng,
                congestion_calls: 0,
                channel_calls: 0,
            }),
        };
        Self {
            protocol,
            params,
            rtt_estimate: None,
            initial_rtt,
            rtt_min: f64::INFINITY,
            model,
        }
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn params(&self) -> &CcParams {
        &self.params
    }

    pub fn rtt_estimate(&self) -> Seconds {
        self.rtt_estimate.unwrap_or(self.initial_rtt)
    }

    pub fn rtt_min(&self) -> Seconds {
        if self.rtt_min.is_finite() {
            self.rtt_min
        } else {
            self.initial_rtt
        }
    }

    /// Current window in packets, for window-based protocols.
    pub fn window(&self) -> Option<f64> {
        match &self.model {
            Model::Cubic(s) => Some(s.cwnd),
            Model::Copa(s) => Some(s.cwnd),
            _ => None,
        }
    }

    /// Loss verdicts EAATP has produced so far: (congestion, channel).
    pub fn classifier_counts(&self) -> Option<(u64, u64)> {
        match &self.model {
            Model::Eaatp(s) => Some((s.congestion_calls, s.channel_calls)),
            _ => None,
        }
    }

    fn floor_bps(&self, path: &PathInfo) -> f64 {
        path.packet_bits / self.rtt_estimate()
    }

    fn window_rate(&self, window: f64, path: &PathInfo) -> f64 {
        window * path.packet_bits / self.rtt_estimate()
    }

    /// Allowed sending rate in bits per second.
    pub fn pacing_rate(&self, path: &PathInfo) -> f64 {
        let raw = match &self.model {
            Model::Cubic(s) => self.window_rate(s.cwnd, path),
            Model::Copa(s) => self.window_rate(s.cwnd, path),
            Model::Bbr(s) => {
                let bw = if s.btl_bw > 0.0 {
                    s.btl_bw
                } else {
                    self.window_rate(self.params.initial_window, path)
                };
                let gain = match s.mode {
                    BbrMode::Startup => self.params.bbr_startup_gain,
                    BbrMode::Drain => 1.0 / self.params.bbr_startup_gain,
                    BbrMode::ProbeBw => self.params.bbr_probe_gains[s.phase],
                };
                gain * bw
            }
            Model::Indigo(s) => {
                let backoff = if s.backoff { self.params.indigo_backoff } else { 1.0 };
                path.fair_share_bps * s.noise * backoff
            }
            Model::Verus(s) => {
                let rate = if s.rate > 0.0 {
                    s.rate
                } else {
                    self.window_rate(self.params.initial_window, path)
                };
                if s.backoff {
                    rate * self.params.verus_decrease
                } else {
                    rate
                }
            }
            Model::Eaatp(s) => s.rate.unwrap_or(path.fair_share_bps),
        };
        raw.max(self.floor_bps(path)).min(path.bitrate_bps)
    }

    /// Window protocols fall back to the initial window after sitting idle
    /// for longer than a retransmission timeout.
    pub fn restart_after_idle(&mut self) {
        let iw = self.params.initial_window;
        match &mut self.model {
            Model::Cubic(s) => {
                s.cwnd = s.cwnd.min(iw);
                s.epoch_start = None;
            }
            Model::Copa(s) => {
                s.cwnd = s.cwnd.min(iw);
                s.velocity = 1.0;
                s.same_direction_rtts = 0;
                s.epoch_increasing = None;
            }
            _ => {}
        }
    }

    /// Packets allowed in flight, when the protocol is window-limited.
    pub fn inflight_limit(&self) -> Option<f64> {
        self.window()
    }

    fn update_rtt(&mut self, sample: Seconds) {
        if sample.is_nan() || sample <= 0.0 {
            return;
        }
        self.rtt_min = self.rtt_min.min(sample);
        self.rtt_estimate = Some(match self.rtt_estimate {
            None => sample,
            Some(est) => est + self.params.rtt_gain * (sample - est),
        });
    }

    pub fn on_ack(&mut self, ack: &AckInfo, path: &PathInfo) {
        self.update_rtt(ack.rtt_sample);
        let rtt = self.rtt_estimate();
        let rtt_min = self.rtt_min();
        let params = self.params;
        let ser = path.serialization();
        match &mut self.model {
            // Windows only grow while the sender is using them.
            Model::Cubic(_) if !ack.window_limited => {}
            Model::Cubic(s) => cubic_on_ack(s, &params, ack.now, rtt),
            Model::Bbr(s) => bbr_on_ack(s, &params, ack, rtt_min),
            Model::Copa(s) => {
                let dq = (rtt - rtt_min).max(0.0);
                let target_pps = if dq > 1e-9 {
                    1.0 / (params.copa_delta * dq)
                } else {
                    f64::INFINITY
                };
                let current_pps = s.cwnd / rtt;
                let increase = current_pps <= target_pps;
                let step = s.velocity / (params.copa_delta * s.cwnd);
                if increase {
                    if ack.window_limited {
                        s.cwnd += step;
                    }
                } else {
                    s.cwnd = (s.cwnd - step).max(1.0);
                }
                // Velocity doubles once the direction has held for three RTTs.
                match s.epoch_increasing {
                    None => {
                        s.epoch_increasing = Some(increase);
                        s.epoch_start = ack.now;
                    }
                    Some(dir) if dir != increase => {
                        s.velocity = 1.0;
                        s.same_direction_rtts = 0;
                        s.epoch_increasing = Some(increase);
                        s.epoch_start = ack.now;
                    }
                    Some(_) if ack.now - s.epoch_start >= rtt => {
                        s.same_direction_rtts += 1;
                        if s.same_direction_rtts >= 3 {
                            s.velocity = (s.velocity * 2.0).min(1024.0);
                        }
                        s.epoch_start = ack.now;
                    }
                    Some(_) => {}
                }
                s.increasing = increase;
                s.cwnd = s.cwnd.min(path.bitrate_bps * rtt / path.packet_bits);
            }
            Model::Indigo(s) => {
                if ack.now - s.epoch_start >= rtt {
                    let (lo, hi) = params.indigo_noise;
                    s.noise = lo + (hi - lo) * s.rng.unit();
                    s.backoff = false;
                    s.epoch_start = ack.now;
                }
            }
            Model::Verus(s) => {
                if s.rate <= 0.0 {
                    s.rate = params.initial_window * path.packet_bits / rtt;
                }
                s.epoch_acks += 1;
                s.epoch_max_rtt = s.epoch_max_rtt.max(ack.rtt_sample);
                if ack.now - s.epoch_start >= rtt {
                    let dq = (rtt - rtt_min).max(0.0);
                    let spike = s.epoch_max_rtt - rtt_min > params.verus_spike_fraction * rtt_min;
                    if spike && ack.now - s.last_reduction >= rtt {
                        s.rate *= params.verus_decrease;
                        s.last_reduction = ack.now;
                    } else if dq < params.verus_grow_threshold * ser {
                        s.rate *= params.verus_increase;
                    }
                    s.rate = s.rate.clamp(path.packet_bits / rtt, path.bitrate_bps);
                    s.backoff = false;
                    s.epoch_start = ack.now;
                    s.epoch_max_rtt = 0.0;
                    s.epoch_acks = 0;
                }
            }
            Model::Eaatp(s) => s.rate = None,
        }
    }

    /// Reaction to a detected loss of a packet sent at `sent_at`.
    /// `cause` is what the sender believes; only EAATP distinguishes causes.
    pub fn on_loss(&mut self, cause: LossCause, sent_at: Seconds, now: Seconds, path: &PathInfo) {
        let rtt = self.rtt_estimate();
        let params = self.params;
        match &mut self.model {
            Model::Cubic(s) => {
                // One reduction per window of data.
                if sent_at <= s.last_reduction {
                    return;
                }
                s.w_max = s.cwnd;
                s.cwnd = (s.cwnd * params.cubic_beta).max(1.0);
                s.ssthresh = s.cwnd;
                s.epoch_start = None;
                s.last_reduction = now;
            }
            // Loss-agnostic models.
            Model::Bbr(_) | Model::Copa(_) => {}
            Model::Indigo(s) => s.backoff = true,
            // The delay profile, not loss, sets Verus' rate; a loss cuts it
            // for one epoch while the packet is recovered.
            Model::Verus(s) => {
                if s.rate <= 0.0 {
                    s.rate = params.initial_window * path.packet_bits / rtt;
                }
                s.backoff = true;
                let _ = (sent_at, now);
            }
            Model::Eaatp(s) => match cause.coarse() {
                LossCause::Congestion => {
                    s.congestion_calls += 1;
                    s.rate = Some(path.fair_share_bps);
                }
                _ => s.channel_calls += 1,
            },
        }
    }

    /// EAATP runs its loss classifier; everyone else treats loss as congestion.
    pub fn perceive_loss(&mut self, true_cause: LossCause) -> LossCause {
        let accuracy = self.params.eaatp_accuracy;
        match &mut self.model {
            Model::Eaatp(s) => classify_loss(true_cause, accuracy, &mut s.rng),
            _ => LossCause::Congestion,
        }
    }
}

fn cubic_on_ack(s: &mut CubicState, params: &CcParams, now: Seconds, rtt: Seconds) {
    if s.cwnd < s.ssthresh {
        s.cwnd += 1.0;
        return;
    }
    let epoch = *s.epoch_start.get_or_insert_with(|| {
        if s.w_max <= s.cwnd {
            s.w_max = s.cwnd;
            s.k = 0.0;
        } else {
            s.k = (s.w_max * (1.0 - params.cubic_beta) / params.cubic_c).cbrt();
        }
        now
    });
    let target = cubic_window(params.cubic_c, s.k, s.w_max, now - epoch + rtt);
    // Reno-friendly estimate keeps CUBIC from being slower than AIMD.
    let beta = params.cubic_beta;
    let reno = s.w_max * beta + 3.0 * (1.0 - beta) / (1.0 + beta) * (now - epoch) / rtt;
    if target > s.cwnd {
        s.cwnd += (target - s.cwnd) / s.cwnd;
    } else {
        s.cwnd += 0.01 / s.cwnd;
    }
    s.cwnd = s.cwnd.max(reno).min(1e6);
}

/// `W(t) = C (t - K)^3 + W_max`.
pub fn cubic_window(c: f64, k: f64, w_max: f64, t: Seconds) -> f64 {
    c * (t - k).powi(3) + w_max
}

fn bbr_on_ack(s: &mut BbrState, params: &CcParams, ack: &AckInfo, rtt_min: Seconds) {
    if ack.delivered_at_send >= s.next_round_delivered {
        s.round += 1;
        s.next_round_delivered = ack.delivered;
        if s.mode == BbrMode::Startup {
            if s.btl_bw >= s.full_bw * 1.25 {
                s.full_bw = s.btl_bw;
                s.full_bw_rounds = 0;
            } else {
                s.full_bw_rounds += 1;
                if s.full_bw_rounds >= 3 {
                    s.mode = BbrMode::Drain;
                }
            }
        } else if s.mode == BbrMode::Drain {
            s.mode = BbrMode::ProbeBw;
            s.phase_start = ack.now;
        }
    }

    let interval = ack.now - ack.delivered_time_at_send;
    if interval > 0.0 {
        let rate = (ack.delivered - ack.delivered_at_send) as f64 * 8.0 / interval;
        if !ack.app_limited || rate >= s.btl_bw {
            s.samples.push_back((s.round, rate));
        }
    }
    let horizon = s.round.saturating_sub(u64::from(params.bbr_filter_rounds));
    // Keep the newest sample even when stale so an idle night does not erase
    // the estimate.
    while s.samples.len() > 1 && s.samples.front().is_some_and(|(r, _)| *r < horizon) {
        s.samples.pop_front();
    }
    s.btl_bw = s.samples.iter().map(|(_, r)| *r).fold(0.0, f64::max);

    if s.mode == BbrMode::ProbeBw && ack.now - s.phase_start >= rtt_min {
        s.phase = (s.phase + 1) % params.bbr_probe_gains.len();
        s.phase_start = ack.now;
    }
}
