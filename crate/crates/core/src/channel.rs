//! NVIS backbone and LoRa access links.
//!
//! A link is a drop-tail FIFO in front of a fixed-rate serializer. Because the
//! service time is deterministic, a packet's departure time is known the
//! moment it is enqueued, so the link needs no events of its own: the
//! occupancy at time `t` is the unserved work `busy_until - t`.
//!
//! Availability is applied as a per-packet erasure probability
//! `1 - availability(t)` evaluated when the packet goes on air.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scenario::ScheduleConfig;
use crate::sim::{hash_str, keyed_unit, Seconds, SECONDS_PER_HOUR};

pub const NVIS_BITRATE_BPS: f64 = 20_000.0;
pub const LORA_BITRATE_BPS: f64 = 5_470.0;
pub const NVIS_MAX_PAYLOAD: u32 = 242;
pub const LORA_MAX_PAYLOAD: u32 = 140;
pub const NVIS_ONE_WAY_DELAY: Seconds = 3.0;
pub const LORA_ONE_WAY_DELAY: Seconds = 0.05;
/// Links with a larger bandwidth-delay product are long fat networks.
pub const LFN_BDP_THRESHOLD_BYTES: f64 = 12_500.0;

pub const NVIS_DAY_AVAILABILITY: (f64, f64) = (0.70, 1.00);
pub const LORA_NLOS_AVAILABILITY: (f64, f64) = (0.02, 1.00);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkKind {
    Nvis,
    Lora,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub kind: LinkKind,
    pub bitrate_bps: f64,
    pub max_payload: u32,
    pub one_way_delay: Seconds,
    pub buffer_capacity: f64,
}

impl LinkModel {
    /// NVIS defaults; the buffer holds one bandwidth-delay product.
    pub fn nvis() -> Self {
        let mut m = Self {
            kind: LinkKind::Nvis,
            bitrate_bps: NVIS_BITRATE_BPS,
            max_payload: NVIS_MAX_PAYLOAD,
            one_way_delay: NVIS_ONE_WAY_DELAY,
            buffer_capacity: 0.0,
        };
        m.buffer_capacity = m.bdp_bytes();
        m
    }

    /// LoRa defaults. The shared access channel queues at most one sensing
    /// period of airtime: frames that cannot go out before the next round are
    /// dropped.
    pub fn lora() -> Self {
        Self {
            kind: LinkKind::Lora,
            bitrate_bps: LORA_BITRATE_BPS,
            max_payload: LORA_MAX_PAYLOAD,
            one_way_delay: LORA_ONE_WAY_DELAY,
            buffer_capacity: LORA_BITRATE_BPS / 8.0 * SECONDS_PER_HOUR,
        }
    }

    pub fn rtt(&self) -> Seconds {
        2.0 * self.one_way_delay
    }

    pub fn bdp_bytes(&self) -> f64 {
        self.bitrate_bps / 8.0 * self.rtt()
    }

    pub fn is_lfn(&self) -> bool {
        self.bdp_bytes() > LFN_BDP_THRESHOLD_BYTES
    }

    pub fn serialization(&self, bytes: u32) -> Seconds {
        f64::from(bytes) * 8.0 / self.bitrate_bps
    }

    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.bitrate_bps > 0.0 && self.bitrate_bps.is_finite()) {
            return Err(SimError::config(format!("{prefix}.bitrate_bps"), "must be > 0"));
        }
        if self.max_payload == 0 {
            return Err(SimError::config(format!("{prefix}.max_payload"), "must be > 0"));
        }
        if self.one_way_delay.is_nan() || self.one_way_delay < 0.0 {
            return Err(SimError::config(format!("{prefix}.one_way_delay_s"), "must be >= 0"));
        }
        if self.buffer_capacity.is_nan() || self.buffer_capacity < 0.0 {
            return Err(SimError::config(format!("{prefix}.buffer_bytes"), "must be >= 0"));
        }
        Ok(())
    }
}

/// Why a packet did not arrive. Recorded as ground truth; senders only ever
/// see a classified version of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossCause {
    Congestion,
    Channel,
    /// Channel loss while the NVIS link is in its nocturnal outage.
    Night,
}

impl LossCause {
    /// The two-way cause a loss classifier reasons about.
    pub fn coarse(self) -> LossCause {
        match self {
            LossCause::Night => LossCause::Channel,
            c => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeliveryOutcome {
    Delivered { at: Seconds },
    ChannelLost { cause: LossCause },
    QueueDropped,
}

impl DeliveryOutcome {
    pub fn true_cause(&self) -> Option<LossCause> {
        match self {
            DeliveryOutcome::Delivered { .. } => None,
            DeliveryOutcome::ChannelLost { cause } => Some(*cause),
            DeliveryOutcome::QueueDropped => Some(LossCause::Congestion),
        }
    }
}

/// Per-link hourly NVIS availability: zero at night, otherwise one
/// uniform[0.70, 1.00] value per link per hour.
#[derive(Debug, Clone)]
pub struct NvisAvailability {
    seed: u64,
    link: u64,
    schedule: ScheduleConfig,
    forced: Option<f64>,
    cache: Vec<Option<f64>>,
}

impl NvisAvailability {
    pub fn new(seed: u64, link: u64, schedule: ScheduleConfig) -> Self {
        Self {
            seed,
            link,
            schedule,
            forced: None,
            cache: Vec::new(),
        }
    }

    /// Pins availability to a constant at every hour, day or night.
    pub fn forced(mut self, value: f64) -> Self {
        self.forced = Some(value);
        self
    }

    pub fn at(&mut self, t: Seconds) -> f64 {
        if let Some(v) = self.forced {
            return v;
        }
        if !self.schedule.is_day(t) {
            return 0.0;
        }
        let hour = (t / SECONDS_PER_HOUR).floor().max(0.0) as usize;
        if hour >= self.cache.len() {
            self.cache.resize(hour + 1, None);
        }
        *self.cache[hour].get_or_insert_with(|| {
            let u = keyed_unit(&[self.seed, hash_str("nvis-availability"), self.link, hour as u64]);
            let (lo, hi) = NVIS_DAY_AVAILABILITY;
            lo + (hi - lo) * u
        })
    }
}

/// LoRa availability for one station during one hour.
pub fn lora_availability(los: bool, seed: u64, station: u32, hour: u32) -> f64 {
    if los {
        return 1.0;
    }
    let u = keyed_unit(&[seed, hash_str("lora-availability"), u64::from(station), u64::from(hour)]);
    let (lo, hi) = LORA_NLOS_AVAILABILITY;
    lo + (hi - lo) * u
}

/// Whether a station has LoRa line of sight to its gateway; a fixed site
/// property for the whole run.
pub fn station_has_los(los_fraction: f64, seed: u64, station: u32) -> bool {
    los_fraction >= 1.0 || keyed_unit(&[seed, hash_str("los"), u64::from(station)]) < los_fraction
}

/// Number of frames needed to carry `set_bytes` over a link.
pub fn fragment(set_bytes: u32, max_payload: u32) -> u32 {
    assert!(set_bytes > 0 && max_payload > 0, "fragment sizes must be positive");
    set_bytes.div_ceil(max_payload)
}

/// Queue + serializer state of one directed link.
#[derive(Debug, Clone)]
pub struct Link {
    model: LinkModel,
    busy_until: Seconds,
}

impl Link {
    pub fn new(model: LinkModel) -> Self {
        Self {
            model,
            busy_until: 0.0,
        }
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    /// Bytes queued or still being serialized at time `t`.
    pub fn backlog_bytes(&self, t: Seconds) -> f64 {
        (self.busy_until - t).max(0.0) * self.model.bitrate_bps / 8.0
    }

    /// Queueing delay a packet arriving at `t` would see.
    pub fn queue_delay(&self, t: Seconds) -> Seconds {
        (self.busy_until - t).max(0.0)
    }

    /// Sends a single frame. `erasure_draw` is a uniform [0, 1) value; the
    /// frame is erased when it is at or above `availability`.
    pub fn transmit(
        &mut self,
        bytes: u32,
        t: Seconds,
        availability: impl FnOnce(Seconds) -> f64,
        erasure_draw: f64,
    ) -> Result<DeliveryOutcome> {
        if bytes > self.model.max_payload {
            return Err(SimError::InvalidParameter(format!(
                "{bytes}-byte packet exceeds the {}-byte frame limit; fragment first",
                self.model.max_payload
            )));
        }
        Ok(self.transmit_bytes(bytes, t, availability, erasure_draw))
    }

    /// Like [`Link::transmit`] without the frame-size check; used for
    /// aggregated control traffic that occupies airtime as one block.
    pub fn transmit_bytes(
        &mut self,
        bytes: u32,
        t: Seconds,
        availability: impl FnOnce(Seconds) -> f64,
        erasure_draw: f64,
    ) -> DeliveryOutcome {
        let size = f64::from(bytes);
        // A packet that arrives to an idle link is always admitted.
        if self.busy_until > t && self.backlog_bytes(t) + size > self.model.buffer_capacity {
            return DeliveryOutcome::QueueDropped;
        }
        let start = self.busy_until.max(t);
        let finish = start + self.model.serialization(bytes);
        self.busy_until = finish;
        let avail = availability(start);
        if avail <= 0.0 {
            return DeliveryOutcome::ChannelLost {
                cause: LossCause::Night,
            };
        }
        if erasure_draw >= avail {
            return DeliveryOutcome::ChannelLost {
                cause: LossCause::Channel,
            };
        }
        DeliveryOutcome::Delivered {
            at: finish + self.model.one_way_delay,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::hours;

    #[test]
    fn nvis_availability_by_hour() {
        let mut a = NvisAvailability::new(3, 0, ScheduleConfig::default());
        assert_eq!(a.at(hours(2.0)), 0.0);
        assert_eq!(a.at(hours(17.5)), 0.0);
        let v = a.at(hours(10.0));
        assert!((0.70..=1.00).contains(&v));
        assert_eq!(a.at(hours(10.0) + 1800.0), v);
        // Different hours, different draws (overwhelmingly likely).
        assert_ne!(a.at(hours(11.0)), v);
    }

    #[test]
    fn forced_availability_ignores_night() {
        let mut a = NvisAvailability::new(3, 0, ScheduleConfig::default()).forced(1.0);
        assert_eq!(a.at(hours(3.0)), 1.0);
    }

    #[test]
    fn lora_availability_ranges() {
        assert_eq!(lora_availability(true, 1, 5, 3), 1.0);
        let n = 100_000u32;
        let mut sum = 0.0;
        for h in 0..n {
            let v = lora_availability(false, 1, 5, h);
            assert!((0.02..=1.00).contains(&v));
            sum += v;
        }
        let mean = sum / f64::from(n);
        assert!((mean - 0.51).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn idle_nvis_delivery_time() {
        let mut link = Link::new(LinkModel::nvis());
        let out = link.transmit(140, 100.0, |_| 1.0, 0.5).unwrap();
        let DeliveryOutcome::Delivered { at } = out else {
            panic!("expected delivery, got {out:?}");
        };
        assert!((at - (100.0 + 0.056 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn night_transmission_is_lost() {
        let mut link = Link::new(LinkModel::nvis());
        let mut avail = NvisAvailability::new(1, 0, ScheduleConfig::default());
        let out = link.transmit(140, hours(3.0), |t| avail.at(t), 0.0).unwrap();
        assert_eq!(
            out,
            DeliveryOutcome::ChannelLost {
                cause: LossCause::Night
            }
        );
        assert_eq!(out.true_cause().unwrap().coarse(), LossCause::Channel);
    }

    #[test]
    fn full_buffer_drops_as_congestion() {
        let mut model = LinkModel::nvis();
        model.buffer_capacity = 420.0;
        let mut link = Link::new(model);
        let t = 0.0;
        // Unserialized bytes, including the frame on air, may not exceed 420.
        for _ in 0..3 {
            assert!(matches!(
                link.transmit(140, t, |_| 1.0, 0.0).unwrap(),
                DeliveryOutcome::Delivered { .. }
            ));
        }
        let out = link.transmit(140, t, |_| 1.0, 0.0).unwrap();
        assert_eq!(out, DeliveryOutcome::QueueDropped);
        assert_eq!(out.true_cause(), Some(LossCause::Congestion));
    }

    #[test]
    fn oversize_frame_rejected() {
        let mut link = Link::new(LinkModel::lora());
        assert!(link.transmit(141, 0.0, |_| 1.0, 0.0).is_err());
    }

    #[test]
    fn fragment_counts() {
        assert_eq!(fragment(140, LORA_MAX_PAYLOAD), 1);
        assert_eq!(fragment(140, NVIS_MAX_PAYLOAD), 1);
        assert_eq!(fragment(600, NVIS_MAX_PAYLOAD), 3);
    }

    #[test]
    fn nvis_is_a_long_fat_network() {
        let m = LinkModel::nvis();
        assert_eq!(m.bdp_bytes(), 15_000.0);
        assert!(m.is_lfn());
        assert_eq!(m.buffer_capacity, 15_000.0);
    }

    #[test]
    fn erasure_rate_tracks_availability() {
        // Per-packet loss over a long window is 1 - mean availability.
        let mut link = Link::new(LinkModel::nvis());
        let mut avail = NvisAvailability::new(11, 0, ScheduleConfig::default());
        let (mut lost, mut sent, mut avail_sum) = (0u32, 0u32, 0.0);
        let mut t = hours(6.0);
        for i in 0..100_000u64 {
            let a = avail.at(t);
            let u = keyed_unit(&[99, i]);
            if let DeliveryOutcome::ChannelLost { .. } = link.transmit(140, t, |_| a, u).unwrap() {
                lost += 1;
            }
            sent += 1;
            avail_sum += a;
            t += 0.06;
            if !ScheduleConfig::default().is_day(t) {
                t = ScheduleConfig::default().next_day_start(t);
            }
        }
        let loss = f64::from(lost) / f64::from(sent);
        let expected = 1.0 - avail_sum / f64::from(sent);
        assert!((loss - expected).abs() < 0.01, "loss {loss} vs {expected}");
    }
}
