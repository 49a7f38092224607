//! A gateway's paced multi-flow sender over one NVIS link.
//!
//! The backbone does not own an event queue. Each handler call appends the
//! events it wants scheduled to an [`Outbox`] together with notices about
//! items that arrived or were given up on; the caller forwards both.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::channel::{DeliveryOutcome, Link, LinkModel, LossCause, NvisAvailability};
use crate::sim::{hash_str, keyed_unit, RngStream, Seconds};

use super::cc::{AckInfo, CcParams, CcState, PathInfo, Protocol};

/// A unit of application data handed to the backbone. `key` is opaque to the
/// transport and must be unique per item within a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Item {
    pub key: u64,
    pub bytes: u32,
    pub deadline: Seconds,
    pub attempts: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneEvent {
    Send { flow: u32 },
    Ack { packet: u32 },
    Timeout { packet: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    /// Every attempt was lost; carries the cause of the final loss.
    Exhausted(LossCause),
    /// The item outlived its deadline before it could be (re)sent.
    Expired,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Notice {
    Arrived { item: Item, at: Seconds },
    Failed { item: Item, reason: FailReason },
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub events: Vec<(Seconds, BackboneEvent)>,
    pub notices: Vec<Notice>,
}

impl Outbox {
    pub fn clear(&mut self) {
        self.events.clear();
        self.notices.clear();
    }
}

/// Packet accounting on one link, by ground-truth loss cause.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounters {
    pub sent: u64,
    pub received: u64,
    pub lost_congestion: u64,
    pub lost_channel: u64,
    pub lost_night: u64,
}

impl LinkCounters {
    pub fn lost(&self) -> u64 {
        self.lost_congestion + self.lost_channel + self.lost_night
    }

    pub fn record_loss(&mut self, cause: LossCause) {
        match cause {
            LossCause::Congestion => self.lost_congestion += 1,
            LossCause::Channel => self.lost_channel += 1,
            LossCause::Night => self.lost_night += 1,
        }
    }

    pub fn merge(&mut self, other: &LinkCounters) {
        self.sent += other.sent;
        self.received += other.received;
        self.lost_congestion += other.lost_congestion;
        self.lost_channel += other.lost_channel;
        self.lost_night += other.lost_night;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneConfig {
    pub protocol: Protocol,
    pub cc: CcParams,
    pub flows: u32,
    pub max_attempts: u8,
    /// Retransmission timeout as a multiple of the RTT estimate.
    pub timeout_rtts: f64,
    /// Nominal packet size used for pacing.
    pub packet_bytes: u32,
    pub seed: u64,
    /// Distinguishes the link's random streams from other gateways'.
    pub link_id: u64,
}

#[derive(Debug, Clone)]
struct Flow {
    cc: CcState,
    queue: VecDeque<Item>,
    retx: VecDeque<Item>,
    inflight: u32,
    next_send: Seconds,
    send_scheduled: bool,
    delivered: u64,
    delivered_time: Option<Seconds>,
    last_activity: Seconds,
}

impl Flow {
    fn has_data(&self) -> bool {
        !self.queue.is_empty() || !self.retx.is_empty()
    }

    fn active(&self) -> bool {
        self.has_data() || self.inflight > 0
    }

    fn window_open(&self) -> bool {
        self.cc
            .inflight_limit()
            .is_none_or(|w| f64::from(self.inflight) < w.max(1.0))
    }
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    flow: u32,
    item: Item,
    sent_at: Seconds,
    delivered_at_send: u64,
    delivered_time_at_send: Seconds,
    app_limited: bool,
    window_limited: bool,
    lost: Option<LossCause>,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    config: BackboneConfig,
    link: Link,
    availability: NvisAvailability,
    flows: Vec<Flow>,
    packets: Vec<Option<Packet>>,
    free: Vec<u32>,
    counters: LinkCounters,
    erasure_key: u64,
}

impl Backbone {
    pub fn new(config: BackboneConfig, model: LinkModel, availability: NvisAvailability) -> Self {
        assert!(config.flows >= 1, "a backbone needs at least one flow");
        let initial_rtt = model.rtt() + model.serialization(config.packet_bytes);
        let flows = (0..config.flows)
            .map(|f| Flow {
                cc: CcState::new(
                    config.protocol,
                    config.cc,
                    initial_rtt,
                    RngStream::new(config.seed, "cc", config.link_id << 32 | u64::from(f)),
                ),
                queue: VecDeque::new(),
                retx: VecDeque::new(),
                inflight: 0,
                next_send: 0.0,
                send_scheduled: false,
                delivered: 0,
                delivered_time: None,
                last_activity: 0.0,
            })
            .collect();
        Self {
            erasure_key: crate::sim::stable_hash(&[config.seed, hash_str("nvis-erasure"), config.link_id]),
            config,
            link: Link::new(model),
            availability,
            flows,
            packets: Vec::new(),
            free: Vec::new(),
            counters: LinkCounters::default(),
        }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn counters(&self) -> &LinkCounters {
        &self.counters
    }

    pub fn flow_count(&self) -> u32 {
        self.config.flows
    }

    pub fn availability_at(&mut self, t: Seconds) -> f64 {
        self.availability.at(t)
    }

    pub fn active_flows(&self) -> usize {
        self.flows.iter().filter(|f| f.active()).count()
    }

    /// Items queued, awaiting retransmission or in flight.
    pub fn in_system(&self) -> usize {
        self.flows.iter().map(|f| f.queue.len() + f.retx.len()).sum::<usize>()
            + self.packets.iter().filter(|p| p.is_some()).count()
    }

    pub fn cc(&self, flow: u32) -> &CcState {
        &self.flows[flow as usize].cc
    }

    fn path(&self) -> PathInfo {
        let bitrate = self.link.model().bitrate_bps;
        PathInfo {
            bitrate_bps: bitrate,
            packet_bits: f64::from(self.config.packet_bytes) * 8.0,
            fair_share_bps: bitrate / self.active_flows().max(1) as f64,
        }
    }

    pub fn pacing_rate(&self, flow: u32) -> f64 {
        self.flows[flow as usize].cc.pacing_rate(&self.path())
    }

    pub fn enqueue(&mut self, flow: u32, item: Item, now: Seconds, out: &mut Outbox) {
        self.flows[flow as usize].queue.push_back(item);
        self.try_schedule(flow, now, out);
    }

    fn try_schedule(&mut self, flow: u32, now: Seconds, out: &mut Outbox) {
        let f = &mut self.flows[flow as usize];
        if f.send_scheduled || !f.has_data() || !f.window_open() {
            return;
        }
        f.send_scheduled = true;
        out.events.push((f.next_send.max(now), BackboneEvent::Send { flow }));
    }

    pub fn handle(&mut self, now: Seconds, event: BackboneEvent, out: &mut Outbox) {
        match event {
            BackboneEvent::Send { flow } => self.on_send(flow, now, out),
            BackboneEvent::Ack { packet } => self.on_ack(packet, now, out),
            BackboneEvent::Timeout { packet } => self.on_timeout(packet, now, out),
        }
    }

    fn on_send(&mut self, flow: u32, now: Seconds, out: &mut Outbox) {
        let fi = flow as usize;
        self.flows[fi].send_scheduled = false;

        // Senders know the propagation schedule and hold traffic for the morning.
        if self.availability.at(now) <= 0.0 {
            let resume = self.availability_resume(now);
            if let Some(t) = resume {
                self.flows[fi].send_scheduled = true;
                self.flows[fi].next_send = self.flows[fi].next_send.max(t);
                out.events.push((t, BackboneEvent::Send { flow }));
            }
            return;
        }
        if now < self.flows[fi].next_send {
            self.try_schedule(flow, now, out);
            return;
        }
        if !self.flows[fi].window_open() {
            return;
        }

        let item = loop {
            let f = &mut self.flows[fi];
            let Some(item) = f.retx.pop_front().or_else(|| f.queue.pop_front()) else {
                return;
            };
            if item.deadline < now {
                out.notices.push(Notice::Failed {
                    item,
                    reason: FailReason::Expired,
                });
                continue;
            }
            break item;
        };

        let mut item = item;
        item.attempts = item.attempts.saturating_add(1);
        let draw = keyed_unit(&[self.erasure_key, item.key, u64::from(item.attempts)]);
        let availability = &mut self.availability;
        let outcome = self
            .link
            .transmit_bytes(item.bytes, now, |t| availability.at(t), draw);
        self.counters.sent += 1;

        let path = self.path();
        let idle_limit = self.config.timeout_rtts;
        let f = &mut self.flows[fi];
        if f.inflight == 0 && now - f.last_activity > idle_limit * f.cc.rtt_estimate() {
            f.cc.restart_after_idle();
        }
        f.last_activity = now;
        let app_limited = !f.has_data();
        let window_limited = f
            .cc
            .inflight_limit()
            .is_some_and(|w| f64::from(f.inflight + 1) >= w.floor().max(1.0));
        let delivered_time = *f.delivered_time.get_or_insert(now);
        let mut packet = Packet {
            flow,
            item,
            sent_at: now,
            delivered_at_send: f.delivered,
            delivered_time_at_send: delivered_time,
            app_limited,
            window_limited,
            lost: None,
        };
        f.inflight += 1;
        let rtt = f.cc.rtt_estimate();
        let rate = f.cc.pacing_rate(&path);
        f.next_send = now + path.packet_bits / rate;

        let one_way = self.link.model().one_way_delay;
        let id = match outcome {
            DeliveryOutcome::Delivered { at } => {
                self.counters.received += 1;
                out.notices.push(Notice::Arrived { item, at });
                let id = self.store(packet);
                out.events.push((at + one_way, BackboneEvent::Ack { packet: id }));
                id
            }
            other => {
                let cause = other.true_cause().unwrap_or(LossCause::Channel);
                self.counters.record_loss(cause);
                packet.lost = Some(cause);
                let id = self.store(packet);
                let timeout = now + self.config.timeout_rtts * rtt;
                out.events.push((timeout, BackboneEvent::Timeout { packet: id }));
                id
            }
        };
        let _ = id;
        self.try_schedule(flow, now, out);
    }

    /// Start of the next period with non-zero availability, if any.
    fn availability_resume(&mut self, now: Seconds) -> Option<Seconds> {
        // Availability changes on hour boundaries; scan ahead at most two days.
        let hour = crate::sim::SECONDS_PER_HOUR;
        let mut t = ((now / hour).floor() + 1.0) * hour;
        for _ in 0..48 {
            if self.availability.at(t) > 0.0 {
                return Some(t);
            }
            t += hour;
        }
        None
    }

    fn store(&mut self, packet: Packet) -> u32 {
        match self.free.pop() {
            Some(id) => {
                self.packets[id as usize] = Some(packet);
                id
            }
            None => {
                self.packets.push(Some(packet));
                (self.packets.len() - 1) as u32
            }
        }
    }

    fn take(&mut self, id: u32) -> Packet {
        let p = self.packets[id as usize]
            .take()
            .expect("packet event refers to a live packet");
        self.free.push(id);
        p
    }

    fn on_ack(&mut self, id: u32, now: Seconds, out: &mut Outbox) {
        let p = self.take(id);
        let path = self.path();
        let f = &mut self.flows[p.flow as usize];
        f.inflight -= 1;
        f.delivered += u64::from(p.item.bytes);
        f.delivered_time = Some(now);
        f.last_activity = now;
        let ack = AckInfo {
            now,
            rtt_sample: now - p.sent_at,
            bytes: p.item.bytes,
            delivered: f.delivered,
            delivered_at_send: p.delivered_at_send,
            delivered_time_at_send: p.delivered_time_at_send,
            app_limited: p.app_limited,
            window_limited: p.window_limited,
        };
        f.cc.on_ack(&ack, &path);
        self.try_schedule(p.flow, now, out);
    }

    fn on_timeout(&mut self, id: u32, now: Seconds, out: &mut Outbox) {
        let p = self.take(id);
        let cause = p.lost.unwrap_or(LossCause::Channel);
        let path = self.path();
        let f = &mut self.flows[p.flow as usize];
        f.inflight -= 1;
        let perceived = f.cc.perceive_loss(cause);
        f.cc.on_loss(perceived, p.sent_at, now, &path);
        if p.item.attempts >= self.config.max_attempts {
            out.notices.push(Notice::Failed {
                item: p.item,
                reason: FailReason::Exhausted(cause),
            });
        } else {
            f.retx.push_back(p.item);
        }
        self.try_schedule(p.flow, now, out);
    }
}
