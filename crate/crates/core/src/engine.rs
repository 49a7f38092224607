//! One simulation run: hourly sensing, LoRa access, DTN bundling and the
//! NVIS backbone, judged by the control centre.
//!
//! Gateways share no resources, so each is simulated on its own event queue
//! and the ledgers are summed.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::channel::{
    lora_availability, station_has_los, DeliveryOutcome, Link, LinkModel, LossCause, NvisAvailability,
};
use crate::dependability::{
    keyed_behavior, pbft_message_count, pbft_round, select_reporter, Candidate, NodeBehavior, PbftOutcome,
    RedundancyMode, SensingCounters, TrustParams, TrustTable, WearModel, DEFAULT_WEAR_PER_HOUR, NOMINAL_RANGE,
    PBFT_MESSAGE_BYTES,
};
use crate::error::{Result, SimError};
use crate::metrics::{MetricSet, PacketLedger, TransactionLedger, TransactionRecord, DEFAULT_TRX_MAX_HOURS};
use crate::scenario::{
    build_topology, sensing_rounds, ClusterId, GatewayId, ScheduleConfig, StationId, Topology, TopologyParams,
    MAX_STATIONS_PER_CLUSTER, SET_BYTES,
};
use crate::sim::{hash_str, hours, keyed_unit, stable_hash, EventQueue, RngStream, Seconds};
use crate::transport::{
    dtn_flush, Backbone, BackboneConfig, BackboneEvent, Bundle, BundledSet, CcParams, Item, LinkCounters, Notice,
    Outbox, Protocol,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub topology: TopologyParams,
    pub schedule: ScheduleConfig,
    pub nvis: LinkModel,
    pub lora: LinkModel,
    pub protocol: Protocol,
    pub mode: RedundancyMode,
    pub cc: CcParams,
    pub pb0: f64,
    pub wear_per_hour: f64,
    pub trust: TrustParams,
    pub trx_max_hours: f64,
    pub pbft_message_bytes: u32,
    pub max_attempts: u8,
    pub timeout_rtts: f64,
    pub max_flows_per_gateway: u32,
    /// Pins NVIS and LoRa availability to a constant, day and night.
    pub force_availability: Option<f64>,
    pub count_silent_as_failure: bool,
    /// Simulate one gateway and scale its counters by the gateway count.
    pub representative_gateway: bool,
    pub event_budget: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            topology: TopologyParams::default(),
            schedule: ScheduleConfig::default(),
            nvis: LinkModel::nvis(),
            lora: LinkModel::lora(),
            protocol: Protocol::Eaatp,
            mode: RedundancyMode::None,
            cc: CcParams::default(),
            pb0: 1e-3,
            wear_per_hour: DEFAULT_WEAR_PER_HOUR,
            trust: TrustParams::default(),
            trx_max_hours: DEFAULT_TRX_MAX_HOURS,
            pbft_message_bytes: PBFT_MESSAGE_BYTES,
            max_attempts: 5,
            timeout_rtts: 2.0,
            max_flows_per_gateway: 16,
            force_availability: None,
            count_silent_as_failure: false,
            representative_gateway: false,
            event_budget: 200_000_000,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<Topology> {
        let topology = build_topology(&self.topology)?;
        self.nvis.validate("channel.nvis")?;
        self.lora.validate("channel.lora")?;
        WearModel::new(self.pb0, self.wear_per_hour)?;
        self.trust.validate()?;
        if self.trx_max_hours.is_nan() || self.trx_max_hours <= 0.0 {
            return Err(SimError::config("metrics.trx_max_hours", "must be positive"));
        }
        if self.max_attempts == 0 {
            return Err(SimError::config("transport.max_attempts", "must be at least 1"));
        }
        if self.timeout_rtts.is_nan() || self.timeout_rtts <= 0.0 {
            return Err(SimError::config("transport.timeout_rtts", "must be positive"));
        }
        if self.max_flows_per_gateway == 0 {
            return Err(SimError::config("transport.max_flows_per_gateway", "must be at least 1"));
        }
        if let Some(a) = self.force_availability {
            if !(0.0..=1.0).contains(&a) {
                return Err(SimError::config("channel.force_availability", "must lie in [0, 1]"));
            }
        }
        if self.schedule.day_start_hour >= self.schedule.day_end_hour || self.schedule.day_end_hour > 24 {
            return Err(SimError::config("schedule.day_start_hour", "day window must satisfy start < end <= 24"));
        }
        Ok(topology)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub transactions: TransactionLedger,
    pub packets: PacketLedger,
    pub lora: LinkCounters,
    pub nvis: LinkCounters,
    pub metrics: Option<MetricSet>,
    pub events: u64,
    pub bundled_sets: u64,
    pub pbft_failures: u64,
    pub ostracized_stations: u64,
}

impl RunResult {
    fn merge(&mut self, other: &RunResult) {
        self.transactions.merge(&other.transactions);
        self.packets.merge(&other.packets);
        self.lora.merge(&other.lora);
        self.nvis.merge(&other.nvis);
        self.events += other.events;
        self.bundled_sets += other.bundled_sets;
        self.pbft_failures += other.pbft_failures;
        self.ostracized_stations += other.ostracized_stations;
    }

    fn scaled(&self, factor: u64) -> RunResult {
        let mut out = RunResult::default();
        for _ in 0..factor {
            out.merge(self);
        }
        out
    }
}

/// Runs one replication with the given seed.
pub fn run(config: &RunConfig, seed: u64) -> Result<RunResult> {
    let topology = config.validate()?;
    let mut total = RunResult::default();
    if config.representative_gateway {
        let one = GatewaySim::new(config, &topology, GatewayId(0), seed).run()?;
        total = one.scaled(u64::from(topology.gateways()));
    } else {
        for gw in topology.gateway_ids() {
            let r = GatewaySim::new(config, &topology, gw, seed).run()?;
            total.merge(&r);
            if total.events > config.event_budget {
                return Err(SimError::EventBudget {
                    budget: config.event_budget,
                });
            }
        }
    }
    total.metrics = Some(MetricSet::from_ledgers(
        &total.transactions,
        &total.packets,
        config.topology.stations_per_cluster,
    ));
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    Round(u32),
    DayStart,
    LoraArrival,
    Net(BackboneEvent),
}

#[derive(Debug, Clone, Copy)]
struct OpenTx {
    sensed_at: Seconds,
    in_range: bool,
    reporter: Option<u32>,
}

/// A set that reached the gateway and awaits the backbone.
#[derive(Debug, Clone, Copy)]
struct Pending {
    key: u64,
    flow: u32,
    round: u32,
    station: u32,
}

/// What goes on the LoRa channel for one transaction.
#[derive(Debug, Clone, Copy)]
struct Frame {
    key: u64,
    pending: Pending,
    bytes: u32,
    /// Frames per block, for packet accounting.
    packets: u64,
    /// Erasures are masked by the consensus exchange.
    protected: bool,
    forward: bool,
}

fn tx_key(round: u32, unit: u32) -> u64 {
    u64::from(round) << 32 | u64::from(unit)
}

struct GatewaySim<'a> {
    config: &'a RunConfig,
    topology: &'a Topology,
    gateway: GatewayId,
    seed: u64,
    wear: WearModel,
    flows: u32,
    lora: Link,
    backbone: Backbone,
    bundle: Bundle<Pending>,
    arrivals: VecDeque<(Seconds, Pending)>,
    arrival_scheduled: bool,
    open: HashMap<u64, OpenTx>,
    trust: Option<TrustTable>,
    first_station: u32,
    outbox: Outbox,
    result: RunResult,
    sensing: SensingCounters,
    lora_packets: PacketLedger,
}

impl<'a> GatewaySim<'a> {
    fn new(config: &'a RunConfig, topology: &'a Topology, gateway: GatewayId, seed: u64) -> Self {
        let gw_seed = stable_hash(&[seed, hash_str("gateway"), u64::from(gateway.0)]);
        let mut availability = NvisAvailability::new(seed, u64::from(gateway.0), config.schedule);
        if let Some(a) = config.force_availability {
            availability = availability.forced(a);
        }
        let flows = topology.clusters_per_gateway().min(config.max_flows_per_gateway);
        let backbone = Backbone::new(
            BackboneConfig {
                protocol: config.protocol,
                cc: config.cc,
                flows,
                max_attempts: config.max_attempts,
                timeout_rtts: config.timeout_rtts,
                packet_bytes: SET_BYTES,
                seed,
                link_id: u64::from(gateway.0),
            },
            config.nvis,
            availability,
        );
        let stations = topology.clusters_per_gateway() * topology.stations_per_cluster();
        let trust = (config.mode == RedundancyMode::Social).then(|| TrustTable::new(stations as usize, config.trust));
        Self {
            config,
            topology,
            gateway,
            seed: gw_seed,
            wear: WearModel {
                pb0: config.pb0,
                k: config.wear_per_hour,
            },
            flows,
            lora: Link::new(config.lora),
            backbone,
            bundle: Bundle::new(),
            arrivals: VecDeque::new(),
            arrival_scheduled: false,
            open: HashMap::new(),
            trust,
            first_station: gateway.0 * stations,
            outbox: Outbox::default(),
            result: RunResult::default(),
            sensing: SensingCounters::default(),
            lora_packets: PacketLedger::default(),
        }
    }

    fn run(mut self) -> Result<RunResult> {
        let schedule = self.config.schedule;
        let horizon = schedule.horizon();
        let mut queue = EventQueue::new(horizon);
        for round in sensing_rounds(&schedule) {
            queue.schedule(round.time, Ev::Round(round.index))?;
        }
        let mut day = schedule.next_day_start(0.0);
        while day < horizon {
            queue.schedule(day, Ev::DayStart)?;
            day = schedule.next_day_start(day + hours(f64::from(schedule.day_end_hour - schedule.day_start_hour)));
        }

        let mut failure = None;
        for h in 1..=schedule.horizon_hours {
            queue.run_until(hours(f64::from(h)), |q, t, ev| {
                if failure.is_none() {
                    if let Err(e) = self.handle(q, t, ev) {
                        failure = Some(e);
                    }
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
            if queue.processed() > self.config.event_budget {
                return Err(SimError::EventBudget {
                    budget: self.config.event_budget,
                });
            }
        }

        // Whatever is still open at the horizon never made it.
        let mut keys: Vec<u64> = self.open.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            self.close(key, None);
        }
        self.result.events = queue.processed();
        self.result.transactions.sensed = self.sensing.total;
        self.result.transactions.faulty = self.sensing.faulty;
        self.result.lora = LinkCounters {
            sent: self.lora_packets.sent,
            received: self.lora_packets.received,
            lost_congestion: self.lora_packets.lost_congestion,
            lost_channel: self.lora_packets.lost_channel,
            lost_night: self.lora_packets.lost_night,
        };
        self.result.nvis = *self.backbone.counters();
        self.result.packets = self.lora_packets;
        self.result.packets.absorb_link(&self.result.nvis);
        self.result.ostracized_stations = self.trust.as_ref().map_or(0, |t| t.ostracized_count() as u64);
        Ok(self.result)
    }

    fn handle(&mut self, q: &mut EventQueue<Ev>, now: Seconds, ev: Ev) -> Result<()> {
        match ev {
            Ev::Round(r) => self.on_round(q, r, now)?,
            Ev::DayStart => {
                for set in dtn_flush(&mut self.bundle) {
                    self.forward(set.payload, now);
                }
            }
            Ev::LoraArrival => {
                self.arrival_scheduled = false;
                while let Some(&(at, p)) = self.arrivals.front() {
                    if at > now {
                        break;
                    }
                    self.arrivals.pop_front();
                    self.at_gateway(p, now)?;
                }
                self.schedule_arrivals(q)?;
            }
            Ev::Net(e) => self.backbone.handle(now, e, &mut self.outbox),
        }
        self.drain_outbox(q)
    }

    fn drain_outbox(&mut self, q: &mut EventQueue<Ev>) -> Result<()> {
        let horizon = self.config.schedule.horizon();
        let mut out = std::mem::take(&mut self.outbox);
        for (t, e) in out.events.drain(..) {
            if t <= horizon {
                q.schedule(t, Ev::Net(e))?;
            }
        }
        for n in out.notices.drain(..) {
            match n {
                Notice::Arrived { item, at } => self.close(item.key, (at <= horizon).then_some(at)),
                Notice::Failed { item, .. } => self.close(item.key, None),
            }
        }
        self.outbox = out;
        Ok(())
    }

    fn schedule_arrivals(&mut self, q: &mut EventQueue<Ev>) -> Result<()> {
        if self.arrival_scheduled {
            return Ok(());
        }
        if let Some(&(at, _)) = self.arrivals.front() {
            if at <= self.config.schedule.horizon() {
                q.schedule(at, Ev::LoraArrival)?;
                self.arrival_scheduled = true;
            }
        }
        Ok(())
    }

    fn at_gateway(&mut self, p: Pending, now: Seconds) -> Result<()> {
        let availability = self.backbone.availability_at(now);
        if availability <= 0.0 {
            self.result.bundled_sets += 1;
            let set = BundledSet {
                round: p.round,
                station: p.station,
                stored_at: now,
                payload: p,
            };
            return self.bundle.store(set, availability);
        }
        self.forward(p, now);
        Ok(())
    }

    fn forward(&mut self, p: Pending, now: Seconds) {
        let Some(tx) = self.open.get(&p.key) else {
            return;
        };
        let item = Item {
            key: p.key,
            bytes: SET_BYTES,
            deadline: tx.sensed_at + hours(self.config.trx_max_hours),
            attempts: 0,
        };
        self.backbone.enqueue(p.flow, item, now, &mut self.outbox);
    }

    fn close(&mut self, key: u64, arrived_at: Option<Seconds>) {
        let Some(tx) = self.open.remove(&key) else {
            return;
        };
        let record = TransactionRecord {
            sensed_at: tx.sensed_at,
            arrived_at,
            in_range: tx.in_range,
        };
        let ok = self.result.transactions.close(&record, self.config.trx_max_hours);
        if let (Some(trust), Some(i)) = (self.trust.as_mut(), tx.reporter) {
            trust.update(i as usize, ok);
        }
    }

    /// Position of a station within its gateway. Draws keyed by slot give a
    /// smaller topology the same stations as the matching part of a larger one.
    fn slot(&self, station: StationId) -> u32 {
        let cluster = self.topology.cluster_of(station);
        self.topology.local_index(cluster) * MAX_STATIONS_PER_CLUSTER + station.0 % self.topology.stations_per_cluster()
    }

    fn behavior(&mut self, p: f64, station: StationId, round: u32) -> NodeBehavior {
        let b = keyed_behavior(p, self.seed, StationId(self.slot(station)), round);
        self.sensing.record(b);
        b
    }

    fn silent_round(&mut self) {
        self.result
            .transactions
            .record_silent(self.config.count_silent_as_failure);
    }

    fn open_tx(&mut self, key: u64, now: Seconds, in_range: bool, reporter: Option<u32>) {
        self.open.insert(
            key,
            OpenTx {
                sensed_at: now,
                in_range,
                reporter,
            },
        );
    }

    fn on_round(&mut self, q: &mut EventQueue<Ev>, round: u32, now: Seconds) -> Result<()> {
        let p = self.wear.probability(now / crate::sim::SECONDS_PER_HOUR);
        let clusters: Vec<ClusterId> = self.topology.clusters_of(self.gateway).collect();
        let mut frames = Vec::new();
        for cluster in clusters {
            let flow = self.topology.local_index(cluster) % self.flows;
            match self.config.mode {
                RedundancyMode::None => self.round_standard(cluster, flow, round, now, p, &mut frames),
                RedundancyMode::Social => self.round_social(cluster, flow, round, now, p, &mut frames),
                RedundancyMode::Consensus => self.round_consensus(cluster, flow, round, now, p, &mut frames),
            }
        }

        // Stations contend for the shared channel in random order.
        let mut order = RngStream::new(self.seed, "lora-order", u64::from(round));
        for i in (1..frames.len()).rev() {
            frames.swap(i, order.below(i + 1));
        }
        let hour = round * self.config.schedule.sensing_period_hours.max(1);
        for frame in frames {
            self.transmit_lora(frame, hour, now);
        }
        self.schedule_arrivals(q)
    }

    fn round_standard(&mut self, cluster: ClusterId, flow: u32, round: u32, now: Seconds, p: f64, frames: &mut Vec<Frame>) {
        let stations: Vec<StationId> = self.topology.stations_of(cluster).collect();
        for s in stations {
            let b = self.behavior(p, s, round);
            if b == NodeBehavior::Silent {
                self.silent_round();
                continue;
            }
            let key = tx_key(round, self.slot(s));
            self.open_tx(key, now, b == NodeBehavior::Correct, None);
            frames.push(Frame {
                key,
                pending: Pending {
                    key,
                    flow,
                    round,
                    station: self.slot(s),
                },
                bytes: SET_BYTES,
                packets: 1,
                protected: false,
                forward: true,
            });
        }
    }

    fn round_social(&mut self, cluster: ClusterId, flow: u32, round: u32, now: Seconds, p: f64, frames: &mut Vec<Frame>) {
        let stations: Vec<StationId> = self.topology.stations_of(cluster).collect();
        let trust = self.trust.take().expect("social mode keeps a trust table");
        let mut candidates = Vec::with_capacity(stations.len());
        let mut behaviors = Vec::with_capacity(stations.len());
        for &s in &stations {
            let b = self.behavior(p, s, round);
            behaviors.push(b);
            candidates.push(Candidate {
                station: s,
                reputation: trust.reputation((s.0 - self.first_station) as usize),
                silent: b == NodeBehavior::Silent,
            });
        }
        let threshold = self.config.trust.ostracism_threshold;
        self.trust = Some(trust);
        let Some(reporter) = select_reporter(&candidates, threshold) else {
            self.silent_round();
            return;
        };
        let idx = stations.iter().position(|&s| s == reporter).expect("reporter is a member");
        let key = tx_key(round, self.topology.local_index(cluster));
        self.open_tx(
            key,
            now,
            behaviors[idx] == NodeBehavior::Correct,
            Some(reporter.0 - self.first_station),
        );
        frames.push(Frame {
            key,
            pending: Pending {
                key,
                flow,
                round,
                station: self.slot(reporter),
            },
            bytes: SET_BYTES,
            packets: 1,
            protected: false,
            forward: true,
        });
    }

    fn round_consensus(&mut self, cluster: ClusterId, flow: u32, round: u32, now: Seconds, p: f64, frames: &mut Vec<Frame>) {
        let nt = self.topology.stations_per_cluster();
        if nt == 1 {
            // A lone station has nobody to agree with.
            self.round_standard(cluster, flow, round, now, p, frames);
            return;
        }
        let stations: Vec<StationId> = self.topology.stations_of(cluster).collect();
        let behaviors: Vec<NodeBehavior> = stations.iter().map(|&s| self.behavior(p, s, round)).collect();
        if behaviors.iter().all(|b| *b == NodeBehavior::Silent) {
            self.silent_round();
            return;
        }
        let (lo, hi) = NOMINAL_RANGE;
        let values: Vec<f64> = behaviors
            .iter()
            .map(|b| if *b == NodeBehavior::WrongValue { 2.5 * hi } else { (lo + hi) / 2.0 })
            .collect();
        let (outcome, messages) = pbft_round(&behaviors, &values);
        let key = tx_key(round, self.topology.local_index(cluster));
        let in_range = match outcome {
            PbftOutcome::Agreed { value } => (lo..=hi).contains(&value),
            PbftOutcome::Failed => {
                self.result.pbft_failures += 1;
                false
            }
        };
        self.open_tx(key, now, in_range, None);
        let bytes = nt * SET_BYTES + messages as u32 * self.config.pbft_message_bytes;
        frames.push(Frame {
            key,
            pending: Pending {
                key,
                flow,
                round,
                station: self.slot(stations[0]),
            },
            bytes,
            packets: u64::from(nt) + pbft_message_count(nt),
            protected: true,
            // A failed exchange still occupies the channel but forwards nothing.
            forward: outcome != PbftOutcome::Failed,
        });
    }

    fn transmit_lora(&mut self, frame: Frame, hour: u32, now: Seconds) {
        let forced = self.config.force_availability;
        let availability = if frame.protected {
            1.0
        } else {
            forced.unwrap_or_else(|| {
                let station = frame.pending.station;
                let los = station_has_los(self.config.topology.los_fraction, self.seed, station);
                lora_availability(los, self.seed, station, hour)
            })
        };
        let draw = keyed_unit(&[self.seed, hash_str("lora-erasure"), frame.key]);
        let outcome = self.lora.transmit_bytes(frame.bytes, now, |_| availability, draw);
        match outcome {
            DeliveryOutcome::Delivered { at } => {
                self.lora_packets.record_many(frame.packets, None);
                if !frame.forward {
                    self.close(frame.key, None);
                } else {
                    self.arrivals.push_back((at, frame.pending));
                }
            }
            other => {
                let cause = other.true_cause().unwrap_or(LossCause::Channel);
                self.lora_packets.record_many(frame.packets, Some(cause));
                self.close(frame.key, None);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(protocol: Protocol, mode: RedundancyMode, stations: u32) -> RunConfig {
        let mut cfg = RunConfig {
            protocol,
            mode,
            ..RunConfig::default()
        };
        cfg.topology.stations_per_cluster = stations;
        cfg
    }

    #[test]
    fn capacity_oracle() {
        for p in Protocol::ALL {
            let mut cfg = small(p, RedundancyMode::None, 1);
            cfg.pb0 = 0.0;
            cfg.wear_per_hour = 0.0;
            cfg.force_availability = Some(1.0);
            let m = run(&cfg, 3).unwrap().metrics.unwrap();
            assert_eq!(m.str, Some(1.0), "{p}");
            assert_eq!(m.pdr, Some(1.0), "{p}");
            assert_eq!(m.fsr, Some(0.0), "{p}");
        }
    }

    #[test]
    fn same_seed_same_result() {
        for mode in RedundancyMode::ALL {
            let cfg = small(Protocol::Cubic, mode, 4);
            assert_eq!(run(&cfg, 11).unwrap(), run(&cfg, 11).unwrap());
        }
    }

    #[test]
    fn packets_and_transactions_balance() {
        for mode in RedundancyMode::ALL {
            for p in Protocol::ALL {
                let r = run(&small(p, mode, 4), 5).unwrap();
                assert!(r.packets.is_conserved(), "{p} {mode:?}");
                assert!(r.transactions.successful <= r.transactions.total);
            }
        }
    }

    #[test]
    fn one_transaction_per_station_round() {
        let cfg = small(Protocol::Eaatp, RedundancyMode::None, 1);
        let r = run(&cfg, 9).unwrap();
        let tx = r.transactions;
        assert_eq!(tx.total + tx.silent, 120 * 5 * 8);
    }

    #[test]
    fn social_sends_one_set_per_cluster_round() {
        let mut cfg = small(Protocol::Eaatp, RedundancyMode::Social, 5);
        cfg.force_availability = Some(1.0);
        let r = run(&cfg, 2).unwrap();
        assert!(r.lora.sent <= 120 * 5 * 8);
        assert!(r.transactions.total + r.transactions.silent <= 120 * 5 * 8);
    }

    #[test]
    fn representative_gateway_scales() {
        let mut cfg = small(Protocol::Bbr, RedundancyMode::None, 2);
        cfg.representative_gateway = true;
        let r = run(&cfg, 4).unwrap();
        assert_eq!(r.transactions.total % 5, 0);
        assert_eq!(r.transactions.total + r.transactions.silent, 120 * 5 * 8 * 2);
    }

    #[test]
    fn event_budget_aborts() {
        let mut cfg = small(Protocol::Cubic, RedundancyMode::None, 1);
        cfg.event_budget = 10;
        assert!(matches!(run(&cfg, 1), Err(SimError::EventBudget { .. })));
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = RunConfig::default();
        cfg.topology.clusters_per_gateway = 7;
        assert!(run(&cfg, 1).is_err());
        let cfg = RunConfig {
            force_availability: Some(1.5),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
