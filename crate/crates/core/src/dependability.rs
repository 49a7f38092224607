//! Station wear, faulty sensing, reputation-based reporter selection and
//! PBFT-style agreement within a cluster.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scenario::{StationId, VALUES_PER_SET};
use crate::sim::{stable_hash, RngStream};

pub const DEFAULT_WEAR_PER_HOUR: f64 = 5.7e-5;
/// Readings of a healthy station fall in this interval.
pub const NOMINAL_RANGE: (f64, f64) = (0.0, 100.0);
/// Range a faulty reading is drawn from.
pub const FAULTY_RANGE: (f64, f64) = (200.0, 300.0);
pub const PBFT_MESSAGE_BYTES: u32 = 64;

const BYZANTINE_STREAM: u64 = 0x6279_7a61_6e74_696e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RedundancyMode {
    None,
    Social,
    Consensus,
}

impl RedundancyMode {
    pub const ALL: [RedundancyMode; 3] = [RedundancyMode::None, RedundancyMode::Social, RedundancyMode::Consensus];

    pub fn name(self) -> &'static str {
        match self {
            RedundancyMode::None => "none",
            RedundancyMode::Social => "social",
            RedundancyMode::Consensus => "consensus",
        }
    }
}

impl fmt::Display for RedundancyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RedundancyMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        RedundancyMode::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SimError::Input(format!("unknown redundancy mode `{s}`")))
    }
}

/// Linear wear: the byzantine probability grows by `k` every hour.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WearModel {
    pub pb0: f64,
    pub k: f64,
}

impl WearModel {
    pub fn new(pb0: f64, k: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pb0) {
            return Err(SimError::config("sim.pb0", format!("{pb0} is outside [0, 1]")));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(SimError::config("sim.wear_per_hour", format!("{k} must be finite and >= 0")));
        }
        Ok(Self { pb0, k })
    }

    pub fn probability(&self, t_hours: f64) -> f64 {
        byzantine_probability(self.pb0, self.k, t_hours)
    }

    /// Hours until every station is byzantine.
    pub fn depletion_time(&self) -> f64 {
        if self.k == 0.0 {
            f64::INFINITY
        } else {
            (1.0 - self.pb0) / self.k
        }
    }
}

pub fn byzantine_probability(pb0: f64, k: f64, t_hours: f64) -> f64 {
    (pb0 + k * t_hours.max(0.0)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeBehavior {
    Correct,
    Silent,
    WrongValue,
}

impl NodeBehavior {
    pub fn is_byzantine(self) -> bool {
        self != NodeBehavior::Correct
    }

    /// Maps two uniform draws to a behaviour: the first decides whether the
    /// station is byzantine, the second picks the failure style.
    pub fn from_draws(p: f64, byzantine: f64, style: f64) -> Self {
        if p > 0.0 && (p >= 1.0 || byzantine < p) {
            if style < 0.5 {
                NodeBehavior::Silent
            } else {
                NodeBehavior::WrongValue
            }
        } else {
            NodeBehavior::Correct
        }
    }
}

pub fn sample_node_behavior(p: f64, rng: &mut RngStream) -> NodeBehavior {
    let b = rng.unit();
    let s = rng.unit();
    NodeBehavior::from_draws(p, b, s)
}

/// Behaviour of `station` in `round`, drawn from a stateless keyed stream so
/// every protocol sees the same failures under the same seed.
pub fn keyed_behavior(p: f64, seed: u64, station: StationId, round: u32) -> NodeBehavior {
    let h = stable_hash(&[seed, BYZANTINE_STREAM, u64::from(station.0), u64::from(round)]);
    // High bits decide whether the station fails, the lowest bit how.
    let b = (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let s = if h & 1 == 0 { 0.25 } else { 0.75 };
    NodeBehavior::from_draws(p, b, s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensedSet {
    pub station: StationId,
    pub round: u32,
    pub values: Vec<f64>,
    pub faulty: bool,
}

impl SensedSet {
    /// The control centre's plausibility check.
    pub fn in_range(&self) -> bool {
        let (lo, hi) = NOMINAL_RANGE;
        self.values.iter().all(|v| (lo..=hi).contains(v))
    }
}

/// Running totals of sensed sets (TSV) and faulty ones (FSV).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensingCounters {
    pub total: u64,
    pub faulty: u64,
}

impl SensingCounters {
    /// Silent stations sense nothing and are not counted.
    pub fn record(&mut self, behavior: NodeBehavior) {
        match behavior {
            NodeBehavior::Silent => {}
            NodeBehavior::Correct => self.total += 1,
            NodeBehavior::WrongValue => {
                self.total += 1;
                self.faulty += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &SensingCounters) {
        self.total += other.total;
        self.faulty += other.faulty;
    }
}

/// Produces a station's readings for one round; silent stations produce none.
pub fn sense(
    station: StationId,
    round: u32,
    behavior: NodeBehavior,
    rng: &mut RngStream,
    counters: &mut SensingCounters,
) -> Option<SensedSet> {
    counters.record(behavior);
    let (lo, hi) = NOMINAL_RANGE;
    let mut values: Vec<f64> = (0..VALUES_PER_SET).map(|_| lo + (hi - lo) * rng.unit()).collect();
    match behavior {
        NodeBehavior::Silent => None,
        NodeBehavior::Correct => Some(SensedSet {
            station,
            round,
            values,
            faulty: false,
        }),
        NodeBehavior::WrongValue => {
            let (flo, fhi) = FAULTY_RANGE;
            let i = rng.below(VALUES_PER_SET);
            values[i] = flo + (fhi - flo) * rng.unit();
            Some(SensedSet {
                station,
                round,
                values,
                faulty: true,
            })
        }
    }
}

pub fn trust_update(r: f64, feedback: bool, alpha: f64) -> f64 {
    let f = if feedback { 1.0 } else { 0.0 };
    ((1.0 - alpha) * r + alpha * f).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustParams {
    pub initial: f64,
    pub alpha: f64,
    pub ostracism_threshold: f64,
}

impl Default for TrustParams {
    fn default() -> Self {
        Self {
            initial: 0.5,
            alpha: 0.1,
            ostracism_threshold: 0.25,
        }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.initial) {
            return Err(SimError::config("trust.initial", "must lie in [0, 1]"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SimError::config("trust.alpha", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.ostracism_threshold) {
            return Err(SimError::config("trust.ostracism_threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Reputations a gateway keeps about its stations, indexed by the station's
/// position within the gateway.
#[derive(Debug, Clone)]
pub struct TrustTable {
    params: TrustParams,
    reputation: Vec<f64>,
    positive: Vec<u32>,
    negative: Vec<u32>,
}

impl TrustTable {
    pub fn new(stations: usize, params: TrustParams) -> Self {
        Self {
            params,
            reputation: vec![params.initial; stations],
            positive: vec![0; stations],
            negative: vec![0; stations],
        }
    }

    pub fn len(&self) -> usize {
        self.reputation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reputation.is_empty()
    }

    pub fn reputation(&self, i: usize) -> f64 {
        self.reputation[i]
    }

    pub fn feedback_counts(&self, i: usize) -> (u32, u32) {
        (self.positive[i], self.negative[i])
    }

    pub fn update(&mut self, i: usize, feedback: bool) {
        self.reputation[i] = trust_update(self.reputation[i], feedback, self.params.alpha);
        if feedback {
            self.positive[i] += 1;
        } else {
            self.negative[i] += 1;
        }
    }

    pub fn is_ostracized(&self, i: usize) -> bool {
        self.reputation[i] < self.params.ostracism_threshold
    }

    pub fn ostracized_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_ostracized(i)).count()
    }
}

/// A cluster member as seen by the gateway when polling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub station: StationId,
    pub reputation: f64,
    pub silent: bool,
}

/// Picks the non-silent, non-ostracized station with the highest reputation,
/// lowest id on ties. When every responsive station is ostracized the best of
/// them is used anyway. Returns `None` when the whole cluster is silent.
pub fn select_reporter(candidates: &[Candidate], ostracism_threshold: f64) -> Option<StationId> {
    let best = |trusted_only: bool| {
        candidates
            .iter()
            .filter(|c| !c.silent && (!trusted_only || c.reputation >= ostracism_threshold))
            .fold(None::<&Candidate>, |acc, c| match acc {
                Some(a) if a.reputation > c.reputation => Some(a),
                Some(a) if a.reputation == c.reputation && a.station < c.station => Some(a),
                _ => Some(c),
            })
            .map(|c| c.station)
    };
    best(true).or_else(|| best(false))
}

pub fn tolerated_byzantines(nt: u32) -> u32 {
    assert!(nt >= 1, "a consensus group needs at least one member");
    (nt - 1) / 3
}

/// Messages exchanged in one agreement: pre-prepare, prepare, commit, reply.
pub fn pbft_message_count(nt: u32) -> u64 {
    if nt <= 1 {
        return 0;
    }
    let n = u64::from(nt);
    (n - 1) + 2 * n * (n - 1) + n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PbftOutcome {
    Agreed { value: f64 },
    Failed,
}

/// One agreement round among a cluster's stations. `values[i]` is member
/// `i`'s reading (ignored when silent). Correct members share the same reading.
pub fn pbft_round(behaviors: &[NodeBehavior], values: &[f64]) -> (PbftOutcome, u64) {
    assert_eq!(behaviors.len(), values.len(), "one value per member");
    let nt = behaviors.len() as u32;
    let messages = pbft_message_count(nt);
    let byzantine = behaviors.iter().filter(|b| b.is_byzantine()).count() as u32;
    if byzantine > tolerated_byzantines(nt) {
        return (PbftOutcome::Failed, messages);
    }
    let value = behaviors
        .iter()
        .zip(values)
        .find(|(b, _)| !b.is_byzantine())
        .map(|(_, v)| *v)
        .expect("at most a third of the group is byzantine");
    (PbftOutcome::Agreed { value }, messages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wear_examples() {
        assert!((byzantine_probability(1e-3, DEFAULT_WEAR_PER_HOUR, 120.0) - 0.00784).abs() < 1e-12);
        assert_eq!(byzantine_probability(0.1, DEFAULT_WEAR_PER_HOUR, 0.0), 0.1);
        let w = WearModel::new(1e-3, DEFAULT_WEAR_PER_HOUR).unwrap();
        let td = w.depletion_time();
        assert!((td - 17_526.315_789).abs() < 1e-3);
        assert_eq!(w.probability(td), 1.0);
        assert_eq!(w.probability(td + 1.0), 1.0);
        assert!(WearModel::new(1.5, 0.0).is_err());
        assert!(WearModel::new(0.1, -1.0).is_err());
    }

    #[test]
    fn behavior_extremes_and_split() {
        let mut rng = RngStream::new(3, "behavior", 0);
        assert!((0..1000).all(|_| sample_node_behavior(0.0, &mut rng) == NodeBehavior::Correct));
        assert!((0..1000).all(|_| sample_node_behavior(1.0, &mut rng).is_byzantine()));
        let (mut silent, mut wrong) = (0u32, 0u32);
        for _ in 0..100_000 {
            match sample_node_behavior(0.1, &mut rng) {
                NodeBehavior::Silent => silent += 1,
                NodeBehavior::WrongValue => wrong += 1,
                NodeBehavior::Correct => {}
            }
        }
        for n in [silent, wrong] {
            assert!((f64::from(n) - 5000.0).abs() <= 150.0, "{silent} {wrong}");
        }
    }

    #[test]
    fn keyed_behavior_is_stable() {
        let a = keyed_behavior(0.5, 9, StationId(4), 17);
        assert_eq!(a, keyed_behavior(0.5, 9, StationId(4), 17));
        let byz = (0..10_000)
            .filter(|&r| keyed_behavior(0.2, 9, StationId(1), r).is_byzantine())
            .count();
        assert!((byz as f64 - 2000.0).abs() < 150.0);
    }

    #[test]
    fn sensing_outputs() {
        let mut rng = RngStream::new(1, "sense", 0);
        let mut c = SensingCounters::default();
        let ok = sense(StationId(0), 0, NodeBehavior::Correct, &mut rng, &mut c).unwrap();
        assert_eq!(ok.values.len(), 32);
        assert!(ok.in_range() && !ok.faulty);
        let bad = sense(StationId(0), 1, NodeBehavior::WrongValue, &mut rng, &mut c).unwrap();
        assert!(bad.faulty && !bad.in_range());
        assert!(bad.values.iter().any(|v| (200.0..=300.0).contains(v)));
        assert!(sense(StationId(0), 2, NodeBehavior::Silent, &mut rng, &mut c).is_none());
        assert_eq!(c, SensingCounters { total: 2, faulty: 1 });

        let mut c = SensingCounters::default();
        for r in 0..120 {
            sense(StationId(0), r, NodeBehavior::Correct, &mut rng, &mut c);
        }
        assert_eq!(c, SensingCounters { total: 120, faulty: 0 });
    }

    #[test]
    fn trust_examples() {
        assert!((trust_update(0.5, true, 0.1) - 0.55).abs() < 1e-12);
        let mut t = TrustTable::new(2, TrustParams::default());
        for _ in 0..7 {
            t.update(0, false);
        }
        assert!((t.reputation(0) - 0.5 * 0.9f64.powi(7)).abs() < 1e-12);
        assert!(t.is_ostracized(0) && !t.is_ostracized(1));
        assert_eq!(t.feedback_counts(0), (0, 7));
        let mut r = 0.5;
        for _ in 0..200 {
            let next = trust_update(r, true, 0.1);
            assert!(next >= r);
            r = next;
        }
        assert!(r > 0.999);
    }

    fn cand(id: u32, reputation: f64) -> Candidate {
        Candidate {
            station: StationId(id),
            reputation,
            silent: false,
        }
    }

    #[test]
    fn reporter_selection() {
        assert_eq!(select_reporter(&[cand(0, 0.9), cand(1, 0.4)], 0.25), Some(StationId(0)));
        assert_eq!(select_reporter(&[cand(1, 0.5), cand(0, 0.5)], 0.25), Some(StationId(0)));
        assert_eq!(select_reporter(&[cand(0, 0.2), cand(1, 0.6)], 0.25), Some(StationId(1)));
        assert_eq!(select_reporter(&[cand(0, 0.1), cand(1, 0.2)], 0.25), Some(StationId(1)));
        let mut silent = cand(0, 0.9);
        silent.silent = true;
        assert_eq!(select_reporter(&[silent, cand(1, 0.3)], 0.25), Some(StationId(1)));
        assert_eq!(select_reporter(&[silent], 0.25), None);
    }

    #[test]
    fn pbft_examples() {
        assert_eq!(tolerated_byzantines(1), 0);
        assert_eq!(tolerated_byzantines(4), 1);
        assert_eq!(tolerated_byzantines(10), 3);
        assert_eq!(pbft_message_count(4), 31);
        assert_eq!(pbft_message_count(10), 199);
        assert_eq!(pbft_message_count(1), 0);

        use NodeBehavior::*;
        let v = [50.0, 50.0, 250.0, 50.0];
        let (o, m) = pbft_round(&[Correct, Correct, WrongValue, Correct], &v);
        assert_eq!((o, m), (PbftOutcome::Agreed { value: 50.0 }, 31));
        let (o, _) = pbft_round(&[Correct, Silent, WrongValue, Correct], &v);
        assert_eq!(o, PbftOutcome::Failed);
        assert_eq!(pbft_round(&[WrongValue], &[250.0]), (PbftOutcome::Failed, 0));
        assert_eq!(pbft_round(&[Correct], &[50.0]), (PbftOutcome::Agreed { value: 50.0 }, 0));
        assert_eq!(pbft_round(&[Silent], &[0.0]).0, PbftOutcome::Failed);
    }

    /// Brute force over every behaviour assignment for small groups.
    #[test]
    fn pbft_depends_only_on_byzantine_count() {
        use NodeBehavior::*;
        let kinds = [Correct, Silent, WrongValue];
        for nt in 1..=5u32 {
            for code in 0..3u32.pow(nt) {
                let behaviors: Vec<_> = (0..nt).map(|i| kinds[(code / 3u32.pow(i) % 3) as usize]).collect();
                let values: Vec<f64> = behaviors
                    .iter()
                    .map(|b| if *b == WrongValue { 250.0 } else { 42.0 })
                    .collect();
                let byz = behaviors.iter().filter(|b| b.is_byzantine()).count() as u32;
                let (outcome, messages) = pbft_round(&behaviors, &values);
                assert_eq!(messages, pbft_message_count(nt));
                let expected = if byz <= (nt - 1) / 3 {
                    PbftOutcome::Agreed { value: 42.0 }
                } else {
                    PbftOutcome::Failed
                };
                assert_eq!(outcome, expected, "{behaviors:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn wear_is_monotone_and_clamped(pb0 in 0.0..=1.0f64, k in 0.0..1e-2f64, a in 0.0..1e6f64, b in 0.0..1e6f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (plo, phi) = (byzantine_probability(pb0, k, lo), byzantine_probability(pb0, k, hi));
            prop_assert!(plo <= phi);
            prop_assert!((pb0..=1.0).contains(&plo) && (pb0..=1.0).contains(&phi));
        }

        #[test]
        fn trust_stays_in_unit_interval(r in 0.0..=1.0f64, alpha in 0.001..=1.0f64, seq in proptest::collection::vec(any::<bool>(), 0..200)) {
            let mut r = r;
            for f in seq {
                r = trust_update(r, f, alpha);
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }
    }
}
