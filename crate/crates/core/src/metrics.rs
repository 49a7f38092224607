//! Ground-truth ledgers, the four reliability ratios and run statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::channel::LossCause;
use crate::dependability::tolerated_byzantines;
use crate::sim::{hours, Seconds};
use crate::transport::LinkCounters;

pub const DEFAULT_TRX_MAX_HOURS: f64 = 24.0;
pub const CONFIDENCE: f64 = 0.99;

/// Packet accounting across every hop and every node of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketLedger {
    pub sent: u64,
    pub received: u64,
    pub lost_congestion: u64,
    pub lost_channel: u64,
    pub lost_night: u64,
    /// Packets still travelling when the run ended.
    pub in_flight: u64,
}

impl PacketLedger {
    pub fn record_sent(&mut self) {
        self.sent += 1;
    }

    pub fn record_received(&mut self) {
        self.received += 1;
    }

    pub fn record_loss(&mut self, cause: LossCause) {
        match cause {
            LossCause::Congestion => self.lost_congestion += 1,
            LossCause::Channel => self.lost_channel += 1,
            LossCause::Night => self.lost_night += 1,
        }
    }

    /// Adds `n` packets that all share one fate.
    pub fn record_many(&mut self, n: u64, fate: Option<LossCause>) {
        self.sent += n;
        match fate {
            None => self.received += n,
            Some(LossCause::Congestion) => self.lost_congestion += n,
            Some(LossCause::Channel) => self.lost_channel += n,
            Some(LossCause::Night) => self.lost_night += n,
        }
    }

    pub fn lost(&self) -> u64 {
        self.lost_congestion + self.lost_channel + self.lost_night
    }

    pub fn is_conserved(&self) -> bool {
        self.received + self.lost() + self.in_flight == self.sent
    }

    pub fn merge(&mut self, other: &PacketLedger) {
        self.sent += other.sent;
        self.received += other.received;
        self.lost_congestion += other.lost_congestion;
        self.lost_channel += other.lost_channel;
        self.lost_night += other.lost_night;
        self.in_flight += other.in_flight;
    }

    pub fn absorb_link(&mut self, link: &LinkCounters) {
        self.sent += link.sent;
        self.received += link.received;
        self.lost_congestion += link.lost_congestion;
        self.lost_channel += link.lost_channel;
        self.lost_night += link.lost_night;
    }
}

/// The facts the control centre judges a transaction on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransactionRecord {
    pub sensed_at: Seconds,
    pub arrived_at: Option<Seconds>,
    pub in_range: bool,
}

/// Positive feedback iff the data arrived within `trx_max_hours` of sensing
/// and passed the interval check.
pub fn transaction_feedback(record: &TransactionRecord, trx_max_hours: f64) -> bool {
    record.in_range
        && record
            .arrived_at
            .is_some_and(|at| at <= record.sensed_at + hours(trx_max_hours))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionLedger {
    /// Total transactions (TT).
    pub total: u64,
    /// Successful transactions (ST).
    pub successful: u64,
    /// Rounds in which no station of the transaction unit produced a set.
    pub silent: u64,
    /// Total sensed values (TSV), counted in sets.
    pub sensed: u64,
    /// Faulty sensed values (FSV), counted in sets.
    pub faulty: u64,
}

impl TransactionLedger {
    /// Judges a closed record and returns its feedback.
    pub fn close(&mut self, record: &TransactionRecord, trx_max_hours: f64) -> bool {
        let ok = transaction_feedback(record, trx_max_hours);
        self.total += 1;
        if ok {
            self.successful += 1;
        }
        ok
    }

    pub fn record_silent(&mut self, count_as_failure: bool) {
        self.silent += 1;
        if count_as_failure {
            self.total += 1;
        }
    }

    pub fn merge(&mut self, other: &TransactionLedger) {
        self.total += other.total;
        self.successful += other.successful;
        self.silent += other.silent;
        self.sensed += other.sensed;
        self.faulty += other.faulty;
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn fsr(ledger: &TransactionLedger) -> Option<f64> {
    ratio(ledger.faulty, ledger.sensed)
}

pub fn pdr(ledger: &PacketLedger) -> Option<f64> {
    ratio(ledger.received, ledger.sent)
}

pub fn str_ratio(ledger: &TransactionLedger) -> Option<f64> {
    ratio(ledger.successful, ledger.total)
}

pub fn bnt(nt: u32) -> f64 {
    f64::from(tolerated_byzantines(nt)) / f64::from(nt)
}

/// The four ratios of one run. Undefined ratios are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub str: Option<f64>,
    pub pdr: Option<f64>,
    pub fsr: Option<f64>,
    pub bnt: f64,
}

impl MetricSet {
    pub fn from_ledgers(tx: &TransactionLedger, packets: &PacketLedger, nt: u32) -> Self {
        Self {
            str: str_ratio(tx),
            pdr: pdr(packets),
            fsr: fsr(tx),
            bnt: bnt(nt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub n: usize,
    pub mean: f64,
    pub stddev: f64,
    /// Half-width of the 99 % Student-t interval; `None` for a single sample.
    pub ci_half_width: Option<f64>,
}

/// Two-sided quantile of Student's t for the configured confidence level.
pub fn t_quantile(df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("degrees of freedom are positive");
    dist.inverse_cdf(1.0 - (1.0 - CONFIDENCE) / 2.0)
}

pub fn aggregate(samples: &[f64]) -> RunStats {
    assert!(!samples.is_empty(), "aggregate needs at least one sample");
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return RunStats {
            n,
            mean,
            stddev: 0.0,
            ci_half_width: None,
        };
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let stddev = var.sqrt();
    RunStats {
        n,
        mean,
        stddev,
        ci_half_width: Some(t_quantile(n - 1) * stddev / (n as f64).sqrt()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ratio_examples() {
        let tx = |faulty, sensed| TransactionLedger {
            faulty,
            sensed,
            ..Default::default()
        };
        assert_eq!(fsr(&tx(0, 416)), Some(0.0));
        assert_eq!(fsr(&tx(13, 416)), Some(0.03125));
        assert_eq!(fsr(&tx(0, 0)), None);

        let pk = |received, sent| PacketLedger {
            received,
            sent,
            ..Default::default()
        };
        assert_eq!(pdr(&pk(1000, 1000)), Some(1.0));
        assert_eq!(pdr(&pk(700, 1000)), Some(0.7));
        assert_eq!(pdr(&pk(0, 0)), None);

        assert_eq!(bnt(4), 0.25);
        assert_eq!(bnt(1), 0.0);
        assert_eq!(bnt(10), 0.3);
    }

    #[test]
    fn feedback_rules() {
        let night = hours(20.0);
        let rec = TransactionRecord {
            sensed_at: night,
            arrived_at: Some(night + hours(14.0)),
            in_range: true,
        };
        assert!(transaction_feedback(&rec, 24.0));
        assert!(!transaction_feedback(&TransactionRecord { in_range: false, ..rec }, 24.0));
        assert!(!transaction_feedback(&TransactionRecord { arrived_at: None, ..rec }, 24.0));
        assert!(!transaction_feedback(&rec, 12.0));
    }

    #[test]
    fn str_from_ledger() {
        let mut l = TransactionLedger::default();
        // 9 of 13 night sets arrive in time.
        for i in 0..13 {
            let rec = TransactionRecord {
                sensed_at: 0.0,
                arrived_at: (i < 9).then_some(hours(10.0)),
                in_range: true,
            };
            l.close(&rec, 24.0);
        }
        assert!((str_ratio(&l).unwrap() - 9.0 / 13.0).abs() < 1e-12);
        assert!(str_ratio(&l).unwrap() < 0.7);
        assert_eq!(str_ratio(&TransactionLedger::default()), None);
        l.record_silent(false);
        assert_eq!(l.total, 13);
        l.record_silent(true);
        assert_eq!(l.total, 14);
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate(&[0.7; 30]);
        assert!((s.mean - 0.7).abs() < 1e-12);
        assert!(s.ci_half_width.unwrap().abs() < 1e-12);

        let s = aggregate(&[0.6, 0.8]);
        assert!((s.mean - 0.7).abs() < 1e-12);
        assert!((s.stddev - 0.141_421_356).abs() < 1e-6);

        assert!((t_quantile(29) - 2.756).abs() < 5e-4);
        assert_eq!(aggregate(&[0.5]).ci_half_width, None);
    }

    #[test]
    fn narrow_samples_give_narrow_interval() {
        let mut rng = crate::sim::RngStream::new(8, "ci", 0);
        let xs: Vec<f64> = (0..30).map(|_| 0.69 + 0.02 * rng.unit()).collect();
        assert!(aggregate(&xs).ci_half_width.unwrap() < 0.004);
    }

    #[test]
    fn ledger_conservation() {
        let mut p = PacketLedger::default();
        p.record_many(10, None);
        p.record_many(3, Some(LossCause::Night));
        p.record_sent();
        p.in_flight += 1;
        assert!(p.is_conserved());
        assert_eq!(p.lost(), 3);
    }

    proptest! {
        #[test]
        fn ratios_stay_in_unit_interval(a in 0u64..10_000, b in 0u64..10_000, nt in 1u32..=10) {
            let (num, den) = (a.min(b), a.max(b));
            let tx = TransactionLedger { successful: num, total: den, faulty: num, sensed: den, silent: 0 };
            let pk = PacketLedger { received: num, sent: den, ..Default::default() };
            for r in [str_ratio(&tx), fsr(&tx), pdr(&pk)].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&r));
            }
            prop_assert!((0.0..=1.0).contains(&bnt(nt)));
        }
    }
}
