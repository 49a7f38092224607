//! Hand-checked values and brute-force oracles run by `validate`.

use crate::channel::{LinkModel, LFN_BDP_THRESHOLD_BYTES};
use crate::dependability::{
    byzantine_probability, pbft_message_count, pbft_round, tolerated_byzantines, trust_update, NodeBehavior,
    PbftOutcome, DEFAULT_WEAR_PER_HOUR,
};
use crate::metrics::{bnt, fsr, pdr, str_ratio, PacketLedger, TransactionLedger};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Every behavior assignment of groups of 1 to 5 members against the
/// tolerance threshold. Returns the number of cases and the first mismatch.
pub fn pbft_brute_force() -> (u32, Option<String>) {
    let kinds = [NodeBehavior::Correct, NodeBehavior::Silent, NodeBehavior::WrongValue];
    let mut cases = 0;
    for nt in 1..=5u32 {
        for code in 0..3u32.pow(nt) {
            let behaviors: Vec<_> = (0..nt).map(|i| kinds[(code / 3u32.pow(i) % 3) as usize]).collect();
            let values: Vec<f64> = behaviors
                .iter()
                .map(|b| if *b == NodeBehavior::WrongValue { 250.0 } else { 42.0 })
                .collect();
            let byzantine = behaviors.iter().filter(|b| b.is_byzantine()).count() as u32;
            let expected = if byzantine <= (nt - 1) / 3 {
                PbftOutcome::Agreed { value: 42.0 }
            } else {
                PbftOutcome::Failed
            };
            cases += 1;
            let got = pbft_round(&behaviors, &values);
            if got != (expected, pbft_message_count(nt)) {
                return (cases, Some(format!("{behaviors:?}: got {got:?}, expected {expected:?}")));
            }
        }
    }
    (cases, None)
}

pub fn run_oracles() -> Vec<Check> {
    let mut out = Vec::new();

    let pb = byzantine_probability(1e-3, DEFAULT_WEAR_PER_HOUR, 120.0);
    out.push(check("wear probability at 120 h", (pb - 0.00784).abs() < 1e-12, format!("{pb}")));
    let td_pb = byzantine_probability(0.5, 0.01, 1e6);
    out.push(check("wear probability saturates at 1", td_pb == 1.0, format!("{td_pb}")));

    let nb = [(1, 0), (4, 1), (7, 2), (10, 3)].map(|(nt, want)| (tolerated_byzantines(nt), want));
    out.push(check(
        "tolerated byzantines",
        nb.iter().all(|(g, w)| g == w),
        format!("{nb:?}"),
    ));
    out.push(check(
        "byzantine node tolerance",
        bnt(4) == 0.25 && bnt(1) == 0.0 && bnt(10) == 0.3,
        format!("{} {} {}", bnt(1), bnt(4), bnt(10)),
    ));

    let tx = TransactionLedger {
        total: 13,
        successful: 9,
        silent: 0,
        sensed: 416,
        faulty: 13,
    };
    let pk = PacketLedger {
        sent: 1000,
        received: 700,
        ..PacketLedger::default()
    };
    let ratios = (fsr(&tx), pdr(&pk), str_ratio(&tx));
    out.push(check(
        "ratio arithmetic",
        ratios == (Some(0.03125), Some(0.7), Some(9.0 / 13.0))
            && fsr(&TransactionLedger::default()).is_none()
            && pdr(&PacketLedger::default()).is_none(),
        format!("{ratios:?}"),
    ));

    let r = trust_update(0.5, true, 0.1);
    out.push(check("trust update", (r - 0.55).abs() < 1e-12, format!("{r}")));

    let (cases, mismatch) = pbft_brute_force();
    out.push(check(
        "pbft brute force",
        mismatch.is_none(),
        mismatch.unwrap_or_else(|| format!("{cases} assignments")),
    ));

    let bdp = LinkModel::nvis().bdp_bytes();
    out.push(check(
        "nvis link is a long fat network",
        bdp == 15_000.0 && bdp > LFN_BDP_THRESHOLD_BYTES,
        format!("BDP {bdp} bytes"),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_oracles_pass() {
        for c in run_oracles() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn brute_force_covers_every_assignment() {
        assert_eq!(pbft_brute_force(), (3 + 9 + 27 + 81 + 243, None));
    }
}
