//! Transport over the NVIS backbone: congestion control, DTN bundling and
//! the per-gateway paced sender.

mod backbone;
mod cc;

pub use backbone::{Backbone, BackboneConfig, BackboneEvent, FailReason, Item, LinkCounters, Notice, Outbox};
pub use cc::{classify_loss, cubic_window, fair_share, AckInfo, CcParams, CcState, PathInfo, Protocol};

use crate::error::{Result, SimError};
use crate::sim::Seconds;

/// One night-time set waiting in a gateway bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundledSet<T> {
    pub round: u32,
    pub station: u32,
    pub stored_at: Seconds,
    pub payload: T,
}

/// Store-and-forward buffer that a gateway fills while the backbone is down.
#[derive(Debug, Clone)]
pub struct Bundle<T> {
    sets: Vec<BundledSet<T>>,
}

impl<T> Default for Bundle<T> {
    fn default() -> Self {
        Self { sets: Vec::new() }
    }
}

impl<T> Bundle<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Stores a set. Bundling is only legal while the backbone is unavailable.
    pub fn store(&mut self, set: BundledSet<T>, backbone_availability: f64) -> Result<()> {
        if backbone_availability > 0.0 {
            return Err(SimError::InvalidParameter(format!(
                "cannot bundle while backbone availability is {backbone_availability}"
            )));
        }
        self.sets.push(set);
        Ok(())
    }

    pub fn bytes(&self, set_bytes: u32) -> u64 {
        self.sets.len() as u64 * u64::from(set_bytes)
    }
}

/// Empties the bundle, oldest round first and by station within a round.
pub fn dtn_flush<T>(bundle: &mut Bundle<T>) -> Vec<BundledSet<T>> {
    let mut sets = std::mem::take(&mut bundle.sets);
    sets.sort_by_key(|s| (s.round, s.station));
    sets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flush_orders_and_empties() {
        let mut b = Bundle::new();
        for (round, station) in [(18, 2), (17, 5), (18, 1), (17, 0)] {
            let set = BundledSet {
                round,
                station,
                stored_at: 0.0,
                payload: (),
            };
            b.store(set, 0.0).unwrap();
        }
        assert_eq!(b.bytes(140), 560);
        let order: Vec<_> = dtn_flush(&mut b).iter().map(|s| (s.round, s.station)).collect();
        assert_eq!(order, vec![(17, 0), (17, 5), (18, 1), (18, 2)]);
        assert!(b.is_empty());
    }

    #[test]
    fn bundling_requires_outage() {
        let mut b = Bundle::new();
        let set = BundledSet {
            round: 9,
            station: 0,
            stored_at: 0.0,
            payload: (),
        };
        assert!(b.store(set, 0.8).is_err());
        assert!(b.is_empty());
    }
}
