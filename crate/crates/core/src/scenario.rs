//! Topology and time schedule of the telemetry deployment.
//!
//! Ids are assigned gateway-major: cluster `c` of gateway `g` has id
//! `g * clusters_per_gateway + c`, and station `s` of that cluster has id
//! `cluster_id * stations_per_cluster + s`. Nothing is materialised per
//! station, so the largest topology (204 800 stations) costs nothing to build.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::sim::{hours, Seconds, SECONDS_PER_HOUR};

/// Sensor readings per station per round.
pub const VALUES_PER_SET: usize = 32;
/// 32 values x 4 bytes + 12-byte header (station id, round id, timestamp).
pub const SET_BYTES: u32 = 140;
/// Night rounds bundled per station: 17:00 through 05:00 inclusive.
pub const NIGHT_ROUNDS_PER_DAY: u32 = 13;

pub const CLUSTER_DOMAIN: [u32; 10] = [8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096];
pub const MAX_STATIONS_PER_CLUSTER: u32 = 10;
pub const DEFAULT_GATEWAYS: u32 = 5;
/// Share of stations with line of sight to their gateway; the rest see
/// hourly LoRa availability.
pub const DEFAULT_LOS_FRACTION: f64 = 0.68;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GatewayId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClusterId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyParams {
    pub gateways: u32,
    pub clusters_per_gateway: u32,
    pub stations_per_cluster: u32,
    pub los_fraction: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            gateways: DEFAULT_GATEWAYS,
            clusters_per_gateway: 8,
            stations_per_cluster: 1,
            los_fraction: DEFAULT_LOS_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    gateways: u32,
    clusters_per_gateway: u32,
    stations_per_cluster: u32,
    los_fraction: f64,
}

pub fn build_topology(params: &TopologyParams) -> Result<Topology> {
    if params.gateways < 1 {
        return Err(SimError::config("scenario.gateways", "must be at least 1"));
    }
    if !CLUSTER_DOMAIN.contains(&params.clusters_per_gateway) {
        return Err(SimError::config(
            "scenario.clusters_per_gateway",
            format!(
                "{} is not one of {:?}",
                params.clusters_per_gateway, CLUSTER_DOMAIN
            ),
        ));
    }
    if !(1..=MAX_STATIONS_PER_CLUSTER).contains(&params.stations_per_cluster) {
        return Err(SimError::config(
            "scenario.stations_per_cluster",
            format!("{} is outside 1..=10", params.stations_per_cluster),
        ));
    }
    if !(0.0..=1.0).contains(&params.los_fraction) {
        return Err(SimError::config(
            "scenario.los_fraction",
            format!("{} is outside [0, 1]", params.los_fraction),
        ));
    }
    Ok(Topology {
        gateways: params.gateways,
        clusters_per_gateway: params.clusters_per_gateway,
        stations_per_cluster: params.stations_per_cluster,
        los_fraction: params.los_fraction,
    })
}

impl Topology {
    pub fn gateways(&self) -> u32 {
        self.gateways
    }

    pub fn clusters_per_gateway(&self) -> u32 {
        self.clusters_per_gateway
    }

    pub fn stations_per_cluster(&self) -> u32 {
        self.stations_per_cluster
    }

    pub fn los_fraction(&self) -> f64 {
        self.los_fraction
    }

    pub fn cluster_count(&self) -> u32 {
        self.gateways * self.clusters_per_gateway
    }

    pub fn station_count(&self) -> u32 {
        self.cluster_count() * self.stations_per_cluster
    }

    pub fn gateway_ids(&self) -> impl Iterator<Item = GatewayId> {
        (0..self.gateways).map(GatewayId)
    }

    pub fn clusters_of(&self, gw: GatewayId) -> impl Iterator<Item = ClusterId> {
        let base = gw.0 * self.clusters_per_gateway;
        (base..base + self.clusters_per_gateway).map(ClusterId)
    }

    pub fn stations_of(&self, cluster: ClusterId) -> impl Iterator<Item = StationId> {
        let base = cluster.0 * self.stations_per_cluster;
        (base..base + self.stations_per_cluster).map(StationId)
    }

    pub fn gateway_of(&self, cluster: ClusterId) -> GatewayId {
        GatewayId(cluster.0 / self.clusters_per_gateway)
    }

    pub fn cluster_of(&self, station: StationId) -> ClusterId {
        ClusterId(station.0 / self.stations_per_cluster)
    }

    /// Position of a cluster within its gateway.
    pub fn local_index(&self, cluster: ClusterId) -> u32 {
        cluster.0 % self.clusters_per_gateway
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub day_start_hour: u32,
    pub day_end_hour: u32,
    pub sensing_period_hours: u32,
    pub horizon_hours: u32,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            day_start_hour: 6,
            day_end_hour: 17,
            sensing_period_hours: 1,
            horizon_hours: 120,
        }
    }
}

impl ScheduleConfig {
    pub fn horizon(&self) -> Seconds {
        hours(f64::from(self.horizon_hours))
    }

    /// Local hour of day (0..24) at simulation time `t`; the run starts at midnight.
    pub fn hour_of_day(&self, t: Seconds) -> u32 {
        ((t / SECONDS_PER_HOUR).floor() as i64).rem_euclid(24) as u32
    }

    pub fn is_day(&self, t: Seconds) -> bool {
        let h = self.hour_of_day(t);
        h >= self.day_start_hour && h < self.day_end_hour
    }

    /// Start of the next day window at or after `t`.
    pub fn next_day_start(&self, t: Seconds) -> Seconds {
        if self.is_day(t) {
            return t;
        }
        let day = (t / hours(24.0)).floor();
        let today = hours(day * 24.0 + f64::from(self.day_start_hour));
        if t < today {
            today
        } else {
            today + hours(24.0)
        }
    }

    /// End of the day window containing `t` (`t` must be in the day window).
    pub fn day_end_after(&self, t: Seconds) -> Seconds {
        let day = (t / hours(24.0)).floor();
        hours(day * 24.0 + f64::from(self.day_end_hour))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingRound {
    pub index: u32,
    pub time: Seconds,
    pub night: bool,
}

pub fn sensing_rounds(schedule: &ScheduleConfig) -> Vec<SensingRound> {
    let period = schedule.sensing_period_hours.max(1);
    (0..schedule.horizon_hours)
        .step_by(period as usize)
        .enumerate()
        .map(|(i, h)| {
            let time = hours(f64::from(h));
            SensingRound {
                index: i as u32,
                time,
                night: !schedule.is_day(time),
            }
        })
        .collect()
}

/// Bytes a gateway holds at dawn after bundling a full night of sets.
pub fn overnight_backlog(stations: u64, set_size: u32) -> u64 {
    u64::from(NIGHT_ROUNDS_PER_DAY) * stations * u64::from(set_size)
}
