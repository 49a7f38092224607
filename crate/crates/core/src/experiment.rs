//! Parameter sweeps, Reliability Meshes and the working-domain map.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dependability::RedundancyMode;
use crate::engine::{run, RunConfig};
use crate::error::{Result, SimError};
use crate::metrics::{aggregate, RunStats};
use crate::scenario::{CLUSTER_DOMAIN, MAX_STATIONS_PER_CLUSTER};
use crate::sim::{hash_str, stable_hash};
use crate::transport::Protocol;

pub const PB0_AXIS: [f64; 9] = [1e-3, 2e-3, 4e-3, 8e-3, 1e-2, 2e-2, 4e-2, 8e-2, 1e-1];
pub const LOAD_POINTS: usize = CLUSTER_DOMAIN.len() * MAX_STATIONS_PER_CLUSTER as usize;
pub const DEFAULT_ROUNDS: u32 = 30;
pub const DEFAULT_THRESHOLD: f64 = 0.7;
/// Smallest cluster count at which the representative-gateway flag applies.
pub const REPRESENTATIVE_MIN_CLUSTERS: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LoadPoint {
    pub redundancy: u32,
    pub clusters: u32,
}

impl LoadPoint {
    pub fn label(&self) -> String {
        format!("{}x{}", self.redundancy, self.clusters)
    }
}

/// Position on the load axis: redundancy-major, clusters ascending within.
pub fn load_index(redundancy: u32, clusters: u32) -> Option<usize> {
    let c = CLUSTER_DOMAIN.iter().position(|&x| x == clusters)?;
    (1..=MAX_STATIONS_PER_CLUSTER)
        .contains(&redundancy)
        .then(|| (redundancy as usize - 1) * CLUSTER_DOMAIN.len() + c)
}

pub fn load_point(index: usize) -> LoadPoint {
    LoadPoint {
        redundancy: (index / CLUSTER_DOMAIN.len()) as u32 + 1,
        clusters: CLUSTER_DOMAIN[index % CLUSTER_DOMAIN.len()],
    }
}

pub fn pb0_index(pb0: f64) -> Option<usize> {
    PB0_AXIS.iter().position(|&x| (x - pb0).abs() <= 1e-12 * x)
}

/// Axis selection for a sweep. Values keep their full-grid indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub clusters: Vec<u32>,
    pub redundancy: Vec<u32>,
    pub pb0: Vec<f64>,
    pub modes: Vec<RedundancyMode>,
    pub protocols: Vec<Protocol>,
    pub rounds: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            clusters: CLUSTER_DOMAIN.to_vec(),
            redundancy: (1..=MAX_STATIONS_PER_CLUSTER).collect(),
            pb0: PB0_AXIS.to_vec(),
            modes: RedundancyMode::ALL.to_vec(),
            protocols: Protocol::ALL.to_vec(),
            rounds: DEFAULT_ROUNDS,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.clusters.iter().find(|c| !CLUSTER_DOMAIN.contains(c)) {
            return Err(SimError::config("grid.clusters", format!("{c} is not on the load axis")));
        }
        if let Some(r) = self.redundancy.iter().find(|r| !(1..=MAX_STATIONS_PER_CLUSTER).contains(r)) {
            return Err(SimError::config("grid.redundancy", format!("{r} is outside 1..=10")));
        }
        if let Some(p) = self.pb0.iter().find(|p| pb0_index(**p).is_none()) {
            return Err(SimError::config("sim.pb0", format!("{p} is not on the Pb0 axis")));
        }
        if self.rounds == 0 {
            return Err(SimError::config("grid.rounds", "must be at least 1"));
        }
        Ok(())
    }

    /// Narrows the axes with an expression such as
    /// `clusters=8..64;redundancy=1,4;pb0=1e-3,1e-1`. Ranges are inclusive.
    pub fn restrict(&mut self, expr: &str) -> Result<()> {
        for part in expr.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| SimError::config("--sub-grid", format!("`{part}` is not key=values")))?;
            match key.trim() {
                "clusters" => self.clusters = select(value, &CLUSTER_DOMAIN, "clusters")?,
                "redundancy" => {
                    let axis: Vec<u32> = (1..=MAX_STATIONS_PER_CLUSTER).collect();
                    self.redundancy = select(value, &axis, "redundancy")?;
                }
                "pb0" => self.pb0 = select(value, &PB0_AXIS, "pb0")?,
                "modes" => self.modes = parse_list(value, "modes")?,
                "protocols" => self.protocols = parse_list(value, "protocols")?,
                other => {
                    return Err(SimError::config("--sub-grid", format!("unknown axis `{other}`")));
                }
            }
        }
        self.validate()
    }
}

fn parse_value<T: std::str::FromStr>(s: &str, axis: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| SimError::config("--sub-grid", format!("bad {axis} value `{s}`")))
}

fn select<T: Copy + PartialOrd + std::str::FromStr>(value: &str, axis: &[T], name: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for item in value.split(',') {
        if let Some((lo, hi)) = item.split_once("..") {
            let (lo, hi): (T, T) = (parse_value(lo, name)?, parse_value(hi, name)?);
            out.extend(axis.iter().copied().filter(|x| *x >= lo && *x <= hi));
        } else {
            out.push(parse_value(item, name)?);
        }
    }
    if out.is_empty() {
        return Err(SimError::config("--sub-grid", format!("`{value}` selects no {name} values")));
    }
    Ok(out)
}

pub fn parse_list<T: std::str::FromStr>(value: &str, name: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| SimError::config(name, format!("unknown value `{s}`"))))
        .collect()
}

/// One (load, Pb0) point of the mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub load_index: usize,
    pub pb0_index: usize,
    pub load: LoadPoint,
    pub pb0: f64,
}

/// Cells of the spec in load-major, Pb0-minor order.
pub fn build_grid(spec: &GridSpec) -> Vec<Cell> {
    let mut loads: Vec<usize> = spec
        .redundancy
        .iter()
        .flat_map(|&r| spec.clusters.iter().filter_map(move |&c| load_index(r, c)))
        .collect();
    loads.sort_unstable();
    loads.dedup();
    let mut pb0s: Vec<usize> = spec.pb0.iter().filter_map(|&p| pb0_index(p)).collect();
    pb0s.sort_unstable();
    pb0s.dedup();
    loads
        .iter()
        .flat_map(|&l| {
            pb0s.iter().map(move |&p| Cell {
                load_index: l,
                pb0_index: p,
                load: load_point(l),
                pb0: PB0_AXIS[p],
            })
        })
        .collect()
}

/// Seed of one replication. Every cell shares the seed of a given round, so
/// neighbouring cells are compared on common random numbers.
pub fn round_seed(base_seed: u64, round: u32) -> u64 {
    stable_hash(&[base_seed, hash_str("round"), u64::from(round)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshPoint {
    pub cell: Cell,
    pub mode: RedundancyMode,
    pub protocol: Protocol,
    pub str: RunStats,
    pub pdr_mean: f64,
    pub fsr_mean: f64,
    pub seed: u64,
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = xs.flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Configuration actually used for one cell.
pub fn cell_config(base: &RunConfig, cell: &Cell, mode: RedundancyMode, protocol: Protocol) -> RunConfig {
    let mut cfg = *base;
    cfg.topology.clusters_per_gateway = cell.load.clusters;
    cfg.topology.stations_per_cluster = cell.load.redundancy;
    cfg.pb0 = cell.pb0;
    cfg.mode = mode;
    cfg.protocol = protocol;
    cfg.representative_gateway = base.representative_gateway && cell.load.clusters >= REPRESENTATIVE_MIN_CLUSTERS;
    cfg
}

/// Runs `rounds` seeded replications of one cell. A run with no closed
/// transaction scores STR 0.
pub fn run_cell(
    base: &RunConfig,
    cell: &Cell,
    mode: RedundancyMode,
    protocol: Protocol,
    rounds: u32,
    base_seed: u64,
) -> Result<MeshPoint> {
    let cfg = cell_config(base, cell, mode, protocol);
    let mut results = Vec::with_capacity(rounds as usize);
    for round in 0..rounds {
        let r = run(&cfg, round_seed(base_seed, round)).map_err(|e| SimError::Cell {
            cell: format!("{} pb0={} {} {}", cell.load.label(), cell.pb0, mode, protocol),
            source: Box::new(e),
        })?;
        results.push(r.metrics.expect("run always reports metrics"));
    }
    let strs: Vec<f64> = results.iter().map(|m| m.str.unwrap_or(0.0)).collect();
    Ok(MeshPoint {
        cell: *cell,
        mode,
        protocol,
        str: aggregate(&strs),
        pdr_mean: mean_defined(results.iter().map(|m| m.pdr)),
        fsr_mean: mean_defined(results.iter().map(|m| m.fsr)),
        seed: base_seed,
    })
}

/// Runs every (cell, mode, protocol) job of the spec on `parallel` threads.
/// Results come back in job order regardless of the thread count.
pub fn sweep(base: &RunConfig, spec: &GridSpec, base_seed: u64, parallel: usize, progress: bool) -> Result<Vec<MeshPoint>> {
    spec.validate()?;
    let jobs: Vec<(Cell, RedundancyMode, Protocol)> = build_grid(spec)
        .into_iter()
        .flat_map(|c| {
            spec.modes
                .iter()
                .flat_map(move |&m| spec.protocols.iter().map(move |&p| (c, m, p)))
        })
        .collect();
    let done = AtomicUsize::new(0);
    let total = jobs.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| SimError::InvalidParameter(e.to_string()))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|(cell, mode, protocol)| {
                let point = run_cell(base, cell, *mode, *protocol, spec.rounds, base_seed)?;
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if progress {
                    eprintln!("[{n}/{total}] {} pb0={} {} {} STR {:.4}", cell.load.label(), cell.pb0, mode, protocol, point.str.mean);
                }
                Ok(point)
            })
            .collect()
    })
}

/// All mesh points of one (mode, protocol) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityMesh {
    pub mode: RedundancyMode,
    pub protocol: Protocol,
    /// True unless every one of the 100 x 9 points is present.
    pub partial: bool,
    pub points: Vec<MeshPoint>,
}

impl ReliabilityMesh {
    pub fn get(&self, load_index: usize, pb0_index: usize) -> Option<&MeshPoint> {
        self.points
            .binary_search_by_key(&(load_index, pb0_index), |p| (p.cell.load_index, p.cell.pb0_index))
            .ok()
            .map(|i| &self.points[i])
    }
}

/// Groups points into one mesh per (mode, protocol), ordered by mode then protocol.
pub fn reliability_mesh(points: &[MeshPoint]) -> Vec<ReliabilityMesh> {
    let mut groups: BTreeMap<(RedundancyMode, Protocol), BTreeMap<(usize, usize), MeshPoint>> = BTreeMap::new();
    for p in points {
        groups
            .entry((p.mode, p.protocol))
            .or_default()
            .insert((p.cell.load_index, p.cell.pb0_index), *p);
    }
    groups
        .into_iter()
        .map(|((mode, protocol), pts)| ReliabilityMesh {
            mode,
            protocol,
            partial: pts.len() != LOAD_POINTS * PB0_AXIS.len(),
            points: pts.into_values().collect(),
        })
        .collect()
}

/// How modes are combined at each point of the working-domain map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSelection {
    BestAcrossModes,
    Single(RedundancyMode),
}

impl std::fmt::Display for ModeSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::BestAcrossModes => f.write_str("best-across-modes"),
            Self::Single(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainCell {
    pub load_index: usize,
    pub pb0_index: usize,
    /// Best protocol, or `None` when no protocol reaches the threshold.
    pub best: Option<Protocol>,
    pub best_mode: Option<RedundancyMode>,
    pub best_str: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingDomainMap {
    pub threshold: f64,
    pub selection: ModeSelection,
    pub partial: bool,
    pub cells: Vec<DomainCell>,
}

impl WorkingDomainMap {
    pub fn get(&self, load_index: usize, pb0_index: usize) -> Option<&DomainCell> {
        self.cells
            .binary_search_by_key(&(load_index, pb0_index), |c| (c.load_index, c.pb0_index))
            .ok()
            .map(|i| &self.cells[i])
    }
}

/// Colors each point with the protocol of highest mean STR when that STR
/// reaches `threshold`, and blanks it otherwise. Ties go to the protocol that
/// comes first in case-insensitive name order, then to the earlier mode.
pub fn working_domain(meshes: &[ReliabilityMesh], threshold: f64, selection: ModeSelection) -> WorkingDomainMap {
    let mut best: BTreeMap<(usize, usize), (f64, Protocol, RedundancyMode)> = BTreeMap::new();
    let rank = |p: Protocol, m: RedundancyMode| (p.name().to_ascii_lowercase(), m);
    let mut candidates: Vec<&ReliabilityMesh> = meshes
        .iter()
        .filter(|m| match selection {
            ModeSelection::BestAcrossModes => true,
            ModeSelection::Single(mode) => m.mode == mode,
        })
        .collect();
    candidates.sort_by_key(|m| rank(m.protocol, m.mode));
    let mut partial = false;
    for mesh in &candidates {
        partial |= mesh.partial;
        for p in &mesh.points {
            let key = (p.cell.load_index, p.cell.pb0_index);
            let value = p.str.mean;
            match best.get(&key) {
                Some((v, _, _)) if *v >= value => {}
                _ => {
                    best.insert(key, (value, mesh.protocol, mesh.mode));
                }
            }
        }
    }
    let cells = best
        .into_iter()
        .map(|((l, p), (v, protocol, mode))| {
            let ok = v >= threshold;
            DomainCell {
                load_index: l,
                pb0_index: p,
                best: ok.then_some(protocol),
                best_mode: ok.then_some(mode),
                best_str: v,
            }
        })
        .collect::<Vec<_>>();
    WorkingDomainMap {
        threshold,
        selection,
        partial: partial || cells.len() != LOAD_POINTS * PB0_AXIS.len(),
        cells,
    }
}
