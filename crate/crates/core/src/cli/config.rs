//! Flat `key = value` configuration with dotted keys.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::dependability::RedundancyMode;
use crate::engine::RunConfig;
use crate::error::{Result, SimError};
use crate::experiment::{ModeSelection, DEFAULT_ROUNDS, DEFAULT_THRESHOLD};
use crate::transport::Protocol;

/// Everything a command can be configured with.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub run: RunConfig,
    pub seed: u64,
    pub rounds: u32,
    pub threshold: f64,
    pub parallel: usize,
    pub domain_modes: ModeSelection,
    /// Keys given explicitly in the parsed text.
    pub explicit: BTreeSet<String>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            run: RunConfig::default(),
            seed: 1,
            rounds: DEFAULT_ROUNDS,
            threshold: DEFAULT_THRESHOLD,
            parallel: 1,
            domain_modes: ModeSelection::BestAcrossModes,
            explicit: BTreeSet::new(),
        }
    }
}

trait Value: Sized {
    fn read(s: &str) -> std::result::Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn read(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|_| format!("`{s}` is not a valid {}", stringify!($t)))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(f64, u8, u32, u64, usize, bool, Protocol, RedundancyMode);

impl Value for Option<f64> {
    fn read(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            f64::read(s).map(Some)
        }
    }
    fn show(&self) -> String {
        self.map_or_else(|| "none".to_string(), |v| v.to_string())
    }
}

impl Value for [f64; 8] {
    fn read(s: &str) -> std::result::Result<Self, String> {
        let xs = s.split(',').map(|x| f64::read(x.trim())).collect::<std::result::Result<Vec<_>, _>>()?;
        xs.try_into().map_err(|_| "expected 8 comma-separated numbers".to_string())
    }
    fn show(&self) -> String {
        self.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
    }
}

impl Value for ModeSelection {
    fn read(s: &str) -> std::result::Result<Self, String> {
        if s == "best" || s == "best-across-modes" {
            Ok(Self::BestAcrossModes)
        } else {
            RedundancyMode::read(s).map(Self::Single)
        }
    }
    fn show(&self) -> String {
        match self {
            Self::BestAcrossModes => "best".to_string(),
            Self::Single(m) => m.to_string(),
        }
    }
}

struct Entry {
    key: &'static str,
    doc: &'static str,
    get: fn(&Config) -> String,
    set: fn(&mut Config, &str) -> std::result::Result<(), String>,
}

macro_rules! entries {
    ($($key:literal => [$($field:tt)+] $doc:literal;)*) => {
        &[$(Entry {
            key: $key,
            doc: $doc,
            get: |c: &Config| Value::show(&c.$($field)+),
            set: |c: &mut Config, s: &str| {
                c.$($field)+ = Value::read(s)?;
                Ok(())
            },
        }),*]
    };
}

const ENTRIES: &[Entry] = entries! {
    "scenario.gateways" => [run.topology.gateways] "number of gateways";
    "scenario.clusters_per_gateway" => [run.topology.clusters_per_gateway] "clusters per gateway, one of 8, 16, ..., 4096";
    "scenario.stations_per_cluster" => [run.topology.stations_per_cluster] "redundancy Nt, 1..=10";
    "scenario.los_fraction" => [run.topology.los_fraction] "share of stations with line of sight to the gateway";
    "schedule.day_start_hour" => [run.schedule.day_start_hour] "hour the NVIS day window opens";
    "schedule.day_end_hour" => [run.schedule.day_end_hour] "hour the NVIS day window closes";
    "schedule.sensing_period_hours" => [run.schedule.sensing_period_hours] "hours between sensing rounds";
    "schedule.horizon_hours" => [run.schedule.horizon_hours] "simulated hours per run";
    "channel.nvis.bitrate_bps" => [run.nvis.bitrate_bps] "NVIS bitrate";
    "channel.nvis.max_payload" => [run.nvis.max_payload] "NVIS packet payload in bytes";
    "channel.nvis.one_way_delay_s" => [run.nvis.one_way_delay] "NVIS one-way delay in seconds";
    "channel.nvis.buffer_bytes" => [run.nvis.buffer_capacity] "NVIS bottleneck buffer in bytes";
    "channel.lora.bitrate_bps" => [run.lora.bitrate_bps] "LoRa bitrate";
    "channel.lora.max_payload" => [run.lora.max_payload] "LoRa frame payload in bytes";
    "channel.lora.one_way_delay_s" => [run.lora.one_way_delay] "LoRa one-way delay in seconds";
    "channel.lora.buffer_bytes" => [run.lora.buffer_capacity] "LoRa airtime queued per gateway in bytes";
    "channel.force_availability" => [run.force_availability] "pin NVIS and LoRa availability, or none";
    "transport.protocol" => [run.protocol] "congestion control for single runs";
    "transport.max_attempts" => [run.max_attempts] "transmissions per packet before giving up";
    "transport.timeout_rtts" => [run.timeout_rtts] "loss detection delay in smoothed RTTs";
    "transport.max_flows_per_gateway" => [run.max_flows_per_gateway] "NVIS flows a gateway multiplexes clusters onto";
    "cc.rtt_gain" => [run.cc.rtt_gain] "RTT smoothing gain";
    "cc.initial_window" => [run.cc.initial_window] "initial window in packets";
    "cc.cubic_c" => [run.cc.cubic_c] "CUBIC scaling constant";
    "cc.cubic_beta" => [run.cc.cubic_beta] "CUBIC multiplicative decrease";
    "cc.bbr_startup_gain" => [run.cc.bbr_startup_gain] "BBR startup pacing gain";
    "cc.bbr_probe_gains" => [run.cc.bbr_probe_gains] "BBR probe-bandwidth gain cycle";
    "cc.bbr_filter_rounds" => [run.cc.bbr_filter_rounds] "BBR bandwidth filter length in rounds";
    "cc.copa_delta" => [run.cc.copa_delta] "Copa delta";
    "cc.indigo_noise_low" => [run.cc.indigo_noise.0] "Indigo rate noise lower bound";
    "cc.indigo_noise_high" => [run.cc.indigo_noise.1] "Indigo rate noise upper bound";
    "cc.indigo_backoff" => [run.cc.indigo_backoff] "Indigo rate factor after a loss";
    "cc.verus_increase" => [run.cc.verus_increase] "Verus rate growth per epoch";
    "cc.verus_decrease" => [run.cc.verus_decrease] "Verus rate factor on a delay spike or loss";
    "cc.verus_grow_threshold" => [run.cc.verus_grow_threshold] "Verus grows while queueing delay is below this many serialization times";
    "cc.verus_spike_fraction" => [run.cc.verus_spike_fraction] "queueing delay over this fraction of min RTT is a delay spike";
    "cc.eaatp_accuracy" => [run.cc.eaatp_accuracy] "EAATP loss classifier accuracy";
    "sim.pb0" => [run.pb0] "initial byzantine probability";
    "sim.wear_per_hour" => [run.wear_per_hour] "byzantine probability growth per hour";
    "sim.mode" => [run.mode] "redundancy mode for single runs: none, social or consensus";
    "sim.count_silent_as_failure" => [run.count_silent_as_failure] "count rounds with no data as failed transactions";
    "sim.representative_gateway" => [run.representative_gateway] "simulate one gateway and scale by the gateway count at >= 2048 clusters";
    "sim.event_budget" => [run.event_budget] "events per run before the run aborts";
    "sim.seed" => [seed] "base seed";
    "trust.initial" => [run.trust.initial] "starting reputation";
    "trust.alpha" => [run.trust.alpha] "reputation learning rate";
    "trust.ostracism_threshold" => [run.trust.ostracism_threshold] "reputation below which a station is ostracized";
    "dependability.pbft_message_bytes" => [run.pbft_message_bytes] "bytes per PBFT message";
    "metrics.trx_max_hours" => [run.trx_max_hours] "deadline from sensing to delivery in hours";
    "experiment.rounds" => [rounds] "seeded runs per mesh point";
    "experiment.threshold" => [threshold] "minimum STR of the working domain";
    "experiment.parallel" => [parallel] "worker threads for sweeps";
    "experiment.domain_modes" => [domain_modes] "modes combined in the domain map: best, none, social or consensus";
};

impl Config {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        ENTRIES.iter().map(|e| e.key)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        ENTRIES.iter().find(|e| e.key == key).map(|e| (e.get)(self))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let entry = ENTRIES
            .iter()
            .find(|e| e.key == key)
            .ok_or_else(|| SimError::config(key, "unknown key"))?;
        (entry.set)(self, value).map_err(|m| SimError::config(key, m))?;
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SimError::config(format!("line {}", n + 1), "expected key = value"))?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        let cc = &self.run.cc;
        let positive = [
            ("cc.rtt_gain", cc.rtt_gain),
            ("cc.initial_window", cc.initial_window),
            ("cc.cubic_c", cc.cubic_c),
            ("cc.bbr_startup_gain", cc.bbr_startup_gain),
            ("cc.copa_delta", cc.copa_delta),
            ("cc.verus_increase", cc.verus_increase),
            ("cc.verus_grow_threshold", cc.verus_grow_threshold),
            ("cc.verus_spike_fraction", cc.verus_spike_fraction),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::config(key, "must be positive"));
            }
        }
        let fractions = [
            ("cc.cubic_beta", cc.cubic_beta),
            ("cc.indigo_backoff", cc.indigo_backoff),
            ("cc.verus_decrease", cc.verus_decrease),
            ("cc.eaatp_accuracy", cc.eaatp_accuracy),
        ];
        for (key, v) in fractions {
            if !(v > 0.0 && v <= 1.0) {
                return Err(SimError::config(key, "must lie in (0, 1]"));
            }
        }
        if !(cc.indigo_noise.0 > 0.0 && cc.indigo_noise.0 <= cc.indigo_noise.1) {
            return Err(SimError::config("cc.indigo_noise_low", "must be positive and at most cc.indigo_noise_high"));
        }
        if cc.bbr_filter_rounds == 0 {
            return Err(SimError::config("cc.bbr_filter_rounds", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(SimError::config("experiment.rounds", "must be at least 1"));
        }
        if self.parallel == 0 {
            return Err(SimError::config("experiment.parallel", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(SimError::config("experiment.threshold", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Every key with its default value and a one-line description.
    pub fn reference() -> String {
        let defaults = Self::default();
        let mut out = String::new();
        for e in ENTRIES {
            let _ = writeln!(out, "# {}\n{} = {}\n", e.doc, e.key, (e.get)(&defaults));
        }
        out
    }
}

pub fn parse_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::config("--config", format!("cannot read {}: {e}", path.display())))?;
    Config::parse_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = Config::parse_str("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.run.nvis.bitrate_bps, 20_000.0);
        assert_eq!(c.run.pb0, 1e-3);
        assert_eq!(c.rounds, 30);
    }

    #[test]
    fn values_are_applied() {
        let c = Config::parse_str(
            "channel.nvis.bitrate_bps = 20000\n# note\nsim.pb0=0.05\ntransport.protocol = copa\nchannel.force_availability = 1\ncc.bbr_probe_gains = 1,1,1,1,1,1,1,1\n",
        )
        .unwrap();
        assert_eq!(c.run.pb0, 0.05);
        assert_eq!(c.run.protocol, Protocol::Copa);
        assert_eq!(c.run.force_availability, Some(1.0));
        assert_eq!(c.run.cc.bbr_probe_gains, [1.0; 8]);
        assert!(c.is_explicit("sim.pb0"));
        assert!(!c.is_explicit("sim.mode"));
    }

    #[test]
    fn errors_name_the_key() {
        let cases = [
            ("sim.speed = 3", "sim.speed"),
            ("sim.pb0 = lots", "sim.pb0"),
            ("sim.pb0 = 2", "sim.pb0"),
            ("scenario.clusters_per_gateway = 7", "scenario.clusters_per_gateway"),
            ("cc.cubic_beta = 1.5", "cc.cubic_beta"),
        ];
        for (text, key) in cases {
            match Config::parse_str(text) {
                Err(SimError::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn reference_round_trips() {
        let text = Config::reference();
        let parsed = Config::parse_str(&text).unwrap();
        assert_eq!(parsed.run, Config::default().run);
        for key in Config::keys() {
            assert!(text.contains(&format!("\n{key} = ")) || text.contains(&format!("{key} = ")), "{key}");
        }
        assert_eq!(Config::keys().count(), parsed.explicit.len());
    }
}
