//! Simulation configuration read from `key = value` files.
//!
//! Blank lines and lines starting with `#` are ignored. Relative file paths
//! are resolved against the directory of the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::demand::{DemandError, RideDemand, SensitivityParams, Tariff};
use crate::matching::{MatchObjective, MatchingMode};
use crate::network::{Location, NetworkError, RoadNetwork, Seconds};
use crate::pricing::{ActionSet, QParams};
use crate::trip::ServiceLimits;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value {value:?} for {key}: {msg}")]
    Invalid { key: String, value: String, msg: String },
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Demand(#[from] DemandError),
}

/// How a vehicle picks its price factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PricingPolicy {
    /// Q-learning conditioned on the neighbours' mean action.
    MeanField,
    /// Q-learning with the mean action held uniform.
    Independent,
    /// Always quote the base price.
    Fixed,
}

/// One of the seven pricing/matching combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    MfNe,
    MfNn,
    MfIr,
    QNe,
    QNn,
    FNe,
    FIr,
}

impl Policy {
    pub const ALL: [Policy; 7] = [
        Policy::MfNe,
        Policy::MfNn,
        Policy::MfIr,
        Policy::QNe,
        Policy::QNn,
        Policy::FNe,
        Policy::FIr,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Policy::MfNe => "M&N-E",
            Policy::MfNn => "M&N-N",
            Policy::MfIr => "M&IR",
            Policy::QNe => "Q&N-E",
            Policy::QNn => "Q&N-N",
            Policy::FNe => "F&N-E",
            Policy::FIr => "F&IR",
        }
    }

    pub fn pricing(self) -> PricingPolicy {
        match self {
            Policy::MfNe | Policy::MfNn | Policy::MfIr => PricingPolicy::MeanField,
            Policy::QNe | Policy::QNn => PricingPolicy::Independent,
            Policy::FNe | Policy::FIr => PricingPolicy::Fixed,
        }
    }

    pub fn matching(self) -> MatchingMode {
        match self {
            Policy::MfNe | Policy::QNe | Policy::FNe => MatchingMode::Expected,
            Policy::MfNn | Policy::QNn => MatchingMode::Nominal,
            Policy::MfIr | Policy::FIr => MatchingMode::Immediate,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown policy {0:?} (expected one of M&N-E, M&N-N, M&IR, Q&N-E, Q&N-N, F&N-E, F&IR)")]
pub struct UnknownPolicy(pub String);

impl FromStr for Policy {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownPolicy(s.to_string()))
    }
}

/// Where the road network comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum NetworkSource {
    Grid { rows: usize, cols: usize, arc_seconds: Seconds, spacing_m: f64 },
    File(PathBuf),
}

impl NetworkSource {
    pub fn build(&self) -> Result<RoadNetwork, ConfigError> {
        match self {
            NetworkSource::Grid { rows, cols, arc_seconds, spacing_m } => {
                Ok(RoadNetwork::grid(*rows, *cols, *arc_seconds, *spacing_m)?)
            }
            NetworkSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
                Ok(RoadNetwork::parse(&text)?)
            }
        }
    }
}

/// Where requests come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DemandSource {
    /// Poisson arrivals: `rate` spread evenly over all locations, plus
    /// per-location extra rates keyed by external node id.
    Synthetic { rate: f64, hotspots: Vec<(u64, f64)> },
    File(PathBuf),
}

/// Demand resolved against a network.
#[derive(Debug, Clone, PartialEq)]
pub enum DemandPlan {
    Rates(Vec<(Location, f64)>),
    Recorded(Vec<Vec<RideDemand>>),
}

impl DemandSource {
    pub fn resolve(&self, net: &RoadNetwork) -> Result<DemandPlan, ConfigError> {
        match self {
            DemandSource::Synthetic { rate, hotspots } => {
                let per_node = rate / net.len() as f64;
                let mut rates: Vec<(Location, f64)> = net.locations().map(|l| (l, per_node)).collect();
                for &(id, extra) in hotspots {
                    let loc = net.location(id)?;
                    rates[loc.index()].1 += extra;
                }
                rates.retain(|r| r.1 > 0.0);
                Ok(DemandPlan::Rates(rates))
            }
            DemandSource::File(path) => {
                let file = std::fs::File::open(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
                Ok(DemandPlan::Recorded(crate::demand::load_requests(file, net)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub fleet_size: usize,
    pub capacity: usize,
    pub epoch_seconds: Seconds,
    pub limits: ServiceLimits,
    pub policy: Policy,
    pub sensitivity: SensitivityParams,
    pub price_factors: Vec<f64>,
    pub pricing: QParams,
    pub neighbor_radius: Seconds,
    pub obs_cap: u16,
    pub match_gamma: f64,
    pub match_lr: f64,
    pub revenue_weight: f64,
    pub historical_weight: f64,
    pub cost_per_meter: f64,
    pub zone_size_m: f64,
    pub time_bucket_seconds: Seconds,
    pub day_seconds: Seconds,
    pub seed: u64,
    pub horizon: u32,
    pub trip_size_cap: usize,
    /// Search nodes the assignment solver may spend per epoch before
    /// settling for its best assignment so far.
    pub solver_node_limit: u64,
    pub tariff: Tariff,
    pub network: NetworkSource,
    pub demand: DemandSource,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            fleet_size: 10,
            capacity: 2,
            epoch_seconds: 60,
            limits: ServiceLimits { max_pickup_delay: 300, max_detour: 600 },
            policy: Policy::MfNe,
            sensitivity: SensitivityParams::uber(),
            price_factors: ActionSet::default().factors().to_vec(),
            pricing: QParams::default(),
            neighbor_radius: 300,
            obs_cap: 8,
            match_gamma: 0.9,
            match_lr: 0.1,
            revenue_weight: 1.0,
            historical_weight: 0.0,
            cost_per_meter: 0.0,
            zone_size_m: 500.0,
            time_bucket_seconds: 3600,
            day_seconds: 86_400,
            seed: 0,
            horizon: 1440,
            trip_size_cap: 2,
            solver_node_limit: 2_000_000,
            tariff: Tariff::default(),
            network: NetworkSource::Grid { rows: 8, cols: 8, arc_seconds: 60, spacing_m: 250.0 },
            demand: DemandSource::Synthetic { rate: 5.0, hotspots: Vec::new() },
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Invalid {
        key: key.to_string(),
        value: value.to_string(),
        msg: e.to_string(),
    })
}

fn invalid(key: &str, value: impl fmt::Display, msg: &str) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), value: value.to_string(), msg: msg.to_string() }
}

impl SimConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses config text on top of the defaults; `base_dir` anchors relative paths.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut c = SimConfig::default();
        let mut grid = (8usize, 8usize, 60 as Seconds, 250.0f64);
        let mut network_file: Option<PathBuf> = None;
        let mut requests_file: Option<PathBuf> = None;
        let mut rate = 5.0;
        let mut hotspots = Vec::new();
        let mut preset = SensitivityParams::uber();
        let mut k1: Option<f64> = None;
        let mut k2: Option<f64> = None;

        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, msg: format!("expected `key = value`, found {line:?}") });
            };
            let (key, value) = (key.trim(), value.trim());
            match key {
                "fleet_size" => c.fleet_size = parse_value(key, value)?,
                "capacity" => c.capacity = parse_value(key, value)?,
                "epoch_seconds" => c.epoch_seconds = parse_value(key, value)?,
                "pickup_delay" => c.limits.max_pickup_delay = parse_value(key, value)?,
                "detour_delay" => c.limits.max_detour = parse_value(key, value)?,
                "policy" => c.policy = parse_value(key, value)?,
                "sensitivity" => {
                    preset = match value {
                        "uber" => SensitivityParams::uber(),
                        "conscious" => SensitivityParams::conscious(),
                        _ => return Err(invalid(key, value, "expected uber or conscious")),
                    }
                }
                "k1" => k1 = Some(parse_value(key, value)?),
                "k2" => k2 = Some(parse_value(key, value)?),
                "price_factors" => {
                    c.price_factors = value
                        .split(',')
                        .map(|f| parse_value(key, f.trim()))
                        .collect::<Result<_, _>>()?
                }
                "pricing_alpha" => c.pricing.alpha = parse_value(key, value)?,
                "pricing_gamma" => c.pricing.gamma = parse_value(key, value)?,
                "pricing_beta" => c.pricing.beta = parse_value(key, value)?,
                "mean_bins" => c.pricing.mean_bins = parse_value(key, value)?,
                "neighbor_radius" => c.neighbor_radius = parse_value(key, value)?,
                "obs_cap" => c.obs_cap = parse_value(key, value)?,
                "match_gamma" => c.match_gamma = parse_value(key, value)?,
                "match_lr" => c.match_lr = parse_value(key, value)?,
                "revenue_weight" => c.revenue_weight = parse_value(key, value)?,
                "historical_weight" => c.historical_weight = parse_value(key, value)?,
                "cost_per_meter" => c.cost_per_meter = parse_value(key, value)?,
                "zone_size_m" => c.zone_size_m = parse_value(key, value)?,
                "time_bucket_seconds" => c.time_bucket_seconds = parse_value(key, value)?,
                "day_seconds" => c.day_seconds = parse_value(key, value)?,
                "seed" => c.seed = parse_value(key, value)?,
                "horizon" => c.horizon = parse_value(key, value)?,
                "trip_size_cap" => c.trip_size_cap = parse_value(key, value)?,
                "solver_node_limit" => c.solver_node_limit = parse_value(key, value)?,
                "flag_fare" => c.tariff.flag = parse_value(key, value)?,
                "per_second_fare" => c.tariff.per_second = parse_value(key, value)?,
                "grid_rows" => grid.0 = parse_value(key, value)?,
                "grid_cols" => grid.1 = parse_value(key, value)?,
                "arc_seconds" => grid.2 = parse_value(key, value)?,
                "spacing_m" => grid.3 = parse_value(key, value)?,
                "network_file" => network_file = Some(base_dir.join(value)),
                "requests_file" => requests_file = Some(base_dir.join(value)),
                "demand_rate" => rate = parse_value(key, value)?,
                "hotspots" => {
                    hotspots.clear();
                    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        let (node, r) = item
                            .split_once(':')
                            .ok_or_else(|| invalid(key, item, "expected node:rate"))?;
                        hotspots.push((parse_value(key, node.trim())?, parse_value(key, r.trim())?));
                    }
                }
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            }
        }

        c.sensitivity = SensitivityParams::new(k1.unwrap_or(preset.k1()), k2.unwrap_or(preset.k2()))?;
        c.network = match network_file {
            Some(p) => NetworkSource::File(p),
            None => NetworkSource::Grid { rows: grid.0, cols: grid.1, arc_seconds: grid.2, spacing_m: grid.3 },
        };
        c.demand = match requests_file {
            Some(p) => DemandSource::File(p),
            None => DemandSource::Synthetic { rate, hotspots },
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epoch_seconds == 0 {
            return Err(invalid("epoch_seconds", 0, "must be positive"));
        }
        if self.capacity == 0 {
            return Err(invalid("capacity", 0, "must be positive"));
        }
        if self.trip_size_cap == 0 {
            return Err(invalid("trip_size_cap", 0, "must be positive"));
        }
        if self.solver_node_limit == 0 {
            return Err(invalid("solver_node_limit", 0, "must be positive"));
        }
        if self.capacity > 8 {
            return Err(invalid("capacity", self.capacity, "at most 8 seats are supported"));
        }
        if self.time_bucket_seconds == 0 {
            return Err(invalid("time_bucket_seconds", 0, "must be positive"));
        }
        ActionSet::new(self.price_factors.clone())
            .map_err(|e| invalid("price_factors", format!("{:?}", self.price_factors), &e.to_string()))?;
        if !self.price_factors.contains(&1.0) {
            return Err(invalid("price_factors", format!("{:?}", self.price_factors), "must contain 1.0"));
        }
        self.pricing
            .validate()
            .map_err(|e| invalid("pricing", format!("{:?}", self.pricing), &e.to_string()))?;
        crate::matching::ValueFunction::new(self.match_gamma, self.match_lr)
            .map_err(|e| invalid("match_gamma/match_lr", format!("{}/{}", self.match_gamma, self.match_lr), &e.to_string()))?;
        for (key, v) in [
            ("revenue_weight", self.revenue_weight),
            ("historical_weight", self.historical_weight),
            ("cost_per_meter", self.cost_per_meter),
        ] {
            if !v.is_finite() {
                return Err(invalid(key, v, "must be finite"));
            }
        }
        if !(self.tariff.flag >= 0.0 && self.tariff.per_second >= 0.0 && self.tariff.flag + self.tariff.per_second > 0.0) {
            return Err(invalid("flag_fare/per_second_fare", format!("{}/{}", self.tariff.flag, self.tariff.per_second), "fares must be non-negative and not both zero"));
        }
        if let DemandSource::Synthetic { rate, hotspots } = &self.demand {
            if !(*rate >= 0.0 && rate.is_finite()) || hotspots.iter().any(|h| !(h.1 >= 0.0 && h.1.is_finite())) {
                return Err(invalid("demand_rate/hotspots", rate, "rates must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn objective(&self) -> MatchObjective {
        MatchObjective {
            mode: self.policy.matching(),
            revenue_weight: self.revenue_weight,
            historical_weight: self.historical_weight,
            cost_per_meter: self.cost_per_meter,
        }
    }

    pub fn action_set(&self) -> ActionSet {
        ActionSet::new(self.price_factors.clone()).expect("validated action set")
    }
}
