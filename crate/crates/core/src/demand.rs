//! Ride requests, base fares and the customer price-sensitivity model.

use std::io::Read;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::network::{Location, NetworkError, RoadNetwork, Seconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestId(pub u64);

impl std::fmt::Display for RequestId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemandError {
    #[error("request from {0:?} to itself has zero travel time")]
    ZeroTravelTime(Location),
    #[error("base price must be positive, got {0}")]
    NonPositiveBase(f64),
    #[error("quoted price must be non-negative, got {0}")]
    NegativeQuote(f64),
    #[error("price sensitivity slope k1 must be positive, got {0}")]
    InvalidSensitivity(f64),
    #[error("acceptance probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("arrival rate for {0:?} must be finite and non-negative, got {1}")]
    InvalidRate(Location, f64),
    #[error("requests csv row {row}: {msg}")]
    Csv { row: usize, msg: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Flagfall plus a per-second fare on the shortest travel time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tariff {
    pub flag: f64,
    pub per_second: f64,
}

impl Default for Tariff {
    fn default() -> Self {
        Tariff { flag: 2.5, per_second: 0.01 }
    }
}

pub fn base_price(origin: Location, destination: Location, net: &RoadNetwork, tariff: &Tariff) -> Result<f64, DemandError> {
    let tt = net.travel_time(origin, destination)?;
    if tt == 0 {
        return Err(DemandError::ZeroTravelTime(origin));
    }
    let price = tariff.flag + tariff.per_second * tt as f64;
    if price > 0.0 {
        Ok(price)
    } else {
        Err(DemandError::NonPositiveBase(price))
    }
}

/// An origin/destination pair before it enters a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RideDemand {
    pub origin: Location,
    pub destination: Location,
}

/// A batched customer request.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: RequestId,
    pub origin: Location,
    pub destination: Location,
    pub arrival_epoch: u32,
    /// Time the request enters the decision batch; pickup delay is measured from here.
    pub release_time: Seconds,
    pub direct_time: Seconds,
    pub base_price: f64,
    pub quoted_price: Option<f64>,
}

impl Request {
    pub fn new(
        id: RequestId,
        demand: RideDemand,
        arrival_epoch: u32,
        release_time: Seconds,
        net: &RoadNetwork,
        tariff: &Tariff,
    ) -> Result<Self, DemandError> {
        let base = base_price(demand.origin, demand.destination, net, tariff)?;
        Ok(Request {
            id,
            origin: demand.origin,
            destination: demand.destination,
            arrival_epoch,
            release_time,
            direct_time: net.tt(demand.origin, demand.destination),
            base_price: base,
            quoted_price: None,
        })
    }

    /// Quotes `base × factor` and returns the quote.
    pub fn quote(&mut self, factor: f64) -> f64 {
        let q = self.base_price * factor;
        self.quoted_price = Some(q);
        q
    }
}

/// Logistic acceptance curve `1 / (1 + exp(k1 · quoted/base − k2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityParams {
    k1: f64,
    k2: f64,
}

impl SensitivityParams {
    pub fn new(k1: f64, k2: f64) -> Result<Self, DemandError> {
        if !(k1 > 0.0) || !k1.is_finite() || !k2.is_finite() {
            return Err(DemandError::InvalidSensitivity(k1));
        }
        Ok(SensitivityParams { k1, k2 })
    }

    /// Curve fitted on Uber data: k1 = 0.67, k2 = 1.69.
    pub fn uber() -> Self {
        SensitivityParams { k1: 0.67, k2: 1.69 }
    }

    /// Both Uber coefficients scaled by 10: a sharper accept/reject transition.
    pub fn conscious() -> Self {
        SensitivityParams { k1: 6.7, k2: 16.9 }
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }
}

impl Default for SensitivityParams {
    fn default() -> Self {
        Self::uber()
    }
}

pub fn acceptance_probability(quoted: f64, base: f64, s: &SensitivityParams) -> Result<f64, DemandError> {
    if !(base > 0.0) {
        return Err(DemandError::NonPositiveBase(base));
    }
    if !(quoted >= 0.0) {
        return Err(DemandError::NegativeQuote(quoted));
    }
    Ok(1.0 / (1.0 + (s.k1 * quoted / base - s.k2).exp()))
}

pub fn sample_acceptance<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<bool, DemandError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DemandError::InvalidProbability(p));
    }
    Ok(rng.random::<f64>() < p)
}

/// Draws one epoch of demand: a Poisson count per origin, destinations
/// uniform over all other locations.
pub fn generate_requests<R: Rng + ?Sized>(
    zone_rates: &[(Location, f64)],
    net: &RoadNetwork,
    rng: &mut R,
) -> Result<Vec<RideDemand>, DemandError> {
    let mut out = Vec::new();
    let n = net.len() as u32;
    for &(origin, rate) in zone_rates {
        if !net.contains(origin) {
            return Err(NetworkError::UnknownLocation(origin.0 as u64).into());
        }
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(DemandError::InvalidRate(origin, rate));
        }
        if rate == 0.0 {
            continue;
        }
        let count = Poisson::new(rate).map_err(|_| DemandError::InvalidRate(origin, rate))?.sample(rng) as u64;
        for _ in 0..count {
            let mut dest = rng.random_range(0..n - 1);
            if dest >= origin.0 {
                dest += 1;
            }
            out.push(RideDemand { origin, destination: Location(dest) });
        }
    }
    Ok(out)
}

/// Reads an `epoch,origin,dest` CSV (external node ids) and groups rows by
/// epoch; the result has one entry per epoch up to the largest one seen.
pub fn load_requests<R: Read>(reader: R, net: &RoadNetwork) -> Result<Vec<Vec<RideDemand>>, DemandError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| DemandError::Csv { row: 0, msg: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["epoch", "origin", "dest"] {
        return Err(DemandError::Csv {
            row: 0,
            msg: format!("expected header epoch,origin,dest, got {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut epochs: Vec<Vec<RideDemand>> = Vec::new();
    for (i, record) in csv.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DemandError::Csv { row, msg: e.to_string() })?;
        if record.len() != 3 {
            return Err(DemandError::Csv { row, msg: format!("expected 3 fields, got {}", record.len()) });
        }
        let bad = |what: &str, v: &str| DemandError::Csv { row, msg: format!("invalid {what} {v:?}") };
        let epoch: usize = record[0].parse().map_err(|_| bad("epoch", &record[0]))?;
        let origin_id: u64 = record[1].parse().map_err(|_| bad("origin", &record[1]))?;
        let dest_id: u64 = record[2].parse().map_err(|_| bad("dest", &record[2]))?;
        let origin = net
            .location(origin_id)
            .map_err(|_| DemandError::Csv { row, msg: format!("unknown origin location {origin_id}") })?;
        let destination = net
            .location(dest_id)
            .map_err(|_| DemandError::Csv { row, msg: format!("unknown dest location {dest_id}") })?;
        if origin == destination {
            return Err(DemandError::Csv { row, msg: "origin equals destination".into() });
        }
        if epochs.len() <= epoch {
            epochs.resize_with(epoch + 1, Vec::new);
        }
        epochs[epoch].push(RideDemand { origin, destination });
    }
    Ok(epochs)
}
