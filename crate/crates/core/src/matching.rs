//! Trip scoring with a learned value of post-decision states.
//!
//! A trip is scored as `α·revenue + β`, where the offset β carries the
//! discounted value of the vehicle's post-decision state and, optionally,
//! historical earnings or the marginal driving cost. The value function is a
//! table over `(zone of final stop, committed seats, time-of-day bucket)`,
//! shared by all vehicles and trained by one-step temporal differences on
//! the trips the assignment actually chose.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::demand::{acceptance_probability, DemandError, RequestId, SensitivityParams};
use crate::network::{Location, Seconds, Zoning};
use crate::trip::{Trip, Vehicle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("no price quoted for request {0}")]
    MissingPrice(RequestId),
    #[error("value-function learning rate must lie in (0, 1], got {0}")]
    LearningRate(f64),
    #[error("value-function discount must lie in [0, 1], got {0}")]
    Discount(f64),
    #[error(transparent)]
    Demand(#[from] DemandError),
}

/// How a trip's revenue enters the assignment objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchingMode {
    /// Future-aware, revenue weighted by acceptance probability (N-E).
    Expected,
    /// Future-aware, nominal quoted revenue (N-N).
    Nominal,
    /// Myopic: expected revenue with no future term (IR).
    Immediate,
}

impl MatchingMode {
    pub fn is_future_aware(self) -> bool {
        !matches!(self, MatchingMode::Immediate)
    }
}

/// Quoted and base price of one request as seen by one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceQuote {
    pub quoted: f64,
    pub base: f64,
}

pub type PriceBook = HashMap<RequestId, PriceQuote>;

pub fn trip_revenue(
    requests: &[RequestId],
    prices: &PriceBook,
    mode: MatchingMode,
    sensitivity: &SensitivityParams,
) -> Result<f64, MatchingError> {
    let mut total = 0.0;
    for id in requests {
        let q = prices.get(id).ok_or(MatchingError::MissingPrice(*id))?;
        total += match mode {
            MatchingMode::Nominal => q.quoted,
            MatchingMode::Expected | MatchingMode::Immediate => {
                q.quoted * acceptance_probability(q.quoted, q.base, sensitivity)?
            }
        };
    }
    Ok(total)
}

/// Vehicle state right after committing to a trip, before new demand arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PostDecisionState {
    pub final_location: Location,
    pub plan_end: Seconds,
    pub committed_seats: usize,
    pub decision_time: Seconds,
}

pub fn post_decision_state(v: &Vehicle, trip: &Trip, now: Seconds) -> PostDecisionState {
    let (final_location, plan_end) = trip.end(v);
    PostDecisionState {
        final_location,
        plan_end,
        committed_seats: v.committed_seats() + trip.requests.len(),
        decision_time: now,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueFeatures {
    pub zone: u32,
    pub seats: u8,
    pub time_bucket: u16,
}

/// Maps post-decision states onto value-table features.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub zoning: Zoning,
    pub bucket_seconds: Seconds,
    pub day_seconds: Seconds,
}

impl Featurizer {
    pub fn features(&self, s: &PostDecisionState) -> ValueFeatures {
        let tod = if self.day_seconds > 0 { s.decision_time % self.day_seconds } else { s.decision_time };
        ValueFeatures {
            zone: self.zoning.zone_of(s.final_location),
            seats: s.committed_seats.min(u8::MAX as usize) as u8,
            time_bucket: (tod / self.bucket_seconds.max(1)).min(u16::MAX as u64) as u16,
        }
    }
}

/// TD sample: the post-decision state at t, the realised reward at t+1 and
/// the post-decision state chosen at t+1 (`None` when t+1 is terminal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdTransition {
    pub from: ValueFeatures,
    pub reward: f64,
    pub next: Option<ValueFeatures>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    gamma: f64,
    learning_rate: f64,
    weights: HashMap<ValueFeatures, f64>,
}

impl ValueFunction {
    pub fn new(gamma: f64, learning_rate: f64) -> Result<Self, MatchingError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(MatchingError::Discount(gamma));
        }
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return Err(MatchingError::LearningRate(learning_rate));
        }
        Ok(ValueFunction { gamma, learning_rate, weights: HashMap::new() })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn value(&self, f: &ValueFeatures) -> f64 {
        self.weights.get(f).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, f: ValueFeatures, value: f64) {
        self.weights.insert(f, value);
    }

    pub fn td_update(&mut self, t: &TdTransition) -> f64 {
        let target = t.reward + t.next.map_or(0.0, |n| self.gamma * self.value(&n));
        let old = self.value(&t.from);
        let new = old + self.learning_rate * (target - old);
        self.weights.insert(t.from, new);
        new
    }

    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<(), CheckpointError> {
        let mut w = checkpoint::Writer::new(out, "value-function")?;
        w.field("gamma", self.gamma)?;
        w.field("learning_rate", self.learning_rate)?;
        let mut entries: Vec<_> = self.weights.iter().collect();
        entries.sort_by(|a, b| a.0.cmp(b.0));
        w.field("entries", entries.len())?;
        for (f, v) in entries {
            w.line(&format!("{} {} {} {}", f.zone, f.seats, f.time_bucket, v))?;
        }
        w.finish()
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self, CheckpointError> {
        let mut r = checkpoint::Reader::new(input, "value-function")?;
        let gamma = r.parse_field("gamma")?;
        let learning_rate = r.parse_field("learning_rate")?;
        let mut vf = ValueFunction::new(gamma, learning_rate).map_err(|e| r.error(e.to_string()))?;
        let n: usize = r.parse_field("entries")?;
        for _ in 0..n {
            let line = r.next_line()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [zone, seats, bucket, value] = parts.as_slice() else {
                return Err(r.error(format!("expected 4 columns, found {line:?}")));
            };
            let f = ValueFeatures {
                zone: r.parse(zone, "zone")?,
                seats: r.parse(seats, "seats")?,
                time_bucket: r.parse(bucket, "time bucket")?,
            };
            vf.weights.insert(f, r.parse(value, "value")?);
        }
        Ok(vf)
    }
}

/// Coefficients of the linear objective `α·revenue + β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchObjective {
    pub mode: MatchingMode,
    /// Revenue weight α.
    pub revenue_weight: f64,
    /// Weight on the vehicle's historical earnings (0 disables).
    pub historical_weight: f64,
    /// Cost per extra meter driven relative to the current plan (0 disables).
    pub cost_per_meter: f64,
}

impl MatchObjective {
    pub fn new(mode: MatchingMode) -> Self {
        MatchObjective { mode, revenue_weight: 1.0, historical_weight: 0.0, cost_per_meter: 0.0 }
    }
}

/// Everything needed to score one vehicle's candidate trips.
pub struct Scorer<'a> {
    pub value: &'a ValueFunction,
    pub featurizer: &'a Featurizer,
    pub objective: MatchObjective,
    pub sensitivity: SensitivityParams,
    pub now: Seconds,
}

/// Score split into its linear parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParts {
    pub revenue: f64,
    pub future: f64,
    pub offset: f64,
    pub score: f64,
}

impl Scorer<'_> {
    /// `α·revenue + γ·V(post) + hist − cost`; the γ-term is dropped in the
    /// immediate-reward mode.
    pub fn score(&self, v: &Vehicle, trip: &Trip, prices: &PriceBook, current_plan_meters: f64) -> Result<ScoreParts, MatchingError> {
        let revenue = trip_revenue(&trip.requests, prices, self.objective.mode, &self.sensitivity)?;
        let future = if self.objective.mode.is_future_aware() {
            let post = post_decision_state(v, trip, self.now);
            self.value.gamma() * self.value.value(&self.featurizer.features(&post))
        } else {
            0.0
        };
        let offset = self.objective.historical_weight * v.earnings
            - self.objective.cost_per_meter * (trip.plan_meters - current_plan_meters);
        let score = self.objective.revenue_weight * revenue + future + offset;
        Ok(ScoreParts { revenue, future, offset, score })
    }
}

/// Scores a single trip for a vehicle.
pub fn score_trip(v: &Vehicle, trip: &Trip, prices: &PriceBook, scorer: &Scorer<'_>, current_plan_meters: f64) -> Result<f64, MatchingError> {
    scorer.score(v, trip, prices, current_plan_meters).map(|p| p.score)
}
