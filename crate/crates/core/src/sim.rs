//! The epoch loop.
//!
//! Each call to [`Simulator::step`] runs one decision epoch:
//! vehicles move, new requests are batched, every vehicle picks a price
//! factor, feasible trips are enumerated and scored, the assignment is
//! solved, offers are made and accepted or rejected, rewards are routed to
//! the learners and, in training mode, the learners are updated.
//!
//! Requests arriving during epoch `e` are released at the decision time
//! `(e + 1) · Δ`. A request not served by the assignment, or rejecting its
//! offer, is dropped.

use std::collections::HashMap;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::assignment::{self, AssignmentError, AssignmentProblem, Candidate, VehicleCandidates};
use crate::checkpoint::CheckpointError;
use crate::config::{ConfigError, DemandPlan, PricingPolicy, SimConfig};
use crate::demand::{self, DemandError, Request, RequestId};
use crate::matching::{
    Featurizer, MatchingError, PostDecisionState, PriceBook, PriceQuote, Scorer, TdTransition, ValueFeatures,
    ValueFunction,
};
use crate::network::{Location, RoadNetwork, Seconds, Zoning};
use crate::pricing::{self, MeanAction, Observation, PricingError, PricingTransition, QTable};
use crate::trip::{self, StopKind, TripError, Vehicle, VehicleId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Demand(#[from] DemandError),
    #[error(transparent)]
    Trip(#[from] TripError),
    #[error(transparent)]
    Matching(#[from] MatchingError),
    #[error(transparent)]
    Pricing(#[from] PricingError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error("checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: CheckpointError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("epoch {epoch}, vehicle {vehicle}: constraint violated: {msg}")]
    Violation { epoch: u32, vehicle: VehicleId, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Train,
    Eval,
}

impl std::str::FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(RunMode::Train),
            "eval" => Ok(RunMode::Eval),
            _ => Err(format!("unknown mode {s:?} (expected train or eval)")),
        }
    }
}

/// Substream ids of the root generator.
mod stream {
    pub const FLEET: u64 = 0;
    pub const DEMAND: u64 = 1;
    pub const ACCEPTANCE: u64 = 2;
    pub const PRICING: u64 = 3;
}

fn substream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// The pricing Q-table and the matching value function.
#[derive(Debug, Clone, PartialEq)]
pub struct Learners {
    pub q: QTable,
    pub value: ValueFunction,
}

const Q_FILE: &str = "q_table.ckpt";
const VALUE_FILE: &str = "value_function.ckpt";

impl Learners {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        Ok(Learners {
            q: QTable::new(config.pricing, config.action_set())?,
            value: ValueFunction::new(config.match_gamma, config.match_lr)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir).map_err(|source| SimError::Io { path: dir.to_path_buf(), source })?;
        let write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> Result<(), CheckpointError>| {
            let path = dir.join(name);
            let mut buf = Vec::new();
            f(&mut buf).map_err(|source| SimError::Checkpoint { path: path.clone(), source })?;
            std::fs::write(&path, buf).map_err(|source| SimError::Io { path, source })
        };
        write(Q_FILE, &|b| self.q.write_checkpoint(b))?;
        write(VALUE_FILE, &|b| self.value.write_checkpoint(b))
    }

    pub fn load(dir: &Path) -> Result<Self, SimError> {
        let open = |name: &str| {
            let path = dir.join(name);
            std::fs::File::open(&path)
                .map(BufReader::new)
                .map_err(|source| SimError::Io { path: path.clone(), source })
                .map(|f| (path, f))
        };
        let (path, f) = open(Q_FILE)?;
        let q = QTable::read_checkpoint(f).map_err(|source| SimError::Checkpoint { path, source })?;
        let (path, f) = open(VALUE_FILE)?;
        let value = ValueFunction::read_checkpoint(f).map_err(|source| SimError::Checkpoint { path, source })?;
        Ok(Learners { q, value })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u32,
    /// Sum of accepted quoted prices.
    pub revenue: f64,
    pub offers: u32,
    pub accepts: u32,
    pub served: u32,
    pub dropped: u32,
    /// Fleet distance driven during the epoch.
    pub distance_m: f64,
    /// Share of vehicles holding at least one passenger after the epoch.
    pub utilization: f64,
}

/// Everything observable about a run, in the order it happened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Spawn { vehicle: VehicleId, location: Location, capacity: usize },
    Release { epoch: u32, request: RequestId, origin: Location, destination: Location, time: Seconds },
    Price { epoch: u32, vehicle: VehicleId, factor: f64 },
    Offer { epoch: u32, vehicle: VehicleId, request: RequestId, quoted: f64, base: f64, accepted: bool },
    Move { vehicle: VehicleId, from: Location, to: Location, depart: Seconds, arrive: Seconds },
    Pickup { vehicle: VehicleId, request: RequestId, location: Location, time: Seconds },
    Dropoff { vehicle: VehicleId, request: RequestId, location: Location, time: Seconds },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    pub record_events: bool,
    /// Keep every epoch's assignment problem.
    pub record_problems: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub events: Vec<Event>,
    pub problems: Vec<AssignmentProblem>,
}

/// Network plus resolved demand, shared by runs of one scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub net: RoadNetwork,
    pub demand: DemandPlan,
}

impl Scenario {
    pub fn from_config(config: &SimConfig) -> Result<Self, SimError> {
        let net = config.network.build()?;
        let demand = config.demand.resolve(&net)?;
        Ok(Scenario { net, demand })
    }
}

#[derive(Debug, Clone)]
struct PendingPricing {
    obs: Observation,
    action: usize,
    mean: MeanAction,
    reward: f64,
}

pub struct Simulator {
    config: SimConfig,
    net: RoadNetwork,
    demand: DemandPlan,
    featurizer: Featurizer,
    mode: RunMode,
    options: SimOptions,
    learners: Learners,
    vehicles: Vec<Vehicle>,
    epoch: u32,
    next_request: u64,
    demand_rng: ChaCha8Rng,
    acceptance_rng: ChaCha8Rng,
    pricing_rng: ChaCha8Rng,
    prev_actions: Vec<usize>,
    pending_pricing: Vec<Option<PendingPricing>>,
    pending_value: Vec<Option<ValueFeatures>>,
    log: RunLog,
}

impl Simulator {
    pub fn new(
        config: &SimConfig,
        scenario: &Scenario,
        learners: Learners,
        mode: RunMode,
        options: SimOptions,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let net = scenario.net.clone();
        let mut fleet_rng = substream(config.seed, stream::FLEET);
        let mut log = RunLog::default();
        let vehicles: Vec<Vehicle> = (0..config.fleet_size)
            .map(|i| {
                let loc = Location(rand::Rng::random_range(&mut fleet_rng, 0..net.len() as u32));
                Vehicle::new(VehicleId(i as u32), loc, config.capacity, 0)
            })
            .collect();
        if options.record_events {
            for v in &vehicles {
                log.events.push(Event::Spawn { vehicle: v.id, location: v.location, capacity: v.capacity });
            }
        }
        let neutral = learners.q.actions().index_of(1.0);
        Ok(Simulator {
            featurizer: Featurizer {
                zoning: Zoning::new(&net, config.zone_size_m),
                bucket_seconds: config.time_bucket_seconds,
                day_seconds: config.day_seconds,
            },
            config: config.clone(),
            net,
            demand: scenario.demand.clone(),
            mode,
            options,
            learners,
            prev_actions: vec![neutral; vehicles.len()],
            pending_pricing: vec![None; vehicles.len()],
            pending_value: vec![None; vehicles.len()],
            vehicles,
            epoch: 0,
            next_request: 0,
            demand_rng: substream(config.seed, stream::DEMAND),
            acceptance_rng: substream(config.seed, stream::ACCEPTANCE),
            pricing_rng: substream(config.seed, stream::PRICING),
            log,
        })
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn learners(&self) -> &Learners {
        &self.learners
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn into_parts(self) -> (Learners, RunLog) {
        (self.learners, self.log)
    }

    fn record(&mut self, e: Event) {
        if self.options.record_events {
            self.log.events.push(e);
        }
    }

    pub fn step(&mut self) -> Result<EpochMetrics, SimError> {
        let epoch = self.epoch;
        let now = (epoch as Seconds + 1) * self.config.epoch_seconds;
        let distance_before: f64 = self.vehicles.iter().map(|v| v.cumulative_distance_m).sum();

        // (1) motion
        let mut events = Vec::new();
        for v in &mut self.vehicles {
            advance(v, now, &self.net, self.options.record_events.then_some(&mut events));
        }
        for e in events {
            self.record(e);
        }

        // (2) batching
        let demands = match &self.demand {
            DemandPlan::Rates(rates) => demand::generate_requests(rates, &self.net, &mut self.demand_rng)?,
            DemandPlan::Recorded(epochs) => epochs.get(epoch as usize).cloned().unwrap_or_default(),
        };
        let mut requests = Vec::with_capacity(demands.len());
        for d in demands {
            let id = RequestId(self.next_request);
            self.next_request += 1;
            let r = Request::new(id, d, epoch, now, &self.net, &self.config.tariff)?;
            self.record(Event::Release { epoch, request: id, origin: r.origin, destination: r.destination, time: now });
            requests.push(r);
        }

        // (3) pricing
        let (observations, means, actions) = self.choose_prices(&requests)?;
        let factors: Vec<f64> = actions.iter().map(|&a| self.learners.q.actions().factor(a)).collect();
        for (v, &factor) in self.vehicles.iter().zip(&factors) {
            if self.options.record_events {
                self.log.events.push(Event::Price { epoch, vehicle: v.id, factor });
            }
        }
        let mut pricing_updates = Vec::new();
        for i in 0..self.vehicles.len() {
            if let Some(p) = self.pending_pricing[i].take() {
                pricing_updates.push(PricingTransition {
                    obs: p.obs,
                    action: p.action,
                    mean: p.mean,
                    reward: p.reward,
                    next: Some((observations[i], means[i].clone())),
                });
            }
        }

        // (4) trip generation
        let trips = trip::generate_feasible_trips(
            &self.vehicles,
            &requests,
            &self.net,
            self.config.limits,
            self.config.trip_size_cap,
        );

        // (5) scoring
        let by_id: HashMap<RequestId, &Request> = requests.iter().map(|r| (r.id, r)).collect();
        let scorer = Scorer {
            value: &self.learners.value,
            featurizer: &self.featurizer,
            objective: self.config.objective(),
            sensitivity: self.config.sensitivity,
            now,
        };
        let candidates: Vec<VehicleCandidates> = self
            .vehicles
            .par_iter()
            .zip(&trips)
            .zip(&factors)
            .map(|((v, vtrips), &factor)| {
                let prices: PriceBook = vtrips
                    .iter()
                    .flat_map(|t| t.requests.iter())
                    .map(|id| {
                        let base = by_id[id].base_price;
                        (*id, PriceQuote { quoted: pricing::candidate_price(base, factor), base })
                    })
                    .collect();
                let current = vtrips[0].plan_meters;
                let trips = vtrips
                    .iter()
                    .map(|t| {
                        let parts = scorer.score(v, t, &prices, current)?;
                        Ok(Candidate::new(t.requests.clone(), parts.score))
                    })
                    .collect::<Result<Vec<_>, MatchingError>>()?;
                Ok(VehicleCandidates { vehicle: v.id, trips })
            })
            .collect::<Result<_, MatchingError>>()?;
        let problem = AssignmentProblem { vehicles: candidates };

        // (6) assignment
        let solution = assignment::solve_within(&problem, self.config.solver_node_limit)?;
        if !solution.optimal {
            log::warn!("epoch {epoch}: assignment search stopped at the node limit; using the best assignment found");
        }
        if self.options.record_problems {
            self.log.problems.push(problem);
        }

        // (7) offers, acceptance and commitment
        let mut metrics = EpochMetrics {
            epoch,
            revenue: 0.0,
            offers: 0,
            accepts: 0,
            served: 0,
            dropped: 0,
            distance_m: 0.0,
            utilization: 0.0,
        };
        let mut rewards = vec![0.0; self.vehicles.len()];
        let mut post_features = Vec::with_capacity(self.vehicles.len());
        for (i, &(vid, t)) in solution.choices.iter().enumerate() {
            debug_assert_eq!(self.vehicles[i].id, vid);
            let chosen = &trips[i][t];
            let mut accepted: Vec<&Request> = Vec::new();
            for id in &chosen.requests {
                let r = by_id[id];
                let quoted = pricing::candidate_price(r.base_price, factors[i]);
                let p = demand::acceptance_probability(quoted, r.base_price, &self.config.sensitivity)?;
                let ok = demand::sample_acceptance(p, &mut self.acceptance_rng)?;
                metrics.offers += 1;
                if ok {
                    accepted.push(r);
                    rewards[i] += quoted;
                }
                if self.options.record_events {
                    self.log.events.push(Event::Offer {
                        epoch,
                        vehicle: vid,
                        request: *id,
                        quoted,
                        base: r.base_price,
                        accepted: ok,
                    });
                }
            }
            let v = &mut self.vehicles[i];
            if !accepted.is_empty() {
                let realized = if accepted.len() == chosen.requests.len() {
                    chosen.clone()
                } else {
                    trip::feasible_insertion(v, &accepted, &self.net, self.config.limits)?.ok_or_else(|| {
                        SimError::Violation { epoch, vehicle: vid, msg: "accepted subset of a feasible trip is infeasible".into() }
                    })?
                };
                v.commit(&realized, &accepted);
                check_plan(v, &self.net, &self.config).map_err(|msg| SimError::Violation { epoch, vehicle: vid, msg })?;
            }
            metrics.accepts += accepted.len() as u32;
            v.earnings += rewards[i];
            metrics.revenue += rewards[i];
            let (final_location, plan_end) = v.plan_end();
            post_features.push(self.featurizer.features(&PostDecisionState {
                final_location,
                plan_end,
                committed_seats: v.committed_seats(),
                decision_time: now,
            }));
        }
        metrics.served = metrics.accepts;
        metrics.dropped = requests.len() as u32 - metrics.accepts;

        // (8) reward routing
        let mut value_updates = Vec::new();
        for i in 0..self.vehicles.len() {
            self.pending_pricing[i] = Some(PendingPricing {
                obs: observations[i],
                action: actions[i],
                mean: means[i].clone(),
                reward: rewards[i],
            });
            if let Some(from) = self.pending_value[i].replace(post_features[i]) {
                value_updates.push(TdTransition { from, reward: rewards[i], next: Some(post_features[i]) });
            }
        }
        self.prev_actions = actions;

        // (9) learning barrier
        if self.mode == RunMode::Train {
            if self.config.policy.pricing() != PricingPolicy::Fixed {
                for t in &pricing_updates {
                    self.learners.q.update(t)?;
                }
            }
            if self.config.policy.matching().is_future_aware() {
                for t in &value_updates {
                    self.learners.value.td_update(t);
                }
            }
        }

        // (10) metrics
        let distance_after: f64 = self.vehicles.iter().map(|v| v.cumulative_distance_m).sum();
        metrics.distance_m = distance_after - distance_before;
        let busy = self.vehicles.iter().filter(|v| !v.passengers.is_empty()).count();
        metrics.utilization = if self.vehicles.is_empty() { 0.0 } else { busy as f64 / self.vehicles.len() as f64 };
        self.epoch += 1;
        Ok(metrics)
    }

    /// Observation, mean action and chosen action index for every vehicle.
    fn choose_prices(&mut self, requests: &[Request]) -> Result<(Vec<Observation>, Vec<MeanAction>, Vec<usize>), SimError> {
        let policy = self.config.policy.pricing();
        let n_actions = self.learners.q.actions().len();
        let neutral = self.learners.q.actions().index_of(1.0);
        let radius = self.config.neighbor_radius;
        let positions: Vec<(usize, Location)> = self.vehicles.iter().enumerate().map(|(i, v)| (i, v.location)).collect();
        let mut observations = Vec::with_capacity(self.vehicles.len());
        let mut means = Vec::with_capacity(self.vehicles.len());
        let mut actions = Vec::with_capacity(self.vehicles.len());
        for (i, v) in self.vehicles.iter().enumerate() {
            let neighbors = self.net.neighbors_within(i, v.location, radius, &positions).map_err(ConfigError::from)?;
            let local = requests.iter().filter(|r| self.net.tt(v.location, r.origin) <= radius).count();
            let obs = Observation::new(self.featurizer.zoning.zone_of(v.location), neighbors.len(), local, self.config.obs_cap);
            let mean = match policy {
                PricingPolicy::MeanField => {
                    let prev: Vec<usize> = neighbors.iter().map(|&j| self.prev_actions[j]).collect();
                    pricing::mean_action(&prev, n_actions)?
                }
                PricingPolicy::Independent | PricingPolicy::Fixed => MeanAction::uniform(n_actions),
            };
            let action = match policy {
                PricingPolicy::Fixed => neutral,
                _ => self.learners.q.select_action(&obs, &mean, &mut self.pricing_rng),
            };
            observations.push(obs);
            means.push(mean);
            actions.push(action);
        }
        Ok((observations, means, actions))
    }
}

/// Moves `v` along its plan until `until`, serving every stop reached.
/// An arc, once started, is always completed, so the vehicle may end up
/// committed to a node it reaches after `until`. Idle vehicles stay put.
pub fn advance(v: &mut Vehicle, until: Seconds, net: &RoadNetwork, mut log: Option<&mut Vec<Event>>) {
    loop {
        while let Some(s) = v.route_plan.first() {
            if s.location != v.location || s.time > v.ready_at {
                break;
            }
            let s = v.route_plan.remove(0);
            let pos = v.passengers.iter().position(|p| p.request == s.request).expect("stop for a committed passenger");
            match s.kind {
                StopKind::Pickup => {
                    v.passengers[pos].pickup_time = Some(v.ready_at);
                    if let Some(log) = log.as_deref_mut() {
                        log.push(Event::Pickup { vehicle: v.id, request: s.request, location: v.location, time: v.ready_at });
                    }
                }
                StopKind::Dropoff => {
                    v.passengers.remove(pos);
                    if let Some(log) = log.as_deref_mut() {
                        log.push(Event::Dropoff { vehicle: v.id, request: s.request, location: v.location, time: v.ready_at });
                    }
                }
            }
        }
        if v.ready_at >= until {
            return;
        }
        let Some(target) = v.route_plan.first().map(|s| s.location) else {
            v.ready_at = until;
            return;
        };
        let hop = net.next_hop(v.location, target);
        let (seconds, meters) = net.arc(v.location, hop).expect("next hop is an arc");
        if let Some(log) = log.as_deref_mut() {
            log.push(Event::Move { vehicle: v.id, from: v.location, to: hop, depart: v.ready_at, arrive: v.ready_at + seconds });
        }
        v.location = hop;
        v.ready_at += seconds;
        v.cumulative_distance_m += meters;
    }
}

/// Re-checks a committed plan against capacity, τ and λ.
fn check_plan(v: &Vehicle, net: &RoadNetwork, config: &SimConfig) -> Result<(), String> {
    if v.passengers.len() > v.capacity {
        return Err(format!("{} passengers exceed capacity {}", v.passengers.len(), v.capacity));
    }
    let mut at = (v.location, v.ready_at);
    let mut picked: HashMap<RequestId, Seconds> =
        v.passengers.iter().filter_map(|p| p.pickup_time.map(|t| (p.request, t))).collect();
    for s in &v.route_plan {
        let expected = at.1 + net.tt(at.0, s.location);
        if s.time != expected {
            return Err(format!("stop of {} scheduled at {} but reachable at {expected}", s.request, s.time));
        }
        let p = v.passengers.iter().find(|p| p.request == s.request).ok_or_else(|| format!("stop for unknown request {}", s.request))?;
        match s.kind {
            StopKind::Pickup => {
                if s.time.saturating_sub(p.release_time) > config.limits.max_pickup_delay {
                    return Err(format!("pickup delay of {} is {}s", p.request, s.time - p.release_time));
                }
                picked.insert(p.request, s.time);
            }
            StopKind::Dropoff => {
                let pick = picked.get(&p.request).ok_or_else(|| format!("dropoff of {} before pickup", p.request))?;
                let detour = s.time.saturating_sub(pick + p.direct_time);
                if detour > config.limits.max_detour {
                    return Err(format!("detour of {} is {detour}s", p.request));
                }
            }
        }
        at = (s.location, s.time);
    }
    Ok(())
}

pub struct RunOutput {
    pub metrics: Vec<EpochMetrics>,
    pub learners: Learners,
    pub log: RunLog,
}

/// Runs `config.horizon` epochs from fresh or loaded learners.
pub fn run(
    config: &SimConfig,
    scenario: &Scenario,
    learners: Option<Learners>,
    mode: RunMode,
    options: SimOptions,
) -> Result<RunOutput, SimError> {
    let learners = match learners {
        Some(l) => l,
        None => Learners::new(config)?,
    };
    let mut sim = Simulator::new(config, scenario, learners, mode, options)?;
    let mut metrics = Vec::with_capacity(config.horizon as usize);
    for _ in 0..config.horizon {
        metrics.push(sim.step()?);
    }
    log::debug!(
        "{} seed {} ({:?}): {} epochs, revenue {:.2}",
        config.policy,
        config.seed,
        mode,
        metrics.len(),
        metrics.iter().map(|m| m.revenue).sum::<f64>()
    );
    let (learners, log) = sim.into_parts();
    Ok(RunOutput { metrics, learners, log })
}

pub const METRICS_HEADER: [&str; 7] = ["epoch", "revenue", "offers", "accepts", "served", "dropped", "distance_m"];

pub fn write_metrics_csv<W: Write>(out: W, metrics: &[EpochMetrics]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SimError::Metrics(e.to_string());
    w.write_record(METRICS_HEADER).map_err(err)?;
    for m in metrics {
        w.write_record([
            m.epoch.to_string(),
            m.revenue.to_string(),
            m.offers.to_string(),
            m.accepts.to_string(),
            m.served.to_string(),
            m.dropped.to_string(),
            m.distance_m.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| SimError::Metrics(e.to_string()))
}

/// Reads a metrics CSV; utilization is not stored and reads back as 0.
pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<EpochMetrics>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| SimError::Metrics(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != METRICS_HEADER {
        return Err(SimError::Metrics(format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| SimError::Metrics(e.to_string()))?;
        let bad = |col: usize| SimError::Metrics(format!("row {}: invalid {} {:?}", i + 1, METRICS_HEADER[col], &rec[col]));
        out.push(EpochMetrics {
            epoch: rec[0].parse().map_err(|_| bad(0))?,
            revenue: rec[1].parse().map_err(|_| bad(1))?,
            offers: rec[2].parse().map_err(|_| bad(2))?,
            accepts: rec[3].parse().map_err(|_| bad(3))?,
            served: rec[4].parse().map_err(|_| bad(4))?,
            dropped: rec[5].parse().map_err(|_| bad(5))?,
            distance_m: rec[6].parse().map_err(|_| bad(6))?,
            utilization: 0.0,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DemandSource, NetworkSource, Policy};
    use crate::demand::{RideDemand, SensitivityParams};

    fn small_config(policy: Policy) -> SimConfig {
        SimConfig {
            fleet_size: 3,
            capacity: 2,
            policy,
            horizon: 30,
            network: NetworkSource::Grid { rows: 4, cols: 4, arc_seconds: 30, spacing_m: 200.0 },
            demand: DemandSource::Synthetic { rate: 1.5, hotspots: vec![] },
            seed: 5,
            ..SimConfig::default()
        }
    }

    fn run_config(c: &SimConfig, options: SimOptions) -> RunOutput {
        let scenario = Scenario::from_config(c).unwrap();
        run(c, &scenario, None, RunMode::Train, options).unwrap()
    }

    #[test]
    fn zero_demand_is_quiet() {
        let mut c = small_config(Policy::MfNe);
        c.demand = DemandSource::Synthetic { rate: 0.0, hotspots: vec![] };
        let out = run_config(&c, SimOptions::default());
        assert_eq!(out.metrics.len(), 30);
        for m in &out.metrics {
            assert_eq!((m.revenue, m.offers, m.distance_m), (0.0, 0, 0.0));
        }
    }

    #[test]
    fn horizon_zero_is_empty() {
        let mut c = small_config(Policy::FIr);
        c.horizon = 0;
        assert!(run_config(&c, SimOptions::default()).metrics.is_empty());
    }

    #[test]
    fn single_sure_acceptance_earns_quoted_price() {
        let net = RoadNetwork::grid(3, 3, 30, 100.0).unwrap();
        let mut c = small_config(Policy::FIr);
        c.fleet_size = 1;
        c.horizon = 12;
        c.sensitivity = SensitivityParams::new(0.01, 60.0).unwrap();
        let far = if net.tt(Location(0), Location(8)) > 0 { Location(8) } else { Location(0) };
        let scenario = Scenario {
            demand: DemandPlan::Recorded(vec![vec![RideDemand { origin: Location(4), destination: far }]]),
            net,
        };
        c.limits.max_pickup_delay = 600;
        let out = run(&c, &scenario, None, RunMode::Train, SimOptions { record_events: true, record_problems: false }).unwrap();
        let total: f64 = out.metrics.iter().map(|m| m.revenue).sum();
        let base = demand::base_price(Location(4), far, &scenario.net, &c.tariff).unwrap();
        assert_eq!(total, base);
        assert_eq!(out.metrics[0].accepts, 1);
        assert!(out.log.events.iter().any(|e| matches!(e, Event::Dropoff { .. })));
    }

    #[test]
    fn revenue_matches_accepted_offers() {
        let out = run_config(&small_config(Policy::MfNe), SimOptions { record_events: true, record_problems: false });
        let recount: f64 = out
            .log
            .events
            .iter()
            .filter_map(|e| match e {
                Event::Offer { quoted, accepted: true, .. } => Some(*quoted),
                _ => None,
            })
            .sum();
        let total: f64 = out.metrics.iter().map(|m| m.revenue).sum();
        assert!((recount - total).abs() < 1e-9);
        assert!(out.metrics.iter().any(|m| m.offers > 0));
    }

    #[test]
    fn fixed_pricing_quotes_base() {
        for policy in [Policy::FIr, Policy::FNe] {
            let out = run_config(&small_config(policy), SimOptions { record_events: true, record_problems: false });
            for e in &out.log.events {
                match e {
                    Event::Price { factor, .. } => assert_eq!(*factor, 1.0),
                    Event::Offer { quoted, base, .. } => assert_eq!(quoted, base),
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn eval_is_repeatable_and_frozen() {
        let c = small_config(Policy::MfNe);
        let scenario = Scenario::from_config(&c).unwrap();
        let trained = run(&c, &scenario, None, RunMode::Train, SimOptions::default()).unwrap().learners;
        let a = run(&c, &scenario, Some(trained.clone()), RunMode::Eval, SimOptions::default()).unwrap();
        let b = run(&c, &scenario, Some(trained.clone()), RunMode::Eval, SimOptions::default()).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.learners, trained);
    }

    #[test]
    fn learners_round_trip_through_files() {
        let c = small_config(Policy::QNe);
        let learners = run_config(&c, SimOptions::default()).learners;
        let dir = tempfile::tempdir().unwrap();
        learners.save(dir.path()).unwrap();
        assert_eq!(Learners::load(dir.path()).unwrap(), learners);
        assert!(matches!(Learners::load(&dir.path().join("missing")), Err(SimError::Io { .. })));
    }

    #[test]
    fn metrics_csv_round_trip() {
        let out = run_config(&small_config(Policy::MfNn), SimOptions::default());
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &out.metrics).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("epoch,revenue,offers,accepts,served,dropped,distance_m\n"));
        let back = read_metrics_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), out.metrics.len());
        for (a, b) in back.iter().zip(&out.metrics) {
            assert_eq!((a.epoch, a.revenue, a.offers, a.distance_m), (b.epoch, b.revenue, b.offers, b.distance_m));
        }
        assert!(read_metrics_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn advance_serves_stops_in_time() {
        let net = RoadNetwork::grid(1, 4, 30, 100.0).unwrap();
        let mut v = Vehicle::new(VehicleId(0), Location(0), 2, 0);
        let r = Request::new(RequestId(1), RideDemand { origin: Location(1), destination: Location(3) }, 0, 0, &net, &Default::default()).unwrap();
        let limits = trip::ServiceLimits { max_pickup_delay: 60, max_detour: 0 };
        let t = trip::feasible_insertion(&v, &[&r], &net, limits).unwrap().unwrap();
        v.commit(&t, &[&r]);
        let mut log = Vec::new();
        advance(&mut v, 45, &net, Some(&mut log));
        assert_eq!((v.location, v.ready_at), (Location(2), 60));
        assert_eq!(v.passengers[0].pickup_time, Some(30));
        advance(&mut v, 120, &net, Some(&mut log));
        assert!(v.passengers.is_empty());
        assert_eq!((v.location, v.ready_at), (Location(3), 120));
        assert_eq!(v.cumulative_distance_m, 300.0);
        assert_eq!(log.iter().filter(|e| matches!(e, Event::Move { .. })).count(), 3);
    }
}
