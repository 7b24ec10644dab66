//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;
use ridepool_core::assignment::{AssignmentProblem, Candidate, VehicleCandidates};
use ridepool_core::sim::Event;
use ridepool_core::{RequestId, RoadNetwork, VehicleId};

pub const UNREACHABLE: u64 = u64::MAX;

/// A random strongly connected network: a bidirectional ring plus chords.
pub struct RandomNet {
    pub n: usize,
    pub arcs: Vec<(usize, usize, u64)>,
    pub text: String,
}

impl RandomNet {
    pub fn generate<R: Rng>(rng: &mut R, n: usize) -> Self {
        let mut arcs = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            arcs.push((i, j, rng.random_range(10..=90)));
            arcs.push((j, i, rng.random_range(10..=90)));
        }
        for _ in 0..n {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b && !arcs.iter().any(|&(f, t, _)| f == a && t == b) {
                arcs.push((a, b, rng.random_range(5..=150)));
            }
        }
        let mut text = String::new();
        for i in 0..n {
            text.push_str(&format!("N {i} {} {}\n", rng.random_range(0..2000), rng.random_range(0..2000)));
        }
        for &(f, t, s) in &arcs {
            text.push_str(&format!("E {f} {t} {s}\n"));
        }
        RandomNet { n, arcs, text }
    }

    pub fn build(&self) -> RoadNetwork {
        RoadNetwork::parse(&self.text).expect("generated network parses")
    }

    pub fn distances(&self) -> Vec<Vec<u64>> {
        floyd(self.n, &self.arcs)
    }
}

/// All-pairs shortest travel times by Floyd–Warshall.
pub fn floyd(n: usize, arcs: &[(usize, usize, u64)]) -> Vec<Vec<u64>> {
    let mut d = vec![vec![UNREACHABLE; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(f, t, s) in arcs {
        d[f][t] = d[f][t].min(s);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] != UNREACHABLE && d[k][j] != UNREACHABLE {
                    d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
                }
            }
        }
    }
    d
}

/// A passenger as seen by the trip oracle; node indices are external ids.
#[derive(Debug, Clone, Copy)]
pub struct OraclePassenger {
    pub id: u64,
    pub origin: usize,
    pub destination: usize,
    pub release: u64,
    pub picked_at: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleStop {
    pub id: u64,
    pub pickup: bool,
    pub node: usize,
}

/// Checks one stop sequence; returns the completion time when it is valid.
pub fn evaluate_sequence(
    dist: &[Vec<u64>],
    start: usize,
    ready: u64,
    passengers: &[OraclePassenger],
    seq: &[OracleStop],
    tau: u64,
    lambda: u64,
) -> Option<u64> {
    let mut at = start;
    let mut now = ready;
    let mut picked: HashMap<u64, u64> = passengers.iter().filter_map(|p| p.picked_at.map(|t| (p.id, t))).collect();
    let mut dropped = Vec::new();
    for s in seq {
        now += dist[at][s.node];
        at = s.node;
        let p = passengers.iter().find(|p| p.id == s.id)?;
        if s.pickup {
            if picked.contains_key(&s.id) || now - p.release.min(now) > tau {
                return None;
            }
            picked.insert(s.id, now);
        } else {
            let t = *picked.get(&s.id)?;
            if dropped.contains(&s.id) {
                return None;
            }
            let direct = dist[p.origin][p.destination];
            if now.saturating_sub(t + direct) > lambda {
                return None;
            }
            dropped.push(s.id);
        }
    }
    (dropped.len() == passengers.len()).then_some(now)
}

/// Minimum completion time over every ordering of the required stops.
pub fn best_completion(
    dist: &[Vec<u64>],
    start: usize,
    ready: u64,
    passengers: &[OraclePassenger],
    tau: u64,
    lambda: u64,
) -> Option<u64> {
    let mut stops = Vec::new();
    for p in passengers {
        if p.picked_at.is_none() {
            stops.push(OracleStop { id: p.id, pickup: true, node: p.origin });
        }
        stops.push(OracleStop { id: p.id, pickup: false, node: p.destination });
    }
    let mut best = None;
    permute(&mut stops, 0, &mut |seq| {
        if let Some(t) = evaluate_sequence(dist, start, ready, passengers, seq, tau, lambda) {
            best = Some(best.map_or(t, |b: u64| b.min(t)));
        }
    });
    best
}

fn permute(items: &mut Vec<OracleStop>, k: usize, visit: &mut dyn FnMut(&[OracleStop])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// A random assignment instance with at most `max_vehicles` vehicles,
/// `max_requests` requests and trips of at most `capacity` requests.
pub fn random_problem<R: Rng>(rng: &mut R, max_vehicles: usize, max_requests: usize, capacity: usize) -> AssignmentProblem {
    let nv = rng.random_range(1..=max_vehicles);
    let nr = rng.random_range(1..=max_requests) as u64;
    let mut subsets: Vec<Vec<u64>> = (0..nr).map(|a| vec![a]).collect();
    if capacity >= 2 {
        for a in 0..nr {
            for b in a + 1..nr {
                subsets.push(vec![a, b]);
            }
        }
    }
    let mut vehicles = Vec::with_capacity(nv);
    for v in 0..nv {
        let mut trips = vec![Candidate::new(Vec::new(), rng.random_range(-5..=5) as f64)];
        let cap = rng.random_range(1..=capacity);
        for s in &subsets {
            if s.len() <= cap && rng.random_bool(0.35) {
                // Integer-valued scores make ties common.
                let score = if rng.random_bool(0.5) { rng.random_range(-3..=12) as f64 } else { rng.random_range(-3.0..12.0) };
                trips.push(Candidate::new(s.iter().map(|&r| RequestId(r)).collect(), score));
            }
        }
        vehicles.push(VehicleCandidates { vehicle: VehicleId(v as u32 * 3 + rng.random_range(0..3)), trips });
    }
    AssignmentProblem { vehicles }
}

/// Grid geometry used by the log checker.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub arc_seconds: u64,
    pub spacing_m: f64,
    pub tau: u64,
    pub lambda: u64,
}

impl GridSpec {
    fn steps(&self, a: (f64, f64), b: (f64, f64)) -> u64 {
        (((a.0 - b.0).abs() + (a.1 - b.1).abs()) / self.spacing_m).round() as u64
    }
}

#[derive(Debug, Default)]
pub struct LogSummary {
    pub released: usize,
    pub accepted: usize,
    pub picked: usize,
    pub dropped: usize,
    pub moves: usize,
    pub violations: Vec<String>,
}

#[derive(Default)]
struct VehicleTrack {
    at: Option<ridepool_core::Location>,
    time: u64,
    capacity: usize,
    committed: usize,
    onboard: usize,
}

#[derive(Clone, Copy)]
struct RequestTrack {
    epoch: u32,
    origin: ridepool_core::Location,
    destination: ridepool_core::Location,
    release: u64,
    vehicle: Option<VehicleId>,
    picked_at: Option<u64>,
    dropped: bool,
}

/// Replays a grid run's event log and reports every capacity, pickup-delay,
/// detour, uniqueness or movement inconsistency.
pub fn check_log(events: &[Event], net: &RoadNetwork, grid: GridSpec) -> LogSummary {
    let mut out = LogSummary::default();
    let mut vehicles: HashMap<VehicleId, VehicleTrack> = HashMap::new();
    let mut requests: HashMap<RequestId, RequestTrack> = HashMap::new();
    let direct = |o, d| grid.steps(net.coords(o), net.coords(d)) * grid.arc_seconds;
    for e in events {
        match *e {
            Event::Spawn { vehicle, location, capacity } => {
                if vehicles.insert(vehicle, VehicleTrack { at: Some(location), capacity, ..Default::default() }).is_some() {
                    out.violations.push(format!("vehicle {vehicle} spawned twice"));
                }
            }
            Event::Release { epoch, request, origin, destination, time } => {
                out.released += 1;
                let track = RequestTrack { epoch, origin, destination, release: time, vehicle: None, picked_at: None, dropped: false };
                if requests.insert(request, track).is_some() {
                    out.violations.push(format!("request {request} released twice"));
                }
            }
            Event::Price { .. } => {}
            Event::Offer { epoch, vehicle, request, accepted, .. } => {
                let Some(r) = requests.get_mut(&request) else {
                    out.violations.push(format!("offer for unknown request {request}"));
                    continue;
                };
                if r.epoch != epoch {
                    out.violations.push(format!("request {request} offered outside its epoch"));
                }
                if !accepted {
                    continue;
                }
                if r.vehicle.is_some() {
                    out.violations.push(format!("request {request} assigned twice"));
                    continue;
                }
                r.vehicle = Some(vehicle);
                out.accepted += 1;
                let Some(v) = vehicles.get_mut(&vehicle) else {
                    out.violations.push(format!("offer from unknown vehicle {vehicle}"));
                    continue;
                };
                v.committed += 1;
                if v.committed > v.capacity {
                    out.violations.push(format!("vehicle {vehicle} holds {} requests, capacity {}", v.committed, v.capacity));
                }
            }
            Event::Move { vehicle, from, to, depart, arrive } => {
                out.moves += 1;
                let v = vehicles.entry(vehicle).or_default();
                if v.at != Some(from) {
                    out.violations.push(format!("vehicle {vehicle} moved from {from:?} while at {:?}", v.at));
                }
                if depart < v.time {
                    out.violations.push(format!("vehicle {vehicle} departed at {depart} before {}", v.time));
                }
                if grid.steps(net.coords(from), net.coords(to)) != 1 || arrive != depart + grid.arc_seconds {
                    out.violations.push(format!("vehicle {vehicle} made an invalid hop {from:?}->{to:?}"));
                }
                v.at = Some(to);
                v.time = arrive;
            }
            Event::Pickup { vehicle, request, location, time } => {
                out.picked += 1;
                let v = vehicles.entry(vehicle).or_default();
                let Some(r) = requests.get_mut(&request) else {
                    out.violations.push(format!("pickup of unknown request {request}"));
                    continue;
                };
                if r.vehicle != Some(vehicle) || r.picked_at.is_some() {
                    out.violations.push(format!("request {request} picked up by {vehicle} without assignment"));
                }
                if location != r.origin || v.at != Some(location) || time < v.time {
                    out.violations.push(format!("request {request} picked up away from its origin"));
                }
                if time.saturating_sub(r.release) > grid.tau {
                    out.violations.push(format!("request {request} waited {} s", time - r.release));
                }
                r.picked_at = Some(time);
                v.time = time;
                v.onboard += 1;
                if v.onboard > v.capacity {
                    out.violations.push(format!("vehicle {vehicle} carries {} passengers", v.onboard));
                }
            }
            Event::Dropoff { vehicle, request, location, time } => {
                out.dropped += 1;
                let v = vehicles.entry(vehicle).or_default();
                let Some(r) = requests.get_mut(&request) else {
                    out.violations.push(format!("dropoff of unknown request {request}"));
                    continue;
                };
                let Some(picked) = r.picked_at.filter(|_| r.vehicle == Some(vehicle) && !r.dropped) else {
                    out.violations.push(format!("request {request} dropped by {vehicle} without pickup"));
                    continue;
                };
                if location != r.destination || v.at != Some(location) || time < v.time {
                    out.violations.push(format!("request {request} dropped away from its destination"));
                }
                let detour = time.saturating_sub(picked + direct(r.origin, r.destination));
                if detour > grid.lambda {
                    out.violations.push(format!("request {request} detoured {detour} s"));
                }
                r.dropped = true;
                v.time = time;
                v.onboard -= 1;
                v.committed -= 1;
            }
        }
    }
    out
}
