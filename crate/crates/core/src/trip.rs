//! Vehicles, trips and the feasible-trip enumeration.
//!
//! A trip is a combination of new requests a vehicle could take on top of its
//! current commitments, together with the best stop ordering that keeps every
//! passenger within the pickup-delay and detour-delay limits.

use std::collections::HashSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::demand::{Request, RequestId};
use crate::network::{Location, RoadNetwork, Seconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TripError {
    #[error("vehicle {vehicle} has {committed} committed seat(s) and capacity {capacity}; cannot add {extra}")]
    CapacityExceeded {
        vehicle: VehicleId,
        committed: usize,
        extra: usize,
        capacity: usize,
    },
    #[error("duplicate request {0} in combination")]
    DuplicateRequest(RequestId),
}

/// Pickup-delay (τ) and detour-delay (λ) limits, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ServiceLimits {
    pub max_pickup_delay: Seconds,
    pub max_detour: Seconds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StopKind {
    Pickup,
    Dropoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stop {
    pub request: RequestId,
    pub kind: StopKind,
    pub location: Location,
    /// Scheduled service time.
    pub time: Seconds,
}

/// A request committed to a vehicle, either waiting or already onboard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passenger {
    pub request: RequestId,
    pub origin: Location,
    pub destination: Location,
    pub release_time: Seconds,
    pub direct_time: Seconds,
    pub pickup_time: Option<Seconds>,
}

impl Passenger {
    pub fn from_request(r: &Request) -> Self {
        Passenger {
            request: r.id,
            origin: r.origin,
            destination: r.destination,
            release_time: r.release_time,
            direct_time: r.direct_time,
            pickup_time: None,
        }
    }

    pub fn is_onboard(&self) -> bool {
        self.pickup_time.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    /// Current node, or the node the vehicle is committed to reach next.
    pub location: Location,
    /// Time at which the vehicle is (or will be) at `location`.
    pub ready_at: Seconds,
    pub capacity: usize,
    pub passengers: Vec<Passenger>,
    pub route_plan: Vec<Stop>,
    pub cumulative_distance_m: f64,
    /// Accepted revenue collected so far.
    pub earnings: f64,
}

impl Vehicle {
    pub fn new(id: VehicleId, location: Location, capacity: usize, ready_at: Seconds) -> Self {
        Vehicle {
            id,
            location,
            ready_at,
            capacity,
            passengers: Vec::new(),
            route_plan: Vec::new(),
            cumulative_distance_m: 0.0,
            earnings: 0.0,
        }
    }

    pub fn onboard(&self) -> impl Iterator<Item = &Passenger> {
        self.passengers.iter().filter(|p| p.is_onboard())
    }

    /// Seats held by onboard and waiting passengers.
    pub fn committed_seats(&self) -> usize {
        self.passengers.len()
    }

    /// Location and time at which the current plan ends.
    pub fn plan_end(&self) -> (Location, Seconds) {
        self.route_plan
            .last()
            .map(|s| (s.location, s.time))
            .unwrap_or((self.location, self.ready_at))
    }

    /// Adopts the route of `trip` and commits its new requests.
    pub fn commit(&mut self, trip: &Trip, requests: &[&Request]) {
        debug_assert_eq!(trip.vehicle, self.id);
        for r in requests {
            debug_assert!(trip.requests.contains(&r.id));
            self.passengers.push(Passenger::from_request(r));
        }
        self.route_plan = trip.route_plan.clone();
    }
}

/// A feasible request combination for one vehicle and its route.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub vehicle: VehicleId,
    /// New requests, ascending by id.
    pub requests: Vec<RequestId>,
    pub route_plan: Vec<Stop>,
    /// Scheduled pickup delay of each new request.
    pub pickup_delays: Vec<(RequestId, Seconds)>,
    /// Scheduled detour delay of each new request.
    pub detour_delays: Vec<(RequestId, Seconds)>,
    /// Driving distance from the vehicle's location through every stop.
    pub plan_meters: f64,
}

impl Trip {
    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn end(&self, v: &Vehicle) -> (Location, Seconds) {
        self.route_plan
            .last()
            .map(|s| (s.location, s.time))
            .unwrap_or((v.location, v.ready_at))
    }
}

fn plan_meters(v: &Vehicle, plan: &[Stop], net: &RoadNetwork) -> f64 {
    let mut at = v.location;
    let mut total = 0.0;
    for s in plan {
        total += net.path_meters(at, s.location);
        at = s.location;
    }
    total
}

/// The trip that keeps the vehicle's current plan unchanged.
pub fn empty_trip(v: &Vehicle, net: &RoadNetwork) -> Trip {
    Trip {
        vehicle: v.id,
        requests: Vec::new(),
        route_plan: v.route_plan.clone(),
        pickup_delays: Vec::new(),
        detour_delays: Vec::new(),
        plan_meters: plan_meters(v, &v.route_plan, net),
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    request: RequestId,
    kind: StopKind,
    location: Location,
    release: Seconds,
    direct: Seconds,
    /// Index of the matching pickup job, if the pickup is still to be made.
    pickup_job: Option<usize>,
    /// Known pickup time for onboard passengers.
    picked_at: Option<Seconds>,
}

struct Search<'a> {
    jobs: &'a [Job],
    net: &'a RoadNetwork,
    limits: ServiceLimits,
    times: Vec<Seconds>,
    order: Vec<usize>,
    best: Option<(Seconds, Vec<usize>, Vec<Seconds>)>,
}

impl Search<'_> {
    fn dfs(&mut self, at: Location, now: Seconds, done: u32) {
        if self.order.len() == self.jobs.len() {
            if self.best.as_ref().is_none_or(|(end, _, _)| now < *end) {
                self.best = Some((now, self.order.clone(), self.times.clone()));
            }
            return;
        }
        for (i, job) in self.jobs.iter().enumerate() {
            if done & (1 << i) != 0 {
                continue;
            }
            if let Some(p) = job.pickup_job {
                if done & (1 << p) == 0 {
                    continue;
                }
            }
            let arrival = now + self.net.tt(at, job.location);
            if let Some((end, _, _)) = &self.best {
                // Later finds are lexicographically larger, so ties cannot win.
                if arrival >= *end {
                    continue;
                }
            }
            let ok = match job.kind {
                StopKind::Pickup => arrival.saturating_sub(job.release) <= self.limits.max_pickup_delay,
                StopKind::Dropoff => {
                    let picked = job
                        .picked_at
                        .or_else(|| job.pickup_job.map(|p| self.pickup_time(p)))
                        .expect("dropoff without pickup");
                    arrival.saturating_sub(picked + job.direct) <= self.limits.max_detour
                }
            };
            if !ok {
                continue;
            }
            self.order.push(i);
            self.times.push(arrival);
            self.dfs(job.location, arrival, done | (1 << i));
            self.order.pop();
            self.times.pop();
        }
    }

    fn pickup_time(&self, job: usize) -> Seconds {
        let pos = self.order.iter().position(|&j| j == job).expect("pickup scheduled");
        self.times[pos]
    }
}

/// Finds the minimum-completion-time plan serving the vehicle's commitments
/// plus `reqs`, or `None` when no stop ordering satisfies the limits.
///
/// Ties between equally short plans go to the lexicographically smallest
/// stop sequence, stops ordered by (request id, pickup before dropoff).
pub fn feasible_insertion(
    v: &Vehicle,
    reqs: &[&Request],
    net: &RoadNetwork,
    limits: ServiceLimits,
) -> Result<Option<Trip>, TripError> {
    if reqs.len() + v.committed_seats() > v.capacity {
        return Err(TripError::CapacityExceeded {
            vehicle: v.id,
            committed: v.committed_seats(),
            extra: reqs.len(),
            capacity: v.capacity,
        });
    }
    let mut new_ids: Vec<RequestId> = reqs.iter().map(|r| r.id).collect();
    new_ids.sort();
    for w in new_ids.windows(2) {
        if w[0] == w[1] {
            return Err(TripError::DuplicateRequest(w[0]));
        }
    }
    if let Some(p) = v.passengers.iter().find(|p| new_ids.binary_search(&p.request).is_ok()) {
        return Err(TripError::DuplicateRequest(p.request));
    }
    if reqs.is_empty() {
        return Ok(Some(empty_trip(v, net)));
    }

    // (request, kind, origin, destination, release, direct, picked_at)
    let mut entries: Vec<(RequestId, Location, Location, Seconds, Seconds, Option<Seconds>)> = v
        .passengers
        .iter()
        .map(|p| (p.request, p.origin, p.destination, p.release_time, p.direct_time, p.pickup_time))
        .chain(reqs.iter().map(|r| (r.id, r.origin, r.destination, r.release_time, r.direct_time, None)))
        .collect();
    entries.sort_by_key(|e| e.0);

    let mut jobs = Vec::with_capacity(entries.len() * 2);
    for &(request, origin, destination, release, direct, picked_at) in &entries {
        let pickup_job = if picked_at.is_none() {
            jobs.push(Job {
                request,
                kind: StopKind::Pickup,
                location: origin,
                release,
                direct,
                pickup_job: None,
                picked_at: None,
            });
            Some(jobs.len() - 1)
        } else {
            None
        };
        jobs.push(Job {
            request,
            kind: StopKind::Dropoff,
            location: destination,
            release,
            direct,
            pickup_job,
            picked_at,
        });
    }
    assert!(jobs.len() <= 32, "too many stops for exhaustive insertion");

    let mut search = Search {
        jobs: &jobs,
        net,
        limits,
        times: Vec::with_capacity(jobs.len()),
        order: Vec::with_capacity(jobs.len()),
        best: None,
    };
    search.dfs(v.location, v.ready_at, 0);
    let Some((_, order, times)) = search.best else {
        return Ok(None);
    };

    let route_plan: Vec<Stop> = order
        .iter()
        .zip(&times)
        .map(|(&j, &time)| Stop {
            request: jobs[j].request,
            kind: jobs[j].kind,
            location: jobs[j].location,
            time,
        })
        .collect();
    let stop_time = |id: RequestId, kind: StopKind| {
        route_plan
            .iter()
            .find(|s| s.request == id && s.kind == kind)
            .map(|s| s.time)
            .expect("stop in plan")
    };
    let mut pickup_delays = Vec::with_capacity(reqs.len());
    let mut detour_delays = Vec::with_capacity(reqs.len());
    for r in reqs {
        let pick = stop_time(r.id, StopKind::Pickup);
        let drop = stop_time(r.id, StopKind::Dropoff);
        pickup_delays.push((r.id, pick.saturating_sub(r.release_time)));
        detour_delays.push((r.id, drop.saturating_sub(pick + r.direct_time)));
    }
    pickup_delays.sort();
    detour_delays.sort();
    let plan_meters = plan_meters(v, &route_plan, net);
    Ok(Some(Trip {
        vehicle: v.id,
        requests: new_ids,
        route_plan,
        pickup_delays,
        detour_delays,
        plan_meters,
    }))
}

/// Enumerates feasible trips for every vehicle (result aligned with
/// `vehicles`). Each list starts with the empty trip, followed by trips of
/// increasing size; a combination of size k is only tried when all of its
/// (k−1)-subsets were feasible for the same vehicle.
pub fn generate_feasible_trips(
    vehicles: &[Vehicle],
    requests: &[Request],
    net: &RoadNetwork,
    limits: ServiceLimits,
    size_cap: usize,
) -> Vec<Vec<Trip>> {
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by_key(|&i| requests[i].id);
    let sorted: Vec<&Request> = order.iter().map(|&i| &requests[i]).collect();
    vehicles
        .par_iter()
        .map(|v| trips_for_vehicle(v, &sorted, net, limits, size_cap))
        .collect()
}

fn trips_for_vehicle(v: &Vehicle, requests: &[&Request], net: &RoadNetwork, limits: ServiceLimits, size_cap: usize) -> Vec<Trip> {
    let mut trips = vec![empty_trip(v, net)];
    let room = v.capacity.saturating_sub(v.committed_seats()).min(size_cap);
    if room == 0 {
        return trips;
    }

    let mut level: Vec<Vec<usize>> = Vec::new();
    for (i, r) in requests.iter().enumerate() {
        // Cheap reachability screen before the exhaustive search.
        if v.ready_at + net.tt(v.location, r.origin) > r.release_time + limits.max_pickup_delay {
            continue;
        }
        if let Ok(Some(t)) = feasible_insertion(v, &[*r], net, limits) {
            trips.push(t);
            level.push(vec![i]);
        }
    }

    for _size in 2..=room {
        if level.is_empty() {
            break;
        }
        let feasible: HashSet<&[usize]> = level.iter().map(Vec::as_slice).collect();
        let mut next = Vec::new();
        for base in &level {
            let last = *base.last().expect("non-empty combination");
            for extra in last + 1..requests.len() {
                let mut combo = base.clone();
                combo.push(extra);
                let subsets_ok = (0..combo.len() - 1).all(|skip| {
                    let sub: Vec<usize> = combo
                        .iter()
                        .enumerate()
                        .filter(|&(k, _)| k != skip)
                        .map(|(_, &x)| x)
                        .collect();
                    feasible.contains(sub.as_slice())
                });
                if !subsets_ok {
                    continue;
                }
                let members: Vec<&Request> = combo.iter().map(|&k| requests[k]).collect();
                if let Ok(Some(t)) = feasible_insertion(v, &members, net, limits) {
                    trips.push(t);
                    next.push(combo);
                }
            }
        }
        level = next;
    }
    trips
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{RideDemand, Tariff};

    /// A–B–C–D line, 30 s arcs, 100 m apart.
    fn line() -> RoadNetwork {
        let mut text = String::new();
        for i in 0..4 {
            text.push_str(&format!("N {i} {} 0\n", i * 100));
        }
        for i in 0..3 {
            text.push_str(&format!("E {i} {} 30\nE {} {i} 30\n", i + 1, i + 1));
        }
        RoadNetwork::parse(&text).unwrap()
    }

    fn req(net: &RoadNetwork, id: u64, o: u32, d: u32, release: Seconds) -> Request {
        Request::new(
            RequestId(id),
            RideDemand { origin: Location(o), destination: Location(d) },
            0,
            release,
            net,
            &Tariff::default(),
        )
        .unwrap()
    }

    fn limits(tau: Seconds, lambda: Seconds) -> ServiceLimits {
        ServiceLimits { max_pickup_delay: tau, max_detour: lambda }
    }

    #[test]
    fn empty_combination_keeps_plan() {
        let net = line();
        let v = Vehicle::new(VehicleId(0), Location(0), 2, 0);
        let t = feasible_insertion(&v, &[], &net, limits(0, 0)).unwrap().unwrap();
        assert!(t.is_empty());
        assert!(t.route_plan.is_empty());
        assert!(t.pickup_delays.is_empty());
    }

    #[test]
    fn direct_service_has_no_delay() {
        let net = line();
        let v = Vehicle::new(VehicleId(0), Location(0), 2, 0);
        let r = req(&net, 1, 0, 1, 0);
        let t = feasible_insertion(&v, &[&r], &net, limits(0, 0)).unwrap().unwrap();
        assert_eq!(t.pickup_delays, vec![(RequestId(1), 0)]);
        assert_eq!(t.detour_delays, vec![(RequestId(1), 0)]);
        assert_eq!(t.route_plan.len(), 2);
        assert_eq!(t.route_plan[1].time, 30);
    }

    #[test]
    fn shared_ride_on_a_line() {
        let net = line();
        let v = Vehicle::new(VehicleId(0), Location(0), 2, 0);
        let r1 = req(&net, 1, 0, 3, 0);
        let r2 = req(&net, 2, 1, 2, 0);
        let t = feasible_insertion(&v, &[&r1, &r2], &net, limits(120, 60)).unwrap().unwrap();
        let stops: Vec<(u64, StopKind, u32)> = t
            .route_plan
            .iter()
            .map(|s| (s.request.0, s.kind, s.location.0))
            .collect();
        assert_eq!(
            stops,
            vec![
                (1, StopKind::Pickup, 0),
                (2, StopKind::Pickup, 1),
                (2, StopKind::Dropoff, 2),
                (1, StopKind::Dropoff, 3)
            ]
        );
        assert_eq!(t.detour_delays, vec![(RequestId(1), 0), (RequestId(2), 0)]);
        assert_eq!(t.pickup_delays, vec![(RequestId(1), 0), (RequestId(2), 30)]);
        assert!((t.plan_meters - 300.0).abs() < 1e-9);
    }

    #[test]
    fn forced_detour_is_infeasible() {
        let net = line();
        let v = Vehicle::new(VehicleId(0), Location(0), 2, 0);
        // r2 runs backwards along r1's path: any shared order detours someone.
        let r1 = req(&net, 1, 0, 3, 0);
        let r2 = req(&net, 2, 2, 1, 0);
        assert!(feasible_insertion(&v, &[&r1, &r2], &net, limits(60, 0)).unwrap().is_none());
        assert!(feasible_insertion(&v, &[&r1, &r2], &net, limits(60, 60)).unwrap().is_some());
        // With a loose pickup limit r2 can wait until r1 is dropped.
        assert!(feasible_insertion(&v, &[&r1, &r2], &net, limits(120, 0)).unwrap().is_some());
    }

    #[test]
    fn capacity_precondition() {
        let net = line();
        let v = Vehicle::new(VehicleId(0), Location(0), 1, 0);
        let r1 = req(&net, 1, 0, 3, 0);
        let r2 = req(&net, 2, 1, 2, 0);
        assert!(matches!(
            feasible_insertion(&v, &[&r1, &r2], &net, limits(120, 60)),
            Err(TripError::CapacityExceeded { .. })
        ));
        assert!(matches!(
            feasible_insertion(&Vehicle::new(VehicleId(0), Location(0), 3, 0), &[&r1, &r1], &net, limits(1, 1)),
            Err(TripError::DuplicateRequest(_))
        ));
    }

    #[test]
    fn onboard_passenger_detour_is_revalidated() {
        let net = line();
        let mut v = Vehicle::new(VehicleId(0), Location(1), 2, 30);
        v.passengers.push(Passenger {
            request: RequestId(9),
            origin: Location(0),
            destination: Location(3),
            release_time: 0,
            direct_time: 90,
            pickup_time: Some(0),
        });
        v.route_plan = vec![Stop { request: RequestId(9), kind: StopKind::Dropoff, location: Location(3), time: 90 }];
        // Picking up at A means turning back: 60 s extra for the onboard rider.
        let back = req(&net, 1, 0, 1, 30);
        assert!(feasible_insertion(&v, &[&back], &net, limits(100, 30)).unwrap().is_none());
        assert!(feasible_insertion(&v, &[&back], &net, limits(100, 120)).unwrap().is_some());
    }

    #[test]
    fn generation_per_vehicle() {
        let net = line();
        let vehicles = vec![
            Vehicle::new(VehicleId(0), Location(0), 2, 0),
            Vehicle::new(VehicleId(1), Location(3), 2, 0),
        ];
        let none = generate_feasible_trips(&vehicles, &[], &net, limits(120, 60), 2);
        assert!(none.iter().all(|t| t.len() == 1 && t[0].is_empty()));

        // Only vehicle 0 reaches A within 30 s.
        let r = req(&net, 1, 0, 1, 0);
        let one = generate_feasible_trips(&vehicles, &[r], &net, limits(30, 60), 2);
        assert_eq!(one[0].len(), 2);
        assert_eq!(one[1].len(), 1);

        let r1 = req(&net, 1, 0, 3, 0);
        let r2 = req(&net, 2, 1, 2, 0);
        let both = generate_feasible_trips(&vehicles[..1], &[r2, r1], &net, limits(120, 60), 2);
        let sets: Vec<Vec<u64>> = both[0].iter().map(|t| t.requests.iter().map(|r| r.0).collect()).collect();
        assert_eq!(sets, vec![vec![], vec![1], vec![2], vec![1, 2]]);
    }
}
