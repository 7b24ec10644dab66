//! Shared fixtures for the benchmarks.

use ridepool_core::assignment::AssignmentProblem;
use ridepool_core::config::{DemandSource, NetworkSource};
use ridepool_core::demand::{RideDemand, Tariff};
use ridepool_core::sim::{self, Learners};
use ridepool_core::{Location, Request, RequestId, RunMode, Scenario, SimConfig, SimOptions, Simulator, Vehicle, VehicleId};

/// A 10x10 grid with uniform demand.
pub fn grid_config(fleet: usize, rate: f64, horizon: u32) -> SimConfig {
    SimConfig {
        fleet_size: fleet,
        capacity: 2,
        horizon,
        network: NetworkSource::Grid { rows: 10, cols: 10, arc_seconds: 60, spacing_m: 250.0 },
        demand: DemandSource::Synthetic { rate, hotspots: Vec::new() },
        seed: 17,
        ..SimConfig::default()
    }
}

pub fn scenario(config: &SimConfig) -> Scenario {
    Scenario::from_config(config).expect("fixture config is valid")
}

/// Every epoch's assignment problem from a short run, largest first.
pub fn recorded_problems(config: &SimConfig) -> Vec<AssignmentProblem> {
    let options = SimOptions { record_events: false, record_problems: true };
    let out = sim::run(config, &scenario(config), None, RunMode::Train, options).expect("fixture run succeeds");
    let mut problems = out.log.problems;
    problems.sort_by_key(|p| std::cmp::Reverse(p.vehicles.iter().map(|v| v.trips.len()).sum::<usize>()));
    problems
}

/// Idle vehicles spread over the grid and a batch of requests released now.
pub fn batch(config: &SimConfig, scenario: &Scenario, requests: usize) -> (Vec<Vehicle>, Vec<Request>) {
    let n = scenario.net.len() as u32;
    let vehicles = (0..config.fleet_size as u32)
        .map(|i| Vehicle::new(VehicleId(i), Location(i * 37 % n), config.capacity, 0))
        .collect();
    let reqs = (0..requests as u32)
        .map(|i| {
            let origin = Location(i * 13 % n);
            let destination = Location((i * 29 + 7) % n);
            let destination = if destination == origin { Location((origin.0 + 1) % n) } else { destination };
            Request::new(RequestId(i as u64), RideDemand { origin, destination }, 0, 0, &scenario.net, &Tariff::default())
                .expect("distinct grid nodes")
        })
        .collect();
    (vehicles, reqs)
}

/// A simulator advanced `warmup` epochs.
pub fn warm_simulator(config: &SimConfig, scenario: &Scenario, warmup: u32) -> Simulator {
    let learners = Learners::new(config).expect("fixture config is valid");
    let mut sim = Simulator::new(config, scenario, learners, RunMode::Train, SimOptions::default()).expect("fixture config is valid");
    for _ in 0..warmup {
        sim.step().expect("fixture epoch succeeds");
    }
    sim
}
