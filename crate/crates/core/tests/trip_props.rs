mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{evaluate_sequence, OraclePassenger, OracleStop, RandomNet};
use ridepool_core::demand::{RideDemand, Tariff};
use ridepool_core::trip::{generate_feasible_trips, StopKind};
use ridepool_core::{Request, RequestId, ServiceLimits, Vehicle, VehicleId};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn generated_routes_satisfy_limits(seed in any::<u64>(), vehicles in 1usize..4, requests in 1u64..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..10);
        let rn = RandomNet::generate(&mut rng, n);
        let net = rn.build();
        let dist = rn.distances();
        let tau = rng.random_range(30..300);
        let lambda = rng.random_range(0..300);
        let limits = ServiceLimits { max_pickup_delay: tau, max_detour: lambda };
        let fleet: Vec<Vehicle> = (0..vehicles)
            .map(|i| Vehicle::new(VehicleId(i as u32), net.location(rng.random_range(0..n) as u64).unwrap(), rng.random_range(1..=3), 0))
            .collect();
        let mut pool = Vec::new();
        let mut oracle = Vec::new();
        for id in 0..requests {
            let o = rng.random_range(0..n);
            let d = (o + rng.random_range(1..n)) % n;
            let demand = RideDemand { origin: net.location(o as u64).unwrap(), destination: net.location(d as u64).unwrap() };
            pool.push(Request::new(RequestId(id), demand, 0, 0, &net, &Tariff::default()).unwrap());
            oracle.push(OraclePassenger { id, origin: o, destination: d, release: 0, picked_at: None });
        }
        let all = generate_feasible_trips(&fleet, &pool, &net, limits, 3);
        prop_assert_eq!(all.len(), fleet.len());
        for (v, trips) in fleet.iter().zip(&all) {
            prop_assert!(trips[0].is_empty());
            for t in trips {
                prop_assert!(t.requests.len() <= v.capacity);
                prop_assert!(t.requests.windows(2).all(|w| w[0] < w[1]));
                let members: Vec<OraclePassenger> = t.requests.iter().map(|r| oracle[r.0 as usize]).collect();
                let seq: Vec<OracleStop> = t
                    .route_plan
                    .iter()
                    .map(|s| OracleStop { id: s.request.0, pickup: s.kind == StopKind::Pickup, node: net.external_id(s.location) as usize })
                    .collect();
                let start = net.external_id(v.location) as usize;
                let end = evaluate_sequence(&dist, start, v.ready_at, &members, &seq, tau, lambda);
                prop_assert_eq!(end, Some(t.route_plan.last().map_or(v.ready_at, |s| s.time)));
            }
        }
    }
}

#[test]
fn trips_are_monotone_in_subsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rn = RandomNet::generate(&mut rng, 8);
    let net = rn.build();
    let limits = ServiceLimits { max_pickup_delay: 200, max_detour: 150 };
    let v = Vehicle::new(VehicleId(0), net.location(0).unwrap(), 3, 0);
    let pool: Vec<Request> = (0..6u64)
        .map(|id| {
            let o = rng.random_range(0..8u64);
            let d = (o + rng.random_range(1..8)) % 8;
            let demand = RideDemand { origin: net.location(o).unwrap(), destination: net.location(d).unwrap() };
            Request::new(RequestId(id), demand, 0, 0, &net, &Tariff::default()).unwrap()
        })
        .collect();
    let trips = generate_feasible_trips(std::slice::from_ref(&v), &pool, &net, limits, 3).remove(0);
    let sets: Vec<&Vec<RequestId>> = trips.iter().map(|t| &t.requests).collect();
    for t in &trips {
        for skip in 0..t.requests.len() {
            let sub: Vec<RequestId> = t.requests.iter().enumerate().filter(|&(k, _)| k != skip).map(|(_, r)| *r).collect();
            assert!(sets.contains(&&sub), "subset {sub:?} of {:?} missing", t.requests);
        }
    }
}
