//! Ride-pooling simulation with learned dynamic pricing and value-based matching.
//!
//! Vehicles quote prices chosen by a shared mean-field Q-table, candidate
//! trips are scored with a learned value of post-decision states, and a
//! branch-and-bound solver assigns at most one trip per vehicle each epoch.

pub mod assignment;
pub mod checkpoint;
pub mod config;
pub mod demand;
pub mod experiment;
pub mod matching;
pub mod network;
pub mod pricing;
pub mod sim;
pub mod trip;

pub use assignment::{brute_force_solve, solve, solve_within, AssignmentProblem, AssignmentSolution, Candidate, VehicleCandidates};
pub use config::{Policy, SimConfig};
pub use demand::{acceptance_probability, Request, RequestId, SensitivityParams};
pub use experiment::{ExperimentError, ExperimentSpec};
pub use matching::{MatchingMode, ValueFunction};
pub use network::{Location, RoadNetwork, Seconds};
pub use pricing::{ActionSet, MeanAction, Observation, QParams, QTable};
pub use sim::{EpochMetrics, Learners, RunMode, Scenario, SimError, SimOptions, Simulator};
pub use trip::{ServiceLimits, Trip, Vehicle, VehicleId};
