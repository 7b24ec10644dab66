//! Exact vehicle-to-trip assignment.
//!
//! Every vehicle takes exactly one of its candidate trips (the empty trip is
//! always among them) and every request is covered at most once. The maximum
//! total score is found by branch and bound over vehicles in id order.
//! Vehicles that share no request are solved independently. When the table
//! of `(vehicle, used requests)` states is small, the bound is the exact best
//! completion of the state. Otherwise it is the smallest of three
//! relaxations: each remaining vehicle takes its best still-available trip,
//! each still-available request contributes its best per-request share, or
//! the Lagrangian dual with per-request multipliers tuned by subgradient
//! steps. A state reached again with a lower partial score is cut.
//!
//! Among optimal assignments the one whose trip indices, read in vehicle-id
//! order, are lexicographically smallest is returned. [`solve_within`] caps
//! the number of search nodes and reports whether optimality was proven.

use std::collections::HashMap;

use thiserror::Error;

use crate::demand::RequestId;
use crate::trip::VehicleId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignmentError {
    #[error("vehicle {0} listed twice")]
    DuplicateVehicle(VehicleId),
    #[error("vehicle {0} has no empty candidate trip")]
    MissingEmptyTrip(VehicleId),
    #[error("vehicle {vehicle} trip {trip}: request ids must be strictly increasing")]
    MalformedTrip { vehicle: VehicleId, trip: usize },
    #[error("vehicle {vehicle} trip {trip}: score {score} is not finite")]
    NonFiniteScore { vehicle: VehicleId, trip: usize, score: f64 },
    #[error("instance too large for enumeration: {0} joint choices")]
    TooLarge(usize),
    #[error("dump line {line}: {msg}")]
    Dump { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub requests: Vec<RequestId>,
    pub score: f64,
}

impl Candidate {
    pub fn new(requests: Vec<RequestId>, score: f64) -> Self {
        Candidate { requests, score }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleCandidates {
    pub vehicle: VehicleId,
    pub trips: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssignmentProblem {
    pub vehicles: Vec<VehicleCandidates>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentSolution {
    /// `(vehicle, index into its candidate list)`, ascending by vehicle id.
    pub choices: Vec<(VehicleId, usize)>,
    pub objective: f64,
    /// False when a node budget ran out before optimality was proven.
    pub optimal: bool,
}

impl AssignmentSolution {
    pub fn choice(&self, vehicle: VehicleId) -> Option<usize> {
        self.choices
            .binary_search_by_key(&vehicle, |c| c.0)
            .ok()
            .map(|i| self.choices[i].1)
    }
}

impl AssignmentProblem {
    pub fn validate(&self) -> Result<(), AssignmentError> {
        let mut seen = std::collections::HashSet::new();
        for vc in &self.vehicles {
            if !seen.insert(vc.vehicle) {
                return Err(AssignmentError::DuplicateVehicle(vc.vehicle));
            }
            if !vc.trips.iter().any(|t| t.requests.is_empty()) {
                return Err(AssignmentError::MissingEmptyTrip(vc.vehicle));
            }
            for (i, t) in vc.trips.iter().enumerate() {
                if t.requests.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(AssignmentError::MalformedTrip { vehicle: vc.vehicle, trip: i });
                }
                if !t.score.is_finite() {
                    return Err(AssignmentError::NonFiniteScore { vehicle: vc.vehicle, trip: i, score: t.score });
                }
            }
        }
        Ok(())
    }

    fn sorted_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.vehicles.len()).collect();
        order.sort_by_key(|&i| self.vehicles[i].vehicle);
        order
    }

    /// Total score of a choice vector given in vehicle-id order.
    fn objective_of(&self, order: &[usize], picks: &[usize]) -> f64 {
        order
            .iter()
            .zip(picks)
            .fold(0.0, |acc, (&v, &t)| acc + self.vehicles[v].trips[t].score)
    }

    /// Whether a choice vector (vehicle-id order) covers each request at most once.
    pub fn is_consistent(&self, choices: &[(VehicleId, usize)]) -> bool {
        let index: HashMap<VehicleId, usize> = self.vehicles.iter().enumerate().map(|(i, v)| (v.vehicle, i)).collect();
        let mut used = std::collections::HashSet::new();
        for &(v, t) in choices {
            let Some(&vi) = index.get(&v) else { return false };
            let Some(trip) = self.vehicles[vi].trips.get(t) else { return false };
            for r in &trip.requests {
                if !used.insert(*r) {
                    return false;
                }
            }
        }
        choices.len() == self.vehicles.len()
    }

    /// One-line-per-candidate text dump: `<vehicle>\t<ids|->\t<score>`.
    pub fn to_dump(&self) -> String {
        let mut out = String::new();
        for vc in &self.vehicles {
            for t in &vc.trips {
                let ids: Vec<u64> = t.requests.iter().map(|r| r.0).collect();
                out.push_str(&format!("{}\t{}\t{}\n", vc.vehicle.0, crate::checkpoint::join(&ids), t.score));
            }
        }
        out
    }

    pub fn from_dump(text: &str) -> Result<Self, AssignmentError> {
        let mut problem = AssignmentProblem::default();
        let mut index: HashMap<VehicleId, usize> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| AssignmentError::Dump { line: line_no, msg };
            let cols: Vec<&str> = line.split('\t').collect();
            let [v, ids, score] = cols.as_slice() else {
                return Err(err(format!("expected 3 tab-separated columns, found {}", cols.len())));
            };
            let vehicle = VehicleId(v.trim().parse().map_err(|_| err(format!("invalid vehicle {v:?}")))?);
            let ids: Vec<u64> = crate::checkpoint::split(ids.trim()).ok_or_else(|| err(format!("invalid request list {ids:?}")))?;
            let score: f64 = score.trim().parse().map_err(|_| err(format!("invalid score {score:?}")))?;
            let slot = *index.entry(vehicle).or_insert_with(|| {
                problem.vehicles.push(VehicleCandidates { vehicle, trips: Vec::new() });
                problem.vehicles.len() - 1
            });
            problem.vehicles[slot]
                .trips
                .push(Candidate::new(ids.into_iter().map(RequestId).collect(), score));
        }
        Ok(problem)
    }
}

/// Largest dense completion table, in entries (one per vehicle and request subset).
const DENSE_LIMIT: usize = 1 << 22;

/// Largest number of memoised `(vehicle, used requests)` states before the
/// exact bound is abandoned for the relaxation bound.
const MEMO_LIMIT: usize = 1 << 16;

/// Largest number of states tracked for dominance pruning.
const SEEN_LIMIT: usize = 1 << 22;

/// Subgradient rounds spent tuning the Lagrange multipliers.
const MULTIPLIER_ROUNDS: usize = 300;

/// Per-component search state. Requests are re-indexed densely.
struct Component {
    scores: Vec<Vec<f64>>,
    requests: Vec<Vec<Vec<usize>>>,
    /// Request sets as bitmasks; empty when there are more than 128 requests.
    masks: Vec<Vec<u128>>,
    base: Vec<f64>,
    base_suffix: Vec<f64>,
    n_requests: usize,
    /// Requests still wanted by vehicle `k` or later; index `len` is empty.
    relevant: Vec<u128>,
    /// Best completion value from `(vehicle, used mask)`, when tractable.
    exact: Option<ExactBound>,
    /// Lagrange multipliers per request for the fallback bound; empty when unused.
    lambda: Vec<f64>,
    /// Added to memoised values to absorb summation-order rounding.
    slack: f64,
    /// Largest partial score seen so far at each `(vehicle, used mask)`.
    seen: HashMap<(usize, u128), f64>,
    best_value: f64,
    best_picks: Vec<usize>,
    picks: Vec<usize>,
    /// Search nodes still allowed; the search stops when it reaches zero.
    budget: u64,
}

enum ExactBound {
    /// Indexed by `k << n_requests | mask`.
    Dense(Vec<f64>),
    /// Keyed by `(k, mask & relevant[k])`.
    Sparse(HashMap<(usize, u128), f64>),
}

impl Component {
    /// Bottom-up best completion for every vehicle and request subset.
    fn dense_completion(&self) -> Vec<f64> {
        let size = 1usize << self.n_requests;
        let n = self.scores.len();
        let mut table = vec![0.0; (n + 1) * size];
        for k in (0..n).rev() {
            let (head, tail) = table.split_at_mut((k + 1) * size);
            let (cur, next) = (&mut head[k * size..], &tail[..size]);
            for (mask, slot) in cur.iter_mut().enumerate() {
                let mut best = f64::NEG_INFINITY;
                for (t, &m) in self.masks[k].iter().enumerate() {
                    let m = m as usize;
                    if m & mask == 0 {
                        best = best.max(self.scores[k][t] + next[mask | m]);
                    }
                }
                *slot = best;
            }
        }
        table
    }

    /// Fills the memo with the exact best completion of every reachable
    /// state; gives up (returning `None`) past [`MEMO_LIMIT`] states.
    fn completion(&self, k: usize, mask: u128, memo: &mut HashMap<(usize, u128), f64>) -> Option<f64> {
        if k == self.scores.len() {
            return Some(0.0);
        }
        let key = (k, mask & self.relevant[k]);
        if let Some(&v) = memo.get(&key) {
            return Some(v);
        }
        if memo.len() >= MEMO_LIMIT {
            return None;
        }
        let mut best = f64::NEG_INFINITY;
        for (t, &m) in self.masks[k].iter().enumerate() {
            if m & mask != 0 {
                continue;
            }
            best = best.max(self.scores[k][t] + self.completion(k + 1, mask | m, memo)?);
        }
        memo.insert(key, best);
        Some(best)
    }

    fn prepare_exact_bound(&mut self) {
        if self.n_requests > 128 {
            return;
        }
        if self.n_requests < usize::BITS as usize - 1
            && (self.scores.len() + 1).checked_shl(self.n_requests as u32).is_some_and(|e| e <= DENSE_LIMIT)
        {
            self.exact = Some(ExactBound::Dense(self.dense_completion()));
            return;
        }
        let mut memo = HashMap::new();
        if self.completion(0, 0, &mut memo).is_some() {
            self.exact = Some(ExactBound::Sparse(memo));
        }
    }

    fn bound(&self, k: usize, partial: f64, used: &[bool], mask: u128) -> f64 {
        if let Some(exact) = &self.exact {
            let rest = match exact {
                _ if k == self.scores.len() => 0.0,
                ExactBound::Dense(table) => table[(k << self.n_requests) | mask as usize],
                ExactBound::Sparse(memo) => memo[&(k, mask & self.relevant[k])],
            };
            return partial + rest + self.slack;
        }
        let mut per_vehicle = 0.0;
        let mut per_request = vec![0.0f64; self.n_requests];
        for j in k..self.scores.len() {
            let mut best_gain = 0.0f64;
            for (t, reqs) in self.requests[j].iter().enumerate() {
                if reqs.is_empty() || reqs.iter().any(|&r| used[r]) {
                    continue;
                }
                let gain = self.scores[j][t] - self.base[j];
                if gain <= 0.0 {
                    continue;
                }
                best_gain = best_gain.max(gain);
                let share = gain / reqs.len() as f64;
                for &r in reqs {
                    per_request[r] = per_request[r].max(share);
                }
            }
            per_vehicle += best_gain;
        }
        let per_request: f64 = per_request.iter().sum();
        let relaxed = partial + self.base_suffix[k] + per_vehicle.min(per_request);
        if self.lambda.is_empty() {
            return relaxed;
        }
        let mut lagrangian = 0.0;
        for j in k..self.scores.len() {
            let mut best = f64::NEG_INFINITY;
            for (t, reqs) in self.requests[j].iter().enumerate() {
                if reqs.iter().any(|&r| used[r]) {
                    continue;
                }
                best = best.max(self.scores[j][t] - reqs.iter().map(|&r| self.lambda[r]).sum::<f64>());
            }
            lagrangian += best;
        }
        for (r, &l) in self.lambda.iter().enumerate() {
            let wanted = self.masks.is_empty() || self.relevant[k] >> r & 1 == 1;
            if !used[r] && wanted {
                lagrangian += l;
            }
        }
        relaxed.min(partial + lagrangian + self.slack)
    }

    /// Subgradient descent on the Lagrangian dual of the request constraints,
    /// keeping the multipliers with the lowest dual value.
    fn tune_multipliers(&mut self) {
        let n = self.n_requests;
        if n == 0 || self.exact.is_some() {
            return;
        }
        let mut lambda = vec![0.0; n];
        let mut best = (f64::INFINITY, lambda.clone());
        let mut last_offer = Vec::new();
        let (mut theta, mut stall) = (2.0, 0);
        for _ in 0..MULTIPLIER_ROUNDS {
            let mut dual: f64 = lambda.iter().sum();
            let mut count = vec![0u32; n];
            for (scores, requests) in self.scores.iter().zip(&self.requests) {
                let (mut value, mut pick) = (f64::NEG_INFINITY, 0);
                for (t, reqs) in requests.iter().enumerate() {
                    let v = scores[t] - reqs.iter().map(|&r| lambda[r]).sum::<f64>();
                    if v > value {
                        (value, pick) = (v, t);
                    }
                }
                dual += value;
                for &r in &requests[pick] {
                    count[r] += 1;
                }
            }
            if dual < best.0 {
                best = (dual, lambda.clone());
                stall = 0;
            } else {
                stall += 1;
                if stall == 10 {
                    theta /= 2.0;
                    stall = 0;
                }
            }
            let grad: Vec<f64> = count.iter().map(|&c| 1.0 - f64::from(c)).collect();
            let norm: f64 = grad.iter().zip(&lambda).filter(|(g, l)| **g < 0.0 || **l > 0.0).map(|(g, _)| g * g).sum();
            if norm == 0.0 {
                break;
            }
            if lambda != last_offer {
                self.offer_incumbent(self.greedy_by_gain(&lambda));
                last_offer.clone_from(&lambda);
            }
            let step = theta * (dual - self.best_value).max(self.slack) / norm;
            for (l, g) in lambda.iter_mut().zip(&grad) {
                *l = (*l - step * g).max(0.0);
            }
        }
        self.lambda = best.1;
    }

    fn dfs(&mut self, k: usize, partial: f64, used: &mut [bool], mask: u128) {
        if self.budget == 0 {
            return;
        }
        self.budget -= 1;
        if k == self.scores.len() {
            if partial > self.best_value || (partial == self.best_value && self.picks < self.best_picks) {
                self.best_value = partial;
                self.best_picks.clone_from(&self.picks);
            }
            return;
        }
        if !self.masks.is_empty() {
            // An earlier, lexicographically smaller prefix reached the same
            // state with at least this score; every completion here is
            // dominated because rounded addition is monotone.
            let room = self.seen.len() < SEEN_LIMIT;
            let key = (k, mask & self.relevant[k]);
            match self.seen.get_mut(&key) {
                Some(p) if partial <= *p => return,
                Some(p) => *p = partial,
                None if room => {
                    self.seen.insert(key, partial);
                }
                None => {}
            }
        }
        let bound = self.bound(k, partial, used, mask);
        if bound < self.best_value || (bound == self.best_value && self.picks[..k] > self.best_picks[..k]) {
            return;
        }
        for t in 0..self.scores[k].len() {
            if self.requests[k][t].iter().any(|&r| used[r]) {
                continue;
            }
            for &r in &self.requests[k][t] {
                used[r] = true;
            }
            self.picks.push(t);
            let m = self.masks.get(k).map_or(0, |m| m[t]);
            self.dfs(k + 1, partial + self.scores[k][t], used, mask | m);
            self.picks.pop();
            for &r in &self.requests[k][t] {
                used[r] = false;
            }
        }
    }

    /// Keeps `candidate` if it beats the incumbent under the tie-break.
    fn offer_incumbent(&mut self, (value, picks): (f64, Vec<usize>)) {
        if value > self.best_value || (value == self.best_value && picks < self.best_picks) {
            self.best_value = value;
            self.best_picks = picks;
        }
    }

    /// Best-available trip per vehicle in order; a feasible starting incumbent.
    fn greedy(&self) -> (f64, Vec<usize>) {
        let mut used = vec![false; self.n_requests];
        let mut picks = Vec::with_capacity(self.scores.len());
        let mut value = 0.0;
        for j in 0..self.scores.len() {
            let mut best: Option<usize> = None;
            for (t, reqs) in self.requests[j].iter().enumerate() {
                if reqs.iter().any(|&r| used[r]) {
                    continue;
                }
                if best.is_none_or(|b| self.scores[j][t] > self.scores[j][b]) {
                    best = Some(t);
                }
            }
            let t = best.expect("empty trip always available");
            for &r in &self.requests[j][t] {
                used[r] = true;
            }
            value += self.scores[j][t];
            picks.push(t);
        }
        (value, picks)
    }

    /// Largest gains over the empty trip first, across all vehicles, each
    /// request in a trip charged its multiplier.
    fn greedy_by_gain(&self, lambda: &[f64]) -> (f64, Vec<usize>) {
        let mut picks: Vec<usize> = self
            .requests
            .iter()
            .zip(&self.scores)
            .map(|(reqs, scores)| {
                (0..reqs.len())
                    .filter(|&t| reqs[t].is_empty())
                    .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
                    .expect("empty trip always available")
            })
            .collect();
        let mut gains: Vec<(f64, usize, usize)> = Vec::new();
        for (j, reqs) in self.requests.iter().enumerate() {
            for (t, rs) in reqs.iter().enumerate() {
                let gain = self.scores[j][t] - self.base[j] - rs.iter().map(|&r| lambda[r]).sum::<f64>();
                if !rs.is_empty() && gain > 0.0 {
                    gains.push((gain, j, t));
                }
            }
        }
        gains.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut used = vec![false; self.n_requests];
        let mut taken = vec![false; self.scores.len()];
        for (_, j, t) in gains {
            if taken[j] || self.requests[j][t].iter().any(|&r| used[r]) {
                continue;
            }
            taken[j] = true;
            for &r in &self.requests[j][t] {
                used[r] = true;
            }
            picks[j] = t;
        }
        let value = picks.iter().enumerate().fold(0.0, |acc, (j, &t)| acc + self.scores[j][t]);
        (value, picks)
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut root = x;
    while parent[root] != root {
        root = parent[root];
    }
    let mut cur = x;
    while parent[cur] != root {
        let next = parent[cur];
        parent[cur] = root;
        cur = next;
    }
    root
}

/// Maximum-score assignment.
pub fn solve(problem: &AssignmentProblem) -> Result<AssignmentSolution, AssignmentError> {
    solve_within(problem, u64::MAX)
}

/// Maximum-score assignment, giving up after `node_limit` search nodes with
/// the best assignment found so far (`optimal` is then false).
pub fn solve_within(problem: &AssignmentProblem, node_limit: u64) -> Result<AssignmentSolution, AssignmentError> {
    search(problem, node_limit, true)
}

fn search(problem: &AssignmentProblem, node_limit: u64, exact_bound: bool) -> Result<AssignmentSolution, AssignmentError> {
    problem.validate()?;
    let mut budget = node_limit;
    let mut optimal = true;
    let order = problem.sorted_order();
    let n = order.len();

    // Link vehicles that compete for a request.
    let mut parent: Vec<usize> = (0..n).collect();
    let mut owner: HashMap<RequestId, usize> = HashMap::new();
    for (pos, &vi) in order.iter().enumerate() {
        for t in &problem.vehicles[vi].trips {
            for r in &t.requests {
                match owner.get(r) {
                    Some(&other) => {
                        let (a, b) = (find(&mut parent, pos), find(&mut parent, other));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                    None => {
                        owner.insert(*r, pos);
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut group_of: HashMap<usize, usize> = HashMap::new();
    for pos in 0..n {
        let root = find(&mut parent, pos);
        let g = *group_of.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(pos);
    }

    let mut picks = vec![0usize; n];
    for members in &groups {
        let mut dense: HashMap<RequestId, usize> = HashMap::new();
        let mut scores = Vec::with_capacity(members.len());
        let mut requests = Vec::with_capacity(members.len());
        let mut base = Vec::with_capacity(members.len());
        for &pos in members {
            let vc = &problem.vehicles[order[pos]];
            scores.push(vc.trips.iter().map(|t| t.score).collect::<Vec<_>>());
            requests.push(
                vc.trips
                    .iter()
                    .map(|t| {
                        t.requests
                            .iter()
                            .map(|r| {
                                let next = dense.len();
                                *dense.entry(*r).or_insert(next)
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>(),
            );
            base.push(
                vc.trips
                    .iter()
                    .filter(|t| t.requests.is_empty())
                    .map(|t| t.score)
                    .fold(f64::NEG_INFINITY, f64::max),
            );
        }
        let mut base_suffix = vec![0.0; members.len() + 1];
        for j in (0..members.len()).rev() {
            base_suffix[j] = base_suffix[j + 1] + base[j];
        }
        let n_requests = dense.len();
        let masks: Vec<Vec<u128>> = if n_requests <= 128 {
            requests
                .iter()
                .map(|trips| trips.iter().map(|rs| rs.iter().fold(0u128, |m, &r| m | 1 << r)).collect())
                .collect()
        } else {
            Vec::new()
        };
        let mut relevant = vec![0u128; members.len() + 1];
        if !masks.is_empty() {
            for k in (0..members.len()).rev() {
                relevant[k] = relevant[k + 1] | masks[k].iter().fold(0, |a, m| a | m);
            }
        }
        let magnitude: f64 = scores
            .iter()
            .map(|s| s.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .sum();
        let mut comp = Component {
            scores,
            requests,
            masks,
            base,
            base_suffix,
            n_requests,
            relevant,
            exact: None,
            lambda: Vec::new(),
            seen: HashMap::new(),
            slack: 1e-9 * (1.0 + magnitude),
            best_value: f64::NEG_INFINITY,
            best_picks: Vec::new(),
            picks: Vec::with_capacity(members.len()),
            budget,
        };
        if exact_bound {
            comp.prepare_exact_bound();
        }
        (comp.best_value, comp.best_picks) = comp.greedy();
        let zero = vec![0.0; comp.n_requests];
        comp.offer_incumbent(comp.greedy_by_gain(&zero));
        comp.tune_multipliers();
        let mut used = vec![false; comp.n_requests];
        comp.dfs(0, 0.0, &mut used, 0);
        optimal &= comp.budget > 0;
        budget = comp.budget;
        for (&pos, &t) in members.iter().zip(&comp.best_picks) {
            picks[pos] = t;
        }
    }

    Ok(AssignmentSolution {
        objective: problem.objective_of(&order, &picks),
        choices: order.iter().zip(&picks).map(|(&vi, &t)| (problem.vehicles[vi].vehicle, t)).collect(),
        optimal,
    })
}

/// Largest instance [`brute_force_solve`] accepts, in joint choices
/// (the product of per-vehicle candidate counts).
pub const BRUTE_FORCE_LIMIT: usize = 1 << 22;

/// Exhaustive enumeration over every per-vehicle choice; a test oracle.
pub fn brute_force_solve(problem: &AssignmentProblem) -> Result<AssignmentSolution, AssignmentError> {
    problem.validate()?;
    let total = problem.vehicles.iter().fold(1usize, |acc, v| acc.saturating_mul(v.trips.len()));
    if total > BRUTE_FORCE_LIMIT {
        return Err(AssignmentError::TooLarge(total));
    }
    let order = problem.sorted_order();
    let sizes: Vec<usize> = order.iter().map(|&v| problem.vehicles[v].trips.len()).collect();
    let mut picks = vec![0usize; order.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut used = std::collections::HashSet::new();
        let consistent = order
            .iter()
            .zip(&picks)
            .all(|(&v, &t)| problem.vehicles[v].trips[t].requests.iter().all(|r| used.insert(*r)));
        if consistent {
            let value = problem.objective_of(&order, &picks);
            // Enumeration runs in lexicographic order: only strict gains replace.
            if best.as_ref().is_none_or(|(b, _)| value > *b) {
                best = Some((value, picks.clone()));
            }
        }
        // Odometer increment, last vehicle fastest.
        let mut k = picks.len();
        loop {
            if k == 0 {
                let (objective, picks) = best.expect("all-empty assignment is always consistent");
                return Ok(AssignmentSolution {
                    objective,
                    choices: order.iter().zip(&picks).map(|(&vi, &t)| (problem.vehicles[vi].vehicle, t)).collect(),
                    optimal: true,
                });
            }
            k -= 1;
            picks[k] += 1;
            if picks[k] < sizes[k] {
                break;
            }
            picks[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(ids: &[u64], score: f64) -> Candidate {
        Candidate::new(ids.iter().map(|&i| RequestId(i)).collect(), score)
    }

    fn veh(id: u32, trips: Vec<Candidate>) -> VehicleCandidates {
        VehicleCandidates { vehicle: VehicleId(id), trips }
    }

    fn both(p: &AssignmentProblem) -> AssignmentSolution {
        let a = solve(p).unwrap();
        let b = brute_force_solve(p).unwrap();
        assert_eq!(a, b);
        a
    }

    #[test]
    fn no_requests_all_empty() {
        let p = AssignmentProblem { vehicles: vec![veh(0, vec![cand(&[], 1.5)]), veh(1, vec![cand(&[], -0.5)])] };
        let s = both(&p);
        assert_eq!(s.choices, vec![(VehicleId(0), 0), (VehicleId(1), 0)]);
        assert_eq!(s.objective, 1.0);
    }

    #[test]
    fn single_positive_singleton() {
        let p = AssignmentProblem { vehicles: vec![veh(0, vec![cand(&[], 0.0), cand(&[1], 2.0)])] };
        assert_eq!(both(&p).choices, vec![(VehicleId(0), 1)]);
    }

    #[test]
    fn split_beats_pooled_trip() {
        let p = AssignmentProblem {
            vehicles: vec![
                veh(1, vec![cand(&[], 0.0), cand(&[1], 5.0), cand(&[2], 4.0), cand(&[1, 2], 7.0)]),
                veh(2, vec![cand(&[], 0.0), cand(&[1], 3.0), cand(&[2], 3.0)]),
            ],
        };
        let s = both(&p);
        assert_eq!(s.objective, 8.0);
        assert_eq!(s.choices, vec![(VehicleId(1), 1), (VehicleId(2), 2)]);
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let p = AssignmentProblem {
            vehicles: vec![
                veh(3, vec![cand(&[], 1.0), cand(&[7], 1.0)]),
                veh(1, vec![cand(&[7], 1.0), cand(&[], 1.0)]),
            ],
        };
        let s = both(&p);
        assert_eq!(s.choices, vec![(VehicleId(1), 0), (VehicleId(3), 0)]);
        let single = AssignmentProblem { vehicles: vec![veh(0, vec![cand(&[], 0.0)])] };
        assert_eq!(both(&single).choices, vec![(VehicleId(0), 0)]);
    }

    #[test]
    fn malformed_problems_rejected() {
        let dup = AssignmentProblem { vehicles: vec![veh(0, vec![cand(&[], 0.0)]), veh(0, vec![cand(&[], 0.0)])] };
        assert_eq!(solve(&dup), Err(AssignmentError::DuplicateVehicle(VehicleId(0))));
        let no_empty = AssignmentProblem { vehicles: vec![veh(0, vec![cand(&[1], 0.0)])] };
        assert_eq!(solve(&no_empty), Err(AssignmentError::MissingEmptyTrip(VehicleId(0))));
        let unsorted = AssignmentProblem { vehicles: vec![veh(0, vec![cand(&[], 0.0), cand(&[2, 1], 1.0)])] };
        assert!(matches!(solve(&unsorted), Err(AssignmentError::MalformedTrip { .. })));
        let nan = AssignmentProblem { vehicles: vec![veh(0, vec![cand(&[], f64::NAN)])] };
        assert!(matches!(solve(&nan), Err(AssignmentError::NonFiniteScore { .. })));
        let big = AssignmentProblem {
            vehicles: (0..12)
                .map(|i| veh(i, (0..5).map(|k| if k == 0 { cand(&[], 0.0) } else { cand(&[i as u64 * 10 + k], 1.0) }).collect()))
                .collect(),
        };
        assert_eq!(brute_force_solve(&big), Err(AssignmentError::TooLarge(5usize.pow(12))));
        assert!(solve(&big).is_ok());
    }

    fn random_problem(rng: &mut impl rand::Rng, vehicles: u32, requests: u64) -> AssignmentProblem {
        AssignmentProblem {
            vehicles: (0..vehicles)
                .map(|v| {
                    let mut trips = vec![cand(&[], rng.random_range(-1.0..1.0))];
                    for a in 0..requests {
                        if rng.random_bool(0.4) {
                            trips.push(cand(&[a], rng.random_range(-1.0..4.0)));
                        }
                        for b in a + 1..requests {
                            if rng.random_bool(0.15) {
                                trips.push(cand(&[a, b], rng.random_range(-1.0..6.0)));
                            }
                        }
                    }
                    veh(v, trips)
                })
                .collect(),
        }
    }

    #[test]
    fn relaxation_bounds_alone_stay_exact() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let p = random_problem(&mut rng, 4, 5);
            let fast = search(&p, u64::MAX, false).unwrap();
            assert_eq!(fast, brute_force_solve(&p).unwrap());
        }
    }

    #[test]
    fn node_limit_returns_a_consistent_assignment() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let p = random_problem(&mut rng, 6, 6);
            let exact = solve(&p).unwrap();
            let cut = solve_within(&p, 3).unwrap();
            assert!(p.is_consistent(&cut.choices));
            assert!(cut.objective <= exact.objective);
            if cut.optimal {
                assert_eq!(cut, exact);
            }
            assert!(exact.optimal);
        }
        let p = random_problem(&mut rng, 6, 6);
        assert!(!solve_within(&p, 1).unwrap().optimal);
    }

    #[test]
    fn dump_round_trip() {
        let p = AssignmentProblem {
            vehicles: vec![
                veh(1, vec![cand(&[], 0.25), cand(&[1, 4], 7.1)]),
                veh(0, vec![cand(&[], -1.0)]),
            ],
        };
        assert_eq!(AssignmentProblem::from_dump(&p.to_dump()).unwrap(), p);
        assert!(matches!(
            AssignmentProblem::from_dump("0\t-\n"),
            Err(AssignmentError::Dump { line: 1, .. })
        ));
    }
}
