//! Multi-run experiments: policy comparison, fleet-size search and distance
//! accounting.
//!
//! Each `(policy, seed)` evaluation trains fresh learners for `train_epochs`
//! (or loads them from a checkpoint directory) and then measures total
//! revenue over `eval_epochs` in evaluation mode on a separate demand draw.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, Policy, SimConfig};
use crate::demand::SensitivityParams;
use crate::sim::{self, EpochMetrics, Learners, RunMode, Scenario, SimError, SimOptions};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("spec line {line}: {msg}")]
    Spec { line: usize, msg: String },
    #[error("no checkpoint for {0} and training is disabled (train_epochs = 0)")]
    MissingCheckpoint(Policy),
    #[error("target revenue {target} unreachable: {revenue:.2} at the largest fleet ({max_fleet})")]
    Unreachable { target: f64, max_fleet: usize, revenue: f64 },
    #[error("fleet bounds must satisfy 1 <= min <= max, got {min}..{max}")]
    FleetBounds { min: usize, max: usize },
    #[error("metrics stream is empty")]
    EmptyStream,
    #[error("metrics cover {hours:.3} h; at least one hour is needed")]
    ShortStream { hours: f64 },
    #[error("fleet size must be positive")]
    ZeroFleet,
}

/// Offset between the training and evaluation seeds of one replicate.
pub const EVAL_SEED_OFFSET: u64 = 1_000_003;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub config: PathBuf,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub train_epochs: u32,
    pub eval_epochs: u32,
    pub checkpoint_dir: Option<PathBuf>,
    pub sensitivity: Option<SensitivityParams>,
    pub target_revenue: Option<f64>,
    pub fleet_min: usize,
    pub fleet_max: usize,
}

impl ExperimentSpec {
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SimError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let mut config = None;
        let mut spec = ExperimentSpec {
            config: PathBuf::new(),
            policies: vec![Policy::MfNe, Policy::FNe, Policy::FIr],
            seeds: Vec::new(),
            train_epochs: 600,
            eval_epochs: 120,
            checkpoint_dir: None,
            sensitivity: None,
            target_revenue: None,
            fleet_min: 1,
            fleet_max: 64,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let err = |msg: String| ExperimentError::Spec { line, msg };
            let (key, value) = l.split_once('=').ok_or_else(|| err(format!("expected `key = value`, found {l:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<u64>().map_err(|_| err(format!("invalid number {v:?} for {key}")));
            match key {
                "config" => config = Some(base_dir.join(value)),
                "policies" => {
                    spec.policies = value
                        .split(',')
                        .map(|p| p.trim().parse::<Policy>().map_err(|e| err(e.to_string())))
                        .collect::<Result<_, _>>()?
                }
                "seeds" => spec.seeds = value.split(',').map(|s| num(s.trim())).collect::<Result<_, _>>()?,
                "train_epochs" => spec.train_epochs = num(value)? as u32,
                "eval_epochs" => spec.eval_epochs = num(value)? as u32,
                "checkpoint_dir" => spec.checkpoint_dir = Some(base_dir.join(value)),
                "sensitivity" => {
                    spec.sensitivity = Some(match value {
                        "uber" => SensitivityParams::uber(),
                        "conscious" => SensitivityParams::conscious(),
                        _ => return Err(err(format!("unknown sensitivity preset {value:?}"))),
                    })
                }
                "target_revenue" => {
                    spec.target_revenue = Some(value.parse().map_err(|_| err(format!("invalid revenue {value:?}")))?)
                }
                "fleet_min" => spec.fleet_min = num(value)? as usize,
                "fleet_max" => spec.fleet_max = num(value)? as usize,
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        spec.config = config.ok_or(ExperimentError::Spec { line: 0, msg: "missing `config`".into() })?;
        if spec.seeds.is_empty() {
            return Err(ExperimentError::Spec { line: 0, msg: "at least one seed is required".into() });
        }
        if spec.policies.is_empty() {
            return Err(ExperimentError::Spec { line: 0, msg: "at least one policy is required".into() });
        }
        if spec.fleet_min == 0 || spec.fleet_min > spec.fleet_max {
            return Err(ExperimentError::FleetBounds { min: spec.fleet_min, max: spec.fleet_max });
        }
        Ok(spec)
    }
}

/// Directory name used for a policy's checkpoints.
pub fn policy_slug(p: Policy) -> String {
    p.code().replace('&', "_")
}

/// Runs replicates of one scenario under different policies.
pub struct Experiment {
    pub base: SimConfig,
    pub scenario: Scenario,
    pub train_epochs: u32,
    pub eval_epochs: u32,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Experiment {
    pub fn new(spec: &ExperimentSpec) -> Result<Self, ExperimentError> {
        let mut base = SimConfig::from_file(&spec.config)?;
        if let Some(s) = spec.sensitivity {
            base.sensitivity = s;
        }
        let scenario = Scenario::from_config(&base)?;
        Ok(Experiment {
            base,
            scenario,
            train_epochs: spec.train_epochs,
            eval_epochs: spec.eval_epochs,
            checkpoint_dir: spec.checkpoint_dir.clone(),
        })
    }

    fn config_for(&self, policy: Policy, seed: u64, fleet: usize, horizon: u32) -> SimConfig {
        SimConfig { policy, seed, fleet_size: fleet, horizon, ..self.base.clone() }
    }

    /// Learners after training (or loaded from the checkpoint directory).
    pub fn learners(&self, policy: Policy, seed: u64, fleet: usize) -> Result<Learners, ExperimentError> {
        if self.train_epochs == 0 {
            let dir = self.checkpoint_dir.as_ref().ok_or(ExperimentError::MissingCheckpoint(policy))?;
            let dir = dir.join(policy_slug(policy));
            if !dir.exists() {
                return Err(ExperimentError::MissingCheckpoint(policy));
            }
            return Ok(Learners::load(&dir)?);
        }
        let config = self.config_for(policy, seed, fleet, self.train_epochs);
        Ok(sim::run(&config, &self.scenario, None, RunMode::Train, SimOptions::default())?.learners)
    }

    /// Evaluation metrics of trained learners.
    pub fn evaluate(&self, policy: Policy, seed: u64, fleet: usize, learners: Learners) -> Result<Vec<EpochMetrics>, ExperimentError> {
        let config = self.config_for(policy, seed.wrapping_add(EVAL_SEED_OFFSET), fleet, self.eval_epochs);
        Ok(sim::run(&config, &self.scenario, Some(learners), RunMode::Eval, SimOptions::default())?.metrics)
    }

    /// Total evaluation revenue of one replicate.
    pub fn revenue(&self, policy: Policy, seed: u64, fleet: usize) -> Result<f64, ExperimentError> {
        let learners = self.learners(policy, seed, fleet)?;
        Ok(total_revenue(&self.evaluate(policy, seed, fleet, learners)?))
    }
}

pub fn total_revenue(metrics: &[EpochMetrics]) -> f64 {
    metrics.iter().map(|m| m.revenue).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub policy: Policy,
    pub revenues: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Percentage change of the mean relative to F&N-E.
    pub delta_pct: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn delta_pct(x: f64, base: f64) -> f64 {
    (x - base) / base * 100.0
}

/// Per-policy mean and spread of `revenue(policy, seed)` and the delta of each
/// mean against F&N-E. F&N-E is appended when not listed.
pub fn compare_with<F>(policies: &[Policy], seeds: &[u64], revenue: F) -> Result<Vec<ComparisonRow>, ExperimentError>
where
    F: Fn(Policy, u64) -> Result<f64, ExperimentError> + Sync,
{
    let mut all = policies.to_vec();
    if !all.contains(&Policy::FNe) {
        all.push(Policy::FNe);
    }
    let jobs: Vec<(Policy, u64)> = all.iter().flat_map(|&p| seeds.iter().map(move |&s| (p, s))).collect();
    let results: Vec<f64> = jobs.par_iter().map(|&(p, s)| revenue(p, s)).collect::<Result<_, _>>()?;
    let per_policy: Vec<Vec<f64>> = results.chunks(seeds.len()).map(<[f64]>::to_vec).collect();
    let base_idx = all.iter().position(|&p| p == Policy::FNe).expect("baseline included");
    let (base, _) = mean_std(&per_policy[base_idx]);
    Ok(all
        .iter()
        .zip(per_policy)
        .map(|(&policy, revenues)| {
            let (mean, std) = mean_std(&revenues);
            ComparisonRow { policy, revenues, mean, std, delta_pct: delta_pct(mean, base) }
        })
        .collect())
}

pub fn compare(spec: &ExperimentSpec) -> Result<Vec<ComparisonRow>, ExperimentError> {
    let exp = Experiment::new(spec)?;
    let fleet = exp.base.fleet_size;
    compare_with(&spec.policies, &spec.seeds, |p, s| exp.revenue(p, s, fleet))
}

pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{:<8} {:>12} {:>10} {:>9}\n", "policy", "mean", "std", "delta%");
    for r in rows {
        out.push_str(&format!("{:<8} {:>12.2} {:>10.2} {:>+9.2}\n", r.policy.code(), r.mean, r.std, r.delta_pct));
    }
    out
}

/// Smallest fleet in `min..=max` whose revenue reaches `target`, assuming
/// revenue grows with the fleet. Each size is evaluated at most once.
pub fn fleet_search_with<F>(min: usize, max: usize, target: f64, mut revenue: F) -> Result<usize, ExperimentError>
where
    F: FnMut(usize) -> Result<f64, ExperimentError>,
{
    if min == 0 || min > max {
        return Err(ExperimentError::FleetBounds { min, max });
    }
    let at_max = revenue(max)?;
    if at_max < target {
        return Err(ExperimentError::Unreachable { target, max_fleet: max, revenue: at_max });
    }
    let (mut lo, mut hi) = (min, max);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if revenue(mid)? >= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// Minimal fleet for `policy`. Without `frozen`, learners are retrained for
/// every candidate size; with it, learners trained once at the configured
/// fleet size are reused.
pub fn fleet_search(spec: &ExperimentSpec, policy: Policy, target: f64, frozen: bool) -> Result<usize, ExperimentError> {
    let exp = Experiment::new(spec)?;
    let frozen_learners: Option<Vec<Learners>> = if frozen {
        Some(
            spec.seeds
                .par_iter()
                .map(|&s| exp.learners(policy, s, exp.base.fleet_size))
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };
    fleet_search_with(spec.fleet_min, spec.fleet_max, target, |fleet| {
        let revenues: Vec<f64> = spec
            .seeds
            .par_iter()
            .enumerate()
            .map(|(i, &s)| {
                let learners = match &frozen_learners {
                    Some(l) => l[i].clone(),
                    None => exp.learners(policy, s, fleet)?,
                };
                Ok(total_revenue(&exp.evaluate(policy, s, fleet, learners)?))
            })
            .collect::<Result<_, ExperimentError>>()?;
        let (mean, _) = mean_std(&revenues);
        log::info!("{policy} fleet {fleet}: mean revenue {mean:.2}");
        Ok(mean)
    })
}

/// Mean kilometers per vehicle per hour over one or more metric streams.
pub fn distance_report(streams: &[Vec<EpochMetrics>], fleet: usize, epoch_seconds: u64) -> Result<f64, ExperimentError> {
    if fleet == 0 {
        return Err(ExperimentError::ZeroFleet);
    }
    let epochs: usize = streams.iter().map(Vec::len).sum();
    if epochs == 0 {
        return Err(ExperimentError::EmptyStream);
    }
    let hours = epochs as f64 * epoch_seconds as f64 / 3600.0;
    let per_stream = hours / streams.len() as f64;
    if per_stream < 1.0 - 1e-9 {
        return Err(ExperimentError::ShortStream { hours: per_stream });
    }
    let meters: f64 = streams.iter().flatten().map(|m| m.distance_m).sum();
    Ok(meters / 1000.0 / (fleet as f64 * hours))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(distances: &[f64]) -> Vec<EpochMetrics> {
        distances
            .iter()
            .enumerate()
            .map(|(i, &d)| EpochMetrics {
                epoch: i as u32,
                revenue: 0.0,
                offers: 0,
                accepts: 0,
                served: 0,
                dropped: 0,
                distance_m: d,
                utilization: 0.0,
            })
            .collect()
    }

    #[test]
    fn baseline_delta_is_zero() {
        let rows = compare_with(&[Policy::FNe], &[1, 2], |_, s| Ok(100.0 + s as f64)).unwrap();
        assert_eq!(rows[0].delta_pct, 0.0);
        assert_eq!(rows[0].mean, 101.5);
    }

    #[test]
    fn mocked_delta() {
        let rows = compare_with(&[Policy::MfNe, Policy::FIr], &[7], |p, _| {
            Ok(match p {
                Policy::MfNe => 110.0,
                Policy::FNe => 100.0,
                _ => 95.0,
            })
        })
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].policy, Policy::FNe);
        assert!((rows[0].delta_pct - 10.0).abs() < 1e-12);
        assert!((rows[1].delta_pct + 5.0).abs() < 1e-12);
        assert_eq!(rows[2].delta_pct, 0.0);
        let table = format_comparison(&rows);
        assert!(table.contains("+10.00"));
        assert!(table.contains("-5.00"));
    }

    #[test]
    fn std_is_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn fleet_bisection() {
        assert_eq!(fleet_search_with(1, 64, 95.0, |n| Ok(10.0 * n as f64)).unwrap(), 10);
        assert_eq!(fleet_search_with(1, 64, 0.0, |n| Ok(10.0 * n as f64)).unwrap(), 1);
        assert_eq!(fleet_search_with(1, 64, 640.0, |n| Ok(10.0 * n as f64)).unwrap(), 64);
        assert!(matches!(
            fleet_search_with(1, 64, 1e9, |n| Ok(10.0 * n as f64)),
            Err(ExperimentError::Unreachable { max_fleet: 64, .. })
        ));
        let mut calls = 0;
        fleet_search_with(1, 1000, 5.0, |n| {
            calls += 1;
            Ok(n as f64)
        })
        .unwrap();
        assert!(calls <= 11);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance_report(&[stream(&[0.0; 60])], 4, 60).unwrap(), 0.0);
        let mut one = vec![0.0; 60];
        one[0] = 11_270.0;
        assert!((distance_report(&[stream(&one)], 1, 60).unwrap() - 11.27).abs() < 1e-12);
        let mut two = vec![0.0; 60];
        two[3] = 22_000.0;
        assert!((distance_report(&[stream(&two)], 2, 60).unwrap() - 11.0).abs() < 1e-12);
        assert!(matches!(distance_report(&[], 1, 60), Err(ExperimentError::EmptyStream)));
        assert!(matches!(distance_report(&[vec![]], 1, 60), Err(ExperimentError::EmptyStream)));
        assert!(matches!(distance_report(&[stream(&[1.0; 10])], 1, 60), Err(ExperimentError::ShortStream { .. })));
    }

    #[test]
    fn spec_parsing() {
        let spec = ExperimentSpec::parse(
            "config = scen.cfg\npolicies = M&N-E, F&IR\nseeds = 1,2,3\ntrain_epochs = 0\ncheckpoint_dir = ck\n",
            Path::new("/x"),
        )
        .unwrap();
        assert_eq!(spec.config, PathBuf::from("/x/scen.cfg"));
        assert_eq!(spec.policies, vec![Policy::MfNe, Policy::FIr]);
        assert_eq!(spec.seeds, vec![1, 2, 3]);
        assert_eq!(spec.checkpoint_dir, Some(PathBuf::from("/x/ck")));
        assert!(ExperimentSpec::parse("config = a\n", Path::new(".")).is_err());
        assert!(ExperimentSpec::parse("seeds = 1\n", Path::new(".")).is_err());
        assert!(ExperimentSpec::parse("config = a\nseeds = 1\npolicies = Z\n", Path::new(".")).is_err());
        assert!(matches!(
            ExperimentSpec::parse("config = a\nseeds = 1\nfleet_min = 0\n", Path::new(".")),
            Err(ExperimentError::FleetBounds { .. })
        ));
    }
}
