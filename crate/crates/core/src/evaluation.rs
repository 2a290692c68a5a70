//! Seeded episode batches, confusion matrices, SOC points and sweeps, and the
//! wind calibration that targets a nominal-only exit rate.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::episode::World;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::learning::{train, warm_start, LearnConfig, TrainingLog};
use crate::policy::{Action, MetaPolicy, WeightMatrix};
use crate::sim::{Termination, VehicleState};

/// Half-open seed interval `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

impl SeedRange {
    pub fn new(start: u64, count: u64) -> Self {
        SeedRange { start, end: start + count }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn seeds(&self) -> Vec<u64> {
        (self.start..self.end).collect()
    }

    pub fn overlaps(&self, other: &SeedRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// The first `count` seeds of this range.
    pub fn take(&self, count: usize) -> SeedRange {
        SeedRange { start: self.start, end: self.start + (count as u64).min(self.end - self.start) }
    }
}

impl FromStr for SeedRange {
    type Err = Error;

    /// Accepts `A..B` (exclusive end) or a single seed `A`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("bad seed range '{s}' (expected A..B)"));
        let range = match s.split_once("..") {
            Some((a, b)) => SeedRange { start: a.trim().parse().map_err(|_| bad())?, end: b.trim().parse().map_err(|_| bad())? },
            None => {
                let a: u64 = s.trim().parse().map_err(|_| bad())?;
                SeedRange::new(a, 1)
            }
        };
        if range.is_empty() {
            return Err(bad());
        }
        Ok(range)
    }
}

impl fmt::Display for SeedRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// One logged step: the state before acting, the wind it saw, the applied
/// action and the reward of the resulting transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub state: VehicleState,
    pub wind: Vec3,
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub policy_id: String,
    /// Empty when the batch was run in summary mode.
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_state: VehicleState,
    pub final_wind: Vec3,
    pub outcome: Termination,
    pub deployed: bool,
    pub deploy_step: Option<usize>,
    pub ever_exited: bool,
    pub steps: usize,
    pub episode_return: f64,
}

impl EpisodeRecord {
    pub fn is_safe(&self) -> bool {
        !self.ever_exited
    }
}

pub fn run_episode(policy: &MetaPolicy, world: &World, seed: u64, keep_trajectory: bool) -> EpisodeRecord {
    let mut ep = world.episode(seed);
    let mut trajectory = Vec::new();
    let mut deploy_step = None;
    let mut episode_return = 0.0;
    while !ep.is_done() {
        let state = *ep.state();
        let wind = ep.wind_now();
        let meta = policy.decide(&state, world.envelope(), &wind, &world.scales);
        let res = ep.advance(meta);
        if res.action == Action::Deploy && !state.deployed {
            deploy_step = Some(ep.steps() - 1);
        }
        episode_return += res.reward;
        if keep_trajectory {
            trajectory.push(TrajectoryPoint { state, wind, action: res.action, reward: res.reward });
        }
    }
    EpisodeRecord {
        seed,
        policy_id: policy.id(),
        trajectory,
        final_state: *ep.state(),
        final_wind: ep.wind_now(),
        outcome: ep.verdict(),
        deployed: deploy_step.is_some(),
        deploy_step,
        ever_exited: ep.ever_exited(),
        steps: ep.steps(),
        episode_return,
    }
}

/// One full record per seed, in seed order. Episodes run in parallel; the
/// result does not depend on scheduling.
pub fn run_batch(policy: &MetaPolicy, world: &World, seeds: &[u64]) -> Vec<EpisodeRecord> {
    run_batch_with(policy, world, seeds, true)
}

/// Like [`run_batch`]; `keep_trajectory = false` drops per-step logs.
pub fn run_batch_with(policy: &MetaPolicy, world: &World, seeds: &[u64], keep_trajectory: bool) -> Vec<EpisodeRecord> {
    seeds.par_iter().map(|&seed| run_episode(policy, world, seed, keep_trajectory)).collect()
}

/// Episode counts over {deployed, not deployed} x {safe, unsafe}, where unsafe
/// means the trajectory left the envelope at any point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub safe_not_deployed: usize,
    pub unsafe_not_deployed: usize,
    pub safe_deployed: usize,
    pub unsafe_deployed: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.safe_not_deployed + self.unsafe_not_deployed + self.safe_deployed + self.unsafe_deployed
    }

    pub fn deployed(&self) -> usize {
        self.safe_deployed + self.unsafe_deployed
    }

    pub fn safe(&self) -> usize {
        self.safe_not_deployed + self.safe_deployed
    }

    pub fn record(&mut self, deployed: bool, safe: bool) {
        match (deployed, safe) {
            (false, true) => self.safe_not_deployed += 1,
            (false, false) => self.unsafe_not_deployed += 1,
            (true, true) => self.safe_deployed += 1,
            (true, false) => self.unsafe_deployed += 1,
        }
    }
}

fn trajectory_left_envelope(record: &EpisodeRecord, world: &World) -> bool {
    let env = world.envelope();
    record.ever_exited
        || !env.contains(&record.final_state.position)
        || record.trajectory.iter().any(|p| !env.contains(&p.state.position))
}

pub fn confusion(records: &[EpisodeRecord], world: &World) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for r in records {
        cm.record(r.deployed, !trajectory_left_envelope(r, world));
    }
    cm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SocPoint {
    pub alert_rate: f64,
    pub safe_rate: f64,
    pub parameter: f64,
    pub episodes: usize,
}

impl SocPoint {
    /// True if `self` is at least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &SocPoint) -> bool {
        self.alert_rate <= other.alert_rate
            && self.safe_rate >= other.safe_rate
            && (self.alert_rate < other.alert_rate || self.safe_rate > other.safe_rate)
    }
}

pub fn soc_point(cm: &ConfusionMatrix, parameter: f64) -> Result<SocPoint> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(SocPoint {
        alert_rate: cm.deployed() as f64 / n as f64,
        safe_rate: cm.safe() as f64 / n as f64,
        parameter,
        episodes: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub family: String,
    pub confusion: ConfusionMatrix,
    pub soc: SocPoint,
}

pub fn evaluate_policy(policy: &MetaPolicy, world: &World, seeds: &[u64], parameter: f64) -> Result<SweepPoint> {
    let records = run_batch_with(policy, world, seeds, false);
    let cm = confusion(&records, world);
    let family = match policy {
        MetaPolicy::Nominal => "nominal",
        MetaPolicy::Baseline { .. } => "baseline",
        MetaPolicy::Learned { .. } => "learned",
    };
    Ok(SweepPoint { family: family.into(), confusion: cm, soc: soc_point(&cm, parameter)? })
}

pub fn sweep_baseline(world: &World, deltas: &[f64], seeds: &[u64]) -> Result<Vec<SweepPoint>> {
    if deltas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("baseline deltas must be sorted ascending".into()));
    }
    if seeds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    deltas
        .iter()
        .map(|&delta| evaluate_policy(&MetaPolicy::Baseline { delta }, world, seeds, delta))
        .collect()
}

/// Default baseline grid: {1, 2, 4, 8, 16} m scaled by 0.3 to the demo
/// corridor, whose near fence is 6 m off the path.
pub const DEFAULT_BASELINE_DELTAS: [f64; 5] = [0.3, 0.6, 1.2, 2.4, 4.8];

/// Default alert penalties, a sqrt(2) ladder over the range where the learned
/// switch neither always nor never deploys on the demo scenario.
pub const DEFAULT_ALERT_PENALTIES: [f64; 5] = [0.1, 0.14, 0.2, 0.28, 0.4];

/// How a learned policy is produced: a baseline batch for the warm start,
/// then online training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct TrainingPlan {
    pub warm_start_delta: f64,
    pub warm_start_episodes: usize,
    pub learn: LearnConfig,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        TrainingPlan { warm_start_delta: 1.2, warm_start_episodes: 200, learn: LearnConfig::default() }
    }
}

impl TrainingPlan {
    /// Seeds consumed when trained from `start`.
    pub fn seed_span(&self, start: u64) -> SeedRange {
        SeedRange::new(start, self.warm_start_episodes.max(self.learn.episodes) as u64)
    }
}

/// Baseline batch on seeds `start..start + warm_start_episodes`, then a warm
/// start from zero weights.
pub fn warm_start_from_baseline(world: &World, plan: &TrainingPlan, start: u64) -> Result<WeightMatrix> {
    let seeds = SeedRange::new(start, plan.warm_start_episodes as u64).seeds();
    let records = run_batch(&MetaPolicy::Baseline { delta: plan.warm_start_delta }, world, &seeds);
    warm_start(&records, &WeightMatrix::zeros(), &plan.learn, world)
}

/// Warm start followed by online training, both starting at seed `start`.
pub fn train_policy(world: &World, plan: &TrainingPlan, start: u64) -> Result<(WeightMatrix, TrainingLog)> {
    let theta0 = if plan.warm_start_episodes > 0 {
        warm_start_from_baseline(world, plan, start)?
    } else {
        WeightMatrix::zeros()
    };
    let cfg = LearnConfig { seed: start, ..plan.learn };
    train(world, &cfg, &theta0)
}

#[derive(Debug, Clone)]
pub struct LearnedSweepPoint {
    pub point: SweepPoint,
    pub weights: WeightMatrix,
    pub log: TrainingLog,
}

/// Trains one policy per alert penalty on `seeds_train` and evaluates each
/// greedily on `seeds_eval`.
pub fn sweep_learned(
    world: &World,
    alert_penalties: &[f64],
    plan: &TrainingPlan,
    seeds_train: SeedRange,
    seeds_eval: SeedRange,
) -> Result<Vec<LearnedSweepPoint>> {
    let span = plan.seed_span(seeds_train.start);
    if span.overlaps(&seeds_eval) || seeds_train.overlaps(&seeds_eval) {
        return Err(Error::InvalidConfig(format!(
            "training seeds {span} overlap evaluation seeds {seeds_eval}"
        )));
    }
    let eval_seeds = seeds_eval.seeds();
    alert_penalties
        .par_iter()
        .map(|&alpha| {
            let w = World::new(world.scenario.with_alert_penalty(alpha))?;
            let (weights, log) = train_policy(&w, plan, seeds_train.start)?;
            let policy = MetaPolicy::Learned { weights, label: format!("alert_penalty={alpha}") };
            // evaluation reuses the original world; only the reward differs and it does not affect the dynamics
            let point = evaluate_policy(&policy, world, &eval_seeds, alpha)?;
            Ok(LearnedSweepPoint { point, weights, log })
        })
        .collect()
}

pub fn nominal_exit_rate(world: &World, seeds: &[u64]) -> f64 {
    let records = run_batch_with(&MetaPolicy::Nominal, world, seeds, false);
    records.iter().filter(|r| r.ever_exited).count() as f64 / records.len().max(1) as f64
}

pub const CALIBRATION_TOLERANCE: f64 = 0.02;
pub const CALIBRATION_MAX_STEPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub wind_sigma: f64,
    pub exit_rate: f64,
    pub evaluations: usize,
}

/// Bisection on `wind_sigma` (gusts scaled along) until the nominal-only exit
/// rate over `seeds` is within [`CALIBRATION_TOLERANCE`] of `target`.
pub fn calibrate_wind(world: &World, target: f64, seeds: &[u64]) -> Result<Calibration> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::InvalidConfig(format!("target exit rate must lie in (0, 1), got {target}")));
    }
    if seeds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let base = &world.scenario;
    let rate_at = |sigma: f64| -> Result<f64> {
        let w = World::new(base.with_wind_sigma(sigma))?;
        Ok(nominal_exit_rate(&w, seeds))
    };
    let mut evaluations = 0;
    let mut lo = 0.0;
    let mut hi = if base.sim.wind_sigma > 0.0 { base.sim.wind_sigma } else { 1.0 };
    let mut hi_rate = rate_at(hi)?;
    evaluations += 1;
    while hi_rate < target {
        if (hi_rate - target).abs() <= CALIBRATION_TOLERANCE {
            return Ok(Calibration { wind_sigma: hi, exit_rate: hi_rate, evaluations });
        }
        if evaluations >= CALIBRATION_MAX_STEPS {
            return Err(Error::Calibration(format!(
                "could not bracket exit rate {target} (reached {hi_rate} at wind_sigma {hi})"
            )));
        }
        lo = hi;
        hi *= 2.0;
        hi_rate = rate_at(hi)?;
        evaluations += 1;
    }
    if (hi_rate - target).abs() <= CALIBRATION_TOLERANCE {
        return Ok(Calibration { wind_sigma: hi, exit_rate: hi_rate, evaluations });
    }
    while evaluations < CALIBRATION_MAX_STEPS {
        let mid = 0.5 * (lo + hi);
        let rate = rate_at(mid)?;
        evaluations += 1;
        if (rate - target).abs() <= CALIBRATION_TOLERANCE {
            return Ok(Calibration { wind_sigma: mid, exit_rate: rate, evaluations });
        }
        if rate < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Calibration(format!(
        "no wind_sigma within {CALIBRATION_TOLERANCE} of {target} after {CALIBRATION_MAX_STEPS} steps (bracket [{lo}, {hi}])"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn cm(snd: usize, und: usize, sd: usize, ud: usize) -> ConfusionMatrix {
        ConfusionMatrix { safe_not_deployed: snd, unsafe_not_deployed: und, safe_deployed: sd, unsafe_deployed: ud }
    }

    #[test]
    fn soc_point_arithmetic() {
        let p = soc_point(&cm(10, 0, 0, 0), 1.0).unwrap();
        assert_eq!((p.alert_rate, p.safe_rate), (0.0, 1.0));
        let p = soc_point(&cm(0, 0, 10, 0), 1.0).unwrap();
        assert_eq!((p.alert_rate, p.safe_rate), (1.0, 1.0));
        let p = soc_point(&cm(70, 5, 20, 5), 0.3).unwrap();
        assert!((p.alert_rate - 0.25).abs() < 1e-12);
        assert!((p.safe_rate - 0.90).abs() < 1e-12);
        assert!(matches!(soc_point(&cm(0, 0, 0, 0), 0.0), Err(Error::EmptyBatch)));
    }

    #[test]
    fn dominance_requires_one_strict() {
        let a = SocPoint { alert_rate: 0.2, safe_rate: 0.9, parameter: 0.0, episodes: 1 };
        let b = SocPoint { alert_rate: 0.3, safe_rate: 0.9, ..a };
        assert!(a.dominates(&b));
        assert!(!a.dominates(&a));
        assert!(!b.dominates(&a));
    }

    #[test]
    fn seed_range_parsing() {
        let r: SeedRange = "10..15".parse().unwrap();
        assert_eq!(r.seeds(), vec![10, 11, 12, 13, 14]);
        assert!(r.overlaps(&"14..20".parse().unwrap()));
        assert!(!r.overlaps(&"15..20".parse().unwrap()));
        assert!("5..5".parse::<SeedRange>().is_err());
        assert_eq!("7".parse::<SeedRange>().unwrap().len(), 1);
    }

    #[test]
    fn hand_built_quadrants() {
        let world = World::new(Scenario::demo()).unwrap();
        let template = run_episode(&MetaPolicy::Nominal, &world, 0, false);
        let outside = world.envelope().max_corner + Vec3::new(1.0, 1.0, 1.0);
        let mut records = Vec::new();
        for (deployed, exited) in [(false, false), (false, true), (true, false), (true, true)] {
            let mut r = template.clone();
            r.deployed = deployed;
            r.deploy_step = deployed.then_some(3);
            r.ever_exited = exited;
            if exited {
                r.final_state.position = outside;
            } else {
                r.final_state.position = world.scenario.mission.start();
            }
            records.push(r);
        }
        assert_eq!(confusion(&records, &world), cm(1, 1, 1, 1));
    }

    #[test]
    fn unsorted_deltas_rejected() {
        let world = World::new(Scenario::demo()).unwrap();
        assert!(sweep_baseline(&world, &[2.0, 1.0], &[0]).is_err());
    }

    #[test]
    fn calibration_rejects_bad_target() {
        let world = World::new(Scenario::demo()).unwrap();
        assert!(calibrate_wind(&world, 1.0, &[0]).is_err());
        assert!(calibrate_wind(&world, 0.0, &[0]).is_err());
    }
}
