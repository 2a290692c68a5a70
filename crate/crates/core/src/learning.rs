//! Q-learning: tabular value iteration and Q-learning (used as oracles on toy
//! MDPs), linear-approximation Q-learning for the meta-controller, epsilon-greedy
//! exploration and the batch warm start from baseline episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::episode::World;
use crate::error::{Error, Result};
use crate::evaluation::EpisodeRecord;
use crate::policy::{
    extract_features, greedy_action, q_values, Action, FeatureVector, WeightMatrix, NUM_FEATURES,
};
use crate::sim::Termination;

/// Exploration never decays below this (unless `epsilon0` itself is lower).
pub const EPSILON_FLOOR: f64 = 0.01;

/// Stream of the per-run ChaCha generator used for exploration draws; stream 0
/// of an episode seed is reserved for its wind field.
const EXPLORATION_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub phi_s: FeatureVector,
    pub action: Action,
    pub reward: f64,
    pub phi_next: FeatureVector,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub learning_rate: f64,
    pub epsilon0: f64,
    /// Per-episode multiplicative decay of epsilon.
    pub epsilon_decay: f64,
    pub episodes: usize,
    pub warm_start_passes: usize,
    /// Base seed: training episode `k` flies the wind of seed `seed + k`.
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            learning_rate: 3e-4,
            epsilon0: 0.1,
            epsilon_decay: 0.99,
            episodes: 20_000,
            warm_start_passes: 5,
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return Err(Error::InvalidConfig(format!("epsilon0 must lie in [0, 1], got {}", self.epsilon0)));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon_decay must lie in (0, 1], got {}",
                self.epsilon_decay
            )));
        }
        Ok(())
    }

    pub fn epsilon_for_episode(&self, k: usize) -> f64 {
        let decayed = self.epsilon0 * self.epsilon_decay.powi(k.min(i32::MAX as usize) as i32);
        decayed.max(EPSILON_FLOOR.min(self.epsilon0))
    }

    /// Warns when `learning_rate * |phi|^2 >= 1`, where updates can overshoot.
    pub fn check_step_size(&self, max_feature_norm_sq: f64) -> bool {
        let ok = self.learning_rate * max_feature_norm_sq < 1.0;
        if !ok {
            log::warn!(
                "learning rate {} times max squared feature norm {:.3} is >= 1; updates may overshoot",
                self.learning_rate,
                max_feature_norm_sq
            );
        }
        ok
    }
}

// ---------------------------------------------------------------------------
// Tabular machinery

/// Small finite MDP with expected rewards `R(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transitions[(s * n_actions + a) * n_states + s']`
    pub transitions: Vec<f64>,
    /// `rewards[s * n_actions + a]`
    pub rewards: Vec<f64>,
    pub discount: f64,
}

impl ToyMdp {
    pub fn new(n_states: usize, n_actions: usize, transitions: Vec<f64>, rewards: Vec<f64>, discount: f64) -> Result<Self> {
        let mdp = ToyMdp { n_states, n_actions, transitions, rewards, discount };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(Error::InvalidConfig("toy MDP needs states and actions".into()));
        }
        if self.transitions.len() != ns * na * ns || self.rewards.len() != ns * na {
            return Err(Error::InvalidConfig("toy MDP tensor shapes do not match".into()));
        }
        if !(self.discount >= 0.0 && self.discount < 1.0) {
            return Err(Error::InvalidConfig(format!("discount must lie in [0, 1), got {}", self.discount)));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.row(s, a);
                if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidConfig(format!("transition row ({s}, {a}) is not a distribution")));
                }
            }
        }
        Ok(())
    }

    /// Random MDP: Dirichlet(1) transition rows, rewards uniform in [0, 1).
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, discount: f64, rng: &mut R) -> Self {
        let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let raw: Vec<f64> = (0..n_states).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let total: f64 = raw.iter().sum();
            let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
            // push rounding residue into the largest entry so the row sums to 1
            let residue = 1.0 - row.iter().sum::<f64>();
            let imax = (0..n_states).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            row[imax] += residue;
            transitions.extend(row);
        }
        let rewards = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        ToyMdp { n_states, n_actions, transitions, rewards, discount }
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (next, p) in self.row(s, a).iter().enumerate() {
            acc += p;
            if u < acc {
                return next;
            }
        }
        self.n_states - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable { n_states, n_actions, values: vec![0.0; n_states * n_actions] }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn max_value(&self, s: usize) -> f64 {
        (0..self.n_actions).map(|a| self.get(s, a)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest-index action wins ties.
    pub fn greedy(&self, s: usize) -> usize {
        let mut best = 0;
        for a in 1..self.n_actions {
            if self.get(s, a) > self.get(s, best) {
                best = a;
            }
        }
        best
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn bellman_backup(mdp: &ToyMdp, q: &QTable) -> QTable {
    let mut out = QTable::zeros(mdp.n_states, mdp.n_actions);
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let future: f64 = mdp.row(s, a).iter().enumerate().map(|(n, p)| p * q.max_value(n)).sum();
            out.set(s, a, mdp.reward(s, a) + mdp.discount * future);
        }
    }
    out
}

/// Iterates the Bellman optimality operator until the result is within `tol`
/// (sup norm) of its fixed point.
pub fn value_iteration(mdp: &ToyMdp, tol: f64) -> QTable {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    // contraction: |Q_{k+1} - Q*| <= gamma / (1 - gamma) * |Q_{k+1} - Q_k|
    let stop = if mdp.discount > 0.0 { tol * (1.0 - mdp.discount) / mdp.discount } else { f64::INFINITY };
    loop {
        let next = bellman_backup(mdp, &q);
        let change = next.sup_distance(&q);
        q = next;
        if change <= stop {
            return q;
        }
    }
}

/// One Q-learning step. `s_next = None` marks a terminal transition (no bootstrap).
pub fn tabular_q_update(q: &mut QTable, s: usize, a: usize, r: f64, s_next: Option<usize>, lr: f64, discount: f64) {
    let bootstrap = s_next.map_or(0.0, |n| q.max_value(n));
    let old = q.get(s, a);
    q.set(s, a, old + lr * (r + discount * bootstrap - old));
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `1 / n` for the n-th visit of a state-action pair.
    InverseVisits,
    /// `1 / (1 + (1 - gamma) n)`: still `O(1/n)`, without the slow
    /// `n^-(1-gamma)` forgetting of the initial table that plain `1/n` has.
    RescaledLinear,
}

impl StepSchedule {
    fn rate(self, visits: u64, discount: f64) -> f64 {
        match self {
            StepSchedule::Constant(lr) => lr,
            StepSchedule::InverseVisits => 1.0 / visits as f64,
            StepSchedule::RescaledLinear => 1.0 / (1.0 + (1.0 - discount) * visits as f64),
        }
    }
}

/// Runs Q-learning on a single continuing trajectory of the toy MDP under an
/// epsilon-greedy behaviour policy.
pub fn tabular_q_learning<R: Rng + ?Sized>(
    mdp: &ToyMdp,
    steps: usize,
    epsilon: f64,
    schedule: StepSchedule,
    rng: &mut R,
) -> QTable {
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    let mut visits = vec![0u64; mdp.n_states * mdp.n_actions];
    let mut s = 0;
    for _ in 0..steps {
        let a = if rng.random::<f64>() < epsilon { rng.random_range(0..mdp.n_actions) } else { q.greedy(s) };
        let next = mdp.sample_next(s, a, rng);
        let idx = s * mdp.n_actions + a;
        visits[idx] += 1;
        let lr = schedule.rate(visits[idx], mdp.discount);
        tabular_q_update(&mut q, s, a, mdp.reward(s, a), Some(next), lr, mdp.discount);
        s = next;
    }
    q
}

// ---------------------------------------------------------------------------
// Linear approximation

/// TD error of a transition under `theta`.
pub fn td_error(theta: &WeightMatrix, t: &Transition, discount: f64) -> f64 {
    let bootstrap = if t.terminal {
        0.0
    } else {
        let [qc, qd] = q_values(theta, &t.phi_next);
        qc.max(qd)
    };
    let q_sa = q_values(theta, &t.phi_s)[t.action.index()];
    t.reward + discount * bootstrap - q_sa
}

/// Semi-gradient Q-learning step on the taken action's column only.
pub fn linear_q_update_in_place(theta: &mut WeightMatrix, t: &Transition, lr: f64, discount: f64) {
    let delta = td_error(theta, t, discount);
    let a = t.action.index();
    for (row, phi) in theta.theta.iter_mut().zip(t.phi_s.0.iter()) {
        row[a] += lr * delta * phi;
    }
}

pub fn linear_q_update(theta: &WeightMatrix, t: &Transition, lr: f64, discount: f64) -> WeightMatrix {
    let mut out = *theta;
    linear_q_update_in_place(&mut out, t, lr, discount);
    out
}

pub fn epsilon_greedy<R: Rng + ?Sized>(theta: &WeightMatrix, phi: &FeatureVector, epsilon: f64, rng: &mut R) -> Action {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Action::from_index(rng.random_range(0..2))
    } else {
        greedy_action(theta, phi)
    }
}

/// Transitions `(phi_s, a, r, phi_next)` replayed from a recorded episode.
pub fn episode_transitions(record: &EpisodeRecord, world: &World) -> Vec<Transition> {
    let env = world.envelope();
    let rows = &record.trajectory;
    let phi_of = |s, w| extract_features(s, env, w, &world.scales);
    let final_phi = phi_of(&record.final_state, &record.final_wind);
    let ends_in_absorbing = matches!(
        record.outcome,
        Termination::Exited | Termination::Completed | Termination::Grounded
    );
    rows.iter()
        .enumerate()
        .map(|(k, row)| {
            let is_last = k + 1 == rows.len();
            let phi_next = if is_last { final_phi } else { phi_of(&rows[k + 1].state, &rows[k + 1].wind) };
            Transition {
                phi_s: phi_of(&row.state, &row.wind),
                action: row.action,
                reward: row.reward,
                phi_next,
                terminal: is_last && ends_in_absorbing,
            }
        })
        .collect()
}

/// Batch warm start: replays every transition of `records`, in order,
/// `cfg.warm_start_passes` times through the linear update.
pub fn warm_start(records: &[EpisodeRecord], theta0: &WeightMatrix, cfg: &LearnConfig, world: &World) -> Result<WeightMatrix> {
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let discount = world.scenario.reward.discount;
    let batch: Vec<Transition> = records.iter().flat_map(|r| episode_transitions(r, world)).collect();
    let max_norm = batch.iter().map(|t| t.phi_s.norm_squared()).fold(0.0, f64::max);
    cfg.check_step_size(max_norm);
    let mut theta = *theta0;
    for _ in 0..cfg.warm_start_passes {
        for t in &batch {
            linear_q_update_in_place(&mut theta, t, cfg.learning_rate, discount);
        }
    }
    Ok(theta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingRow {
    pub episode: usize,
    pub seed: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub outcome: Termination,
    pub deploy_step: Option<usize>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<TrainingRow>,
}

impl TrainingLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Fraction of episodes whose deployment happened within the first `steps` steps.
    pub fn early_deploy_fraction(&self, steps: usize) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let early = self.rows.iter().filter(|r| r.deploy_step.is_some_and(|k| k < steps)).count();
        early as f64 / self.rows.len() as f64
    }
}

/// Online linear Q-learning from `init`, one episode per seed
/// `cfg.seed .. cfg.seed + cfg.episodes`.
pub fn train(world: &World, cfg: &LearnConfig, init: &WeightMatrix) -> Result<(WeightMatrix, TrainingLog)> {
    cfg.validate()?;
    let discount = world.scenario.reward.discount;
    let mut theta = *init;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(EXPLORATION_STREAM);
    let mut log = TrainingLog::default();
    let mut max_norm: f64 = 0.0;
    let mut warned = false;

    for k in 0..cfg.episodes {
        let seed = cfg.seed.wrapping_add(k as u64);
        let epsilon = cfg.epsilon_for_episode(k);
        let mut ep = world.episode(seed);
        let mut phi = ep.features();
        let mut episode_return = 0.0;
        let mut deploy_step = None;
        while !ep.is_done() {
            let chosen = if ep.state().deployed {
                Action::Deploy
            } else {
                epsilon_greedy(&theta, &phi, epsilon, &mut rng)
            };
            let was_deployed = ep.state().deployed;
            let step_index = ep.steps();
            let res = ep.advance(chosen);
            if res.action == Action::Deploy && !was_deployed {
                deploy_step = Some(step_index);
            }
            let phi_next = ep.features();
            let terminal = matches!(res.verdict, Termination::Exited | Termination::Completed | Termination::Grounded);
            let t = Transition { phi_s: phi, action: res.action, reward: res.reward, phi_next, terminal };
            max_norm = max_norm.max(phi.norm_squared());
            linear_q_update_in_place(&mut theta, &t, cfg.learning_rate, discount);
            episode_return += res.reward;
            phi = phi_next;
        }
        if !warned && !cfg.check_step_size(max_norm) {
            warned = true;
        }
        if !theta.is_finite() {
            return Err(Error::InvalidWeights(format!("weights diverged in training episode {k}")));
        }
        log.rows.push(TrainingRow { episode: k, seed, episode_return, outcome: ep.verdict(), deploy_step, epsilon });
    }
    Ok((theta, log))
}

/// Random initial weights, i.i.d. uniform in `[-scale, scale]`.
pub fn random_weights<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> WeightMatrix {
    let flat: Vec<f64> = (0..NUM_FEATURES * 2).map(|_| rng.random_range(-scale..=scale)).collect();
    WeightMatrix::from_flat(&flat).expect("finite weights")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::DEPLOYED_FEATURE;

    fn phi(values: [f64; NUM_FEATURES]) -> FeatureVector {
        FeatureVector(values)
    }

    #[test]
    fn value_iteration_geometric_series() {
        let mdp = ToyMdp::new(1, 1, vec![1.0], vec![1.0], 0.5).unwrap();
        let q = value_iteration(&mdp, 1e-12);
        assert!((q.get(0, 0) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn value_iteration_zero_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mdp = ToyMdp::random(4, 2, 0.9, &mut rng);
        mdp.rewards.iter_mut().for_each(|r| *r = 0.0);
        let q = value_iteration(&mdp, 1e-9);
        assert!(q.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn toy_mdp_rejects_bad_rows() {
        assert!(ToyMdp::new(2, 1, vec![0.5, 0.6, 1.0, 0.0], vec![0.0, 0.0], 0.9).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(ToyMdp::random(5, 2, 0.9, &mut rng).validate().is_ok());
    }

    #[test]
    fn tabular_update_cases() {
        let mut q = QTable::zeros(2, 2);
        q.set(1, 0, 3.0);
        let before = q.clone();
        tabular_q_update(&mut q, 0, 1, 1.0, Some(1), 0.0, 0.9);
        assert_eq!(q, before);

        let mut q = QTable::zeros(2, 2);
        tabular_q_update(&mut q, 0, 0, 1.0, Some(1), 1.0, 0.0);
        assert_eq!(q.get(0, 0), 1.0);

        // hand-expanded: Q += lr (r + g max Q(s') - Q)
        let mut q = QTable::zeros(3, 2);
        q.set(0, 1, 0.4);
        q.set(2, 0, -0.2);
        q.set(2, 1, 0.7);
        tabular_q_update(&mut q, 0, 1, 0.25, Some(2), 0.3, 0.8);
        let expected = 0.4 + 0.3 * (0.25 + 0.8 * 0.7 - 0.4);
        assert!((q.get(0, 1) - expected).abs() < 1e-12);

        let mut q = QTable::zeros(3, 2);
        q.set(2, 1, 100.0);
        tabular_q_update(&mut q, 0, 0, -1.0, None, 0.5, 0.9);
        assert_eq!(q.get(0, 0), -0.5);
    }

    #[test]
    fn linear_update_zero_lr_and_regression_step() {
        let t = Transition {
            phi_s: phi([0.5, -1.0, 2.0, 0.0, 0.3, 0.0, 1.0, -0.5, 0.0]),
            action: Action::Deploy,
            reward: -1.0,
            phi_next: phi([1.0; NUM_FEATURES]),
            terminal: false,
        };
        let theta = WeightMatrix::from_flat(&(0..18).map(|i| i as f64 * 0.1).collect::<Vec<_>>()).unwrap();
        assert_eq!(linear_q_update(&theta, &t, 0.0, 0.9), theta);

        let lr = 0.1;
        let out = linear_q_update(&WeightMatrix::zeros(), &t, lr, 0.0);
        for i in 0..NUM_FEATURES {
            assert!((out.theta[i][1] - (-lr * t.phi_s.0[i])).abs() < 1e-15);
            assert_eq!(out.theta[i][0], 0.0);
        }
    }

    #[test]
    fn terminal_transition_ignores_next_features() {
        let mut t = Transition {
            phi_s: phi([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            action: Action::Continue,
            reward: -1.0,
            phi_next: phi([5.0; NUM_FEATURES]),
            terminal: true,
        };
        let theta = WeightMatrix::from_flat(&[0.7; 18]).unwrap();
        let a = linear_q_update(&theta, &t, 0.1, 0.9);
        t.phi_next = phi([-40.0; NUM_FEATURES]);
        let b = linear_q_update(&theta, &t, 0.1, 0.9);
        assert_eq!(a, b);
    }

    #[test]
    fn epsilon_extremes() {
        let mut theta = WeightMatrix::zeros();
        theta.theta[0] = [0.0, 1.0];
        let f = phi([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert!((0..1000).all(|_| epsilon_greedy(&theta, &f, 0.0, &mut rng) == Action::Deploy));
        let deploys = (0..10_000).filter(|_| epsilon_greedy(&theta, &f, 1.0, &mut rng) == Action::Deploy).count();
        assert!((deploys as f64 / 10_000.0 - 0.5).abs() < 0.03, "{deploys}");
    }

    #[test]
    fn epsilon_greedy_seeded_sequence_repeats() {
        let theta = WeightMatrix::zeros();
        let f = phi([0.0; NUM_FEATURES]);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| epsilon_greedy(&theta, &f, 0.5, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
    }

    #[test]
    fn epsilon_schedule_floor() {
        let cfg = LearnConfig { epsilon0: 0.1, epsilon_decay: 0.5, ..LearnConfig::default() };
        assert_eq!(cfg.epsilon_for_episode(0), 0.1);
        assert_eq!(cfg.epsilon_for_episode(1), 0.05);
        assert_eq!(cfg.epsilon_for_episode(50), EPSILON_FLOOR);
        let tiny = LearnConfig { epsilon0: 0.001, ..cfg };
        assert_eq!(tiny.epsilon_for_episode(50), 0.001);
    }

    #[test]
    fn indicator_only_state() {
        let mut f = [0.0; NUM_FEATURES];
        f[DEPLOYED_FEATURE] = 1.0;
        let t = Transition { phi_s: phi(f), action: Action::Deploy, reward: -0.5, phi_next: phi(f), terminal: true };
        let out = linear_q_update(&WeightMatrix::zeros(), &t, 1.0, 0.9);
        assert_eq!(out.theta[DEPLOYED_FEATURE][1], -0.5);
    }
}
