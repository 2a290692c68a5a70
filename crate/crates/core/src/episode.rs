//! Closed-loop episode stepping: meta-action, controller composition,
//! dynamics, reward and termination.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{Envelope, Path, Vec3};
use crate::policy::{compose_controller, extract_features, reward, Action, FeatureScales, FeatureVector};
use crate::scenario::Scenario;
use crate::sim::{episode_terminated, sample_wind_field, step, Termination, VehicleState, WindField};

/// A scenario with its derived path and feature scales, ready for episodes.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub path: Path,
    pub scales: FeatureScales,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let path = scenario.path()?;
        let scales = scenario.scales();
        Ok(World { scenario, path, scales })
    }

    pub fn envelope(&self) -> &Envelope {
        &self.scenario.envelope
    }

    /// Wind realization for an episode seed. Depends on nothing but the seed
    /// and the simulator config.
    pub fn wind_for_seed(&self, seed: u64) -> WindField {
        sample_wind_field(&mut ChaCha8Rng::seed_from_u64(seed), &self.scenario.sim)
    }

    pub fn episode(&self, seed: u64) -> Episode<'_> {
        Episode::new(self, seed)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepResult {
    /// The action actually applied (deploy once latched).
    pub action: Action,
    pub reward: f64,
    pub verdict: Termination,
}

#[derive(Debug, Clone)]
pub struct Episode<'w> {
    world: &'w World,
    wind: WindField,
    state: VehicleState,
    steps: usize,
    verdict: Termination,
    ever_exited: bool,
}

impl<'w> Episode<'w> {
    pub fn new(world: &'w World, seed: u64) -> Self {
        Episode {
            world,
            wind: world.wind_for_seed(seed),
            state: VehicleState::at_rest(world.scenario.mission.start()),
            steps: 0,
            verdict: Termination::Running,
            ever_exited: false,
        }
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn wind_field(&self) -> &WindField {
        &self.wind
    }

    pub fn wind_now(&self) -> Vec3 {
        self.wind.wind_at(&self.state.position, self.state.time)
    }

    pub fn features(&self) -> FeatureVector {
        extract_features(&self.state, self.world.envelope(), &self.wind_now(), &self.world.scales)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn verdict(&self) -> Termination {
        self.verdict
    }

    pub fn is_done(&self) -> bool {
        self.verdict.is_terminal()
    }

    pub fn ever_exited(&self) -> bool {
        self.ever_exited
    }

    /// Applies `meta` for one step. A deployed vehicle stays deployed whatever
    /// `meta` says.
    pub fn advance(&mut self, meta: Action) -> StepResult {
        debug_assert!(!self.is_done(), "advance on a finished episode");
        let sc = &self.world.scenario;
        let action = if self.state.deployed { Action::Deploy } else { meta };
        let wind = self.wind_now();
        let u = compose_controller(action, &self.state, &self.world.path, &wind, &sc.sim);
        let next = step(&self.state, &u, &self.wind, &sc.sim);
        let r = reward(&self.state, action, &next, &sc.envelope, &sc.reward);
        self.state = next;
        self.steps += 1;
        self.verdict = episode_terminated(&self.state, &sc.envelope, &sc.mission, self.steps, &sc.sim);
        self.ever_exited |= !sc.envelope.contains(&self.state.position);
        StepResult { action, reward: r, verdict: self.verdict }
    }
}
