//! Meta-controller: feature extraction, linear Q values, the learned and
//! distance-threshold switches, the per-step reward, and composition with the
//! nominal and recovery controllers.

use std::fmt;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Envelope, Path, Vec3};
use crate::sim::{nominal_control, recovery_control, ControlInput, SimConfig, VehicleState};

pub const NUM_FEATURES: usize = 9;
pub const NUM_ACTIONS: usize = 2;
/// Index of the deployment indicator within a [`FeatureVector`].
pub const DEPLOYED_FEATURE: usize = 8;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "fence_dist_x",
    "fence_dist_y",
    "fence_dist_z",
    "vel_x",
    "vel_y",
    "vel_z",
    "wind_x",
    "wind_y",
    "deployed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Continue = 0,
    Deploy = 1,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Continue, Action::Deploy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        match i {
            0 => Action::Continue,
            _ => Action::Deploy,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Continue => "continue",
            Action::Deploy => "deploy",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Divisors applied to the eight continuous features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureScales(pub [f64; 8]);

impl FeatureScales {
    pub fn unit() -> Self {
        FeatureScales([1.0; 8])
    }

    /// Envelope half-extent for the fence distances, cruise speed for the
    /// velocities, three wind sigmas for the wind.
    pub fn defaults_for(env: &Envelope, sim: &SimConfig) -> Self {
        let h = env.half_extents();
        let wind = (3.0 * sim.wind_sigma).max(1e-6);
        FeatureScales([h.x, h.y, h.z, sim.cruise_speed, sim.cruise_speed, sim.cruise_speed, wind, wind])
    }

    pub fn violations(&self) -> Vec<(String, String)> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, s)| !(**s > 0.0 && s.is_finite()))
            .map(|(i, s)| (format!("feature_scales[{i}]"), format!("must be > 0, got {s}")))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn deployed(&self) -> bool {
        self.0[DEPLOYED_FEATURE] == 1.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }
}

pub fn extract_features(s: &VehicleState, env: &Envelope, wind_now: &Vec3, scales: &FeatureScales) -> FeatureVector {
    let d = env.per_axis_boundary_distances(&s.position);
    let k = &scales.0;
    FeatureVector([
        d.x / k[0],
        d.y / k[1],
        d.z / k[2],
        s.velocity.x / k[3],
        s.velocity.y / k[4],
        s.velocity.z / k[5],
        wind_now.x / k[6],
        wind_now.y / k[7],
        if s.deployed { 1.0 } else { 0.0 },
    ])
}

/// Linear Q parameters, one column per action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMatrix {
    // theta[feature][action]
    pub theta: [[f64; NUM_ACTIONS]; NUM_FEATURES],
}

pub const WEIGHTS_LAYOUT: &str = "flat feature-major 9x2: weights[2*i + a] is the weight of feature i \
(fence_dist_x, fence_dist_y, fence_dist_z, vel_x, vel_y, vel_z, wind_x, wind_y, deployed) \
for action a (0 = continue, 1 = deploy)";

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    header: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario_hash: Option<String>,
    weights: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros() -> Self {
        WeightMatrix { theta: [[0.0; NUM_ACTIONS]; NUM_FEATURES] }
    }

    pub fn column(&self, a: Action) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|i| self.theta[i][a.index()])
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = *self;
        out.theta.iter_mut().flatten().for_each(|w| *w *= c);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().flatten().all(|w| w.is_finite())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.theta.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != NUM_FEATURES * NUM_ACTIONS {
            return Err(Error::InvalidWeights(format!(
                "expected {} values, got {}",
                NUM_FEATURES * NUM_ACTIONS,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidWeights("non-finite weight".into()));
        }
        let mut m = WeightMatrix::zeros();
        for (i, row) in m.theta.iter_mut().enumerate() {
            row.copy_from_slice(&values[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS]);
        }
        Ok(m)
    }

    pub fn to_json(&self, scenario_hash: Option<&str>) -> String {
        let file = WeightsFile {
            header: WEIGHTS_LAYOUT.to_string(),
            scenario_hash: scenario_hash.map(str::to_string),
            weights: self.to_flat(),
        };
        serde_json::to_string_pretty(&file).expect("weights serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightsFile = serde_json::from_str(text)?;
        Self::from_flat(&file.weights)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &FsPath, scenario_hash: Option<&str>) -> Result<()> {
        std::fs::write(path, self.to_json(scenario_hash) + "\n")?;
        Ok(())
    }
}

pub fn q_values(theta: &WeightMatrix, phi: &FeatureVector) -> [f64; NUM_ACTIONS] {
    let mut q = [0.0; NUM_ACTIONS];
    for (row, x) in theta.theta.iter().zip(phi.0.iter()) {
        for a in 0..NUM_ACTIONS {
            q[a] += row[a] * x;
        }
    }
    q
}

/// Argmax over actions; an exact tie resolves to `Continue`.
pub fn greedy_action(theta: &WeightMatrix, phi: &FeatureVector) -> Action {
    let [qc, qd] = q_values(theta, phi);
    if qd > qc {
        Action::Deploy
    } else {
        Action::Continue
    }
}

pub fn rtsa_action(
    theta: &WeightMatrix,
    s: &VehicleState,
    env: &Envelope,
    wind_now: &Vec3,
    scales: &FeatureScales,
) -> Action {
    if s.deployed {
        return Action::Deploy;
    }
    greedy_action(theta, &extract_features(s, env, wind_now, scales))
}

/// Distance-threshold switch: deploy once within `delta` of the fence (inclusive).
pub fn baseline_action(s: &VehicleState, env: &Envelope, delta: f64) -> Action {
    if s.deployed || !env.contains(&s.position) || env.boundary_query(&s.position).distance <= delta {
        Action::Deploy
    } else {
        Action::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alert_penalty: f64,
    #[serde(default = "default_exit_penalty")]
    pub exit_penalty: f64,
    pub discount: f64,
}

fn default_exit_penalty() -> f64 {
    1.0
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { alert_penalty: 0.1, exit_penalty: 1.0, discount: 0.99 }
    }
}

impl RewardConfig {
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if !(self.alert_penalty > 0.0 && self.alert_penalty.is_finite()) {
            out.push(("reward.alert_penalty".into(), format!("must be > 0, got {}", self.alert_penalty)));
        }
        if self.exit_penalty != 1.0 {
            out.push(("reward.exit_penalty".into(), format!("must equal 1, got {}", self.exit_penalty)));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            out.push(("reward.discount".into(), format!("must lie in (0, 1), got {}", self.discount)));
        }
        out
    }
}

/// Exit costs `exit_penalty`; otherwise the switch is charged `alert_penalty`
/// once, on the step where it is thrown.
pub fn reward(s: &VehicleState, a: Action, s_next: &VehicleState, env: &Envelope, rc: &RewardConfig) -> f64 {
    if !env.contains(&s_next.position) {
        -rc.exit_penalty
    } else if a == Action::Deploy && !s.deployed {
        -rc.alert_penalty
    } else {
        0.0
    }
}

pub fn compose_controller(meta: Action, s: &VehicleState, path: &Path, wind: &Vec3, cfg: &SimConfig) -> ControlInput {
    if meta == Action::Deploy || s.deployed {
        recovery_control(s)
    } else {
        nominal_control(s, path, wind, cfg)
    }
}

/// The three policy families compared on an SOC plot.
#[derive(Debug, Clone, PartialEq)]
pub enum MetaPolicy {
    /// Never deploys.
    Nominal,
    Baseline { delta: f64 },
    Learned { weights: WeightMatrix, label: String },
}

impl MetaPolicy {
    pub fn learned(weights: WeightMatrix) -> Self {
        MetaPolicy::Learned { weights, label: "learned".into() }
    }

    pub fn decide(&self, s: &VehicleState, env: &Envelope, wind_now: &Vec3, scales: &FeatureScales) -> Action {
        match self {
            MetaPolicy::Nominal => {
                if s.deployed {
                    Action::Deploy
                } else {
                    Action::Continue
                }
            }
            MetaPolicy::Baseline { delta } => baseline_action(s, env, *delta),
            MetaPolicy::Learned { weights, .. } => rtsa_action(weights, s, env, wind_now, scales),
        }
    }

    pub fn id(&self) -> String {
        match self {
            MetaPolicy::Nominal => "nominal".into(),
            MetaPolicy::Baseline { delta } => format!("baseline:{delta}"),
            MetaPolicy::Learned { label, .. } => format!("weights:{label}"),
        }
    }

    /// Parses `nominal`, `baseline:<delta>` or `weights:<path>` (loading the file).
    pub fn parse(spec: &str) -> Result<Self> {
        if spec == "nominal" {
            return Ok(MetaPolicy::Nominal);
        }
        if let Some(d) = spec.strip_prefix("baseline:") {
            let delta: f64 = d
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad baseline threshold in policy spec '{spec}'")))?;
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::InvalidConfig(format!("baseline threshold must be > 0 in '{spec}'")));
            }
            return Ok(MetaPolicy::Baseline { delta });
        }
        if let Some(p) = spec.strip_prefix("weights:") {
            let weights = WeightMatrix::load(FsPath::new(p))
                .map_err(|e| Error::InvalidWeights(format!("{p}: {e}")))?;
            return Ok(MetaPolicy::Learned { weights, label: p.to_string() });
        }
        Err(Error::InvalidConfig(format!(
            "unknown policy spec '{spec}' (expected nominal, baseline:<delta> or weights:<path>)"
        )))
    }
}
