//! Reduced-state multirotor model, stochastic wind, and the two black-box
//! controllers the meta-policy switches between.
//!
//! The vehicle is a point mass. In nominal mode rotor thrust cancels gravity
//! and the autopilot commands an acceleration (norm-limited to `a_max`) while
//! body drag couples the vehicle to the air mass. In parachute mode the rotors
//! are off: gravity acts and drag is applied per axis on the air-relative
//! velocity (vertical by default only).

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Envelope, Mission, Path, Vec3};

pub const GRAVITY: f64 = 9.81;

/// Gust frequencies are drawn uniformly from this band (rad/s).
pub const GUST_FREQUENCY_BAND: (f64, f64) = (0.05, 0.5);

/// Gust amplitude per axis is `gust_sigma * u` with `u ~ U(0, 2)`, so the
/// mean amplitude equals `gust_sigma` and the amplitude never exceeds twice it.
pub const GUST_AMPLITUDE_SPAN: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub time: f64,
    pub deployed: bool,
}

impl VehicleState {
    pub fn at_rest(position: Vec3) -> Self {
        VehicleState { position, velocity: Vec3::zeros(), time: 0.0, deployed: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    pub commanded_acceleration: Vec3,
    pub parachute: bool,
}

/// Per-episode wind: constant horizontal base plus independent sinusoidal
/// gusts on x and y. Vertical wind is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindField {
    pub base: Vec3,
    pub gust_amplitude: Vec3,
    pub gust_frequencies: Vec3,
    pub gust_phases: Vec3,
}

impl WindField {
    pub fn calm() -> Self {
        WindField {
            base: Vec3::zeros(),
            gust_amplitude: Vec3::zeros(),
            gust_frequencies: Vec3::zeros(),
            gust_phases: Vec3::zeros(),
        }
    }

    /// Wind velocity at `p` and time `t`. Spatially uniform.
    pub fn wind_at(&self, _p: &Vec3, t: f64) -> Vec3 {
        let mut w = self.base;
        for i in 0..2 {
            w[i] += self.gust_amplitude[i] * (self.gust_frequencies[i] * t + self.gust_phases[i]).sin();
        }
        w[2] = 0.0;
        w
    }
}

pub fn wind_at(field: &WindField, p: &Vec3, t: f64) -> Vec3 {
    field.wind_at(p, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    /// Position gain: reference velocity is `kp * (target - p)`, norm-capped at cruise speed.
    pub kp: f64,
    /// Velocity-error gain.
    pub kd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub a_max: f64,
    pub cruise_speed: f64,
    pub lookahead: f64,
    pub gains: Gains,
    /// Linear body drag in nominal flight (1/s), acting on air-relative velocity.
    pub body_drag: f64,
    /// Fraction of the wind drag the autopilot anticipates from its wind estimate, in [0, 1].
    pub wind_feedforward: f64,
    pub parachute_drag_z: f64,
    pub parachute_drag_xy: f64,
    pub max_steps: usize,
    pub wind_sigma: f64,
    pub gust_sigma: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.05,
            a_max: 5.0,
            cruise_speed: 6.0,
            lookahead: 20.0,
            gains: Gains { kp: 0.5, kd: 0.6 },
            body_drag: 0.3,
            wind_feedforward: 0.25,
            parachute_drag_z: 2.0,
            parachute_drag_xy: 0.0,
            max_steps: 2400,
            wind_sigma: 4.0,
            gust_sigma: 1.0,
        }
    }
}

impl SimConfig {
    /// `(field, message)` for every violated invariant.
    pub fn violations(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v > 0.0 && v.is_finite()) {
                out.push((name.to_string(), format!("must be > 0, got {v}")));
            }
        };
        positive("dt", self.dt);
        positive("a_max", self.a_max);
        positive("cruise_speed", self.cruise_speed);
        positive("lookahead", self.lookahead);
        positive("gains.kp", self.gains.kp);
        positive("gains.kd", self.gains.kd);
        let mut non_negative = |name: &str, v: f64| {
            if !(v >= 0.0 && v.is_finite()) {
                out.push((name.to_string(), format!("must be >= 0, got {v}")));
            }
        };
        non_negative("body_drag", self.body_drag);
        non_negative("parachute_drag_z", self.parachute_drag_z);
        non_negative("parachute_drag_xy", self.parachute_drag_xy);
        non_negative("wind_sigma", self.wind_sigma);
        non_negative("gust_sigma", self.gust_sigma);
        if !(0.0..=1.0).contains(&self.wind_feedforward) {
            out.push(("wind_feedforward".into(), format!("must lie in [0, 1], got {}", self.wind_feedforward)));
        }
        if self.max_steps == 0 {
            out.push(("max_steps".into(), "must be >= 1".into()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some((field, msg)) => Err(Error::InvalidConfig(format!("{field}: {msg}"))),
        }
    }
}

/// Draws a wind field. The draws are standard variates scaled by
/// `wind_sigma` / `gust_sigma`, so for a fixed seed the field scales linearly
/// with the sigmas.
pub fn sample_wind_field<R: Rng + ?Sized>(rng: &mut R, cfg: &SimConfig) -> WindField {
    let nx: f64 = StandardNormal.sample(rng);
    let ny: f64 = StandardNormal.sample(rng);
    let mut field = WindField::calm();
    field.base = Vec3::new(cfg.wind_sigma * nx, cfg.wind_sigma * ny, 0.0);
    let (f_lo, f_hi) = GUST_FREQUENCY_BAND;
    for i in 0..2 {
        let u: f64 = rng.random();
        field.gust_amplitude[i] = cfg.gust_sigma * GUST_AMPLITUDE_SPAN * u;
    }
    for i in 0..2 {
        field.gust_frequencies[i] = rng.random_range(f_lo..f_hi);
    }
    for i in 0..2 {
        field.gust_phases[i] = rng.random_range(0.0..TAU);
    }
    field
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Path-following autopilot. Only ever queried, never inspected, by the
/// meta-controller.
pub fn nominal_control(s: &VehicleState, path: &Path, wind: &Vec3, cfg: &SimConfig) -> ControlInput {
    let target = path.target(&s.position, cfg.lookahead);
    let v_ref = clamp_norm((target - s.position) * cfg.gains.kp, cfg.cruise_speed);
    // drag compensation assumes still air, corrected by the partial wind estimate
    let drag_ff = (s.velocity - wind * cfg.wind_feedforward) * cfg.body_drag;
    let u = (v_ref - s.velocity) * cfg.gains.kd + drag_ff;
    ControlInput { commanded_acceleration: clamp_norm(u, cfg.a_max), parachute: false }
}

/// Terminal recovery: rotors off, parachute out.
pub fn recovery_control(_s: &VehicleState) -> ControlInput {
    ControlInput { commanded_acceleration: Vec3::zeros(), parachute: true }
}

/// One semi-implicit Euler step of the vehicle dynamics.
pub fn step(s: &VehicleState, u: &ControlInput, field: &WindField, cfg: &SimConfig) -> VehicleState {
    let wind = field.wind_at(&s.position, s.time);
    let v_rel = s.velocity - wind;
    let deployed = s.deployed || u.parachute;
    let accel = if deployed {
        Vec3::new(
            -cfg.parachute_drag_xy * v_rel.x,
            -cfg.parachute_drag_xy * v_rel.y,
            -GRAVITY - cfg.parachute_drag_z * v_rel.z,
        )
    } else {
        u.commanded_acceleration - v_rel * cfg.body_drag
    };
    let mut velocity = s.velocity + accel * cfg.dt;
    let mut position = s.position + velocity * cfg.dt;
    if position.z < 0.0 {
        position.z = 0.0;
        velocity = Vec3::zeros();
    }
    VehicleState { position, velocity, time: s.time + cfg.dt, deployed }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Running,
    Completed,
    Exited,
    Grounded,
    Timeout,
}

impl Termination {
    pub fn is_terminal(self) -> bool {
        self != Termination::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Running => "running",
            Termination::Completed => "completed",
            Termination::Exited => "exited",
            Termination::Grounded => "grounded",
            Termination::Timeout => "timeout",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Precedence: exited > completed > grounded > timeout.
pub fn episode_terminated(
    s: &VehicleState,
    env: &Envelope,
    mission: &Mission,
    step_count: usize,
    cfg: &SimConfig,
) -> Termination {
    if !env.contains(&s.position) {
        Termination::Exited
    } else if !s.deployed && (s.position - mission.destination()).norm() <= mission.arrival_radius {
        Termination::Completed
    } else if s.deployed && s.position.z == 0.0 {
        Termination::Grounded
    } else if step_count >= cfg.max_steps {
        Termination::Timeout
    } else {
        Termination::Running
    }
}
