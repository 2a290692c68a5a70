//! Runtime safety assurance testbed.
//!
//! A point-mass multirotor flies a geofenced mission under a black-box
//! path-following autopilot while a meta-controller decides, every step,
//! whether to keep the autopilot in charge or to throw a one-way switch to a
//! parachute recovery. The switch is either a distance-threshold baseline or a
//! linear Q-function trained by reinforcement learning; both are compared on
//! matched-seed episode batches via System Operating Characteristic points.

pub mod episode;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod learning;
pub mod policy;
pub mod scenario;
pub mod sim;

pub use episode::{Episode, World};
pub use error::{Error, Result};
pub use geometry::{Envelope, Mission, Path, Vec3};
pub use policy::{Action, FeatureScales, FeatureVector, MetaPolicy, RewardConfig, WeightMatrix};
pub use scenario::{load_scenario, Scenario};
pub use sim::{SimConfig, Termination, VehicleState, WindField};
