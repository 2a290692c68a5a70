//! Scenario files: envelope, mission, simulator and reward configuration.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{build_path, Envelope, Mission, Path};
use crate::policy::{FeatureScales, RewardConfig};
use crate::sim::SimConfig;

const DEMO_SCENARIO: &str = include_str!("../scenarios/demo.json");

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub metadata: Metadata,
    pub envelope: Envelope,
    pub mission: Mission,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    /// Divisors for the eight continuous features; derived from the envelope
    /// and simulator config when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_scales: Option<FeatureScales>,
}

impl Scenario {
    /// The bundled four-waypoint demo mission.
    pub fn demo() -> Scenario {
        Scenario::from_json(DEMO_SCENARIO).expect("bundled demo scenario is valid")
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Every invariant violation, each as `field.path: message`.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let envelope_ok = match self.envelope.validate() {
            Ok(()) => true,
            Err(e) => {
                out.push(format!("envelope: {e}"));
                false
            }
        };
        if envelope_ok {
            for (field, msg) in self.mission.violations(&self.envelope) {
                out.push(format!("mission.{field}: {msg}"));
            }
        }
        for (field, msg) in self.sim.violations() {
            out.push(format!("sim.{field}: {msg}"));
        }
        out.extend(self.reward.violations().into_iter().map(|(f, m)| format!("{f}: {m}")));
        if let Some(scales) = &self.feature_scales {
            out.extend(scales.violations().into_iter().map(|(f, m)| format!("{f}: {m}")));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn scales(&self) -> FeatureScales {
        self.feature_scales
            .unwrap_or_else(|| FeatureScales::defaults_for(&self.envelope, &self.sim))
    }

    pub fn path(&self) -> Result<Path> {
        build_path(&self.mission)
    }

    /// Short content hash embedded in every output artifact.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn with_alert_penalty(&self, alert_penalty: f64) -> Scenario {
        let mut s = self.clone();
        s.reward.alert_penalty = alert_penalty;
        s
    }

    /// Sets the base wind sigma, scaling the gust sigma by the same factor.
    /// Resolves default feature scales first so features do not drift with
    /// the wind.
    pub fn with_wind_sigma(&self, wind_sigma: f64) -> Scenario {
        let mut s = self.clone();
        s.feature_scales = Some(self.scales());
        let ratio = if self.sim.wind_sigma > 0.0 { self.sim.gust_sigma / self.sim.wind_sigma } else { 0.0 };
        s.sim.wind_sigma = wind_sigma;
        s.sim.gust_sigma = ratio * wind_sigma;
        s
    }

    /// Clearance from the mission start to the nearest fence face.
    pub fn start_clearance(&self) -> f64 {
        self.envelope.boundary_query(&self.mission.start()).distance
    }
}

pub fn load_scenario(path: &FsPath) -> Result<Scenario> {
    Scenario::from_json(&std::fs::read_to_string(path)?)
}
