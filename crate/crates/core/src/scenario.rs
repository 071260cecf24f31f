//! Mission configuration files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Plant, RelativeState, DEFAULT_SINGULARITY_EPS};
use crate::koopman::{Normalization, TerminalConstraint, TrainingSpec};
use crate::linearized::DEFAULT_SUBSTEPS;
use crate::orbit::{OrbitClock, OrbitalElements, MU_EARTH};
use crate::sparse_solver::IrlsConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("malformed configuration: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitConfig {
    /// Semi-major axis (m).
    pub a: f64,
    pub e: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// True anomaly at `t = 0` (rad).
    #[serde(default)]
    pub nu0: f64,
}

fn default_mu() -> f64 {
    MU_EARTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub n_traj: usize,
    pub n_steps: usize,
    pub data_seed: u64,
    pub rbf_seed: u64,
    /// Training controls are `U[−1,1]³ · u_scale` in normalized units.
    pub u_scale: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            n_traj: 200,
            n_steps: 500,
            data_seed: 1,
            rbf_seed: 1,
            u_scale: 1.0,
        }
    }
}

/// Scales for the normalized coordinates; unset values are derived from the
/// mission (`L_ref = ‖x₀ position‖`, `V_ref = L_ref · mean ω`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationConfig {
    #[serde(rename = "L_ref", skip_serializing_if = "Option::is_none")]
    pub l_ref: Option<f64>,
    #[serde(rename = "V_ref", skip_serializing_if = "Option::is_none")]
    pub v_ref: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KoopmanConfig {
    pub terminal_constraint: TerminalConstraint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub freeze_anomaly: bool,
    /// RK4 substeps per step when discretizing the linearized model.
    pub substeps: usize,
    /// Minimum chaser distance to the attracting centre (m).
    pub singularity_eps: f64,
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            freeze_anomaly: false,
            substeps: DEFAULT_SUBSTEPS,
            singularity_eps: DEFAULT_SINGULARITY_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub orbit: OrbitConfig,
    /// `[x, y, z, ẋ, ẏ, ż]` in m and m/s.
    pub x0: [f64; 6],
    #[serde(default)]
    pub x_f: [f64; 6],
    /// Horizon `N` (steps).
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Step `T` (s).
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_n_lift")]
    pub n_lift: usize,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub normalization: NormalizationConfig,
    #[serde(default)]
    pub irls: IrlsConfig,
    #[serde(default)]
    pub koopman: KoopmanConfig,
    #[serde(default)]
    pub flags: Flags,
}

fn default_horizon() -> usize {
    200
}

fn default_step() -> f64 {
    1.0
}

fn default_n_lift() -> usize {
    120
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Full-size experiment: 1000 trajectories of 2000 steps, `N = 500`,
    /// `N_k = 120`.
    pub fn apply_paper_scale(&mut self) {
        self.training.n_traj = 1000;
        self.training.n_steps = 2000;
        self.horizon = 500;
        self.n_lift = 120;
    }

    /// Uses `seed` for both the training data and the RBF centres.
    pub fn apply_seed(&mut self, seed: u64) {
        self.training.data_seed = seed;
        self.training.rbf_seed = seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.name.is_empty() || self.name.contains([',', '"', '\n']) {
            return bad(format!("scenario name {:?} must be non-empty without commas or quotes", self.name));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if self.x0.iter().chain(&self.x_f).any(|v| !v.is_finite()) {
            return bad("x0 and x_f must be finite".into());
        }
        if self.n_lift < 6 {
            return bad(format!("n_lift must be at least 6, got {}", self.n_lift));
        }
        if self.training.n_traj == 0 || self.training.n_steps == 0 {
            return bad("training.n_traj and training.n_steps must be at least 1".into());
        }
        if !(self.training.u_scale >= 0.0 && self.training.u_scale.is_finite()) {
            return bad("training.u_scale must be non-negative".into());
        }
        for (name, v) in [("L_ref", self.normalization.l_ref), ("V_ref", self.normalization.v_ref)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("normalization.{name} must be positive, got {v}"));
                }
            }
        }
        if self.flags.substeps == 0 {
            return bad("flags.substeps must be at least 1".into());
        }
        if !(self.flags.singularity_eps >= 0.0) {
            return bad("flags.singularity_eps must be non-negative".into());
        }
        self.irls.validate().map_err(ConfigError::Invalid)?;
        OrbitalElements::new(self.orbit.a, self.orbit.e, self.orbit.mu, self.orbit.nu0)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Validates and derives everything the pipeline needs.
    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let elements = OrbitalElements::new(self.orbit.a, self.orbit.e, self.orbit.mu, self.orbit.nu0)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let clock = OrbitClock::new(elements, self.flags.freeze_anomaly);
        let mut plant = Plant::new(clock);
        plant.singularity_eps = self.flags.singularity_eps;
        let x0 = RelativeState::from_array(self.x0);
        let x_f = RelativeState::from_array(self.x_f);
        let l_ref = match self.normalization.l_ref {
            Some(l) => l,
            None => {
                let l = x0.position().norm();
                if l > 0.0 {
                    l
                } else if x_f.position().norm() > 0.0 {
                    x_f.position().norm()
                } else {
                    1.0
                }
            }
        };
        let v_ref = match self.normalization.v_ref {
            Some(v) => v,
            None => {
                let rate = clock
                    .mean_rate(self.horizon as f64 * self.step, self.horizon)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                l_ref * rate
            }
        };
        let normalization = Normalization::new(l_ref, v_ref).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Scenario {
            config: self.clone(),
            plant,
            x0,
            x_f,
            normalization,
        })
    }
}

/// A validated configuration with its derived plant and scales.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub plant: Plant,
    pub x0: RelativeState,
    pub x_f: RelativeState,
    pub normalization: Normalization,
}

impl Scenario {
    pub fn clock(&self) -> &OrbitClock {
        &self.plant.clock
    }

    pub fn training_spec(&self) -> TrainingSpec {
        let t = &self.config.training;
        TrainingSpec {
            n_traj: t.n_traj,
            n_steps: t.n_steps,
            step: self.config.step,
            seed: t.data_seed,
            u_scale: t.u_scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "short",
        "orbit": {"a": 6763e3, "e": 0.73074},
        "x0": [1e3, -1e3, 1e3, 3, 3, -3]
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.horizon, 200);
        assert_eq!(c.step, 1.0);
        assert_eq!(c.n_lift, 120);
        assert_eq!(c.training, TrainingConfig::default());
        assert_eq!(c.x_f, [0.0; 6]);
        assert_eq!(c.orbit.mu, MU_EARTH);
        assert!(!c.flags.freeze_anomaly);
    }

    #[test]
    fn derived_scales() {
        let s = ScenarioConfig::from_json(MINIMAL).unwrap().resolve().unwrap();
        assert!((s.normalization.l_ref - 3f64.sqrt() * 1e3).abs() < 1e-9);
        let rate = s.clock().mean_rate(200.0, 200).unwrap();
        assert!((s.normalization.v_ref - s.normalization.l_ref * rate).abs() < 1e-9);
    }

    #[test]
    fn explicit_scales_win() {
        let mut c = ScenarioConfig::from_json(MINIMAL).unwrap();
        c.normalization = NormalizationConfig {
            l_ref: Some(5.0),
            v_ref: Some(2.0),
        };
        let s = c.resolve().unwrap();
        assert_eq!(s.normalization, Normalization::new(5.0, 2.0).unwrap());
    }

    #[test]
    fn zero_mission_has_unit_length() {
        let mut c = ScenarioConfig::from_json(MINIMAL).unwrap();
        c.x0 = [0.0; 6];
        assert_eq!(c.resolve().unwrap().normalization.l_ref, 1.0);
    }

    #[test]
    fn rejects_bad_values() {
        for patch in [
            r#""horizon": 0"#,
            r#""step": -1"#,
            r#""n_lift": 3"#,
            r#""orbit": {"a": 6763e3, "e": 1.2}"#,
            r#""training": {"n_traj": 0}"#,
            r#""normalization": {"L_ref": -1}"#,
            r#""irls": {"j_max": 0}"#,
        ] {
            let text = format!(
                r#"{{"name": "x", "orbit": {{"a": 6763e3, "e": 0.5}}, "x0": [1,0,0,0,0,0], {patch}}}"#
            );
            assert!(ScenarioConfig::from_json(&text).is_err(), "{patch}");
        }
        assert!(ScenarioConfig::from_json(r#"{"name": "x"}"#).is_err());
        assert!(ScenarioConfig::from_json(&MINIMAL.replace("\"x0\"", "\"typo\": 1, \"x0\"")).is_err());
    }

    #[test]
    fn paper_scale_and_seed() {
        let mut c = ScenarioConfig::from_json(MINIMAL).unwrap();
        c.apply_paper_scale();
        c.apply_seed(9);
        assert_eq!((c.training.n_traj, c.training.n_steps, c.horizon, c.n_lift), (1000, 2000, 500, 120));
        assert_eq!((c.training.data_seed, c.training.rbf_seed), (9, 9));
    }

    #[test]
    fn json_round_trip() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
