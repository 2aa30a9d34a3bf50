//! TOML run configuration.
//!
//! ```toml
//! name = "noise"
//! # scenario = "scene.toml"   # fixed scene instead of generated ones
//! # weights = "model.cpw"     # trained weights; hand-set proxy otherwise
//! # output_dir = "out"
//!
//! [sim]
//! agents = 2
//! seeds = 20
//! mix_voxel = "m1"
//!
//! [sim.collab]
//! k_ic = 20
//! k_ir = [100, 50, 25]
//!
//! [sweep]
//! noise = [0.0, 0.2, 0.4, 0.6]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error};
use crate::eval::{scenes_for, ExperimentConfig, Scenario, SweepAxis};
use crate::grid::WeightSet;
use crate::scene::Scene;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "COLLABSIM_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// A scene file (TOML) used for every seed; seeds then only vary noise.
    pub scenario: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub sim: Scenario,
    pub sweep: Option<SweepAxis>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            scenario: None,
            weights: None,
            output_dir: None,
            sim: Scenario::default(),
            sweep: None,
        }
    }
}

fn check_exists(field: &str, p: &Option<PathBuf>) -> Result<(), ConfigError> {
    match p {
        Some(p) if !p.is_file() => Err(ConfigError::field(field, format!("{} does not exist", p.display()))),
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig { name: self.name.clone(), base: self.sim.clone(), sweep: self.sweep.clone() }
    }

    /// Everything that can be checked without running anything.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(ConfigError::field("name", "must be a non-empty file stem"));
        }
        check_exists("scenario", &self.scenario)?;
        check_exists("weights", &self.weights)?;
        self.experiment().validate()
    }

    /// Output directory: config value, then the environment, then `out`.
    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn load_weights(&self) -> Result<Option<WeightSet>, Error> {
        self.weights.as_deref().map(WeightSet::load).transpose()
    }

    /// One scene per seed: the fixed scenario re-seeded, or generated ones.
    pub fn scenes(&self) -> Result<Vec<Scene>, Error> {
        match &self.scenario {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.clone(), source })?;
                let scene: Scene = toml::from_str(&text)
                    .map_err(|e| ConfigError::Parse { path: p.clone(), message: e.to_string() })?;
                scene.validate()?;
                if scene.agents.len() < self.experiment().points().iter().map(|p| p.agents).max().unwrap_or(1) {
                    return Err(ConfigError::field("sim.agents", "exceeds the agents of the scenario file").into());
                }
                Ok(self.sim.seed_list().into_iter().map(|seed| Scene { seed, ..scene.clone() }).collect())
            }
            None => scenes_for(&self.experiment()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let text = r#"
name = "noise"
[sim]
agents = 2
seeds = 20
mix_voxel = "m1"
[sim.collab]
k_ic = 20
k_ir = [100, 50, 25]
[sweep]
noise = [0.0, 0.2, 0.4, 0.6]
"#;
        let c = RunConfig::parse(text, Path::new("x.toml")).unwrap();
        c.validate().unwrap();
        assert_eq!(c.sweep, Some(SweepAxis::Noise(vec![0.0, 0.2, 0.4, 0.6])));
        assert_eq!(c.experiment().points().len(), 4);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig {
            sweep: Some(SweepAxis::Strategy(vec!["m1".parse().unwrap(), "m3".parse().unwrap()])),
            ..RunConfig::default()
        };
        c.sim.budget_bytes = Some(1000);
        let back = RunConfig::parse(&c.to_toml(), Path::new("x.toml")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = RunConfig::parse("[sim]\nagents = 0\n", Path::new("x.toml")).unwrap();
        let e = bad.validate().unwrap_err().to_string();
        assert!(e.starts_with("agents"), "{e}");
        let bad = RunConfig::parse("[sim.collab]\nk_ir = [1, 2]\n", Path::new("x.toml")).unwrap();
        assert!(bad.validate().unwrap_err().to_string().contains("collab.k_ir"));
        let bad = RunConfig::parse("[sim]\nmix_voxel = \"m9\"\n", Path::new("x.toml")).unwrap_err();
        assert!(bad.to_string().contains("m9"), "{bad}");
        let bad = RunConfig::parse("bogus = 1\n", Path::new("x.toml")).unwrap_err();
        assert!(bad.to_string().contains("bogus"), "{bad}");
        let missing = RunConfig { weights: Some("/nonexistent/w.cpw".into()), ..RunConfig::default() };
        assert!(missing.validate().unwrap_err().to_string().starts_with("weights"));
    }
}
