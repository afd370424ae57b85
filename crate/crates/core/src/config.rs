//! Experiment configuration: one TOML file with dotted sections, defaults for
//! every omitted field, and unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, FakeStrategy};
use crate::error::{invalid, Error, Result};
use crate::game::{DefenderConfig, SweepParameter};
use crate::model::TrainSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameSettings {
    pub n_games: usize,
    /// Step index at which early-detection rates are reported.
    pub report_step: usize,
}

impl Default for GameSettings {
    fn default() -> Self {
        GameSettings { n_games: 500, report_step: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings { parameter: SweepParameter::NQuery, values: vec![20.0, 50.0, 100.0, 200.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSettings {
    pub n_batches: usize,
    pub p_fakes: Vec<f64>,
    pub strategies: Vec<FakeStrategy>,
    pub dim: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            n_batches: 200,
            p_fakes: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            strategies: vec![FakeStrategy::Uniform, FakeStrategy::Blind, FakeStrategy::Duplicate],
            dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,
    /// Trained model to load instead of training from `model`.
    pub model_path: Option<PathBuf>,
    pub model: TrainSpec,
    pub attack: AttackConfig,
    pub defender: DefenderConfig,
    pub game: GameSettings,
    pub sweep: SweepSettings,
    pub bench: BenchSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output: PathBuf::from("out"),
            model_path: None,
            model: TrainSpec::default(),
            attack: AttackConfig::default(),
            defender: DefenderConfig::default(),
            game: GameSettings::default(),
            sweep: SweepSettings::default(),
            bench: BenchSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.attack.validate()?;
        if self.attack.p_fake > 0.5 {
            return Err(invalid(
                "attack.p_fake",
                format!("{} above 0.5; contamination needs true queries to stay the majority", self.attack.p_fake),
            ));
        }
        self.defender.validate()?;
        let m = &self.model;
        if m.data.input_dim == 0 || m.data.n_classes < 2 {
            return Err(invalid("model.data", "need input_dim >= 1 and n_classes >= 2"));
        }
        if m.data.samples_per_class == 0 || m.data.test_per_class == 0 {
            return Err(invalid("model.data", "sample counts must be >= 1"));
        }
        if m.batch_size == 0 || !(m.learning_rate > 0.0) {
            return Err(invalid("model", "batch_size and learning_rate must be positive"));
        }
        if !(m.domain.lo < m.domain.hi) {
            return Err(invalid("model.domain", "lo must be below hi"));
        }
        if self.game.n_games == 0 {
            return Err(invalid("game.n_games", "must be >= 1"));
        }
        if self.sweep.values.is_empty() {
            return Err(invalid("sweep.values", "grid is empty"));
        }
        if self.bench.n_batches == 0 || self.bench.dim == 0 {
            return Err(invalid("bench", "n_batches and dim must be >= 1"));
        }
        if let Some(p) = self.bench.p_fakes.iter().find(|p| !(0.0..0.5).contains(*p)) {
            return Err(invalid("bench.p_fakes", format!("{p} outside [0, 0.5)")));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_defaults() {
        let c = parse_config_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.attack.n_query, 100);
        assert_eq!(c.defender.kappa, 0.6);
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        let e = parse_config_str("[attack]\np_fake = 0.6\n").unwrap_err().to_string();
        assert!(e.contains("attack.p_fake"), "{e}");
        assert!(parse_config_str("[attack]\nbogus = 1\n").is_err());
        assert!(parse_config_str("wat = 3\n").is_err());
        assert!(parse_config_str("[defender]\nassumed_p_fake = 0.5\n").is_err());
    }

    #[test]
    fn round_trip() {
        let c = parse_config_str("seed = 9\n[defender]\nmu = 0.1\nvariant = \"robust\"\n[sweep]\nparameter = \"mu\"\nvalues = [0.0, 0.5]\n")
            .unwrap();
        assert_eq!(parse_config_str(&c.to_toml()).unwrap(), c);
        assert_eq!(c.hash().len(), 64);
    }
}
