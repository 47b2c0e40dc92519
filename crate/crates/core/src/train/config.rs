use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::ModelConfig;
use crate::nn::AdamConfig;

/// Everything a training run needs, loadable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub max_steps: u64,
    pub batch_size: usize,
    pub eval_every_steps: u64,
    pub patience_evals: u32,
    pub seed: u64,
    pub window_n: usize,
    /// Global gradient-norm clip applied before each Adam step.
    pub clip_norm: f64,
    /// Write a log record every this many steps (eval steps are always logged).
    pub log_every_steps: u64,
    /// Stop as soon as training-batch perplexity drops below this value.
    pub target_train_ppl: Option<f64>,
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            max_steps: 100_000,
            batch_size: 32,
            eval_every_steps: 1000,
            patience_evals: 10,
            seed: 0,
            window_n: 128,
            clip_norm: 3.0,
            log_every_steps: 100,
            target_train_ppl: None,
            model: ModelConfig::default(),
            optimizer: AdamConfig::default(),
        }
    }
}

impl TrainRunConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let config: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("max_steps", self.max_steps as f64),
            ("batch_size", self.batch_size as f64),
            ("eval_every_steps", self.eval_every_steps as f64),
            ("patience_evals", f64::from(self.patience_evals)),
            ("window_n", self.window_n as f64),
            ("clip_norm", self.clip_norm),
            ("log_every_steps", self.log_every_steps as f64),
            ("optimizer.lr", self.optimizer.lr),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(TrainError::Config(format!("{name} must be positive")));
        }
        if self.window_n != self.model.window_n {
            return Err(TrainError::Config(format!(
                "window_n {} differs from model.window_n {}",
                self.window_n, self.model.window_n
            )));
        }
        self.model.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuantizerKind;

    #[test]
    fn defaults_and_round_trip() {
        let c = TrainRunConfig::default();
        assert_eq!((c.batch_size, c.eval_every_steps, c.patience_evals, c.max_steps), (32, 1000, 10, 100_000));
        assert_eq!(c.clip_norm, 3.0);
        assert_eq!(TrainRunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_toml() {
        let c = TrainRunConfig::from_toml(
            "max_steps = 50\nwindow_n = 16\n[model]\nwindow_n = 16\nquantizer = \"vq\"\nhidden_size = 8\n[optimizer]\nlr = 0.01\n",
        )
        .unwrap();
        assert_eq!(c.max_steps, 50);
        assert_eq!(c.model.quantizer, QuantizerKind::Vq);
        assert_eq!(c.optimizer.lr, 0.01);
        assert_eq!(c.optimizer.beta2, 0.999);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(TrainRunConfig::from_toml("batch_size = 0").is_err());
        assert!(TrainRunConfig::from_toml("bogus = 1").is_err());
        assert!(TrainRunConfig::from_toml("window_n = 64").is_err());
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let load = |name: &str| TrainRunConfig::load(&dir.join(name)).unwrap();
        assert_eq!(load("iqae.toml").model.quantizer, QuantizerKind::Iqae);
        assert!(load("lm_dt.toml").model.use_dt);
        assert_eq!(load("vqvae.toml").model.quantizer, QuantizerKind::Vq);
    }
}
