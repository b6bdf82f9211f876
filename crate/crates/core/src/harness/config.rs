use crate::error::{Error, Result};
use crate::model::{parse_kv_lines, CONFIG_KEYS};

use super::task::{Placement, SyntheticTask};
use super::train::{TrainRun, TRAIN_KEYS};

/// A training run together with the data it trains on.
///
/// Image size, patch size and class count are shared by the model and the
/// task and set through the model keys.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub run: TrainRun,
    pub train_placement: Placement,
    pub test_placement: Placement,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub data_seed: u64,
}

pub const TASK_KEYS: &[&str] = &["data_seed", "n_test", "n_train", "noise_std", "placement", "test_placement"];

impl Default for Experiment {
    /// Toy model at the 64×64 training geometry.
    fn default() -> Self {
        let mut run = TrainRun::default();
        run.model.image_size = 64;
        Experiment {
            run,
            train_placement: Placement::UniformRandom,
            test_placement: Placement::UniformRandom,
            noise_std: 0.05,
            n_train: 512,
            n_test: 256,
            data_seed: 0,
        }
    }
}

/// Every key accepted in a run configuration file, sorted.
pub fn all_keys() -> Vec<&'static str> {
    let mut keys: Vec<&str> = CONFIG_KEYS.iter().chain(TRAIN_KEYS).chain(TASK_KEYS).copied().collect();
    keys.sort_unstable();
    keys
}

impl Experiment {
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |v: &str| Error::config(key, format!("invalid value `{v}`"));
        match key {
            "placement" => self.train_placement = value.trim().parse()?,
            "test_placement" => self.test_placement = value.trim().parse()?,
            "noise_std" => self.noise_std = value.trim().parse().map_err(|_| bad(value))?,
            "n_train" => self.n_train = value.trim().parse().map_err(|_| bad(value))?,
            "n_test" => self.n_test = value.trim().parse().map_err(|_| bad(value))?,
            "data_seed" => self.data_seed = value.trim().parse().map_err(|_| bad(value))?,
            _ => return self.run.set(key, value),
        }
        Ok(true)
    }

    /// Applies `pairs` in order after any `scheme` pair; unknown keys fail.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let (first, rest): (Vec<_>, Vec<_>) = pairs.iter().partition(|(k, _)| k == "scheme");
        for (k, v) in first.into_iter().chain(rest) {
            if !self.set(k, v)? {
                return Err(Error::config(k.clone(), "unknown key"));
            }
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut e = Experiment::default();
        e.apply(&parse_kv_lines(text)?)?;
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        self.task(self.train_placement).validate()
    }

    pub fn task(&self, placement: Placement) -> SyntheticTask {
        let m = &self.run.model;
        SyntheticTask {
            image_size: m.image_size,
            patch: m.patch,
            classes: m.classes,
            placement,
            noise_std: self.noise_std,
            seed: self.data_seed,
        }
    }

    pub fn to_kv_text(&self) -> String {
        let mut lines: Vec<String> = self
            .run
            .model
            .to_kv_text()
            .lines()
            .chain(self.run.train_kv_text().lines())
            .map(str::to_string)
            .collect();
        lines.push(format!("data_seed={}", self.data_seed));
        lines.push(format!("n_test={}", self.n_test));
        lines.push(format!("n_train={}", self.n_train));
        lines.push(format!("noise_std={}", self.noise_std));
        lines.push(format!("placement={}", self.train_placement));
        lines.push(format!("test_placement={}", self.test_placement));
        lines.sort();
        lines.into_iter().map(|l| l + "\n").collect()
    }
}
