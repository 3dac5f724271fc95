//! TOML configuration for the `rnnp` binary.
//!
//! Every section is optional and unknown keys are rejected. The root `seed`
//! replaces the seeds of the `train` and `synth` sections, so one number
//! controls all randomness of a run.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! data = "out/synth.csv"
//! holidays = "out/holidays.txt"
//! output_dir = "out"
//!
//! [spec]
//! lag_set = [1, 2, 24]
//! hidden_dim = 10
//! tau = 49
//! head = { kind = "gaussian_nll", sigma_floor = 1e-4 }
//!
//! [train]
//! learning_rate = 1e-3
//! max_epochs = 50
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gradients::{Engine, DEFAULT_BPTT_GUARD};
use crate::model::LagSet;
use crate::pipeline::{
    SeasonalConfig, SynthConfig, WalkForwardConfig, WalkForwardPlan, DEFAULT_TAU, X_DIM,
};
use crate::training::{Grid, LossHead, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    /// Date-per-line holiday file; the US federal calendar when absent.
    pub holidays: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: None,
            holidays: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Model and data-windowing choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecSection {
    /// Lag set trained by `train`.
    pub lag_set: LagSet,
    /// Lag sets compared by `walk-forward`.
    pub lag_sets: Vec<LagSet>,
    pub hidden_dim: usize,
    pub tau: usize,
    /// Keep every `stride`-th training window.
    pub stride: usize,
    pub head: LossHead,
    pub engine: Engine,
    pub seasonal: SeasonalConfig,
}

impl Default for SpecSection {
    fn default() -> Self {
        let wf = WalkForwardConfig::default();
        Self {
            lag_set: LagSet::new(vec![1, 2, 24]).expect("valid"),
            lag_sets: wf.lag_sets,
            hidden_dim: 10,
            tau: DEFAULT_TAU,
            stride: 1,
            head: wf.head,
            engine: wf.engine,
            seasonal: wf.seasonal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub engines: Vec<Engine>,
    /// Lag set and hidden size of the τ sweep.
    pub sweep_lag_set: LagSet,
    pub sweep_hidden_dim: usize,
    pub taus: Vec<usize>,
    /// Grid of the neuron sweep.
    pub lag_sets: Vec<LagSet>,
    pub hidden_dims: Vec<usize>,
    pub tau: usize,
    pub x_dim: usize,
    pub y_dim: usize,
    pub bptt_guard: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            engines: Engine::ALL.to_vec(),
            sweep_lag_set: LagSet::consecutive(2).expect("valid"),
            sweep_hidden_dim: 10,
            taus: (3..=48).collect(),
            lag_sets: vec![
                LagSet::consecutive(1).expect("valid"),
                LagSet::consecutive(2).expect("valid"),
                LagSet::new(vec![1, 2, 24]).expect("valid"),
            ],
            hidden_dims: vec![5, 10, 15],
            tau: DEFAULT_TAU,
            x_dim: X_DIM,
            y_dim: 2,
            bptt_guard: DEFAULT_BPTT_GUARD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub seed: u64,
    pub paths: Paths,
    pub spec: SpecSection,
    pub train: TrainConfig,
    pub grid: Grid,
    pub plan: Option<WalkForwardPlan>,
    pub bench: BenchSection,
    pub synth: SynthConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 7,
            paths: Paths::default(),
            spec: SpecSection::default(),
            train: TrainConfig::default(),
            grid: Grid::default(),
            plan: None,
            bench: BenchSection::default(),
            synth: SynthConfig::default(),
        };
        c.apply_seed();
        c
    }
}

impl CliConfig {
    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c: CliConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.apply_seed();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Pushes the root seed into the sections that own an RNG.
    pub fn apply_seed(&mut self) {
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        self.train.validate().map_err(cfg)?;
        self.synth.validate()?;
        if let Some(plan) = &self.plan {
            plan.validate()?;
        }
        let s = &self.spec;
        if s.hidden_dim == 0 {
            return bad("spec.hidden_dim must be >= 1");
        }
        if s.tau == 0 || s.stride == 0 {
            return bad("spec.tau and spec.stride must be >= 1");
        }
        if s.lag_sets.is_empty() {
            return bad("spec.lag_sets must be non-empty");
        }
        if let LossHead::GaussianNll { sigma_floor } = s.head {
            if !(sigma_floor > 0.0) {
                return bad("spec.head.sigma_floor must be > 0");
            }
        }
        if self.grid.is_empty()
            || self.grid.hidden_dims.contains(&0)
            || self.grid.batch_sizes.contains(&0)
        {
            return bad("grid needs non-empty lists of positive sizes");
        }
        if self
            .grid
            .learning_rates
            .iter()
            .any(|r| !(*r > 0.0) || !r.is_finite())
        {
            return bad("grid.learning_rates must be positive");
        }
        let b = &self.bench;
        if b.engines.is_empty()
            || b.taus.is_empty()
            || b.lag_sets.is_empty()
            || b.hidden_dims.is_empty()
        {
            return bad("bench lists must be non-empty");
        }
        if b.taus.contains(&0)
            || b.tau == 0
            || b.hidden_dims.contains(&0)
            || b.sweep_hidden_dim == 0
        {
            return bad("bench sizes must be >= 1");
        }
        if b.x_dim == 0 || b.y_dim == 0 {
            return bad("bench.x_dim and bench.y_dim must be >= 1");
        }
        Ok(())
    }

    pub fn walk_forward(&self) -> WalkForwardConfig {
        WalkForwardConfig {
            lag_sets: self.spec.lag_sets.clone(),
            head: self.spec.head,
            engine: self.spec.engine,
            tau: self.spec.tau,
            stride: self.spec.stride,
            train: self.train,
            grid: self.grid.clone(),
            seasonal: self.spec.seasonal,
        }
    }
}
