//! TOML run configuration for `simulate`.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use gabp_mud::detectors::{DetectorKind, DetectorSpec};
use gabp_mud::simulator::{NoiseModel, Scenario, Spreading, Symbols};
use gabp_mud::{Clipping, SolverConfig};
use serde::Deserialize;

pub const QUICKSTART: &str = include_str!("../configs/quickstart.toml");

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub solver: SolverConfig,
    pub detectors: DetectorsConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub users: usize,
    pub chips: usize,
    /// Uniform chip variance. Ignored when `noise_per_chip` is set.
    pub sigma2: f64,
    pub noise_per_chip: Option<Vec<f64>>,
    /// Rectangular matrix file; random binary spreading when absent.
    pub spreading_file: Option<PathBuf>,
    pub symbols: Symbols,
    pub frames: usize,
    pub seed: u64,
    /// Frames per CSV row; 0 aggregates all frames.
    pub batch_frames: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            users: 4,
            chips: 16,
            sigma2: 1.0,
            noise_per_chip: None,
            spreading_file: None,
            symbols: Symbols::Binary,
            frames: 100,
            seed: 0,
            batch_frames: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorsConfig {
    pub kinds: Vec<DetectorKind>,
    pub clipping: Clipping,
}

impl Default for DetectorsConfig {
    fn default() -> Self {
        DetectorsConfig {
            kinds: DetectorKind::ALL.to_vec(),
            clipping: Clipping::Sign,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid run config")
    }

    pub fn detector_specs(&self) -> Vec<DetectorSpec> {
        self.detectors
            .kinds
            .iter()
            .map(|&k| DetectorSpec::new(k, self.detectors.clipping))
            .collect()
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let s = &self.scenario;
        let spreading = match &s.spreading_file {
            Some(path) => Spreading::Supplied(crate::read_rectangular(path)?),
            None => Spreading::RandomBinary,
        };
        let noise = match &s.noise_per_chip {
            Some(v) => NoiseModel::PerChip(v.clone()),
            None => NoiseModel::Uniform(s.sigma2),
        };
        Ok(Scenario {
            users: s.users,
            chips: s.chips,
            spreading,
            noise,
            symbols: s.symbols,
            frames: s.frames,
            seed: s.seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKey {
    Sigma2,
    Users,
    Chips,
    Damping,
}

impl SweepKey {
    pub fn name(self) -> &'static str {
        match self {
            SweepKey::Sigma2 => "sigma2",
            SweepKey::Users => "k",
            SweepKey::Chips => "n",
            SweepKey::Damping => "damping",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: SweepKey,
    pub values: Vec<f64>,
}

/// Parses `key=start:stop:steps` into `steps` evenly spaced values.
pub fn parse_sweep(text: &str) -> Result<Sweep> {
    let Some((key, range)) = text.split_once('=') else {
        bail!("sweep must look like key=start:stop:steps, got {text:?}");
    };
    let key = match key {
        "sigma2" => SweepKey::Sigma2,
        "k" => SweepKey::Users,
        "n" => SweepKey::Chips,
        "damping" => SweepKey::Damping,
        other => bail!("unknown sweep key {other:?}; valid keys: sigma2, k, n, damping"),
    };
    let parts: Vec<&str> = range.split(':').collect();
    let [start, stop, steps] = parts[..] else {
        bail!("sweep range must be start:stop:steps, got {range:?}");
    };
    let start: f64 = start.parse().context("sweep start")?;
    let stop: f64 = stop.parse().context("sweep stop")?;
    let steps: usize = steps.parse().context("sweep steps")?;
    if steps == 0 || !start.is_finite() || !stop.is_finite() {
        bail!("sweep needs finite bounds and at least one step");
    }
    let values: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                start
            } else {
                start + (stop - start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    if matches!(key, SweepKey::Users | SweepKey::Chips)
        && values.iter().any(|v| v.fract() != 0.0 || *v < 1.0)
    {
        bail!(
            "sweep over {} needs positive integer values, got {values:?}",
            key.name()
        );
    }
    Ok(Sweep { key, values })
}

impl Sweep {
    pub fn apply(&self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self.key {
            SweepKey::Sigma2 => {
                if cfg.scenario.noise_per_chip.is_some() {
                    bail!("cannot sweep sigma2 with per-chip noise configured");
                }
                cfg.scenario.sigma2 = value;
            }
            SweepKey::Users | SweepKey::Chips => {
                if cfg.scenario.spreading_file.is_some() {
                    bail!(
                        "cannot sweep {} with a supplied spreading file",
                        self.key.name()
                    );
                }
                if self.key == SweepKey::Users {
                    cfg.scenario.users = value as usize;
                } else {
                    if cfg.scenario.noise_per_chip.is_some() {
                        bail!("cannot sweep n with per-chip noise configured");
                    }
                    cfg.scenario.chips = value as usize;
                }
            }
            SweepKey::Damping => cfg.solver.damping = value,
        }
        Ok(cfg)
    }
}
