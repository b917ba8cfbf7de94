//! Run configuration file: JSON, every field optional, command-line flags
//! take precedence.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use lfm_core::filter_smoother::FilterMode;
use lfm_core::problems::{ProblemConfig, SimulationSpec};
use lfm_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSource {
    Name(String),
    Inline(Box<ProblemConfig>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterOptions {
    /// `false` selects the dense-covariance filter.
    #[serde(default)]
    pub square_root: Option<bool>,
    /// Overrides the problem's λ².
    #[serde(default)]
    pub ode_noise: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub problem: Option<ProblemSource>,
    /// Dataset CSV (or, for `covid`, the snapshot directory).
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Simulate the dataset instead of reading one.
    #[serde(default)]
    pub simulation: Option<SimulationSpec>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub filter: FilterOptions,
    /// Time units past the last datum covered by ODE updates only.
    #[serde(default)]
    pub extrapolate: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path)
            .map_err(|e| Error::argument(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::argument(format!("config {}: {e}", path.display())))
    }

    /// The problem configuration with any simulation override applied.
    pub fn problem_config(&self) -> Result<ProblemConfig> {
        let mut cfg = match &self.problem {
            None => return Err(Error::argument("no problem given; use --problem or the config's \"problem\" field")),
            Some(ProblemSource::Name(n)) => ProblemConfig::by_name(n)?,
            Some(ProblemSource::Inline(c)) => (**c).clone(),
        };
        if let Some(sim) = &self.simulation {
            cfg.simulation = Some(sim.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mode(&self) -> FilterMode {
        match self.filter.square_root {
            Some(false) => FilterMode::Dense,
            _ => FilterMode::SquareRoot,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Exactly one of a dataset path and a simulation spec.
    pub fn check_single_source(&self) -> Result<()> {
        match (&self.dataset, &self.simulation) {
            (Some(_), Some(_)) => Err(Error::argument("give either a dataset or a simulation spec, not both")),
            (None, None) => Err(Error::argument("no dataset source; give --data or a simulation spec (--simulate)")),
            _ => Ok(()),
        }
    }
}

/// Parses `a..b` (end exclusive).
pub fn parse_seeds(s: &str) -> Result<Range<u64>> {
    let bad = || Error::argument(format!("--seeds expects 'a..b' with a < b, got '{s}'"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a >= b {
        return Err(bad());
    }
    Ok(a..b)
}
