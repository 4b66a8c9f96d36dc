//! Run configuration: a JSON file, overridden field by field from the
//! command line.

use std::path::{Path, PathBuf};

use dhlab_core::dh_asymptotics::DhConfig;
use dhlab_core::dist_models::{DensitySpec, DistributionModel};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CACHE_ENV: &str = "DHLAB_CACHE";

/// Either an inline density or a path to a JSON file holding one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(DensitySpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub alpha: f64,
    pub nu: f64,
    pub nu0: f64,
    pub omega: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            alpha: 1e-12,
            nu: 1e-9,
            nu0: 1e-10,
            omega: 1e-10,
        }
    }
}

/// Config file contents. Everything except the model has a default, and
/// the seed must come from the file or from `--seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub y: Option<f64>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Monte Carlo samples per eps (after burn-in); 0 disables them in sweeps.
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default)]
    pub burn_in: Option<u64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

fn default_eps() -> Vec<f64> {
    vec![0.1, 0.05, 0.02, 0.01]
}

fn default_grid() -> usize {
    2048
}

fn default_steps() -> u64 {
    1_000_000
}

fn default_max_iter() -> usize {
    20_000
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub seed: Option<u64>,
    pub eps: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub grid: Option<usize>,
    pub steps: Option<u64>,
}

/// Validated configuration with the model loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub spec: DensitySpec,
    pub model: DistributionModel,
    pub seed: u64,
    pub cache_root: Option<PathBuf>,
}

impl Resolved {
    pub fn dh_config(&self) -> DhConfig {
        let c = &self.config;
        DhConfig {
            grid_size: c.grid,
            nu_tol: c.tolerances.nu,
            nu0_tol: c.tolerances.nu0,
            omega_tol: c.tolerances.omega,
            y: c.y,
            max_iter: c.max_iter,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn parse_eps_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("cannot parse eps value {p:?}")))
        })
        .collect()
}

pub fn load(path: &Path, ov: &Overrides) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    resolve(cfg, path.parent().unwrap_or(Path::new(".")), ov)
}

/// Applies overrides, loads the model, checks ranges.
pub fn resolve(mut cfg: RunConfig, base: &Path, ov: &Overrides) -> Result<Resolved, CliError> {
    if let Some(v) = &ov.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = &ov.cache {
        cfg.cache = Some(v.clone());
    }
    if let Some(v) = ov.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = &ov.eps {
        cfg.eps = v.clone();
    }
    if let Some(v) = ov.beta {
        cfg.beta = Some(v);
    }
    if let Some(v) = ov.grid {
        cfg.grid = v;
    }
    if let Some(v) = ov.steps {
        cfg.steps = v;
    }
    let seed = cfg.seed.ok_or_else(|| bad("a seed is required (config \"seed\" or --seed)"))?;
    let spec = match &cfg.model {
        ModelSource::Inline(s) => s.clone(),
        ModelSource::Path(p) => {
            let p = if p.is_absolute() { p.clone() } else { base.join(p) };
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", p.display())))?
        }
    };
    let model = DistributionModel::new(spec.clone())?;
    check_ranges(&cfg)?;
    let cache_root = cfg
        .cache
        .clone()
        .or_else(|| std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from));
    Ok(Resolved {
        config: cfg,
        spec,
        model,
        seed,
        cache_root,
    })
}

fn check_ranges(c: &RunConfig) -> Result<(), CliError> {
    if c.eps.is_empty() {
        return Err(bad("eps list is empty"));
    }
    if c.eps.iter().any(|e| !(*e >= 0.0 && *e < 1.0)) {
        return Err(bad("every eps must lie in [0, 1)"));
    }
    if c.grid < 64 || !c.grid.is_multiple_of(2) {
        return Err(bad("grid must be an even number of at least 64 nodes"));
    }
    if !c.steps.is_multiple_of(32) {
        return Err(bad("steps must be a multiple of 32 (batch means use 32 batches)"));
    }
    if let Some(b) = c.beta {
        if !(b > 0.0 && b < 1.0) {
            return Err(bad("beta must lie in (0, 1)"));
        }
    }
    if let Some(y) = c.y {
        if !(y > 0.0) {
            return Err(bad("y must be positive"));
        }
    }
    let t = &c.tolerances;
    if [t.alpha, t.nu, t.nu0, t.omega].iter().any(|v| !(*v > 0.0)) {
        return Err(bad("tolerances must be positive"));
    }
    if c.max_iter == 0 {
        return Err(bad("max_iter must be positive"));
    }
    Ok(())
}
