use std::path::{Path, PathBuf};

use anyhow::{Context, bail};
use serde::{Deserialize, Serialize};

use slowmf::estimate::EstimationConfig;
use slowmf::integrate::Scheme;
use slowmf::manifold::{LpOptions, ManifoldSource};
use slowmf::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Whole run description; every section has defaults so a config only needs
/// the parts it changes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Base seed; sample `k` of a command uses `seed + k`.
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub format: Format,
    pub model: ModelConfig,
    pub paths: PathsConfig,
    pub manifold: ManifoldConfig,
    pub converge: ConvergeConfig,
    pub track: TrackConfig,
    pub estimate: EstimationConfig,
    /// Observed slow path `t,v_1..v_n2`; a synthetic one is generated when absent.
    pub observation: Option<PathBuf>,
    pub diagnose: DiagnoseConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub mu_list: Vec<f64>,
    pub n_seeds: usize,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: 1.0,
            dt: 1e-4,
            mu_list: vec![0.1],
            n_seeds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub t_end: f64,
    /// Base times are taken every `every` grid steps.
    pub every: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            every: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvarianceConfig {
    pub t_check: f64,
    pub scheme: Scheme,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        Self {
            t_check: 0.5,
            scheme: Scheme::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ManifoldConfig {
    pub eps_list: Vec<f64>,
    pub mu_list: Vec<f64>,
    /// Also emit the white-noise manifold on the same samples.
    pub white: bool,
    pub xi_list: Vec<Vec<f64>>,
    pub dt: f64,
    pub n_seeds: usize,
    pub lp: LpOptions,
    pub evolution: Option<EvolutionConfig>,
    pub invariance: Option<InvarianceConfig>,
}

impl Default for ManifoldConfig {
    fn default() -> Self {
        Self {
            eps_list: vec![0.1],
            mu_list: vec![0.1, 0.01, 0.001],
            white: true,
            xi_list: (0..21).map(|i| vec![-5.0 + 0.5 * i as f64]).collect(),
            dt: 1e-4,
            n_seeds: 1,
            lp: LpOptions::default(),
            evolution: None,
            invariance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    pub eps_list: Vec<f64>,
    pub mu_list: Vec<f64>,
    pub xi_list: Vec<Vec<f64>>,
    pub dt: f64,
    pub n_seeds: usize,
    pub source: ManifoldSource,
    pub lp: LpOptions,
    /// Horizon of the `sup |Φ − B|` table.
    pub noise_horizon: f64,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            eps_list: vec![0.1, 0.05],
            mu_list: vec![0.1, 0.01, 0.001],
            xi_list: vec![vec![-2.0], vec![0.0], vec![2.0]],
            dt: 1e-4,
            n_seeds: 20,
            source: ManifoldSource::Expansion,
            lp: LpOptions::default(),
            noise_horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackConfig {
    pub eps: f64,
    pub mu: f64,
    pub dt: f64,
    pub t_end: f64,
    pub xi: Vec<f64>,
    /// Added to the manifold value to place the start off the manifold.
    pub fast_offset: Vec<f64>,
    pub n_seeds: usize,
    pub source: ManifoldSource,
    pub scheme: Scheme,
    pub lp: LpOptions,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            eps: 0.01,
            mu: 0.01,
            dt: 5e-4,
            t_end: 10.0,
            xi: vec![3.0],
            fast_offset: vec![1.0],
            n_seeds: 1,
            source: ManifoldSource::Expansion,
            scheme: Scheme::default(),
            lp: LpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseConfig {
    pub mu: f64,
    pub eps_list: Vec<f64>,
    pub n_seeds: usize,
    /// Noise intensity; the model's `sigma` when absent.
    pub sigma: Option<f64>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            mu: 1e-4,
            eps_list: vec![0.1, 0.05, 0.02, 0.01],
            n_seeds: 50,
            sigma: None,
        }
    }
}

/// TOML unless the file ends in `.json`; a TOML parse failure on text that
/// looks like JSON falls back to JSON.
pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let cfg: RunConfig = if is_json {
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
    } else {
        match toml::from_str(&text) {
            Ok(c) => c,
            Err(e) if text.trim_start().starts_with('{') => serde_json::from_str(&text)
                .map_err(|_| e)
                .with_context(|| format!("invalid config {}", path.display()))?,
            Err(e) => {
                return Err(e).with_context(|| format!("invalid config {}", path.display()));
            }
        }
    };
    if let Some(obs) = &cfg.observation {
        let resolved = resolve(path, obs);
        if !resolved.is_file() {
            bail!("observation file {} does not exist", resolved.display());
        }
        return Ok(RunConfig {
            observation: Some(resolved),
            ..cfg
        });
    }
    Ok(cfg)
}

/// Relative paths in a config are taken relative to the config file.
fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}
