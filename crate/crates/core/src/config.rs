//! Campaign configuration: scheduler constants, engine knobs and the
//! ablation mode, loadable from TOML.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::scheduler::{UtilizationSchedule, SchedulerError};

pub const CONFIG_ENV: &str = "GFZ_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Ablation modes. `undirected` disables both inference and exploitation.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Gfuzz,
    NoInfer,
    ExploreOnly,
    ExploitOnly,
    FuncDis,
    Undirected,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Gfuzz,
        Mode::NoInfer,
        Mode::ExploreOnly,
        Mode::ExploitOnly,
        Mode::FuncDis,
        Mode::Undirected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Gfuzz => "gfuzz",
            Mode::NoInfer => "no_infer",
            Mode::ExploreOnly => "explore_only",
            Mode::ExploitOnly => "exploit_only",
            Mode::FuncDis => "func_dis",
            Mode::Undirected => "undirected",
        }
    }

    pub fn uses_inference(self) -> bool {
        !matches!(self, Mode::NoInfer | Mode::Undirected)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Mode, ConfigError> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.replace('-', "_"))
            .ok_or_else(|| ConfigError::Invalid(format!("unknown mode `{s}`")))
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMode {
    #[default]
    Block,
    Edge,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counting {
    /// A syscall appearing twice in a shorter-distance seed counts twice.
    #[default]
    PerOccurrence,
    PerSeed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub p_max: f64,
    pub p_min: f64,
    /// Horizon of the utilization decay; defaults to the timeout.
    pub t_fuzz_secs: Option<f64>,
    pub t_a_secs: f64,
    pub t_b_secs: f64,
    pub bias_k: u32,
    pub exploit_sample_m: usize,
    pub exploit_top_k: usize,
    pub rng_seed: u64,
    /// Mutations derived from each selected seed.
    pub burst: usize,
    /// Virtual seconds charged per execution.
    pub exec_cost_secs: f64,
    pub max_calls: usize,
    pub initial_seeds: usize,
    pub timeout_secs: f64,
    pub mode: Mode,
    pub repetitions: usize,
    pub workers: usize,
    pub coverage: CoverageMode,
    pub counting: Counting,
    /// Resolve indirect calls by signature when building the call graph.
    pub indirect_resolution: bool,
    /// Generic mutation weights: argument, insert, duplicate, remove.
    pub mutation_weights: [u32; 4],
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            p_max: 0.9,
            p_min: 0.1,
            t_fuzz_secs: None,
            t_a_secs: 300.0,
            t_b_secs: 600.0,
            bias_k: 5,
            exploit_sample_m: 32,
            exploit_top_k: 8,
            rng_seed: 0,
            burst: 16,
            exec_cost_secs: 1.0,
            max_calls: 16,
            initial_seeds: 8,
            timeout_secs: 3600.0,
            mode: Mode::Gfuzz,
            repetitions: 1,
            workers: 1,
            coverage: CoverageMode::Block,
            counting: Counting::PerOccurrence,
            indirect_resolution: true,
            mutation_weights: [50, 20, 15, 15],
        }
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<CampaignConfig, ConfigError> {
        let cfg: CampaignConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CampaignConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        CampaignConfig::from_toml(&text, &path.display().to_string())
    }

    /// `explicit` if given, else the file named by `GFZ_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<CampaignConfig, ConfigError> {
        match explicit {
            Some(p) => CampaignConfig::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => CampaignConfig::load(Path::new(&p)),
                _ => Ok(CampaignConfig::default()),
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        self.schedule().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.t_a_secs > 0.0 && self.t_b_secs > 0.0) {
            return bad("t_a_secs and t_b_secs must be positive");
        }
        if self.bias_k < 1 {
            return bad("bias_k must be at least 1");
        }
        if self.exploit_sample_m == 0 || self.exploit_top_k == 0 {
            return bad("exploit_sample_m and exploit_top_k must be at least 1");
        }
        if self.burst == 0 || self.initial_seeds == 0 || self.max_calls == 0 {
            return bad("burst, initial_seeds and max_calls must be at least 1");
        }
        if !(self.exec_cost_secs > 0.0 && self.exec_cost_secs.is_finite()) {
            return bad("exec_cost_secs must be positive");
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return bad("timeout_secs must be positive");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.mutation_weights.iter().all(|&w| w == 0) {
            return bad("at least one mutation weight must be positive");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<UtilizationSchedule, SchedulerError> {
        let horizon = self.t_fuzz_secs.unwrap_or(self.timeout_secs);
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SchedulerError::InvalidSchedule("t_fuzz must be positive".into()));
        }
        UtilizationSchedule::new(self.p_max, self.p_min, Duration::from_secs_f64(horizon))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn exec_cost(&self) -> Duration {
        Duration::from_secs_f64(self.exec_cost_secs)
    }

    pub fn t_a(&self) -> Duration {
        Duration::from_secs_f64(self.t_a_secs)
    }

    pub fn t_b(&self) -> Duration {
        Duration::from_secs_f64(self.t_b_secs)
    }

    /// Seed of repetition `i` in a bench run.
    pub fn repetition_seed(&self, i: usize) -> u64 {
        self.rng_seed.wrapping_add(i as u64)
    }
}
