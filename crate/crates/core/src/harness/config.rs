//! TOML experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VaiError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub env: EnvSection,
    #[serde(default)]
    pub victim: VictimSection,
    #[serde(default)]
    pub value: ValueSection,
    #[serde(default)]
    pub selection: SelectionSection,
    #[serde(default)]
    pub adversary: AdversarySection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub correlation: CorrelationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// Master seed for victim training and value fitting.
    #[serde(default)]
    pub seed: u64,
    /// Evaluation seeds; each one is an independent scenario.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: String,
    pub n_agents: usize,
    pub horizon: usize,
    // vicsek
    pub world_size: Option<f64>,
    pub comm_radius: Option<f64>,
    pub speed: Option<f64>,
    pub noise: Option<f64>,
    pub bearing_bins: Option<usize>,
    pub count_bins: Option<usize>,
    pub init: Option<String>,
    pub clusters: Option<usize>,
    pub cluster_spread: Option<f64>,
    // taxi
    pub grid: Option<usize>,
    pub zone_size: Option<usize>,
    pub demand_base: Option<f64>,
    pub demand_peak: Option<f64>,
    pub demand_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VictimSection {
    /// `mfq` (learned) or `rule` (Vicsek alignment rule).
    pub kind: String,
    pub backend: String,
    pub episodes: usize,
    pub gamma: f64,
    pub lr: f64,
    pub temperature: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub margin: f64,
    pub eval_episodes: usize,
    /// Independent training runs; the best by evaluated return is kept.
    pub restarts: usize,
    pub mu_buckets: usize,
    pub nu_buckets: usize,
    pub mf_levels: usize,
}

impl Default for VictimSection {
    fn default() -> Self {
        Self {
            kind: "mfq".into(),
            backend: "tabular".into(),
            episodes: 300,
            gamma: 0.95,
            lr: 0.1,
            temperature: 0.05,
            replay_capacity: 20_000,
            batch_size: 32,
            eps_start: 1.0,
            eps_end: 0.05,
            margin: 0.2,
            eval_episodes: 20,
            restarts: 1,
            mu_buckets: 1,
            nu_buckets: 1,
            mf_levels: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValueSection {
    pub backend: String,
    /// Norm order of the perturbation balls; `inf` allowed.
    pub p: f64,
    /// `bernoulli` (ξ ~ U[0,1], ε ~ Bernoulli(ξ)) or `uniform` (both U[0,1]).
    pub sampling: String,
    pub draws_per_sample: usize,
    /// Same budget draws for every transition.
    pub shared_draws: bool,
    pub joint_action: bool,
    /// Norm of Q minus its action mean.
    pub centered_norm: bool,
    pub gamma: f64,
    pub corpus_episodes: usize,
    pub max_sweeps: usize,
    pub tol: f64,
    pub ridge: f64,
    pub mu_buckets: usize,
    pub mf_levels: usize,
}

impl Default for ValueSection {
    fn default() -> Self {
        Self {
            backend: "tabular".into(),
            p: f64::INFINITY,
            sampling: "bernoulli".into(),
            draws_per_sample: 4,
            shared_draws: true,
            joint_action: false,
            centered_norm: false,
            gamma: 0.95,
            corpus_episodes: 100,
            max_sweeps: 500,
            tol: 1e-9,
            ridge: 1e-8,
            mu_buckets: 1,
            mf_levels: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionSection {
    pub k: Vec<usize>,
    pub eps: f64,
    pub methods: Vec<String>,
    /// Random baseline subsets drawn per scenario seed.
    pub random_draws: usize,
    pub rl_episodes: usize,
    pub rl_lr: f64,
    pub rl_gamma: f64,
    pub rl_batch: usize,
    pub dc_radius: Option<f64>,
    pub brute_cap: u64,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self {
            k: vec![2, 4],
            eps: 1.0,
            methods: vec!["greedy".into(), "rl".into(), "random".into(), "dc".into()],
            random_draws: 3,
            rl_episodes: 1000,
            rl_lr: 0.05,
            rl_gamma: 1.0,
            rl_batch: 16,
            dc_radius: None,
            brute_cap: 3000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarySection {
    pub episodes: usize,
    pub lr: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub temperature: f64,
    pub mu_buckets: usize,
    pub mf_levels: usize,
    /// Independent adversaries per attack set; the strongest on validation
    /// rollouts is kept.
    pub restarts: usize,
    pub validation_episodes: usize,
}

impl Default for AdversarySection {
    fn default() -> Self {
        Self {
            episodes: 200,
            lr: 0.1,
            gamma: 0.95,
            eps_start: 1.0,
            eps_end: 0.05,
            temperature: 0.01,
            mu_buckets: 1,
            mf_levels: 4,
            restarts: 1,
            validation_episodes: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub episodes: usize,
    /// Discount applied to the reported victim return.
    pub gamma: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { episodes: 20, gamma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationSection {
    pub subsets: usize,
    pub min_k: usize,
    pub max_k: usize,
    pub seed: u64,
}

impl Default for CorrelationSection {
    fn default() -> Self {
        Self {
            subsets: 20,
            min_k: 1,
            max_k: 8,
            seed: 0,
        }
    }
}

fn invalid_cfg<T>(field: &str, msg: impl std::fmt::Display) -> Result<T> {
    Err(VaiError::InvalidConfig(format!("{field}: {msg}")))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| VaiError::ConfigParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path)
    }

    /// Checks cross-field constraints before any compute happens.
    pub fn validate(&self) -> Result<()> {
        let n = self.env.n_agents;
        if !matches!(self.env.name.as_str(), "vicsek" | "taxi") {
            return invalid_cfg("env.name", format!("unknown env `{}`", self.env.name));
        }
        if n < 2 {
            return invalid_cfg("env.n_agents", "must be at least 2");
        }
        if self.env.horizon == 0 {
            return invalid_cfg("env.horizon", "must be positive");
        }
        if self.experiment.seeds.is_empty() {
            return invalid_cfg("experiment.seeds", "must not be empty");
        }
        if let Some(k) = self.selection.k.iter().find(|k| **k > n) {
            return invalid_cfg("selection.k", format!("K = {k} exceeds N = {n}"));
        }
        if !(0.0..=1.0).contains(&self.selection.eps) {
            return invalid_cfg("selection.eps", "must lie in [0, 1]");
        }
        for m in &self.selection.methods {
            if !matches!(m.as_str(), "greedy" | "rl" | "random" | "dc") {
                return invalid_cfg("selection.methods", format!("unknown method `{m}`"));
            }
        }
        if !matches!(self.victim.kind.as_str(), "mfq" | "rule") {
            return invalid_cfg("victim.kind", format!("unknown kind `{}`", self.victim.kind));
        }
        if self.victim.kind == "rule" && self.env.name != "vicsek" {
            return invalid_cfg("victim.kind", "the rule victim exists only for vicsek");
        }
        for (field, b) in [("victim.backend", &self.victim.backend), ("value.backend", &self.value.backend)] {
            if !matches!(b.as_str(), "tabular" | "linear") {
                return invalid_cfg(field, format!("unknown backend `{b}`"));
            }
        }
        if !matches!(self.value.sampling.as_str(), "bernoulli" | "uniform") {
            return invalid_cfg("value.sampling", format!("unknown scheme `{}`", self.value.sampling));
        }
        if self.value.p.is_nan() || self.value.p < 1.0 {
            return invalid_cfg("value.p", "must be >= 1 or inf");
        }
        for (field, g) in [
            ("victim.gamma", self.victim.gamma),
            ("value.gamma", self.value.gamma),
            ("adversary.gamma", self.adversary.gamma),
        ] {
            if !(0.0..1.0).contains(&g) {
                return invalid_cfg(field, "must lie in [0, 1)");
            }
        }
        if !(0.0..=1.0).contains(&self.evaluation.gamma) {
            return invalid_cfg("evaluation.gamma", "must lie in [0, 1]");
        }
        if self.victim.restarts == 0 {
            return invalid_cfg("victim.restarts", "must be positive");
        }
        if self.adversary.restarts == 0 || (self.adversary.restarts > 1 && self.adversary.validation_episodes == 0) {
            return invalid_cfg("adversary.restarts", "must be positive, with validation episodes when above 1");
        }
        if self.evaluation.episodes == 0 || self.victim.eval_episodes == 0 {
            return invalid_cfg("evaluation.episodes", "must be positive");
        }
        if !(self.victim.temperature > 0.0) || !(self.adversary.temperature > 0.0) {
            return invalid_cfg("temperature", "must be positive");
        }
        if self.victim.mu_buckets == 0 || self.victim.nu_buckets == 0 || self.value.mu_buckets == 0 || self.adversary.mu_buckets == 0 {
            return invalid_cfg("mu_buckets", "must be positive");
        }
        if self.correlation.min_k == 0 || self.correlation.min_k > self.correlation.max_k || self.correlation.max_k > n {
            return invalid_cfg("correlation", "need 1 <= min_k <= max_k <= N");
        }
        Ok(())
    }

    /// Stable identifier of the configuration contents.
    pub fn experiment_id(&self) -> String {
        let canonical = toml::to_string(self).unwrap_or_default();
        format!("{:016x}", fnv1a(canonical.as_bytes()))
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
