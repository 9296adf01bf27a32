//! Cooperative action-value model shared by all agents, plus the policies,
//! rollouts and training loop built on it.

use crate::error::{invalid, Result};
use crate::harness::config::fnv1a;

pub mod checkpoint;
pub mod policy;
pub mod rollout;
pub mod victim;

pub use policy::{boltzmann, BehaviorPolicy, BoltzmannPolicy, LocalPolicy, LocalView, TablePolicy, UniformPolicy, VictimPolicy};
pub use rollout::{rollout, Corpus, Trajectory};
pub use victim::{train_victim, train_victim_best_of, TrainingReport, VictimTrainingConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Tabular,
    Linear,
}

impl Backend {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tabular" => Ok(Self::Tabular),
            "linear" => Ok(Self::Linear),
            other => invalid(format!("unknown backend `{other}`")),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Tabular => "tabular",
            Self::Linear => "linear",
        }
    }
}

/// Maps a mean-field vector to one of `buckets` codes by quantizing each
/// entry to `levels` levels and hashing. One bucket ignores the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeanFieldCoder {
    pub levels: usize,
    pub buckets: usize,
}

impl MeanFieldCoder {
    pub fn new(levels: usize, buckets: usize) -> Result<Self> {
        if levels == 0 || buckets == 0 {
            return invalid("mean-field coder needs positive levels and buckets");
        }
        Ok(Self { levels, buckets })
    }

    pub fn ignore() -> Self {
        Self { levels: 1, buckets: 1 }
    }

    pub fn code(&self, probs: &[f64]) -> usize {
        if self.buckets == 1 {
            return 0;
        }
        let q: Vec<u8> = probs
            .iter()
            .map(|p| ((p * self.levels as f64) as usize).min(self.levels - 1) as u8)
            .collect();
        (fnv1a(&q) % self.buckets as u64) as usize
    }
}

/// Q(s, a, μ, ν) shared across agents.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    backend: Backend,
    n_states: usize,
    n_actions: usize,
    mu_coder: MeanFieldCoder,
    nu_coder: MeanFieldCoder,
    gamma: f64,
    /// Tabular: one entry per (s, a, μ-code, ν-code). Linear: feature weights.
    values: Vec<f64>,
}

impl QModel {
    pub fn new(
        backend: Backend,
        n_states: usize,
        n_actions: usize,
        mu_coder: MeanFieldCoder,
        nu_coder: MeanFieldCoder,
        gamma: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return invalid("QModel needs non-empty state and action spaces");
        }
        if !(0.0..1.0).contains(&gamma) {
            return invalid(format!("discount {gamma} outside [0, 1)"));
        }
        let len = match backend {
            Backend::Tabular => n_states * n_actions * mu_coder.buckets * nu_coder.buckets,
            Backend::Linear => linear_dim(n_states, n_actions),
        };
        Ok(Self {
            backend,
            n_states,
            n_actions,
            mu_coder,
            nu_coder,
            gamma,
            values: vec![0.0; len],
        })
    }

    /// Rebuilds a model from raw parameters (checkpoint loading).
    pub fn from_parts(
        backend: Backend,
        n_states: usize,
        n_actions: usize,
        mu_coder: MeanFieldCoder,
        nu_coder: MeanFieldCoder,
        gamma: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::new(backend, n_states, n_actions, mu_coder, nu_coder, gamma)?;
        if values.len() != m.values.len() {
            return invalid(format!("expected {} parameters, got {}", m.values.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("QModel parameters must be finite");
        }
        m.values = values;
        Ok(m)
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn mu_coder(&self) -> MeanFieldCoder {
        self.mu_coder
    }
    pub fn nu_coder(&self) -> MeanFieldCoder {
        self.nu_coder
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check(&self, s: usize, mu: &[f64], nu: &[f64]) {
        debug_assert!(s < self.n_states, "state {s} out of range");
        debug_assert_eq!(mu.len(), self.n_states);
        debug_assert_eq!(nu.len(), self.n_actions);
    }

    fn table_index(&self, s: usize, a: usize, mc: usize, nc: usize) -> usize {
        ((s * self.n_actions + a) * self.mu_coder.buckets + mc) * self.nu_coder.buckets + nc
    }

    /// Index of the tabular cell for (s, a, μ, ν).
    pub fn cell(&self, s: usize, a: usize, mu: &[f64], nu: &[f64]) -> usize {
        self.table_index(s, a, self.mu_coder.code(mu), self.nu_coder.code(nu))
    }

    pub fn q(&self, s: usize, a: usize, mu: &[f64], nu: &[f64]) -> f64 {
        self.check(s, mu, nu);
        match self.backend {
            Backend::Tabular => self.values[self.cell(s, a, mu, nu)],
            Backend::Linear => {
                let w = &self.values;
                let sa = self.n_states * self.n_actions;
                let mut v = w[s * self.n_actions + a] + w[sa + self.n_states + self.n_actions];
                v += mu.iter().zip(&w[sa..sa + self.n_states]).map(|(m, w)| m * w).sum::<f64>();
                v += nu
                    .iter()
                    .zip(&w[sa + self.n_states..sa + self.n_states + self.n_actions])
                    .map(|(m, w)| m * w)
                    .sum::<f64>();
                v
            }
        }
    }

    pub fn q_row(&self, s: usize, mu: &[f64], nu: &[f64]) -> Vec<f64> {
        (0..self.n_actions).map(|a| self.q(s, a, mu, nu)).collect()
    }

    /// Sparse feature vector of the linear backend as (index, value) pairs.
    pub fn features(&self, s: usize, a: usize, mu: &[f64], nu: &[f64]) -> Vec<(usize, f64)> {
        let sa = self.n_states * self.n_actions;
        let mut f = Vec::with_capacity(2 + mu.len() + nu.len());
        f.push((s * self.n_actions + a, 1.0));
        f.extend(mu.iter().enumerate().filter(|(_, m)| **m != 0.0).map(|(i, m)| (sa + i, *m)));
        f.extend(
            nu.iter()
                .enumerate()
                .filter(|(_, m)| **m != 0.0)
                .map(|(i, m)| (sa + self.n_states + i, *m)),
        );
        f.push((sa + self.n_states + self.n_actions, 1.0));
        f
    }

    /// One stochastic step of Q ← Q + lr·(target − Q).
    pub fn td_update(&mut self, s: usize, a: usize, mu: &[f64], nu: &[f64], target: f64, lr: f64) {
        let err = target - self.q(s, a, mu, nu);
        match self.backend {
            Backend::Tabular => {
                let c = self.cell(s, a, mu, nu);
                self.values[c] += lr * err;
            }
            Backend::Linear => {
                for (i, x) in self.features(s, a, mu, nu) {
                    self.values[i] += lr * err * x;
                }
            }
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

pub(crate) fn linear_dim(n_states: usize, n_actions: usize) -> usize {
    n_states * n_actions + n_states + n_actions + 1
}

/// Linear ε schedule from `start` to `end` over the first half of training.
pub fn exploration_rate(episode: usize, episodes: usize, start: f64, end: f64) -> f64 {
    let half = (episodes / 2).max(1);
    if episode >= half {
        end
    } else {
        start + (end - start) * episode as f64 / half as f64
    }
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn derive_seed(parent: u64, child: u64) -> u64 {
    let mut z = parent
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(child.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
