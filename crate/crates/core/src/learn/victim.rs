//! Mean-field Q-learning of the cooperative victim.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::policy::{softmax, BehaviorPolicy, BoltzmannPolicy, UniformPolicy};
use super::rollout::rollout;
use super::{derive_seed, exploration_rate, Backend, MeanFieldCoder, QModel};
use crate::envs::Env;
use crate::error::{invalid, Result, VaiError};
use crate::mf::{argmax, BudgetVector};

#[derive(Debug, Clone, PartialEq)]
pub struct VictimTrainingConfig {
    pub backend: Backend,
    pub episodes: usize,
    pub gamma: f64,
    pub lr: f64,
    pub temperature: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Required relative improvement over the uniform-random policy.
    pub margin: f64,
    pub eval_episodes: usize,
    pub eval_gamma: f64,
    pub mu_coder: MeanFieldCoder,
    pub nu_coder: MeanFieldCoder,
}

impl Default for VictimTrainingConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Tabular,
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
            eval_gamma: 1.0,
            mu_coder: MeanFieldCoder::ignore(),
            nu_coder: MeanFieldCoder::ignore(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub trained_return: f64,
    pub random_return: f64,
}

struct StepFields {
    mu: Vec<f64>,
    nu: Vec<f64>,
    reward: f64,
    mu_next: Vec<f64>,
}

struct Sample {
    fields: Arc<StepFields>,
    s: usize,
    a: usize,
    s_next: usize,
}

/// Expected next-state value under the Boltzmann policy; the current action
/// field stands in for the unknown next one.
fn soft_value(q: &QModel, s: usize, mu: &[f64], nu: &[f64], temperature: f64) -> f64 {
    let row = q.q_row(s, mu, nu);
    let pi = softmax(&row, temperature);
    pi.probs().iter().zip(&row).map(|(p, v)| p * v).sum()
}

/// Mean return of `policy` over `episodes` scenarios derived from `seed`.
pub fn mean_return(env: &dyn Env, policy: &dyn BehaviorPolicy, episodes: usize, gamma: f64, seed: u64) -> Result<f64> {
    let zero = BudgetVector::zeros(env.n_agents());
    let mut total = 0.0;
    for e in 0..episodes {
        let start = env.reset(derive_seed(seed, 2 * e as u64))?;
        let traj = rollout(env, &start, policy, None, &zero, env.horizon(), derive_seed(seed, 2 * e as u64 + 1))?;
        total += traj.discounted_return(gamma);
    }
    Ok(total / episodes as f64)
}

/// Trains a shared Q with ε-greedy exploration and uniform replay, then
/// checks that its Boltzmann policy beats the uniform-random policy by the
/// configured relative margin.
pub fn train_victim(env: &dyn Env, cfg: &VictimTrainingConfig, seed: u64) -> Result<(BoltzmannPolicy, TrainingReport)> {
    if cfg.episodes == 0 || cfg.eval_episodes == 0 || cfg.replay_capacity == 0 {
        return invalid("victim training needs positive episodes, evaluation episodes and replay capacity");
    }
    let n_actions = env.n_actions();
    let mut q = QModel::new(cfg.backend, env.n_states(), n_actions, cfg.mu_coder, cfg.nu_coder, cfg.gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut replay: VecDeque<Sample> = VecDeque::with_capacity(cfg.replay_capacity);
    // linear weights see ~N features per update; scale the step accordingly
    let lr = match cfg.backend {
        Backend::Tabular => cfg.lr,
        Backend::Linear => cfg.lr / 4.0,
    };

    for ep in 0..cfg.episodes {
        let explore = exploration_rate(ep, cfg.episodes, cfg.eps_start, cfg.eps_end);
        let mut snap = env.reset(derive_seed(seed, 1_000_000 + ep as u64))?;
        for _ in 0..env.horizon() {
            let actions: Vec<usize> = (0..env.n_agents())
                .map(|i| {
                    if rng.random::<f64>() < explore {
                        rng.random_range(0..n_actions)
                    } else {
                        argmax(&q.q_row(snap.states[i].0, snap.mu.probs(), snap.nu_prev.probs()))
                    }
                })
                .collect();
            let res = env.step(&snap, &actions)?;
            let fields = Arc::new(StepFields {
                mu: snap.mu.probs().to_vec(),
                nu: res.nu.probs().to_vec(),
                reward: res.reward,
                mu_next: res.snapshot.mu.probs().to_vec(),
            });
            for (i, &a) in actions.iter().enumerate() {
                if replay.len() == cfg.replay_capacity {
                    replay.pop_front();
                }
                replay.push_back(Sample {
                    fields: Arc::clone(&fields),
                    s: snap.states[i].0,
                    a,
                    s_next: res.snapshot.states[i].0,
                });
            }
            for _ in 0..cfg.batch_size {
                let smp = &replay[rng.random_range(0..replay.len())];
                let f = &smp.fields;
                // time-limit truncation still bootstraps
                let target = f.reward + cfg.gamma * soft_value(&q, smp.s_next, &f.mu_next, &f.nu, cfg.temperature);
                q.td_update(smp.s, smp.a, &f.mu, &f.nu, target, lr);
            }
            snap = res.snapshot;
        }
    }
    if q.values().iter().any(|v| !v.is_finite()) {
        return Err(VaiError::TrainingFailure {
            trained: f64::NAN,
            random: f64::NAN,
            margin: cfg.margin,
        });
    }

    let policy = BoltzmannPolicy::new(q, cfg.temperature)?;
    let eval_seed = derive_seed(seed, 7);
    let trained = mean_return(env, &policy, cfg.eval_episodes, cfg.eval_gamma, eval_seed)?;
    let random = mean_return(env, &UniformPolicy { n_actions }, cfg.eval_episodes, cfg.eval_gamma, eval_seed)?;
    if trained - random < cfg.margin * random.abs() {
        return Err(VaiError::TrainingFailure {
            trained,
            random,
            margin: cfg.margin,
        });
    }
    Ok((
        policy,
        TrainingReport {
            trained_return: trained,
            random_return: random,
        },
    ))
}

/// Best of `restarts` independent training runs by evaluated return; the
/// margin check applies to the winner only. Run 0 uses `seed` itself.
pub fn train_victim_best_of(env: &dyn Env, cfg: &VictimTrainingConfig, seed: u64, restarts: usize) -> Result<(BoltzmannPolicy, TrainingReport)> {
    if restarts == 0 {
        return invalid("victim restarts must be positive");
    }
    let free = VictimTrainingConfig {
        margin: f64::NEG_INFINITY,
        ..cfg.clone()
    };
    let runs: Vec<(BoltzmannPolicy, TrainingReport)> = (0..restarts)
        .into_par_iter()
        .map(|r| train_victim(env, &free, if r == 0 { seed } else { derive_seed(seed, r as u64) }))
        .collect::<Result<_>>()?;
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.1.trained_return > a.1.trained_return { b } else { a })
        .expect("at least one run");
    let r = &best.1;
    if r.trained_return - r.random_return < cfg.margin * r.random_return.abs() {
        return Err(VaiError::TrainingFailure {
            trained: r.trained_return,
            random: r.random_return,
            margin: cfg.margin,
        });
    }
    Ok(best)
}
