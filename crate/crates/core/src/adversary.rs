//! Lower-level attacker: one shared MF-Q on the negated team reward, trained
//! against the frozen victim under per-decision mixing, and the evaluation
//! of an attack against a cooperative baseline on identical seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::envs::{Env, EnvSnapshot};
use crate::error::{invalid, Result};
use crate::learn::policy::{BehaviorPolicy, BoltzmannPolicy, LocalPolicy, LocalView};
use crate::learn::rollout::rollout;
use crate::learn::{derive_seed, exploration_rate, Backend, MeanFieldCoder, QModel};
use crate::mf::{argmax, BudgetVector};

#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryConfig {
    pub episodes: usize,
    pub lr: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub temperature: f64,
    pub mu_coder: MeanFieldCoder,
    pub nu_coder: MeanFieldCoder,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            lr: 0.1,
            gamma: 0.95,
            eps_start: 1.0,
            eps_end: 0.05,
            temperature: 0.01,
            mu_coder: MeanFieldCoder::ignore(),
            nu_coder: MeanFieldCoder::ignore(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adversary {
    pub policy: BoltzmannPolicy,
    /// True when there was nothing to attack and no training ran.
    pub noop: bool,
}

impl LocalPolicy for Adversary {
    fn local_dist(&self, view: &LocalView) -> crate::mf::ActionDist {
        self.policy.local_dist(view)
    }
}

struct Pending {
    s: usize,
    a: usize,
    mu: Vec<f64>,
    nu: Vec<f64>,
    cost: f64,
}

/// Trains π_α for the agents in `attacked`, from `start` when given and
/// from fresh resets otherwise. Each step an attacked agent
/// executes the adversary's choice with probability `eps` and the victim's
/// sample otherwise; the adversary learns SARSA-style from its own agent's
/// (s, a, μ, ν, −r) stream only. The victim is read, never written.
pub fn train_adversary(
    env: &dyn Env,
    victim: &dyn BehaviorPolicy,
    attacked: &[usize],
    eps: f64,
    start: Option<&EnvSnapshot>,
    cfg: &AdversaryConfig,
    seed: u64,
) -> Result<Adversary> {
    let n = env.n_agents();
    let na = env.n_actions();
    let q = QModel::new(Backend::Tabular, env.n_states(), na, cfg.mu_coder, cfg.nu_coder, cfg.gamma)?;
    let mut is_attacked = vec![false; n];
    for &i in attacked {
        if i >= n || is_attacked[i] {
            return invalid(format!("attack set has an invalid or repeated id {i}"));
        }
        is_attacked[i] = true;
    }
    if attacked.is_empty() {
        log::warn!("empty attack set: returning a no-op adversary");
        return Ok(Adversary {
            policy: BoltzmannPolicy::new(q, cfg.temperature)?,
            noop: true,
        });
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid(format!("attack budget {eps} outside (0, 1]"));
    }
    let mut q = q;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    for ep in 0..cfg.episodes {
        let explore = exploration_rate(ep, cfg.episodes, cfg.eps_start, cfg.eps_end);
        let ep_seed = derive_seed(seed, 1_000_000 + ep as u64);
        let mut snap = match start {
            Some(s) => s.reseeded(ep_seed),
            None => env.reset(ep_seed)?,
        };
        let mut pending: Vec<Option<Pending>> = (0..n).map(|_| None).collect();
        for t in 0..=env.horizon() {
            let mut actions = Vec::with_capacity(n);
            for i in 0..n {
                let a = if is_attacked[i] && rng.random::<f64>() < eps {
                    if rng.random::<f64>() < explore {
                        rng.random_range(0..na)
                    } else {
                        argmax(&q.q_row(snap.states[i].0, snap.mu.probs(), snap.nu_prev.probs()))
                    }
                } else {
                    victim.action_dist(&snap, i).sample(&mut rng)
                };
                actions.push(a);
            }
            // close the previous transition now that a' is known
            for &i in attacked {
                if let Some(p) = pending[i].take() {
                    let s = snap.states[i].0;
                    let boot = q.q(s, actions[i], snap.mu.probs(), snap.nu_prev.probs());
                    q.td_update(p.s, p.a, &p.mu, &p.nu, p.cost + cfg.gamma * boot, cfg.lr);
                }
            }
            if t == env.horizon() {
                break;
            }
            let res = env.step(&snap, &actions)?;
            for &i in attacked {
                pending[i] = Some(Pending {
                    s: snap.states[i].0,
                    a: actions[i],
                    mu: snap.mu.probs().to_vec(),
                    nu: snap.nu_prev.probs().to_vec(),
                    cost: -res.reward,
                });
            }
            snap = res.snapshot;
        }
    }
    if q.values().iter().any(|v| !v.is_finite()) {
        return invalid("adversary Q diverged");
    }
    Ok(Adversary {
        policy: BoltzmannPolicy::new(q, cfg.temperature)?,
        noop: false,
    })
}

/// Trains `restarts` adversaries and keeps the one that drives the victim
/// lowest over `val_episodes` validation rollouts. The validation streams
/// are derived from `seed` and disjoint from the evaluation streams
/// callers use.
#[allow(clippy::too_many_arguments)]
pub fn train_adversary_best_of(
    env: &dyn Env,
    victim: &dyn BehaviorPolicy,
    attacked: &[usize],
    eps: f64,
    start: Option<&EnvSnapshot>,
    cfg: &AdversaryConfig,
    seed: u64,
    restarts: usize,
    val_episodes: usize,
) -> Result<Adversary> {
    if restarts == 0 {
        return invalid("adversary restarts must be positive");
    }
    if restarts == 1 || attacked.is_empty() {
        return train_adversary(env, victim, attacked, eps, start, cfg, seed);
    }
    if val_episodes == 0 {
        return invalid("adversary restarts need validation episodes");
    }
    let val_seed = derive_seed(seed, 0x7661_6c);
    let scored: Vec<(f64, Adversary)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let adv = train_adversary(env, victim, attacked, eps, start, cfg, if r == 0 { seed } else { derive_seed(seed, r as u64) })?;
            let rep = evaluate_attack(env, victim, Some(&adv), attacked, eps, val_episodes, start, &[val_seed], 1.0)?;
            Ok((rep.mean, adv))
        })
        .collect::<Result<_>>()?;
    Ok(scored
        .into_iter()
        .reduce(|a, b| if b.0 < a.0 { b } else { a })
        .expect("at least one restart")
        .1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackEvalReport {
    pub attack_set: Vec<usize>,
    pub eps: f64,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    /// Seed-major per-episode victim returns.
    pub returns: Vec<f64>,
    pub per_seed_means: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub baseline_returns: Vec<f64>,
    pub baseline_per_seed_means: Vec<f64>,
    pub baseline_mean: f64,
    pub baseline_std: f64,
}

impl AttackEvalReport {
    /// sqrt of the average of the two variances.
    pub fn pooled_std(&self) -> f64 {
        ((self.std * self.std + self.baseline_std * self.baseline_std) / 2.0).sqrt()
    }
}

pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Attacked and cooperative returns over `episodes` rollouts per seed.
/// Rollout e of seed s starts from `start` (or `reset(derive_seed(s, 2e))`)
/// and draws its noise from `derive_seed(s, 2e + 1)` in both runs.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_attack(
    env: &dyn Env,
    victim: &dyn BehaviorPolicy,
    adversary: Option<&dyn LocalPolicy>,
    attacked: &[usize],
    eps: f64,
    episodes: usize,
    start: Option<&EnvSnapshot>,
    seeds: &[u64],
    gamma: f64,
) -> Result<AttackEvalReport> {
    if episodes == 0 || seeds.is_empty() {
        return invalid("evaluation needs at least one episode and one seed");
    }
    let n = env.n_agents();
    let budgets = BudgetVector::for_attack_set(n, attacked, eps)?;
    let zero = BudgetVector::zeros(n);
    let per_seed: Vec<(Vec<f64>, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut att = Vec::with_capacity(episodes);
            let mut base = Vec::with_capacity(episodes);
            for e in 0..episodes as u64 {
                let s0 = match start {
                    Some(s) => s.clone(),
                    None => env.reset(derive_seed(seed, 2 * e))?,
                };
                let roll = derive_seed(seed, 2 * e + 1);
                att.push(rollout(env, &s0, victim, adversary, &budgets, env.horizon(), roll)?.discounted_return(gamma));
                base.push(rollout(env, &s0, victim, None, &zero, env.horizon(), roll)?.discounted_return(gamma));
            }
            Ok((att, base))
        })
        .collect::<Result<_>>()?;
    let returns: Vec<f64> = per_seed.iter().flat_map(|(a, _)| a.iter().copied()).collect();
    let baseline_returns: Vec<f64> = per_seed.iter().flat_map(|(_, b)| b.iter().copied()).collect();
    let per_seed_means: Vec<f64> = per_seed.iter().map(|(a, _)| mean_std(a).0).collect();
    let baseline_per_seed_means: Vec<f64> = per_seed.iter().map(|(_, b)| mean_std(b).0).collect();
    let (_, std) = mean_std(&returns);
    let (_, baseline_std) = mean_std(&baseline_returns);
    Ok(AttackEvalReport {
        attack_set: attacked.to_vec(),
        eps,
        episodes,
        seeds: seeds.to_vec(),
        mean: mean_std(&per_seed_means).0,
        baseline_mean: mean_std(&baseline_per_seed_means).0,
        returns,
        per_seed_means,
        std,
        baseline_returns,
        baseline_per_seed_means,
        baseline_std,
    })
}
