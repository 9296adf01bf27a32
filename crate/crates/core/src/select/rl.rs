//! Q-learning over the selection MDP with a linear Q(s, ε, n).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_k, predicted_drop, selector_reward, AttackSet, SelectionMethod, SelectorState};
use crate::envs::EnvSnapshot;
use crate::error::{invalid, Result};
use crate::learn::exploration_rate;
use crate::robust::RobustValueModel;

#[derive(Debug, Clone, PartialEq)]
pub struct RlSelectConfig {
    pub episodes: usize,
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub eps_start: f64,
    pub eps_end: f64,
}

impl Default for RlSelectConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            lr: 0.05,
            gamma: 1.0,
            batch_size: 16,
            replay_capacity: 5000,
            eps_start: 1.0,
            eps_end: 0.05,
        }
    }
}

/// Linear Q over `[onehot(s₀ⁿ), onehot(s₀ⁿ)·ξ, εⁿ, ξ, k/K, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorQModel {
    n_states: usize,
    k: usize,
    pub weights: Vec<f64>,
}

impl SelectorQModel {
    pub fn new(n_states: usize, k: usize) -> Self {
        Self {
            n_states,
            k,
            weights: vec![0.0; 2 * n_states + 4],
        }
    }

    fn features(&self, state: &SelectorState, cand: usize) -> Vec<(usize, f64)> {
        let s = state.states[cand];
        let xi = state.budgets.xi();
        let s_dim = self.n_states;
        vec![
            (s, 1.0),
            (s_dim + s, xi),
            (2 * s_dim, state.budgets.get(cand)),
            (2 * s_dim + 1, xi),
            (2 * s_dim + 2, state.step as f64 / self.k.max(1) as f64),
            (2 * s_dim + 3, 1.0),
        ]
    }

    pub fn q(&self, state: &SelectorState, cand: usize) -> f64 {
        self.features(state, cand).iter().map(|(i, v)| self.weights[*i] * v).sum()
    }

    /// Best unselected candidate, lowest id on ties.
    pub fn best(&self, state: &SelectorState) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..state.n_agents()).filter(|c| !state.is_selected(*c)) {
            let q = self.q(state, c);
            if best.is_none_or(|(_, b)| q > b) {
                best = Some((c, q));
            }
        }
        best
    }

    fn update(&mut self, feats: &[(usize, f64)], target: f64, lr: f64) {
        let pred: f64 = feats.iter().map(|(i, v)| self.weights[*i] * v).sum();
        let norm: f64 = 1.0 + feats.iter().map(|(_, v)| v * v).sum::<f64>();
        let step = lr * (target - pred) / norm;
        for (i, v) in feats {
            self.weights[*i] += step * v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlSelection {
    pub set: AttackSet,
    pub model: SelectorQModel,
    /// False when the greedy read-out was still changing at the end. The
    /// returned set is always the read-out with the largest predicted drop.
    pub converged: bool,
}

struct Sample {
    feats: Vec<(usize, f64)>,
    reward: f64,
    step: usize,
    next: Option<SelectorState>,
}

fn greedy_readout(model: &SelectorQModel, start: &SelectorState, k: usize, eps: f64) -> Result<Vec<usize>> {
    let mut st = start.clone();
    let mut ids = Vec::with_capacity(k);
    for _ in 0..k {
        let (c, _) = model.best(&st).expect("k <= n");
        ids.push(c);
        st = st.select(c, eps)?;
    }
    Ok(ids)
}

pub fn select_rl(v: &RobustValueModel, snapshot: &EnvSnapshot, k: usize, eps: f64, cfg: &RlSelectConfig, seed: u64) -> Result<RlSelection> {
    let n = snapshot.n_agents();
    check_k(k, n)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid(format!("selection budget {eps} outside (0, 1]"));
    }
    let mut model = SelectorQModel::new(v.n_states(), k);
    let finish = |ids: Vec<usize>, model: SelectorQModel, converged: bool| -> Result<RlSelection> {
        let rewards = super::step_rewards(v, snapshot, &ids, eps)?;
        Ok(RlSelection {
            set: AttackSet {
                ids,
                method: SelectionMethod::Rl,
                rewards,
                seed: Some(seed),
            },
            model,
            converged,
        })
    };
    if k == 0 {
        return finish(Vec::new(), model, true);
    }
    if cfg.episodes == 0 || cfg.batch_size == 0 || cfg.replay_capacity == 0 {
        return invalid("RL selection needs positive episodes, batch size and replay capacity");
    }
    let start = SelectorState::initial(snapshot);
    // Rewards are centered by a running mean per step index and scaled by
    // the first-step spread across candidates. Episodes have fixed length K,
    // so a per-step shift leaves the optimal selection unchanged, and it keeps
    // agent differences well above the shared part of the drop.
    let first: Vec<f64> = (0..n)
        .map(|c| Ok(selector_reward(v, &start.states, &start.mu, &start.budgets, &start.select(c, eps)?.budgets)?.0))
        .collect::<Result<_>>()?;
    let mean0 = first.iter().sum::<f64>() / n as f64;
    let spread = (first.iter().map(|r| (r - mean0).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = if spread > 1e-12 { 1.0 / spread } else { 1.0 };
    let mut baseline = vec![(0.0f64, 0usize); k];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut replay: VecDeque<Sample> = VecDeque::with_capacity(cfg.replay_capacity);
    let check_every = (cfg.episodes / 10).max(1);
    let mut readouts: Vec<Vec<usize>> = Vec::new();
    let mut best: Option<(f64, Vec<usize>)> = None;

    for ep in 0..cfg.episodes {
        let explore = exploration_rate(ep, cfg.episodes, cfg.eps_start, cfg.eps_end);
        let mut st = start.clone();
        for step in 0..k {
            let cand = if rng.random::<f64>() < explore {
                let free: Vec<usize> = (0..n).filter(|c| !st.is_selected(*c)).collect();
                free[rng.random_range(0..free.len())]
            } else {
                model.best(&st).expect("k <= n").0
            };
            let next = st.select(cand, eps)?;
            let (r, _) = selector_reward(v, &st.states, &st.mu, &st.budgets, &next.budgets)?;
            let b = &mut baseline[step];
            b.1 += 1;
            b.0 += (r - b.0) / b.1 as f64;
            if replay.len() == cfg.replay_capacity {
                replay.pop_front();
            }
            replay.push_back(Sample {
                feats: model.features(&st, cand),
                reward: r,
                step,
                next: (step + 1 < k).then(|| next.clone()),
            });
            for _ in 0..cfg.batch_size {
                let smp = &replay[rng.random_range(0..replay.len())];
                let boot = smp.next.as_ref().and_then(|s| model.best(s)).map_or(0.0, |(_, q)| q);
                let target = (smp.reward - baseline[smp.step].0) * scale + cfg.gamma * boot;
                let feats = smp.feats.clone();
                model.update(&feats, target, cfg.lr);
            }
            st = next;
        }
        if (ep + 1) % check_every == 0 || ep + 1 == cfg.episodes {
            let ids = greedy_readout(&model, &start, k, eps)?;
            let drop = predicted_drop(v, snapshot, &ids, eps)?;
            if best.as_ref().is_none_or(|(b, _)| drop > *b) {
                best = Some((drop, ids.clone()));
            }
            readouts.push(ids);
        }
    }
    if model.weights.iter().any(|w| !w.is_finite()) {
        return invalid("selector Q diverged");
    }
    let last = readouts.last().cloned().expect("at least one readout");
    let converged = readouts.len() < 2 || readouts[readouts.len() - 2] == last;
    if !converged {
        log::warn!("RL selection still changing after {} episodes", cfg.episodes);
    }
    // model selection over the read-outs, scored by the predicted drop
    let (_, ids) = best.expect("at least one readout");
    finish(ids, model, converged)
}
