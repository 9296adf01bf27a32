//! Policies. A [`BehaviorPolicy`] may read the whole snapshot (rule-based
//! victims need neighbor poses); a [`LocalPolicy`] only sees the agent's own
//! state and the public mean fields, which is all an adversary gets.

use crate::envs::{EnvSnapshot, VicsekRulePolicy};
use crate::error::{invalid, Result};
use crate::mf::ActionDist;

use super::QModel;

/// What a black-box agent observes at one step.
#[derive(Debug, Clone, Copy)]
pub struct LocalView<'a> {
    pub state: usize,
    pub mu: &'a [f64],
    /// Empirical action field of the previous step.
    pub nu_prev: &'a [f64],
}

impl<'a> LocalView<'a> {
    pub fn of(snapshot: &'a EnvSnapshot, agent: usize) -> Self {
        Self {
            state: snapshot.states[agent].0,
            mu: snapshot.mu.probs(),
            nu_prev: snapshot.nu_prev.probs(),
        }
    }
}

pub trait LocalPolicy: Send + Sync {
    fn local_dist(&self, view: &LocalView) -> ActionDist;
}

pub trait BehaviorPolicy: Send + Sync {
    fn action_dist(&self, snapshot: &EnvSnapshot, agent: usize) -> ActionDist;
}

/// probs[a] ∝ exp(Q(s, a, μ, ν̄)/temperature).
pub fn boltzmann(q: &QModel, s: usize, mu: &[f64], nu_bar: &[f64], temperature: f64) -> Result<ActionDist> {
    if !(temperature > 0.0) {
        return invalid(format!("temperature {temperature} must be positive"));
    }
    Ok(softmax(&q.q_row(s, mu, nu_bar), temperature))
}

pub(crate) fn softmax(row: &[f64], temperature: f64) -> ActionDist {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = row.iter().map(|v| ((v - m) / temperature).exp()).collect();
    ActionDist::from_weights(w).expect("max entry has weight one")
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoltzmannPolicy {
    pub q: QModel,
    pub temperature: f64,
}

impl BoltzmannPolicy {
    pub fn new(q: QModel, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return invalid(format!("temperature {temperature} must be positive"));
        }
        Ok(Self { q, temperature })
    }
}

impl LocalPolicy for BoltzmannPolicy {
    fn local_dist(&self, view: &LocalView) -> ActionDist {
        softmax(&self.q.q_row(view.state, view.mu, view.nu_prev), self.temperature)
    }
}

impl BehaviorPolicy for BoltzmannPolicy {
    fn action_dist(&self, snapshot: &EnvSnapshot, agent: usize) -> ActionDist {
        self.local_dist(&LocalView::of(snapshot, agent))
    }
}

/// Explicit per-state action distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePolicy {
    pub dists: Vec<ActionDist>,
}

impl LocalPolicy for TablePolicy {
    fn local_dist(&self, view: &LocalView) -> ActionDist {
        self.dists[view.state].clone()
    }
}

impl BehaviorPolicy for TablePolicy {
    fn action_dist(&self, snapshot: &EnvSnapshot, agent: usize) -> ActionDist {
        self.local_dist(&LocalView::of(snapshot, agent))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl LocalPolicy for UniformPolicy {
    fn local_dist(&self, _view: &LocalView) -> ActionDist {
        ActionDist::uniform(self.n_actions).expect("positive action count")
    }
}

impl BehaviorPolicy for UniformPolicy {
    fn action_dist(&self, _snapshot: &EnvSnapshot, _agent: usize) -> ActionDist {
        ActionDist::uniform(self.n_actions).expect("positive action count")
    }
}

impl BehaviorPolicy for VicsekRulePolicy {
    fn action_dist(&self, snapshot: &EnvSnapshot, agent: usize) -> ActionDist {
        self.rule_dist(snapshot, agent)
    }
}

/// The frozen cooperative policy π_β.
#[derive(Debug, Clone)]
pub enum VictimPolicy {
    Rule(VicsekRulePolicy),
    Boltzmann(BoltzmannPolicy),
    Table(TablePolicy),
    Uniform(UniformPolicy),
}

impl VictimPolicy {
    /// Order-sensitive hash of every parameter, used to prove the victim is
    /// never modified by attacks.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::new();
        match self {
            Self::Rule(r) => bytes.extend(format!("rule:{r:?}").into_bytes()),
            Self::Boltzmann(b) => {
                bytes.extend(b.temperature.to_le_bytes());
                for v in b.q.values() {
                    bytes.extend(v.to_le_bytes());
                }
            }
            Self::Table(t) => {
                for d in &t.dists {
                    for p in d.probs() {
                        bytes.extend(p.to_le_bytes());
                    }
                }
            }
            Self::Uniform(u) => bytes.extend(u.n_actions.to_le_bytes()),
        }
        crate::harness::config::fnv1a(&bytes)
    }

    pub fn q_model(&self) -> Option<&QModel> {
        match self {
            Self::Boltzmann(b) => Some(&b.q),
            _ => None,
        }
    }
}

impl BehaviorPolicy for VictimPolicy {
    fn action_dist(&self, snapshot: &EnvSnapshot, agent: usize) -> ActionDist {
        match self {
            Self::Rule(p) => p.action_dist(snapshot, agent),
            Self::Boltzmann(p) => p.action_dist(snapshot, agent),
            Self::Table(p) => p.action_dist(snapshot, agent),
            Self::Uniform(p) => p.action_dist(snapshot, agent),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{Backend, MeanFieldCoder};
    use proptest::prelude::*;

    fn model(row: &[f64]) -> QModel {
        let mut q = QModel::new(Backend::Tabular, 1, row.len(), MeanFieldCoder::ignore(), MeanFieldCoder::ignore(), 0.5).unwrap();
        q.values_mut().copy_from_slice(row);
        q
    }

    #[test]
    fn softmax_closed_forms() {
        let nu = [1.0 / 3.0; 3];
        let d = boltzmann(&model(&[1.0, 1.0, 1.0]), 0, &[1.0], &nu, 0.7).unwrap();
        for p in d.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let d = boltzmann(&model(&[0.0, 2f64.ln()]), 0, &[1.0], &[0.5, 0.5], 1.0).unwrap();
        assert!((d.probs()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d.probs()[1] - 2.0 / 3.0).abs() < 1e-12);
        let d = boltzmann(&model(&[0.0, 1.0, 0.5]), 0, &[1.0], &nu, 1e-4).unwrap();
        assert!(d.probs()[1] > 1.0 - 1e-12);
        assert!(boltzmann(&model(&[0.0]), 0, &[1.0], &[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn shift_invariant(row in prop::collection::vec(-5.0f64..5.0, 2..6), c in -100.0f64..100.0, t in 0.05f64..5.0) {
            let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
            let a = softmax(&row, t);
            let b = softmax(&shifted, t);
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
