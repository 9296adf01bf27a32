//! Budget-conditioned robust values.
//!
//! The regularized backup is
//! `(B V)(s, μ, ε, ξ) = r + γ·V(s', μ', ε, ξ) − (ε + ξ + εξ)·‖Q(s, ·, μ, ν_β)‖_q`,
//! a γ-contraction in V for every fixed (ε, ξ).

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::learn::rollout::{Corpus, Transition};
use crate::learn::{Backend, MeanFieldCoder, QModel};
use crate::mf::{norm_unchecked, NormOrder};

pub mod gap;
pub mod value;

pub use gap::{worst_case_gap, worst_case_gap_row};
pub use value::{fit_robust_value, BudgetSampling, RobustFitConfig, RobustValueModel};

/// Which norm of Q the budgets multiply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerSpec {
    /// Order of the perturbation balls; the regularizer uses its dual q.
    pub order: NormOrder,
    /// Take the norm jointly over (own action, mean-field vertex) instead of
    /// the own action alone.
    pub joint_action: bool,
    /// Subtract the mean over the normed entries first. Perturbations of a
    /// distribution sum to zero, so the bound still holds and no longer
    /// scales with the reward offset.
    pub centered: bool,
}

impl RegularizerSpec {
    pub fn new(p: f64, joint_action: bool) -> Result<Self> {
        Ok(Self {
            order: NormOrder::new(p)?,
            joint_action,
            centered: false,
        })
    }

    pub fn q(&self) -> f64 {
        self.order.q()
    }
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        Self {
            order: NormOrder::infinity(),
            joint_action: false,
            centered: false,
        }
    }
}

/// ‖Q(s, ·, μ, ν)‖_q, or the joint variant over (a, b) with ν at vertex δ_b.
pub fn q_norm(q: &QModel, s: usize, mu: &[f64], nu: &[f64], spec: &RegularizerSpec) -> f64 {
    if spec.joint_action {
        let na = q.n_actions();
        let mut vertex = vec![0.0; na];
        let mut all = Vec::with_capacity(na * na);
        for b in 0..na {
            vertex.iter_mut().for_each(|v| *v = 0.0);
            vertex[b] = 1.0;
            all.extend(q.q_row(s, mu, &vertex));
        }
        norm_of(all, spec)
    } else {
        norm_of(q.q_row(s, mu, nu), spec)
    }
}

fn norm_of(mut row: Vec<f64>, spec: &RegularizerSpec) -> f64 {
    if spec.centered {
        let m = row.iter().sum::<f64>() / row.len() as f64;
        row.iter_mut().for_each(|v| *v -= m);
    }
    norm_unchecked(&row, spec.q())
}

/// ε + ξ + εξ.
pub fn budget_weight(eps: f64, xi: f64) -> f64 {
    eps + xi + eps * xi
}

/// (ε + ξ + εξ)·‖Q(s, ·, μ, ν_β)‖_q.
pub fn regularizer(q: &QModel, s: usize, mu: &[f64], nu_beta: &[f64], eps: f64, xi: f64, spec: &RegularizerSpec) -> f64 {
    budget_weight(eps, xi) * q_norm(q, s, mu, nu_beta, spec)
}

/// A single cooperative transition as seen by the robust backup.
#[derive(Debug, Clone, Copy)]
pub struct RobustSample<'a> {
    pub s: usize,
    pub mu: &'a [f64],
    pub nu: &'a [f64],
    pub reward: f64,
    pub s_next: usize,
    pub mu_next: &'a [f64],
}

impl<'a> RobustSample<'a> {
    pub fn from_corpus(corpus: &'a Corpus, t: &Transition) -> Self {
        let cur = &corpus.steps[t.step];
        Self {
            s: t.s,
            mu: &cur.mu,
            nu: &cur.nu,
            reward: cur.reward,
            s_next: t.s_next,
            mu_next: &corpus.steps[t.next].mu,
        }
    }
}

/// r + γ·V(s', μ', ε, ξ) − (ε + ξ + εξ)·‖Q(s, ·, μ, ν)‖_q.
pub fn apply_robust_bellman(
    v: &RobustValueModel,
    q: &QModel,
    sample: &RobustSample,
    eps: f64,
    xi: f64,
    spec: &RegularizerSpec,
) -> f64 {
    sample.reward + v.gamma() * v.value(sample.s_next, sample.mu_next, eps, xi)
        - regularizer(q, sample.s, sample.mu, sample.nu, eps, xi, spec)
}

/// Settings for the cooperative Q fit.
#[derive(Debug, Clone, PartialEq)]
pub struct QFitConfig {
    pub backend: Backend,
    pub gamma: f64,
    pub mu_coder: MeanFieldCoder,
    pub nu_coder: MeanFieldCoder,
    pub max_sweeps: usize,
    pub tol: f64,
    pub ridge: f64,
}

impl Default for QFitConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Tabular,
            gamma: 0.95,
            mu_coder: MeanFieldCoder::ignore(),
            nu_coder: MeanFieldCoder::ignore(),
            max_sweeps: 2000,
            tol: 1e-10,
            ridge: 1e-8,
        }
    }
}

/// Policy evaluation of the behavior policy from a cooperative corpus:
/// minimizes the squared residual of r + γQ(s', a', μ', ν') − Q(s, a, μ, ν).
/// Tabular fits iterate cell averages to the fixed point; linear fits solve
/// the LSTD normal equations.
pub fn fit_cooperative_q(corpus: &Corpus, cfg: &QFitConfig) -> Result<QModel> {
    if corpus.transitions.is_empty() {
        return invalid("fit_cooperative_q: empty corpus");
    }
    let mut q = QModel::new(cfg.backend, corpus.n_states, corpus.n_actions, cfg.mu_coder, cfg.nu_coder, cfg.gamma)?;
    match cfg.backend {
        Backend::Tabular => {
            let cells: Vec<(usize, usize)> = corpus
                .transitions
                .iter()
                .map(|t| {
                    let cur = &corpus.steps[t.step];
                    let nxt = &corpus.steps[t.next];
                    (q.cell(t.s, t.a, &cur.mu, &cur.nu), q.cell(t.s_next, t.a_next, &nxt.mu, &nxt.nu))
                })
                .collect();
            let mut count = vec![0usize; q.values().len()];
            for (c, _) in &cells {
                count[*c] += 1;
            }
            let mut sums = vec![0.0; count.len()];
            for _ in 0..cfg.max_sweeps {
                sums.iter_mut().for_each(|x| *x = 0.0);
                for (t, (c, cn)) in corpus.transitions.iter().zip(&cells) {
                    sums[*c] += corpus.reward(t) + cfg.gamma * q.values()[*cn];
                }
                let mut delta = 0.0f64;
                for (i, v) in q.values_mut().iter_mut().enumerate() {
                    if count[i] > 0 {
                        let nv = sums[i] / count[i] as f64;
                        delta = delta.max((nv - *v).abs());
                        *v = nv;
                    }
                }
                fill_unvisited(&mut q, &count);
                if delta < cfg.tol {
                    break;
                }
            }
        }
        Backend::Linear => {
            let d = q.values().len();
            let mut a = DMatrix::<f64>::zeros(d, d);
            let mut b = DVector::<f64>::zeros(d);
            for t in &corpus.transitions {
                let cur = &corpus.steps[t.step];
                let nxt = &corpus.steps[t.next];
                let f = q.features(t.s, t.a, &cur.mu, &cur.nu);
                let mut g: Vec<(usize, f64)> = f.clone();
                g.extend(q.features(t.s_next, t.a_next, &nxt.mu, &nxt.nu).into_iter().map(|(i, x)| (i, -cfg.gamma * x)));
                for &(i, xi) in &f {
                    for &(j, xj) in &g {
                        a[(i, j)] += xi * xj;
                    }
                    b[i] += xi * cur.reward;
                }
            }
            let w = solve_ridge(a, b, cfg.ridge)?;
            q.values_mut().copy_from_slice(w.as_slice());
        }
    }
    Ok(q)
}

/// Unvisited tabular cells take the visit-weighted mean of the visited
/// actions in the same (s, μ-code, ν-code) group, else of state s, else of
/// the whole table. Actions the behavior policy never takes thus look like
/// the behavior value instead of zero.
fn fill_unvisited(q: &mut QModel, count: &[usize]) {
    let na = q.n_actions();
    let groups = q.mu_coder().buckets * q.nu_coder().buckets;
    let per_state = na * groups;
    let mean = |vals: &[f64], idx: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let (mut s, mut n) = (0.0, 0usize);
        for i in idx {
            if count[i] > 0 {
                s += count[i] as f64 * vals[i];
                n += count[i];
            }
        }
        (n > 0).then(|| s / n as f64)
    };
    let vals = q.values().to_vec();
    let global = mean(&vals, &mut (0..vals.len())).unwrap_or(0.0);
    let out = q.values_mut();
    for s in 0..vals.len() / per_state {
        let base = s * per_state;
        let state_mean = mean(&vals, &mut (base..base + per_state)).unwrap_or(global);
        for g in 0..groups {
            // cell (s, a, g) lives at base + a·groups + g
            let group_mean = mean(&vals, &mut (0..na).map(|a| base + a * groups + g)).unwrap_or(state_mean);
            for a in 0..na {
                let i = base + a * groups + g;
                if count[i] == 0 {
                    out[i] = group_mean;
                }
            }
        }
    }
}

pub(crate) fn solve_ridge(mut a: DMatrix<f64>, b: DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let scale = (0..a.nrows()).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    for i in 0..a.nrows() {
        a[(i, i)] += ridge * scale;
    }
    match a.lu().solve(&b) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
        _ => invalid("least-squares system is singular; increase the ridge"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::rollout::CorpusStep;

    fn single_state_q(row: &[f64]) -> QModel {
        QModel::from_parts(
            Backend::Tabular,
            1,
            row.len(),
            MeanFieldCoder::ignore(),
            MeanFieldCoder::ignore(),
            0.9,
            row.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn regularizer_closed_forms() {
        let spec = RegularizerSpec::default();
        let q = single_state_q(&[1.0, -2.0]);
        assert_eq!(regularizer(&q, 0, &[1.0], &[0.5, 0.5], 0.0, 0.0, &spec), 0.0);
        assert_eq!(regularizer(&q, 0, &[1.0], &[0.5, 0.5], 1.0, 1.0, &spec), 9.0);
        let q = single_state_q(&[2.0, 2.0]);
        assert!((regularizer(&q, 0, &[1.0], &[0.5, 0.5], 0.5, 0.25, &spec) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn regularizer_decomposes() {
        let spec = RegularizerSpec::default();
        let q = single_state_q(&[0.3, -1.7, 2.2]);
        let nu = [1.0 / 3.0; 3];
        let norm = q_norm(&q, 0, &[1.0], &nu, &spec);
        for (e, x) in [(0.2, 0.7), (1.0, 0.0), (0.5, 0.5), (0.9, 0.1)] {
            let lhs = regularizer(&q, 0, &[1.0], &nu, e, x, &spec);
            let rhs = regularizer(&q, 0, &[1.0], &nu, e, 0.0, &spec) + regularizer(&q, 0, &[1.0], &nu, 0.0, x, &spec) + e * x * norm;
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn joint_norm_spans_vertices() {
        // tabular Q ignores ν, so the joint norm is |A| times the own norm for q = 1
        let spec = RegularizerSpec { joint_action: true, ..Default::default() };
        let q = single_state_q(&[1.0, -3.0]);
        assert_eq!(q_norm(&q, 0, &[1.0], &[0.5, 0.5], &spec), 8.0);
    }

    /// Deterministic 2-state chain: state 0 → 1 → 0 with rewards 1 and 0.
    fn chain_corpus(gamma: f64) -> (Corpus, QFitConfig) {
        let steps = vec![
            CorpusStep { mu: vec![1.0, 0.0], nu: vec![1.0, 0.0], reward: 1.0 },
            CorpusStep { mu: vec![0.0, 1.0], nu: vec![0.0, 1.0], reward: 0.0 },
            CorpusStep { mu: vec![1.0, 0.0], nu: vec![1.0, 0.0], reward: f64::NAN },
        ];
        let transitions = vec![
            Transition { step: 0, next: 1, s: 0, a: 0, s_next: 1, a_next: 1 },
            Transition { step: 1, next: 2, s: 1, a: 1, s_next: 0, a_next: 0 },
        ];
        let corpus = Corpus { n_states: 2, n_actions: 2, steps, transitions };
        (corpus, QFitConfig { gamma, ..Default::default() })
    }

    #[test]
    fn tabular_q_matches_linear_solve() {
        let (corpus, cfg) = chain_corpus(0.9);
        let q = fit_cooperative_q(&corpus, &cfg).unwrap();
        // V0 = 1 + γ V1, V1 = γ V0
        let v0 = 1.0 / (1.0 - 0.81);
        assert!((q.q(0, 0, &[1.0, 0.0], &[1.0, 0.0]) - v0).abs() < 1e-6);
        assert!((q.q(1, 1, &[0.0, 1.0], &[0.0, 1.0]) - 0.9 * v0).abs() < 1e-6);
        let mut doubled = corpus.clone();
        doubled.transitions.extend(corpus.transitions.clone());
        let q2 = fit_cooperative_q(&doubled, &cfg).unwrap();
        assert!((q2.q(0, 0, &[1.0, 0.0], &[1.0, 0.0]) - v0).abs() < 1e-6);
    }

    #[test]
    fn myopic_q_is_mean_reward() {
        let (corpus, cfg) = chain_corpus(0.0);
        let q = fit_cooperative_q(&corpus, &cfg).unwrap();
        assert_eq!(q.q(0, 0, &[1.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(q.q(1, 1, &[0.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn linear_q_on_chain() {
        let (corpus, mut cfg) = chain_corpus(0.9);
        cfg.backend = Backend::Linear;
        let q = fit_cooperative_q(&corpus, &cfg).unwrap();
        let v0 = 1.0 / (1.0 - 0.81);
        assert!((q.q(0, 0, &[1.0, 0.0], &[1.0, 0.0]) - v0).abs() < 5e-2 * v0);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let (mut corpus, cfg) = chain_corpus(0.9);
        corpus.transitions.clear();
        assert!(fit_cooperative_q(&corpus, &cfg).is_err());
    }
}
