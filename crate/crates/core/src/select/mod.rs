//! Upper-level selection of the attack set.
//!
//! Selecting agent n at step k moves its budget from 0 to ε and the
//! aggregate ξ by ε/N; the step reward is the resulting average drop of the
//! robust value at the initial configuration.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{degrees, EnvSnapshot};
use crate::error::{invalid, Result, VaiError};
use crate::mf::BudgetVector;
use crate::robust::RobustValueModel;

pub mod brute;
pub mod rl;

pub use brute::{select_bruteforce, write_scores, SubsetEvaluator, SubsetScore, ToyExactEvaluator};
pub use rl::{select_rl, RlSelectConfig, RlSelection, SelectorQModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionMethod {
    Greedy,
    Rl,
    Random,
    DegreeCentrality,
    Brute,
}

impl SelectionMethod {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "greedy" => Self::Greedy,
            "rl" => Self::Rl,
            "random" => Self::Random,
            "dc" => Self::DegreeCentrality,
            "brute" => Self::Brute,
            other => return invalid(format!("unknown selection method `{other}`")),
        })
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Rl => "rl",
            Self::Random => "random",
            Self::DegreeCentrality => "dc",
            Self::Brute => "brute",
        }
    }
}

/// Ordered selection with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSet {
    pub ids: Vec<usize>,
    pub method: SelectionMethod,
    /// Selector reward of each step; empty for methods that do not use V.
    pub rewards: Vec<f64>,
    pub seed: Option<u64>,
}

impl AttackSet {
    pub fn new(ids: Vec<usize>, n_agents: usize, method: SelectionMethod) -> Result<Self> {
        validate_ids(&ids, n_agents)?;
        Ok(Self {
            ids,
            method,
            rewards: Vec::new(),
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn budgets(&self, n_agents: usize, eps: f64) -> Result<BudgetVector> {
        BudgetVector::for_attack_set(n_agents, &self.ids, eps)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("method {}\n", self.method.tag());
        let _ = writeln!(out, "seed {}", self.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into()));
        let ids: Vec<String> = self.ids.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(out, "ids {}", ids.join(" "));
        let rewards: Vec<String> = self.rewards.iter().map(|r| r.to_string()).collect();
        let _ = writeln!(out, "rewards {}", rewards.join(" "));
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| VaiError::InvalidInput(format!("attack set record: {m}"));
        let mut method = None;
        let mut seed = None;
        let mut ids = None;
        let mut rewards = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            match k {
                "method" => method = Some(SelectionMethod::parse(v.trim())?),
                "seed" => {
                    seed = match v.trim() {
                        "-" => None,
                        s => Some(s.parse().map_err(|_| bad("seed"))?),
                    }
                }
                "ids" => ids = Some(v.split_whitespace().map(|t| t.parse().map_err(|_| bad("ids"))).collect::<Result<Vec<usize>>>()?),
                "rewards" => rewards = v.split_whitespace().map(|t| t.parse().map_err(|_| bad("rewards"))).collect::<Result<Vec<f64>>>()?,
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        Ok(Self {
            ids: ids.ok_or_else(|| bad("missing ids"))?,
            method: method.ok_or_else(|| bad("missing method"))?,
            rewards,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn validate_ids(ids: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in ids {
        if i >= n {
            return invalid(format!("agent id {i} out of range for N = {n}"));
        }
        if seen[i] {
            return invalid(format!("agent id {i} selected twice"));
        }
        seen[i] = true;
    }
    Ok(())
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k > n {
        return invalid(format!("K = {k} exceeds N = {n}"));
    }
    Ok(())
}

/// Initial local states and mean field the selector conditions on.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorState {
    pub states: Vec<usize>,
    pub mu: Vec<f64>,
    pub budgets: BudgetVector,
    pub step: usize,
}

impl SelectorState {
    pub fn initial(snapshot: &EnvSnapshot) -> Self {
        Self {
            states: snapshot.states.iter().map(|s| s.0).collect(),
            mu: snapshot.mu.probs().to_vec(),
            budgets: BudgetVector::zeros(snapshot.n_agents()),
            step: 0,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.states.len()
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.budgets.get(i) > 0.0
    }

    pub fn select(&self, agent: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            states: self.states.clone(),
            mu: self.mu.clone(),
            budgets: self.budgets.with_agent(agent, eps)?,
            step: self.step + 1,
        })
    }
}

/// Mean value over agents at the given budgets.
pub fn mean_value(v: &RobustValueModel, states: &[usize], mu: &[f64], budgets: &BudgetVector) -> f64 {
    let xi = budgets.xi();
    states.iter().enumerate().map(|(i, s)| v.value(*s, mu, budgets.get(i), xi)).sum::<f64>() / states.len() as f64
}

/// Average value drop from `prev` to `next` budgets. The flag is true when
/// the budgets are identical (a degenerate step that scores 0).
pub fn selector_reward(v: &RobustValueModel, states: &[usize], mu: &[f64], prev: &BudgetVector, next: &BudgetVector) -> Result<(f64, bool)> {
    let n = states.len();
    if prev.len() != n || next.len() != n || n == 0 {
        return invalid("selector_reward: budgets and states must cover the same agents");
    }
    let changed = (0..n).filter(|i| prev.get(*i) != next.get(*i)).count();
    match changed {
        0 => Ok((0.0, true)),
        1 => {
            let (xp, xn) = (prev.xi(), next.xi());
            let drop = states
                .iter()
                .enumerate()
                .map(|(i, s)| v.value(*s, mu, prev.get(i), xp) - v.value(*s, mu, next.get(i), xn))
                .sum::<f64>()
                / n as f64;
            Ok((drop, false))
        }
        c => invalid(format!("selector_reward: {c} agents changed budget, expected 1")),
    }
}

/// Picks, K times, the unselected agent whose selection drops the value
/// most. Ties go to the lowest id.
pub fn select_greedy(v: &RobustValueModel, snapshot: &EnvSnapshot, k: usize, eps: f64) -> Result<AttackSet> {
    let n = snapshot.n_agents();
    check_k(k, n)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid(format!("selection budget {eps} outside (0, 1]"));
    }
    let mut state = SelectorState::initial(snapshot);
    let mut ids = Vec::with_capacity(k);
    let mut rewards = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, f64, SelectorState)> = None;
        for cand in (0..n).filter(|i| !state.is_selected(*i)) {
            let next = state.select(cand, eps)?;
            let (r, _) = selector_reward(v, &state.states, &state.mu, &state.budgets, &next.budgets)?;
            if best.as_ref().is_none_or(|(_, b, _)| r > *b) {
                best = Some((cand, r, next));
            }
        }
        let (id, r, next) = best.expect("k <= n leaves a candidate");
        ids.push(id);
        rewards.push(r);
        state = next;
    }
    Ok(AttackSet {
        ids,
        method: SelectionMethod::Greedy,
        rewards,
        seed: None,
    })
}

/// Total predicted drop of attacking `ids` with budget `eps`, from zero budgets.
pub fn predicted_drop(v: &RobustValueModel, snapshot: &EnvSnapshot, ids: &[usize], eps: f64) -> Result<f64> {
    let n = snapshot.n_agents();
    let state = SelectorState::initial(snapshot);
    let full = BudgetVector::for_attack_set(n, ids, eps)?;
    Ok(mean_value(v, &state.states, &state.mu, &state.budgets) - mean_value(v, &state.states, &state.mu, &full))
}

/// Per-step selector rewards along a fixed selection order.
pub fn step_rewards(v: &RobustValueModel, snapshot: &EnvSnapshot, ids: &[usize], eps: f64) -> Result<Vec<f64>> {
    let mut state = SelectorState::initial(snapshot);
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let next = state.select(id, eps)?;
        out.push(selector_reward(v, &state.states, &state.mu, &state.budgets, &next.budgets)?.0);
        state = next;
    }
    Ok(out)
}

/// Uniform K-subset, in the order drawn.
pub fn select_random(n: usize, k: usize, seed: u64) -> Result<AttackSet> {
    check_k(k, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids = rand::seq::index::sample(&mut rng, n, k).into_vec();
    Ok(AttackSet {
        ids,
        method: SelectionMethod::Random,
        rewards: Vec::new(),
        seed: Some(seed),
    })
}

/// The K agents with the most neighbors, ties by lowest id.
pub fn select_degree_centrality(graph: &[Vec<bool>], k: usize) -> Result<AttackSet> {
    let n = graph.len();
    check_k(k, n)?;
    for (i, row) in graph.iter().enumerate() {
        if row.len() != n || row[i] {
            return invalid("graph must be square with an empty diagonal");
        }
        if (0..n).any(|j| graph[j][i] != row[j]) {
            return invalid("graph must be symmetric");
        }
    }
    let deg = degrees(graph);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| deg[*b].cmp(&deg[*a]).then(a.cmp(b)));
    order.truncate(k);
    Ok(AttackSet {
        ids: order,
        method: SelectionMethod::DegreeCentrality,
        rewards: Vec::new(),
        seed: None,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::envs::{Env, ToyConfig, ToyEnv};
    use crate::learn::MeanFieldCoder;
    use crate::mf::NormOrder;
    use proptest::prelude::*;

    /// Tabular V over `weights.len()` states with V = 1 − w·W(s).
    pub(crate) fn table_v(sensitivity: &[f64]) -> RobustValueModel {
        let coeffs = sensitivity.iter().flat_map(|w| [1.0, -w]).collect();
        RobustValueModel::tabular(sensitivity.len(), MeanFieldCoder::ignore(), 0.9, NormOrder::infinity(), coeffs).unwrap()
    }

    /// Toy whose agent i starts in state i.
    pub(crate) fn toy_snapshot(n: usize) -> EnvSnapshot {
        let mut cfg = ToyConfig::random(n, n, 4, 0);
        cfg.initial_states = (0..n).collect();
        ToyEnv::new(cfg).unwrap().reset(0).unwrap()
    }

    #[test]
    fn unchanged_budgets_are_degenerate() {
        let v = table_v(&[1.0, 2.0, 3.0]);
        let b = BudgetVector::for_attack_set(3, &[1], 1.0).unwrap();
        assert_eq!(selector_reward(&v, &[0, 1, 2], &[1.0 / 3.0; 3], &b, &b).unwrap(), (0.0, true));
    }

    #[test]
    fn budget_insensitive_value_scores_zero() {
        let v = RobustValueModel::constant(3, 0.9, &[1.0, 5.0, -2.0]).unwrap();
        let snap = toy_snapshot(3);
        let set = select_greedy(&v, &snap, 2, 1.0).unwrap();
        assert!(set.rewards.iter().all(|r| *r == 0.0));
        assert_eq!(set.ids, vec![0, 1]);
    }

    #[test]
    fn hand_summed_drop() {
        // V(s, ε, ξ) = 1 − (ε + ξ + εξ)·W(s) with W = [1, 2, 3]
        let v = table_v(&[1.0, 2.0, 3.0]);
        let prev = BudgetVector::zeros(3);
        let next = prev.with_agent(1, 1.0).unwrap();
        let (r, deg) = selector_reward(&v, &[0, 1, 2], &[1.0 / 3.0; 3], &prev, &next).unwrap();
        // ξ = 1/3: agent 1 weight 1 + 1/3 + 1/3 = 5/3, others 1/3
        let want = (1.0 / 3.0 * 1.0 + 5.0 / 3.0 * 2.0 + 1.0 / 3.0 * 3.0) / 3.0;
        assert!(!deg);
        assert!((r - want).abs() < 1e-12);
    }

    #[test]
    fn two_changes_are_rejected() {
        let v = table_v(&[1.0, 2.0]);
        let next = BudgetVector::for_attack_set(2, &[0, 1], 1.0).unwrap();
        assert!(selector_reward(&v, &[0, 1], &[0.5, 0.5], &BudgetVector::zeros(2), &next).is_err());
    }

    #[test]
    fn greedy_picks_most_sensitive_first() {
        let v = table_v(&[0.1, 0.2, 5.0, 0.3]);
        let set = select_greedy(&v, &toy_snapshot(4), 1, 1.0).unwrap();
        assert_eq!(set.ids, vec![2]);
    }

    #[test]
    fn greedy_exhausts_and_rejects_large_k() {
        let v = table_v(&[0.3, 0.1, 0.2]);
        let snap = toy_snapshot(3);
        assert_eq!(select_greedy(&v, &snap, 3, 1.0).unwrap().ids, vec![0, 2, 1]);
        assert!(select_greedy(&v, &snap, 4, 1.0).is_err());
    }

    #[test]
    fn greedy_rewards_telescope() {
        let v = table_v(&[0.3, 0.1, 0.2, 0.7, 0.05]);
        let snap = toy_snapshot(5);
        let set = select_greedy(&v, &snap, 3, 0.8).unwrap();
        let total = predicted_drop(&v, &snap, &set.ids, 0.8).unwrap();
        assert!((set.rewards.iter().sum::<f64>() - total).abs() < 1e-12);
        assert_eq!(step_rewards(&v, &snap, &set.ids, 0.8).unwrap(), set.rewards);
    }

    #[test]
    fn greedy_is_near_subset_optimum() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let snap = toy_snapshot(5);
        for _ in 0..20 {
            let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0)).collect();
            let v = table_v(&w);
            let g = predicted_drop(&v, &snap, &select_greedy(&v, &snap, 2, 1.0).unwrap().ids, 1.0).unwrap();
            let mut best = f64::NEG_INFINITY;
            for a in 0..5 {
                for b in (a + 1)..5 {
                    best = best.max(predicted_drop(&v, &snap, &[a, b], 1.0).unwrap());
                }
            }
            assert!(g >= 0.9 * best);
        }
    }

    #[test]
    fn degree_centrality_examples() {
        let path = vec![vec![false, true, false], vec![true, false, true], vec![false, true, false]];
        assert_eq!(select_degree_centrality(&path, 1).unwrap().ids, vec![1]);
        let complete: Vec<Vec<bool>> = (0..4).map(|i| (0..4).map(|j| i != j).collect()).collect();
        assert_eq!(select_degree_centrality(&complete, 2).unwrap().ids, vec![0, 1]);
        assert!(select_degree_centrality(&complete, 5).is_err());
        let asym = vec![vec![false, true], vec![false, false]];
        assert!(select_degree_centrality(&asym, 1).is_err());
    }

    #[test]
    fn random_is_reproducible() {
        assert_eq!(select_random(10, 4, 7).unwrap(), select_random(10, 4, 7).unwrap());
        assert!(select_random(3, 4, 0).is_err());
    }

    #[test]
    fn record_round_trip() {
        let mut s = select_random(9, 3, 11).unwrap();
        s.rewards = vec![0.1, 1.0 / 3.0, -2e-9];
        assert_eq!(AttackSet::from_text(&s.to_text()).unwrap(), s);
        assert!(AttackSet::new(vec![1, 1], 3, SelectionMethod::Brute).is_err());
    }

    proptest! {
        #[test]
        fn selectors_return_valid_sets(n in 2usize..12, k_frac in 0.0f64..1.0, seed in 0u64..1000) {
            let k = ((n as f64) * k_frac) as usize;
            for set in [select_random(n, k, seed).unwrap()] {
                prop_assert_eq!(set.len(), k);
                prop_assert!(validate_ids(&set.ids, n).is_ok());
            }
            let w: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 13) as f64 / 13.0).collect();
            let v = table_v(&w);
            let g = select_greedy(&v, &toy_snapshot(n), k, 1.0).unwrap();
            prop_assert_eq!(g.len(), k);
            prop_assert!(validate_ids(&g.ids, n).is_ok());
        }

        #[test]
        fn greedy_is_permutation_equivariant(seed in 0u64..500) {
            use rand::seq::SliceRandom;
            let n = 6;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // distinct sensitivities so ties cannot interfere
            let mut w: Vec<f64> = (0..n).map(|i| 0.1 + i as f64 * 0.37).collect();
            w.shuffle(&mut rng);
            let v = table_v(&w);
            let base = select_greedy(&v, &toy_snapshot(n), 3, 1.0).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            // agent perm[i] now starts where agent i did
            let mut snap = toy_snapshot(n);
            let orig = snap.states.clone();
            for i in 0..n {
                snap.states[perm[i]] = orig[i];
            }
            let moved = select_greedy(&v, &snap, 3, 1.0).unwrap();
            let want: Vec<usize> = base.ids.iter().map(|i| perm[*i]).collect();
            prop_assert_eq!(moved.ids, want);
        }
    }
}
