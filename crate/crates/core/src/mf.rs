//! Mean-field primitives: empirical state/action fields, PR-MDP policy
//! mixing, ℓp norms with their duals, and perturbation budgets.
//!
//! All types here are immutable values. Probability vectors are validated
//! (and optionally renormalized) at construction only; operations never
//! renormalize silently.

use rand::Rng;

use crate::error::{invalid, Result};

/// Tolerance on probability-vector sums.
pub const PROB_TOL: f64 = 1e-9;

/// Slack added to closed-form deviation bounds to absorb rounding.
pub const BOUND_SLACK: f64 = 1e-9;

/// A discretized per-agent state index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocalState(pub usize);

impl LocalState {
    pub fn index(self) -> usize {
        self.0
    }
}

fn check_distribution(probs: &[f64], what: &str) -> Result<()> {
    if probs.is_empty() {
        return invalid(format!("{what}: empty probability vector"));
    }
    if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return invalid(format!("{what}: entry {bad} is negative or non-finite"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return invalid(format!("{what}: entries sum to {sum}, expected 1"));
    }
    Ok(())
}

fn normalize(weights: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return invalid(format!("{what}: weights must be finite and non-negative"));
    }
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return invalid(format!("{what}: weights sum to zero"));
    }
    Ok(weights.into_iter().map(|w| w / sum).collect())
}

macro_rules! probability_vector {
    ($(#[$meta:meta])* $name:ident, $label:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            probs: Vec<f64>,
        }

        impl $name {
            /// Validates that `probs` is a probability vector.
            pub fn new(probs: Vec<f64>) -> Result<Self> {
                check_distribution(&probs, $label)?;
                Ok(Self { probs })
            }

            /// Renormalizes non-negative weights into a distribution.
            pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
                Ok(Self { probs: normalize(weights, $label)? })
            }

            /// Point mass on `index`.
            pub fn degenerate(size: usize, index: usize) -> Result<Self> {
                if index >= size {
                    return invalid(format!("{}: index {index} out of range {size}", $label));
                }
                let mut probs = vec![0.0; size];
                probs[index] = 1.0;
                Ok(Self { probs })
            }

            pub fn uniform(size: usize) -> Result<Self> {
                if size == 0 {
                    return invalid(format!("{}: size must be positive", $label));
                }
                Ok(Self { probs: vec![1.0 / size as f64; size] })
            }

            pub fn probs(&self) -> &[f64] {
                &self.probs
            }

            pub fn len(&self) -> usize {
                self.probs.len()
            }

            pub fn is_empty(&self) -> bool {
                self.probs.is_empty()
            }

            pub fn into_inner(self) -> Vec<f64> {
                self.probs
            }
        }
    };
}

probability_vector!(
    /// A distribution over an agent's actions.
    ActionDist,
    "action distribution"
);
probability_vector!(
    /// Empirical distribution of agents over local states.
    MeanFieldState,
    "mean-field state"
);
probability_vector!(
    /// Empirical distribution of the agents' chosen actions.
    MeanFieldAction,
    "mean-field action"
);

impl ActionDist {
    /// Inverse-CDF sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        // u landed in the rounding gap at the top; take the last supported action
        self.probs
            .iter()
            .rposition(|p| *p > 0.0)
            .unwrap_or(self.probs.len() - 1)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn empirical(indices: &[usize], size: usize, what: &str) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return invalid(format!("{what}: empty agent list"));
    }
    if size == 0 {
        return invalid(format!("{what}: space size must be positive"));
    }
    let mut counts = vec![0usize; size];
    for &i in indices {
        if i >= size {
            return invalid(format!("{what}: index {i} out of range {size}"));
        }
        counts[i] += 1;
    }
    let n = indices.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// μ(s) = count(states == s) / N.
pub fn empirical_mean_field_state(states: &[LocalState], space_size: usize) -> Result<MeanFieldState> {
    let idx: Vec<usize> = states.iter().map(|s| s.0).collect();
    Ok(MeanFieldState {
        probs: empirical(&idx, space_size, "mean-field state")?,
    })
}

/// ν(a) = count(actions == a) / N.
pub fn empirical_mean_field_action(actions: &[usize], action_size: usize) -> Result<MeanFieldAction> {
    Ok(MeanFieldAction {
        probs: empirical(actions, action_size, "mean-field action")?,
    })
}

/// PR-MDP mixture `eps·π_α + (1−eps)·π_β`.
pub fn mix_policies(pi_alpha: &ActionDist, pi_beta: &ActionDist, eps: f64) -> Result<ActionDist> {
    if !(0.0..=1.0).contains(&eps) {
        return invalid(format!("mixing budget {eps} outside [0, 1]"));
    }
    if pi_alpha.len() != pi_beta.len() {
        return invalid(format!(
            "action spaces differ: {} vs {}",
            pi_alpha.len(),
            pi_beta.len()
        ));
    }
    let probs = pi_alpha
        .probs
        .iter()
        .zip(&pi_beta.probs)
        .map(|(a, b)| eps * a + (1.0 - eps) * b)
        .collect();
    Ok(ActionDist { probs })
}

/// Order of an ℓp norm together with its Hölder dual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormOrder {
    p: f64,
}

impl NormOrder {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return invalid(format!("norm order {p} must be >= 1"));
        }
        Ok(Self { p })
    }

    pub fn infinity() -> Self {
        Self { p: f64::INFINITY }
    }

    pub fn p(self) -> f64 {
        self.p
    }

    pub fn q(self) -> f64 {
        dual_of(self.p)
    }

    pub fn dual(self) -> Self {
        Self { p: self.q() }
    }

    /// 2^{1/p}, the diameter factor of the simplex in ℓp.
    pub fn simplex_factor(self) -> f64 {
        if self.p.is_infinite() {
            1.0
        } else {
            2f64.powf(1.0 / self.p)
        }
    }
}

fn dual_of(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// Hölder dual: 1/p + 1/q = 1, with p = ∞ ⇔ q = 1.
pub fn dual_order(p: f64) -> Result<f64> {
    Ok(NormOrder::new(p)?.q())
}

/// Standard ℓp norm; `p` may be `f64::INFINITY`.
pub fn lp_norm(v: &[f64], p: f64) -> Result<f64> {
    let order = NormOrder::new(p)?;
    if v.iter().any(|x| !x.is_finite()) {
        return invalid("lp_norm: vector has non-finite entries");
    }
    Ok(norm_unchecked(v, order.p()))
}

pub(crate) fn norm_unchecked(v: &[f64], p: f64) -> f64 {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if p.is_infinite() || max == 0.0 {
        return max;
    }
    if p == 1.0 {
        return v.iter().map(|x| x.abs()).sum();
    }
    // scale by the max entry so large p does not overflow
    let s: f64 = v.iter().map(|x| (x.abs() / max).powf(p)).sum();
    max * s.powf(1.0 / p)
}

/// ξ = (1/N)·Σ eps[i].
pub fn aggregate_budget(eps: &[f64]) -> Result<f64> {
    if eps.is_empty() {
        return invalid("aggregate_budget: empty budget vector");
    }
    if let Some(bad) = eps.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return invalid(format!("budget entry {bad} outside [0, 1]"));
    }
    Ok(eps.iter().sum::<f64>() / eps.len() as f64)
}

/// Per-agent perturbation budgets. The aggregate ξ is always recomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetVector {
    eps: Vec<f64>,
}

impl BudgetVector {
    pub fn new(eps: Vec<f64>) -> Result<Self> {
        aggregate_budget(&eps)?;
        Ok(Self { eps })
    }

    pub fn zeros(n: usize) -> Self {
        Self { eps: vec![0.0; n] }
    }

    /// Budget `eps` on every agent in `attacked`, zero elsewhere.
    pub fn for_attack_set(n: usize, attacked: &[usize], eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return invalid(format!("budget {eps} outside [0, 1]"));
        }
        let mut v = vec![0.0; n];
        for &i in attacked {
            if i >= n {
                return invalid(format!("agent {i} out of range {n}"));
            }
            v[i] = eps;
        }
        Ok(Self { eps: v })
    }

    /// Copy with agent `i`'s budget replaced.
    pub fn with_agent(&self, i: usize, eps: f64) -> Result<Self> {
        if i >= self.eps.len() {
            return invalid(format!("agent {i} out of range {}", self.eps.len()));
        }
        if !(0.0..=1.0).contains(&eps) {
            return invalid(format!("budget {eps} outside [0, 1]"));
        }
        let mut v = self.eps.clone();
        v[i] = eps;
        Ok(Self { eps: v })
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn get(&self, i: usize) -> f64 {
        self.eps[i]
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn xi(&self) -> f64 {
        self.eps.iter().sum::<f64>() / self.eps.len().max(1) as f64
    }

    /// Agents with a positive budget, in increasing id order.
    pub fn attacked(&self) -> Vec<usize> {
        self.eps
            .iter()
            .enumerate()
            .filter(|(_, e)| **e > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// One joint step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub states: Vec<LocalState>,
    pub actions: Vec<usize>,
    pub mu: MeanFieldState,
    pub nu: MeanFieldAction,
    /// Shared reward received after the joint action.
    pub reward: f64,
}

impl TrajectoryStep {
    /// Builds a step whose fields are the empirical fields of `states` and `actions`.
    pub fn new(states: Vec<LocalState>, actions: Vec<usize>, n_states: usize, n_actions: usize, reward: f64) -> Result<Self> {
        if states.len() != actions.len() {
            return invalid("trajectory step: states and actions differ in length");
        }
        if !reward.is_finite() {
            return invalid("trajectory step: reward must be finite");
        }
        Ok(Self {
            mu: empirical_mean_field_state(&states, n_states)?,
            nu: empirical_mean_field_action(&actions, n_actions)?,
            states,
            actions,
            reward,
        })
    }
}

/// ‖π̂ − π_β‖_p ≤ 2^{1/p}·eps (plus rounding slack).
pub fn check_deviation_bound(pi_hat: &ActionDist, pi_beta: &ActionDist, eps: f64, p: f64) -> Result<bool> {
    let order = NormOrder::new(p)?;
    if pi_hat.len() != pi_beta.len() {
        return invalid("deviation bound: action spaces differ");
    }
    let diff: Vec<f64> = pi_hat.probs.iter().zip(&pi_beta.probs).map(|(a, b)| a - b).collect();
    Ok(norm_unchecked(&diff, order.p()) <= order.simplex_factor() * eps + BOUND_SLACK)
}

/// Hoeffding failure probability 2·exp(−2Nδ²).
pub fn hoeffding_bound(n: usize, delta: f64) -> f64 {
    2.0 * (-2.0 * n as f64 * delta * delta).exp()
}

/// One coupled draw of the perturbed and victim mean-field actions.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldDeviation {
    /// ‖ν − ν_β‖_p
    pub distance: f64,
    /// 2^{1/p}·ξ
    pub bound: f64,
}

/// Draws every agent's victim action, then replaces it with an adversary
/// draw with probability `eps[i]`, and compares the two empirical fields.
pub fn sample_mean_field_deviation<R: Rng + ?Sized>(
    pi_alpha: &[ActionDist],
    pi_beta: &[ActionDist],
    eps: &[f64],
    p: f64,
    rng: &mut R,
) -> Result<MeanFieldDeviation> {
    let order = NormOrder::new(p)?;
    let n = eps.len();
    if pi_alpha.len() != n || pi_beta.len() != n {
        return invalid("mean-field deviation: per-agent inputs must have equal length");
    }
    let xi = aggregate_budget(eps)?;
    let size = pi_beta[0].len();
    let mut victim = Vec::with_capacity(n);
    let mut executed = Vec::with_capacity(n);
    for i in 0..n {
        if pi_alpha[i].len() != size || pi_beta[i].len() != size {
            return invalid("mean-field deviation: action spaces differ");
        }
        let b = pi_beta[i].sample(rng);
        victim.push(b);
        let replace = rng.random::<f64>() < eps[i];
        executed.push(if replace { pi_alpha[i].sample(rng) } else { b });
    }
    let nu = empirical_mean_field_action(&executed, size)?;
    let nu_beta = empirical_mean_field_action(&victim, size)?;
    let diff: Vec<f64> = nu.probs.iter().zip(&nu_beta.probs).map(|(a, b)| a - b).collect();
    Ok(MeanFieldDeviation {
        distance: norm_unchecked(&diff, order.p()),
        bound: order.simplex_factor() * xi,
    })
}

/// Fraction of `trials` coupled draws where ‖ν − ν_β‖_p > 2^{1/p}ξ + δ.
pub fn mean_field_violation_rate<R: Rng + ?Sized>(
    pi_alpha: &[ActionDist],
    pi_beta: &[ActionDist],
    eps: &[f64],
    p: f64,
    delta: f64,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if trials == 0 {
        return invalid("violation rate needs at least one trial");
    }
    let mut violations = 0usize;
    for _ in 0..trials {
        let d = sample_mean_field_deviation(pi_alpha, pi_beta, eps, p, rng)?;
        if d.distance > d.bound + delta {
            violations += 1;
        }
    }
    Ok(violations as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ls(v: &[usize]) -> Vec<LocalState> {
        v.iter().map(|&i| LocalState(i)).collect()
    }

    #[test]
    fn empirical_state_counts() {
        let mu = empirical_mean_field_state(&ls(&[0, 0, 1, 2]), 3).unwrap();
        assert_eq!(mu.probs(), &[0.5, 0.25, 0.25]);
        let mu = empirical_mean_field_state(&ls(&[1, 1, 1]), 2).unwrap();
        assert_eq!(mu.probs(), &[0.0, 1.0]);
        let mu = empirical_mean_field_state(&ls(&[0, 1]), 3).unwrap();
        assert_eq!(mu.probs(), &[0.5, 0.5, 0.0]);
        assert!(empirical_mean_field_state(&ls(&[3]), 3).is_err());
    }

    #[test]
    fn empirical_action_counts() {
        let nu = empirical_mean_field_action(&[0, 1, 1, 1], 2).unwrap();
        assert_eq!(nu.probs(), &[0.25, 0.75]);
        let nu = empirical_mean_field_action(&[2], 3).unwrap();
        assert_eq!(nu.probs(), &[0.0, 0.0, 1.0]);
        assert!(empirical_mean_field_action(&[], 4).is_err());
    }

    #[test]
    fn mixing_endpoints() {
        let a = ActionDist::new(vec![1.0, 0.0]).unwrap();
        let b = ActionDist::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(mix_policies(&a, &b, 0.0).unwrap().probs(), &[0.3, 0.7]);
        let any = ActionDist::new(vec![0.2, 0.8]).unwrap();
        assert_eq!(mix_policies(&a, &any, 1.0).unwrap().probs(), &[1.0, 0.0]);
        let c = ActionDist::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(mix_policies(&a, &c, 0.5).unwrap().probs(), &[0.5, 0.5]);
        assert!(mix_policies(&a, &c, 1.5).is_err());
        assert!(mix_policies(&a, &c, -0.1).is_err());
    }

    #[test]
    fn norms_and_duals() {
        assert_eq!(lp_norm(&[3.0, 4.0], 2.0).unwrap(), 5.0);
        assert_eq!(lp_norm(&[1.0, -2.0], f64::INFINITY).unwrap(), 2.0);
        assert_eq!(dual_order(f64::INFINITY).unwrap(), 1.0);
        assert_eq!(dual_order(1.0).unwrap(), f64::INFINITY);
        assert_eq!(lp_norm(&[1.0, -2.0], 1.0).unwrap(), 3.0);
        assert_eq!(dual_order(2.0).unwrap(), 2.0);
        assert!(lp_norm(&[1.0], 0.5).is_err());
        assert!(dual_order(0.9).is_err());
    }

    #[test]
    fn budget_aggregate() {
        assert_eq!(aggregate_budget(&[1.0, 1.0, 0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(aggregate_budget(&[0.0; 7]).unwrap(), 0.0);
        assert_eq!(aggregate_budget(&[0.5; 4]).unwrap(), 0.5);
        assert!(aggregate_budget(&[0.5, 1.2]).is_err());
        let b = BudgetVector::for_attack_set(4, &[1, 3], 1.0).unwrap();
        assert_eq!(b.xi(), 0.5);
        assert_eq!(b.attacked(), vec![1, 3]);
        let b2 = b.with_agent(0, 0.5).unwrap();
        assert_eq!(b2.xi(), 2.5 / 4.0);
    }

    #[test]
    fn deviation_bound_cases() {
        let beta = ActionDist::new(vec![0.0, 1.0]).unwrap();
        assert!(check_deviation_bound(&beta, &beta, 0.0, 2.0).unwrap());
        let alpha = ActionDist::new(vec![1.0, 0.0]).unwrap();
        let hat = mix_policies(&alpha, &beta, 1.0).unwrap();
        // tight: ‖[1,-1]‖₁ = 2 = 2^1·1
        assert!(check_deviation_bound(&hat, &beta, 1.0, 1.0).unwrap());
        assert!(!check_deviation_bound(&hat, &beta, 0.99, 1.0).unwrap());
    }

    #[test]
    fn deviation_bound_monte_carlo_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut violations = 0;
        for _ in 0..10_000 {
            let size = rng.random_range(2..7);
            let a = ActionDist::from_weights((0..size).map(|_| rng.random::<f64>()).collect()).unwrap();
            let b = ActionDist::from_weights((0..size).map(|_| rng.random::<f64>()).collect()).unwrap();
            let hat = mix_policies(&a, &b, 0.3).unwrap();
            if !check_deviation_bound(&hat, &b, 0.3, f64::INFINITY).unwrap() {
                violations += 1;
            }
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn mean_field_adversarial_split_stays_under_hoeffding() {
        // victim always plays 1, adversary always 0, half budget on everyone
        let n = 100;
        let alpha = vec![ActionDist::degenerate(2, 0).unwrap(); n];
        let beta = vec![ActionDist::degenerate(2, 1).unwrap(); n];
        let eps = vec![0.5; n];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rate = mean_field_violation_rate(&alpha, &beta, &eps, 1.0, 0.1, 4000, &mut rng).unwrap();
        assert!(rate < hoeffding_bound(n, 0.1), "rate {rate}");
    }

    #[test]
    fn sampling_matches_distribution() {
        let d = ActionDist::new(vec![0.2, 0.0, 0.8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[d.sample(&mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        assert!((counts[0] as f64 / 20_000.0 - 0.2).abs() < 0.02);
    }

    fn dist(len: usize) -> impl Strategy<Value = ActionDist> {
        prop::collection::vec(0.01f64..1.0, len).prop_map(|w| ActionDist::from_weights(w).unwrap())
    }

    proptest! {
        #[test]
        fn mixture_is_distribution_and_bounded(
            (a, b) in (2usize..6).prop_flat_map(|n| (dist(n), dist(n))),
            eps in 0.0f64..=1.0,
            p in prop_oneof![Just(1.0), Just(2.0), Just(f64::INFINITY), 1.0f64..8.0],
        ) {
            let hat = mix_policies(&a, &b, eps).unwrap();
            prop_assert!(hat.probs().iter().all(|x| *x >= 0.0));
            prop_assert!((hat.probs().iter().sum::<f64>() - 1.0).abs() <= PROB_TOL);
            prop_assert!(check_deviation_bound(&hat, &b, eps, p).unwrap());
        }

        #[test]
        fn dual_is_involution(p in prop_oneof![Just(1.0), Just(2.0), Just(f64::INFINITY), 1.0001f64..50.0]) {
            let back = dual_order(dual_order(p).unwrap()).unwrap();
            if p.is_infinite() {
                prop_assert!(back.is_infinite());
            } else {
                prop_assert!((back - p).abs() <= 1e-9 * p.max(1.0));
            }
        }

        #[test]
        fn empirical_field_is_permutation_invariant(mut states in prop::collection::vec(0usize..5, 1..30), seed in 0u64..1000) {
            let before = empirical_mean_field_state(&ls(&states), 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..states.len()).rev() {
                let j = rng.random_range(0..=i);
                states.swap(i, j);
            }
            let after = empirical_mean_field_state(&ls(&states), 5).unwrap();
            prop_assert_eq!(before, after);
        }

        #[test]
        fn aggregate_is_linear(pairs in prop::collection::vec((0.0f64..0.5, 0.0f64..0.5), 1..20)) {
            let e1: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let e2: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let sum: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
            let lhs = aggregate_budget(&sum).unwrap();
            let rhs = aggregate_budget(&e1).unwrap() + aggregate_budget(&e2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
