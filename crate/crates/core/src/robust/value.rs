//! V(s, μ, ε, ξ) fitted under the regularized backup.
//!
//! The backup depends on the budgets only through `w = ε + ξ + εξ`, so its
//! fixed point is `V0 − w·W`. Both backends are affine in `w`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{budget_weight, q_norm, solve_ridge, RegularizerSpec};
use crate::error::{invalid, Result};
use crate::learn::checkpoint::Checkpoint;
use crate::learn::rollout::Corpus;
use crate::learn::{Backend, MeanFieldCoder, QModel};
use crate::mf::NormOrder;

const BASIS: usize = 2;

fn basis(eps: f64, xi: f64) -> [f64; BASIS] {
    [1.0, budget_weight(eps, xi)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetSampling {
    /// ξ ~ U[0,1], ε ~ Bernoulli(ξ).
    Bernoulli,
    /// ε, ξ ~ U[0,1] independently.
    Uniform,
}

impl BudgetSampling {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(Self::Bernoulli),
            "uniform" => Ok(Self::Uniform),
            other => invalid(format!("unknown budget sampling `{other}`")),
        }
    }

    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> (f64, f64) {
        let xi: f64 = rng.random();
        match self {
            Self::Bernoulli => (if rng.random::<f64>() < xi { 1.0 } else { 0.0 }, xi),
            Self::Uniform => (rng.random(), xi),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustValueModel {
    backend: Backend,
    n_states: usize,
    mu_coder: MeanFieldCoder,
    gamma: f64,
    order: NormOrder,
    /// Tabular: basis coefficients per (s, μ-code). Linear: weights over
    /// `[onehot(s) ⊗ basis, μ ⊗ basis]`.
    coeffs: Vec<f64>,
    /// Tabular only: per-state coefficients used for unseen (s, μ-code) cells.
    fallback: Vec<f64>,
    /// Tabular only: whether each cell was fitted from data.
    seen: Vec<bool>,
}

impl RobustValueModel {
    /// Tabular model from explicit coefficients; every cell counts as seen.
    pub fn tabular(n_states: usize, mu_coder: MeanFieldCoder, gamma: f64, order: NormOrder, coeffs: Vec<f64>) -> Result<Self> {
        let cells = n_states * mu_coder.buckets;
        if coeffs.len() != cells * BASIS {
            return invalid(format!("expected {} coefficients, got {}", cells * BASIS, coeffs.len()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return invalid(format!("discount {gamma} outside [0, 1)"));
        }
        let mut m = Self {
            backend: Backend::Tabular,
            n_states,
            mu_coder,
            gamma,
            order,
            coeffs,
            fallback: vec![0.0; n_states * BASIS],
            seen: vec![true; cells],
        };
        m.refresh_fallback(&vec![1; cells]);
        Ok(m)
    }

    /// A model whose value ignores the budgets entirely.
    pub fn constant(n_states: usize, gamma: f64, values: &[f64]) -> Result<Self> {
        if values.len() != n_states {
            return invalid("one value per state required");
        }
        let coeffs = values.iter().flat_map(|v| [*v, 0.0]).collect();
        Self::tabular(n_states, MeanFieldCoder::ignore(), gamma, NormOrder::infinity(), coeffs)
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }
    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn order(&self) -> NormOrder {
        self.order
    }
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    fn cell(&self, s: usize, mu: &[f64]) -> usize {
        s * self.mu_coder.buckets + self.mu_coder.code(mu)
    }

    /// Basis coefficients in effect at (s, μ).
    pub fn cell_coefficients(&self, s: usize, mu: &[f64]) -> [f64; BASIS] {
        match self.backend {
            Backend::Tabular => {
                let c = self.cell(s, mu);
                let src = if self.seen[c] {
                    &self.coeffs[c * BASIS..(c + 1) * BASIS]
                } else {
                    &self.fallback[s * BASIS..(s + 1) * BASIS]
                };
                [src[0], src[1]]
            }
            Backend::Linear => {
                let off = self.n_states * BASIS;
                let mut out = [0.0; BASIS];
                for (j, o) in out.iter_mut().enumerate() {
                    *o = self.coeffs[s * BASIS + j]
                        + mu.iter().enumerate().map(|(i, m)| m * self.coeffs[off + i * BASIS + j]).sum::<f64>();
                }
                out
            }
        }
    }

    /// V(s, μ, ε, ξ). Callers must pass budgets in [0, 1].
    pub fn value(&self, s: usize, mu: &[f64], eps: f64, xi: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&eps) && (0.0..=1.0).contains(&xi), "budgets outside [0, 1]");
        let c = self.cell_coefficients(s, mu);
        let b = basis(eps, xi);
        c.iter().zip(b).map(|(c, b)| c * b).sum()
    }

    fn refresh_fallback(&mut self, counts: &[usize]) {
        let mb = self.mu_coder.buckets;
        let mut global = [0.0; BASIS];
        let mut global_n = 0usize;
        for s in 0..self.n_states {
            let mut acc = [0.0; BASIS];
            let mut n = 0usize;
            for m in 0..mb {
                let c = s * mb + m;
                if self.seen[c] {
                    for j in 0..BASIS {
                        acc[j] += counts[c] as f64 * self.coeffs[c * BASIS + j];
                    }
                    n += counts[c];
                }
            }
            if n > 0 {
                for j in 0..BASIS {
                    global[j] += acc[j];
                    self.fallback[s * BASIS + j] = acc[j] / n as f64;
                }
                global_n += n;
            } else {
                self.fallback[s * BASIS..(s + 1) * BASIS].iter_mut().for_each(|v| *v = f64::NAN);
            }
        }
        for s in 0..self.n_states {
            if self.fallback[s * BASIS].is_nan() {
                for j in 0..BASIS {
                    self.fallback[s * BASIS + j] = if global_n > 0 { global[j] / global_n as f64 } else { 0.0 };
                }
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let p = self.order.p();
        let mut c = Checkpoint::new("robust-value")
            .with("backend", self.backend.tag())
            .with("n_states", self.n_states)
            .with("mu_levels", self.mu_coder.levels)
            .with("mu_buckets", self.mu_coder.buckets)
            .with("gamma", self.gamma)
            .with("p", if p.is_infinite() { "inf".to_string() } else { p.to_string() })
            .with("budget_basis", "1,eps+xi+eps*xi")
            .with("coefficients", self.coeffs.len())
            .with("fallback", self.fallback.len());
        c.values = self.coeffs.clone();
        c.values.extend(&self.fallback);
        c.values.extend(self.seen.iter().map(|b| if *b { 1.0 } else { 0.0 }));
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        c.expect_kind("robust-value")?;
        let backend = Backend::parse(c.get("backend")?)?;
        let n_states: usize = c.parse("n_states")?;
        let mu_coder = MeanFieldCoder::new(c.parse("mu_levels")?, c.parse("mu_buckets")?)?;
        let p = match c.get("p")? {
            "inf" => f64::INFINITY,
            x => x.parse().map_err(|_| crate::VaiError::Checkpoint("bad p".into()))?,
        };
        let nc: usize = c.parse("coefficients")?;
        let nf: usize = c.parse("fallback")?;
        if c.values.len() < nc + nf {
            return Err(crate::VaiError::Checkpoint("truncated robust-value checkpoint".into()));
        }
        Ok(Self {
            backend,
            n_states,
            mu_coder,
            gamma: c.parse("gamma")?,
            order: NormOrder::new(p)?,
            coeffs: c.values[..nc].to_vec(),
            fallback: c.values[nc..nc + nf].to_vec(),
            seen: c.values[nc + nf..].iter().map(|v| *v != 0.0).collect(),
        })
    }

    /// Rows of (eps, xi, value) on a regular grid for one (s, μ).
    pub fn budget_grid(&self, s: usize, mu: &[f64], resolution: usize) -> Vec<(f64, f64, f64)> {
        let r = resolution.max(2);
        let mut out = Vec::with_capacity(r * r);
        for i in 0..r {
            for j in 0..r {
                let e = i as f64 / (r - 1) as f64;
                let x = j as f64 / (r - 1) as f64;
                out.push((e, x, self.value(s, mu, e, x)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustFitConfig {
    pub backend: Backend,
    pub gamma: f64,
    pub mu_coder: MeanFieldCoder,
    pub sampling: BudgetSampling,
    pub draws_per_sample: usize,
    /// Reuse one set of budget draws for every transition. The backup is
    /// affine in ε + ξ + εξ, so common draws make each cell's fit exact
    /// instead of exact only in expectation.
    pub shared_draws: bool,
    pub max_sweeps: usize,
    pub tol: f64,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for RobustFitConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Tabular,
            gamma: 0.95,
            mu_coder: MeanFieldCoder::ignore(),
            sampling: BudgetSampling::Bernoulli,
            draws_per_sample: 4,
            shared_draws: true,
            max_sweeps: 2000,
            tol: 1e-10,
            ridge: 1e-8,
            seed: 0,
        }
    }
}

/// Fits V to the regularized backup from a cooperative corpus. Every
/// transition is paired with `draws_per_sample` budget draws fixed for the
/// whole fit (the same draws for all transitions when `shared_draws`); tabular cells solve a 2×2 least-squares problem per sweep until
/// the coefficients stop moving, the linear backend solves LSTD directly.
pub fn fit_robust_value(corpus: &Corpus, q: &QModel, spec: &RegularizerSpec, cfg: &RobustFitConfig) -> Result<RobustValueModel> {
    if q.n_states() != corpus.n_states || q.n_actions() != corpus.n_actions {
        return invalid(format!(
            "Q dims ({}, {}) do not match corpus dims ({}, {})",
            q.n_states(),
            q.n_actions(),
            corpus.n_states,
            corpus.n_actions
        ));
    }
    if corpus.transitions.is_empty() {
        return invalid("fit_robust_value: empty corpus");
    }
    if cfg.draws_per_sample == 0 {
        return invalid("draws_per_sample must be positive");
    }
    if !(0.0..1.0).contains(&cfg.gamma) {
        return invalid(format!("discount {} outside [0, 1)", cfg.gamma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let norms: Vec<f64> = corpus
        .transitions
        .iter()
        .map(|t| {
            let st = &corpus.steps[t.step];
            q_norm(q, t.s, &st.mu, &st.nu, spec)
        })
        .collect();
    let draws: Vec<(f64, f64)> = if cfg.shared_draws {
        let block: Vec<(f64, f64)> = (0..cfg.draws_per_sample).map(|_| cfg.sampling.draw(&mut rng)).collect();
        block.iter().copied().cycle().take(corpus.transitions.len() * cfg.draws_per_sample).collect()
    } else {
        (0..corpus.transitions.len() * cfg.draws_per_sample)
            .map(|_| cfg.sampling.draw(&mut rng))
            .collect()
    };
    match cfg.backend {
        Backend::Tabular => fit_tabular(corpus, &norms, &draws, spec, cfg),
        Backend::Linear => fit_linear(corpus, &norms, &draws, spec, cfg),
    }
}

fn fit_tabular(corpus: &Corpus, norms: &[f64], draws: &[(f64, f64)], spec: &RegularizerSpec, cfg: &RobustFitConfig) -> Result<RobustValueModel> {
    let n_states = corpus.n_states;
    let cells = n_states * cfg.mu_coder.buckets;
    let mut model = RobustValueModel {
        backend: Backend::Tabular,
        n_states,
        mu_coder: cfg.mu_coder,
        gamma: cfg.gamma,
        order: spec.order,
        coeffs: vec![0.0; cells * BASIS],
        fallback: vec![0.0; n_states * BASIS],
        seen: vec![false; cells],
    };
    let k = cfg.draws_per_sample;
    let cell_of: Vec<(usize, usize)> = corpus
        .transitions
        .iter()
        .map(|t| (model.cell(t.s, &corpus.steps[t.step].mu), model.cell(t.s_next, &corpus.steps[t.next].mu)))
        .collect();
    let mut gram = vec![Matrix2::<f64>::zeros(); cells];
    let mut counts = vec![0usize; cells];
    for (ti, (c, _)) in cell_of.iter().enumerate() {
        counts[*c] += 1;
        for &(e, x) in &draws[ti * k..(ti + 1) * k] {
            let b = Vector2::from(basis(e, x));
            gram[*c] += b * b.transpose();
        }
    }
    let mut inv = Vec::with_capacity(cells);
    for (c, g) in gram.into_iter().enumerate() {
        if counts[c] == 0 {
            inv.push(Matrix2::zeros());
            continue;
        }
        model.seen[c] = true;
        let scale = g[(0, 0)].max(1.0);
        // ridge only when the budget draws in this cell are (nearly) constant
        let reg = if g.determinant() > 1e-9 * scale * scale {
            g
        } else {
            g + Matrix2::identity() * (cfg.ridge * scale)
        };
        inv.push(reg.try_inverse().ok_or_else(|| crate::VaiError::InvalidInput("singular cell system".into()))?);
    }
    model.refresh_fallback(&counts);

    let mut rhs = vec![Vector2::<f64>::zeros(); cells];
    for _ in 0..cfg.max_sweeps {
        rhs.iter_mut().for_each(|r| *r = Vector2::zeros());
        for (ti, t) in corpus.transitions.iter().enumerate() {
            let (c, cn) = cell_of[ti];
            let r = corpus.reward(t);
            let next = if model.seen[cn] {
                &model.coeffs[cn * BASIS..(cn + 1) * BASIS]
            } else {
                &model.fallback[t.s_next * BASIS..(t.s_next + 1) * BASIS]
            };
            for &(e, x) in &draws[ti * k..(ti + 1) * k] {
                let b = basis(e, x);
                let v_next: f64 = next.iter().zip(b).map(|(c, b)| c * b).sum();
                let y = r + cfg.gamma * v_next - budget_weight(e, x) * norms[ti];
                rhs[c] += Vector2::from(b) * y;
            }
        }
        let mut delta = 0.0f64;
        for c in 0..cells {
            if !model.seen[c] {
                continue;
            }
            let sol = inv[c] * rhs[c];
            for j in 0..BASIS {
                delta = delta.max((sol[j] - model.coeffs[c * BASIS + j]).abs());
                model.coeffs[c * BASIS + j] = sol[j];
            }
        }
        model.refresh_fallback(&counts);
        if delta < cfg.tol {
            break;
        }
    }
    if model.coeffs.iter().any(|v| !v.is_finite()) {
        return invalid("robust value fit diverged");
    }
    Ok(model)
}

fn fit_linear(corpus: &Corpus, norms: &[f64], draws: &[(f64, f64)], spec: &RegularizerSpec, cfg: &RobustFitConfig) -> Result<RobustValueModel> {
    let s_dim = corpus.n_states;
    let d = 2 * s_dim * BASIS;
    let k = cfg.draws_per_sample;
    let features = |s: usize, mu: &[f64], b: &[f64; BASIS]| -> Vec<(usize, f64)> {
        let mut f: Vec<(usize, f64)> = (0..BASIS).map(|j| (s * BASIS + j, b[j])).collect();
        for (i, m) in mu.iter().enumerate().filter(|(_, m)| **m != 0.0) {
            f.extend((0..BASIS).map(|j| (s_dim * BASIS + i * BASIS + j, m * b[j])));
        }
        f
    };
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for (ti, t) in corpus.transitions.iter().enumerate() {
        let mu = &corpus.steps[t.step].mu;
        let mu_next = &corpus.steps[t.next].mu;
        let r = corpus.reward(t);
        for &(e, x) in &draws[ti * k..(ti + 1) * k] {
            let b = basis(e, x);
            let f = features(t.s, mu, &b);
            let mut g = f.clone();
            g.extend(features(t.s_next, mu_next, &b).into_iter().map(|(i, v)| (i, -cfg.gamma * v)));
            let y = r - budget_weight(e, x) * norms[ti];
            for &(i, fi) in &f {
                for &(j, gj) in &g {
                    a[(i, j)] += fi * gj;
                }
                rhs[i] += fi * y;
            }
        }
    }
    let w = solve_ridge(a, rhs, cfg.ridge)?;
    Ok(RobustValueModel {
        backend: Backend::Linear,
        n_states: s_dim,
        mu_coder: MeanFieldCoder::ignore(),
        gamma: cfg.gamma,
        order: spec.order,
        coeffs: w.as_slice().to_vec(),
        fallback: Vec::new(),
        seen: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::rollout::{CorpusStep, Transition};
    use crate::robust::{fit_cooperative_q, QFitConfig};

    /// 0 → 1 → 0 deterministic chain with rewards 1, 0 and two actions
    /// whose Q rows differ so the regularizer is non-trivial.
    fn chain() -> Corpus {
        let steps = vec![
            CorpusStep { mu: vec![0.5, 0.5], nu: vec![0.5, 0.5], reward: 1.0 },
            CorpusStep { mu: vec![0.5, 0.5], nu: vec![0.5, 0.5], reward: 0.0 },
            CorpusStep { mu: vec![0.5, 0.5], nu: vec![0.5, 0.5], reward: f64::NAN },
        ];
        let transitions = vec![
            Transition { step: 0, next: 1, s: 0, a: 0, s_next: 1, a_next: 1 },
            Transition { step: 1, next: 2, s: 1, a: 1, s_next: 0, a_next: 0 },
        ];
        Corpus { n_states: 2, n_actions: 2, steps, transitions }
    }

    /// Exact fixed point of V = R + γPV − w·n by linear algebra on the chain.
    fn exact(gamma: f64, weight: f64, n: [f64; 2]) -> [f64; 2] {
        let r0 = 1.0 - weight * n[0];
        let r1 = -weight * n[1];
        let v0 = (r0 + gamma * r1) / (1.0 - gamma * gamma);
        [v0, r1 + gamma * v0]
    }

    #[test]
    fn tabular_fit_matches_exact_slices() {
        let corpus = chain();
        let gamma = 0.9;
        let q = fit_cooperative_q(&corpus, &QFitConfig { gamma, ..Default::default() }).unwrap();
        let spec = RegularizerSpec::default();
        let v = fit_robust_value(&corpus, &q, &spec, &RobustFitConfig { gamma, draws_per_sample: 16, ..Default::default() }).unwrap();
        let mu = [0.5, 0.5];
        let n = [q_norm(&q, 0, &mu, &mu, &spec), q_norm(&q, 1, &mu, &mu, &spec)];
        for (e, x) in [(0.0, 0.0), (1.0, 1.0), (0.0, 0.4), (1.0, 0.2)] {
            let want = exact(gamma, budget_weight(e, x), n);
            for s in 0..2 {
                let got = v.value(s, &mu, e, x);
                assert!((got - want[s]).abs() < 1e-6, "s={s} eps={e} xi={x}: {got} vs {}", want[s]);
            }
        }
    }

    #[test]
    fn null_system_is_zero() {
        let mut corpus = chain();
        corpus.steps[0].reward = 0.0;
        let q = QModel::new(Backend::Tabular, 2, 2, MeanFieldCoder::ignore(), MeanFieldCoder::ignore(), 0.9).unwrap();
        let v = fit_robust_value(&corpus, &q, &RegularizerSpec::default(), &RobustFitConfig { gamma: 0.9, ..Default::default() }).unwrap();
        for s in 0..2 {
            for (e, x) in [(0.0, 0.0), (1.0, 1.0), (0.3, 0.6)] {
                assert!(v.value(s, &[0.5, 0.5], e, x).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn linear_fit_zero_budget_slice() {
        let corpus = chain();
        let gamma = 0.9;
        let q = fit_cooperative_q(&corpus, &QFitConfig { gamma, ..Default::default() }).unwrap();
        let spec = RegularizerSpec::default();
        let cfg = RobustFitConfig { backend: Backend::Linear, gamma, draws_per_sample: 16, ..Default::default() };
        let v = fit_robust_value(&corpus, &q, &spec, &cfg).unwrap();
        let want = exact(gamma, 0.0, [0.0, 0.0]);
        for s in 0..2 {
            assert!((v.value(s, &[0.5, 0.5], 0.0, 0.0) - want[s]).abs() < 5e-2, "s={s}");
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let corpus = chain();
        let q = QModel::new(Backend::Tabular, 3, 2, MeanFieldCoder::ignore(), MeanFieldCoder::ignore(), 0.9).unwrap();
        assert!(fit_robust_value(&corpus, &q, &RegularizerSpec::default(), &RobustFitConfig::default()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let corpus = chain();
        let q = fit_cooperative_q(&corpus, &QFitConfig { gamma: 0.8, ..Default::default() }).unwrap();
        let v = fit_robust_value(&corpus, &q, &RegularizerSpec::default(), &RobustFitConfig { gamma: 0.8, ..Default::default() }).unwrap();
        let text = v.to_checkpoint().to_text();
        let back = RobustValueModel::from_checkpoint(&Checkpoint::from_text(&text).unwrap()).unwrap();
        assert_eq!(v, back);
        assert!(text.contains("budget_basis 1,eps+xi+eps*xi"));
    }

    #[test]
    fn bernoulli_sampling_has_binary_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ones = 0;
        for _ in 0..10_000 {
            let (e, x) = BudgetSampling::Bernoulli.draw(&mut rng);
            assert!(e == 0.0 || e == 1.0);
            assert!((0.0..1.0).contains(&x));
            if e == 1.0 {
                ones += 1;
            }
        }
        // P(ε = 1) = E[ξ] = 1/2
        assert!((ones as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }
}
