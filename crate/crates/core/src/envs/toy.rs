//! Small random mean-field games that can be solved exactly.
//!
//! Each agent moves independently on a handful of states; the shared reward
//! is the population mean of a per-agent payoff `w[s]·1[a = good[s]]` plus a
//! crowding bonus `λ·μ(0)²`. With at most a few agents the joint state space
//! is small enough for exact finite-horizon backward induction, which serves
//! as the oracle for attack-set selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{action_field, check_actions, AgentPose, Env, EnvSnapshot, StepResult};
use crate::error::{invalid, Result, VaiError};
use crate::mf::{empirical_mean_field_state, ActionDist, LocalState, MeanFieldAction};

/// Joint state spaces above this size are refused by the exact solver.
pub const MAX_JOINT_STATES: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub n_agents: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    /// Per-state payoff of the good action.
    pub weights: Vec<f64>,
    pub good_action: Vec<usize>,
    /// `transitions[s][a][s']`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub crowd_bonus: f64,
    pub initial_states: Vec<usize>,
    /// Victim action distribution per state.
    pub victim: Vec<Vec<f64>>,
}

impl ToyConfig {
    /// A random instance: sticky, action-dependent transitions, a victim that
    /// plays the good action with probability `victim_skill`.
    pub fn random(n_agents: usize, n_states: usize, horizon: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_actions = 2;
        let weights: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.1..1.0)).collect();
        let good_action: Vec<usize> = (0..n_states).map(|_| rng.random_range(0..n_actions)).collect();
        let transitions = (0..n_states)
            .map(|s| {
                (0..n_actions)
                    .map(|_| {
                        let stick = rng.random_range(0.3..0.8);
                        let mut row: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>()).collect();
                        let total: f64 = row.iter().sum();
                        row.iter_mut().for_each(|p| *p *= (1.0 - stick) / total);
                        row[s] += stick;
                        row
                    })
                    .collect()
            })
            .collect();
        let initial_states = (0..n_agents).map(|_| rng.random_range(0..n_states)).collect();
        let skill = 0.9;
        let victim = good_action
            .iter()
            .map(|&g| (0..n_actions).map(|a| if a == g { skill } else { (1.0 - skill) / (n_actions - 1) as f64 }).collect())
            .collect();
        Self {
            n_agents,
            n_states,
            n_actions,
            horizon,
            weights,
            good_action,
            transitions,
            crowd_bonus: 0.2,
            initial_states,
            victim,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VaiError::InvalidConfig(m));
        if self.n_agents < 2 || self.horizon < 1 || self.n_states == 0 || self.n_actions == 0 {
            return bad("toy: need n_agents >= 2, horizon >= 1 and non-empty spaces".into());
        }
        if self.weights.len() != self.n_states || self.good_action.len() != self.n_states {
            return bad("toy: per-state tables must have n_states entries".into());
        }
        if self.initial_states.len() != self.n_agents || self.initial_states.iter().any(|s| *s >= self.n_states) {
            return bad("toy: initial_states must give one valid state per agent".into());
        }
        if self.transitions.len() != self.n_states
            || self.transitions.iter().any(|r| r.len() != self.n_actions)
        {
            return bad("toy: transitions must be n_states × n_actions × n_states".into());
        }
        for row in self.transitions.iter().flatten() {
            if row.len() != self.n_states || ActionDist::new(row.clone()).is_err() {
                return bad("toy: every transition row must be a distribution".into());
            }
        }
        if self.victim.len() != self.n_states
            || self.victim.iter().any(|d| d.len() != self.n_actions || ActionDist::new(d.clone()).is_err())
        {
            return bad("toy: victim needs one action distribution per state".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToyEnv {
    cfg: ToyConfig,
}

impl ToyEnv {
    pub fn new(cfg: ToyConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.cfg
    }

    pub fn victim_dist(&self, s: usize) -> ActionDist {
        ActionDist::new(self.cfg.victim[s].clone()).expect("validated")
    }

    fn agent_payoff(&self, s: usize, a: usize) -> f64 {
        if a == self.cfg.good_action[s] {
            self.cfg.weights[s]
        } else {
            0.0
        }
    }

    fn shared_reward(&self, states: &[usize], actions: &[usize]) -> f64 {
        let n = states.len() as f64;
        let payoff: f64 = states.iter().zip(actions).map(|(s, a)| self.agent_payoff(*s, *a)).sum();
        let frac0 = states.iter().filter(|s| **s == 0).count() as f64 / n;
        payoff / n + self.cfg.crowd_bonus * frac0 * frac0
    }

    fn decode(&self, mut x: usize, out: &mut [usize]) {
        for o in out.iter_mut() {
            *o = x % self.cfg.n_states;
            x /= self.cfg.n_states;
        }
    }

    fn encode(&self, states: &[usize]) -> usize {
        states.iter().rev().fold(0, |acc, s| acc * self.cfg.n_states + s)
    }

    /// Σ_{x'} Π_i rows[i][x'_i]·v[x'] with agent 0 least significant.
    fn contract(&self, v: &[f64], rows: &[Vec<f64>], buf: &mut Vec<f64>) -> f64 {
        let s = self.cfg.n_states;
        buf.clear();
        buf.extend_from_slice(v);
        for row in rows.iter().rev() {
            let block = buf.len() / s;
            for y in 0..block {
                let mut acc = 0.0;
                for (k, p) in row.iter().enumerate() {
                    acc += p * buf[y + k * block];
                }
                buf[y] = acc;
            }
            buf.truncate(block);
        }
        buf[0]
    }

    /// Exact expected discounted return from the initial states when the
    /// agents in `attacked` are driven, with probability `eps` per step, by
    /// a centralized adversary minimizing the shared return. Every other
    /// agent (and every attacked agent otherwise) follows the victim table.
    pub fn exact_attacked_return(&self, attacked: &[usize], eps: f64, gamma: f64) -> Result<f64> {
        let n = self.cfg.n_agents;
        let s = self.cfg.n_states;
        let na = self.cfg.n_actions;
        if !(0.0..=1.0).contains(&eps) {
            return invalid(format!("budget {eps} outside [0, 1]"));
        }
        if attacked.iter().any(|i| *i >= n) {
            return invalid("attacked agent out of range");
        }
        let joint = s
            .checked_pow(n as u32)
            .filter(|j| *j <= MAX_JOINT_STATES)
            .ok_or_else(|| VaiError::InvalidInput(format!("{s}^{n} joint states exceed the exact-solver limit")))?;
        let k = attacked.len();
        let profiles = na.pow(k as u32);
        let mut is_attacked = vec![false; n];
        for &i in attacked {
            is_attacked[i] = true;
        }

        let mut next = vec![0.0; joint];
        let mut cur = vec![0.0; joint];
        let mut states = vec![0usize; n];
        let mut buf = Vec::with_capacity(joint);
        let mut rows = vec![vec![0.0; s]; n];
        let mut dists = vec![vec![0.0; na]; n];
        for _ in 0..self.cfg.horizon {
            for x in 0..joint {
                self.decode(x, &mut states);
                let mut best = f64::INFINITY;
                for prof in 0..profiles {
                    let mut code = prof;
                    for i in 0..n {
                        let victim = &self.cfg.victim[states[i]];
                        if is_attacked[i] {
                            let adv = code % na;
                            code /= na;
                            for a in 0..na {
                                let hit = if a == adv { 1.0 } else { 0.0 };
                                dists[i][a] = eps * hit + (1.0 - eps) * victim[a];
                            }
                        } else {
                            dists[i].copy_from_slice(victim);
                        }
                    }
                    let mut reward = 0.0;
                    for i in 0..n {
                        let si = states[i];
                        for a in 0..na {
                            reward += dists[i][a] * self.agent_payoff(si, a);
                        }
                        for (t, r) in rows[i].iter_mut().enumerate() {
                            *r = (0..na).map(|a| dists[i][a] * self.cfg.transitions[si][a][t]).sum();
                        }
                    }
                    let frac0 = states.iter().filter(|s| **s == 0).count() as f64 / n as f64;
                    reward = reward / n as f64 + self.cfg.crowd_bonus * frac0 * frac0;
                    let cont = if gamma == 0.0 { 0.0 } else { self.contract(&next, &rows, &mut buf) };
                    best = best.min(reward + gamma * cont);
                }
                cur[x] = best;
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(next[self.encode(&self.cfg.initial_states)])
    }

    /// Exact cooperative return (no agent attacked).
    pub fn exact_cooperative_return(&self, gamma: f64) -> Result<f64> {
        self.exact_attacked_return(&[], 0.0, gamma)
    }
}

impl Env for ToyEnv {
    fn name(&self) -> &'static str {
        "toy"
    }

    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn n_states(&self) -> usize {
        self.cfg.n_states
    }

    fn n_actions(&self) -> usize {
        self.cfg.n_actions
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&self, seed: u64) -> Result<EnvSnapshot> {
        let states: Vec<LocalState> = self.cfg.initial_states.iter().map(|s| LocalState(*s)).collect();
        Ok(EnvSnapshot {
            step: 0,
            poses: (0..self.cfg.n_agents)
                .map(|i| AgentPose {
                    x: i as f64,
                    y: 0.0,
                    heading: 0.0,
                })
                .collect(),
            mu: empirical_mean_field_state(&states, self.cfg.n_states)?,
            nu_prev: MeanFieldAction::uniform(self.cfg.n_actions)?,
            states,
            demand: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn step(&self, snapshot: &EnvSnapshot, actions: &[usize]) -> Result<StepResult> {
        check_actions(actions, self.cfg.n_agents, self.cfg.n_actions)?;
        let cur: Vec<usize> = snapshot.states.iter().map(|s| s.0).collect();
        let reward = self.shared_reward(&cur, actions);
        let mut rng = snapshot.rng.clone();
        let states: Vec<LocalState> = cur
            .iter()
            .zip(actions)
            .map(|(s, a)| {
                let row = ActionDist::new(self.cfg.transitions[*s][*a].clone()).expect("validated");
                LocalState(row.sample(&mut rng))
            })
            .collect();
        let nu = action_field(actions, self.cfg.n_actions)?;
        let next = EnvSnapshot {
            step: snapshot.step + 1,
            poses: snapshot.poses.clone(),
            mu: empirical_mean_field_state(&states, self.cfg.n_states)?,
            nu_prev: nu.clone(),
            states,
            demand: Vec::new(),
            rng,
        };
        Ok(StepResult { snapshot: next, reward, nu })
    }

    fn distance(&self, snapshot: &EnvSnapshot, i: usize, j: usize) -> f64 {
        (snapshot.poses[i].x - snapshot.poses[j].x).abs()
    }

    fn layout_dims(&self) -> (usize, usize) {
        (1, self.cfg.n_agents)
    }

    fn layout_cell(&self, _snapshot: &EnvSnapshot, i: usize) -> (usize, usize) {
        (0, i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Joint-state Monte Carlo of the cooperative return.
    fn mc_cooperative(env: &ToyEnv, gamma: f64, episodes: usize) -> f64 {
        let mut total = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for e in 0..episodes {
            let mut snap = env.reset(e as u64).unwrap();
            let mut disc = 1.0;
            for _ in 0..env.horizon() {
                let acts: Vec<usize> = snap.states.iter().map(|s| env.victim_dist(s.0).sample(&mut rng)).collect();
                let r = env.step(&snap, &acts).unwrap();
                total += disc * r.reward;
                disc *= gamma;
                snap = r.snapshot;
            }
        }
        total / episodes as f64
    }

    #[test]
    fn exact_cooperative_matches_monte_carlo() {
        let env = ToyEnv::new(ToyConfig::random(3, 3, 5, 4)).unwrap();
        let exact = env.exact_cooperative_return(0.9).unwrap();
        let mc = mc_cooperative(&env, 0.9, 40_000);
        assert!((exact - mc).abs() < 0.01, "exact {exact} mc {mc}");
    }

    #[test]
    fn attacks_only_hurt_and_grow_with_budget() {
        let env = ToyEnv::new(ToyConfig::random(4, 3, 6, 8)).unwrap();
        let coop = env.exact_cooperative_return(1.0).unwrap();
        let mut prev = coop;
        for eps in [0.25, 0.5, 0.75, 1.0] {
            let r = env.exact_attacked_return(&[0, 2], eps, 1.0).unwrap();
            assert!(r <= prev + 1e-12);
            prev = r;
        }
        let zero = env.exact_attacked_return(&[0, 2], 0.0, 1.0).unwrap();
        assert!((zero - coop).abs() < 1e-12);
        let more = env.exact_attacked_return(&[0, 1, 2], 1.0, 1.0).unwrap();
        assert!(more <= prev + 1e-12);
    }

    #[test]
    fn single_step_hand_computed() {
        // one step, two agents in state 0 with weights [1, 0.5]; victim always good
        let cfg = ToyConfig {
            n_agents: 2,
            n_states: 2,
            n_actions: 2,
            horizon: 1,
            weights: vec![1.0, 0.5],
            good_action: vec![0, 1],
            transitions: vec![vec![vec![1.0, 0.0]; 2], vec![vec![0.0, 1.0]; 2]],
            crowd_bonus: 0.0,
            initial_states: vec![0, 1],
            victim: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let env = ToyEnv::new(cfg).unwrap();
        assert!((env.exact_cooperative_return(1.0).unwrap() - 0.75).abs() < 1e-12);
        assert!((env.exact_attacked_return(&[0], 1.0, 1.0).unwrap() - 0.25).abs() < 1e-12);
        assert!((env.exact_attacked_return(&[1], 1.0, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((env.exact_attacked_return(&[1], 0.5, 1.0).unwrap() - 0.625).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_tables() {
        let mut cfg = ToyConfig::random(3, 3, 4, 1);
        cfg.transitions[0][0] = vec![0.5, 0.6, 0.0];
        assert!(ToyEnv::new(cfg).is_err());
    }
}
