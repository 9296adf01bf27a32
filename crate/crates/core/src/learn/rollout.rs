//! Episode rollouts under (possibly perturbed) policies, the flattened
//! transition corpus used for batch fitting, and trajectory CSV files.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::derive_seed;
use super::policy::{BehaviorPolicy, LocalPolicy, LocalView};
use crate::envs::{Env, EnvSnapshot};
use crate::error::{invalid, Result, VaiError};
use crate::harness::ledger::sig9;
use crate::mf::{empirical_mean_field_action, empirical_mean_field_state, mix_policies, ActionDist, BudgetVector, LocalState, TrajectoryStep};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// States reached after the last step and the actions the policies would
    /// take there; they let fitting bootstrap through the time limit.
    pub final_states: Vec<LocalState>,
    pub final_actions: Vec<usize>,
}

impl Trajectory {
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut g = 0.0;
        for step in self.steps.iter().rev() {
            g = step.reward + gamma * g;
        }
        g
    }
}

/// Per-agent distribution actually executed: the victim's, mixed with the
/// adversary's at the agent's budget.
pub fn executed_dist(
    snapshot: &EnvSnapshot,
    agent: usize,
    victim: &dyn BehaviorPolicy,
    adversary: Option<&dyn LocalPolicy>,
    eps: f64,
) -> Result<ActionDist> {
    let beta = victim.action_dist(snapshot, agent);
    match adversary {
        Some(adv) if eps > 0.0 => mix_policies(&adv.local_dist(&LocalView::of(snapshot, agent)), &beta, eps),
        _ => Ok(beta),
    }
}

fn joint_actions(
    snapshot: &EnvSnapshot,
    victim: &dyn BehaviorPolicy,
    adversary: Option<&dyn LocalPolicy>,
    budgets: &BudgetVector,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    (0..snapshot.n_agents())
        .map(|i| Ok(executed_dist(snapshot, i, victim, adversary, budgets.get(i))?.sample(rng)))
        .collect()
}

/// Runs one episode from `start`. Environment noise and action sampling draw
/// from streams derived from `seed`, so a fixed seed replays exactly.
pub fn rollout(
    env: &dyn Env,
    start: &EnvSnapshot,
    victim: &dyn BehaviorPolicy,
    adversary: Option<&dyn LocalPolicy>,
    budgets: &BudgetVector,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    let n = env.n_agents();
    if budgets.len() != n || start.n_agents() != n {
        return invalid(format!("rollout: expected {n} agents and budgets"));
    }
    let mut snap = start.reseeded(derive_seed(seed, 1));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let actions = joint_actions(&snap, victim, adversary, budgets, &mut rng)?;
        let res = env.step(&snap, &actions)?;
        steps.push(TrajectoryStep {
            states: snap.states.clone(),
            actions,
            mu: snap.mu.clone(),
            nu: res.nu,
            reward: res.reward,
        });
        snap = res.snapshot;
    }
    let final_actions = joint_actions(&snap, victim, adversary, budgets, &mut rng)?;
    Ok(Trajectory {
        steps,
        final_states: snap.states,
        final_actions,
    })
}

/// Mean-field vectors and reward of one recorded joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStep {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    /// NaN for the bootstrap step at the end of an episode.
    pub reward: f64,
}

/// One agent's (s, a, r, s', a') with mean fields referenced by step index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub step: usize,
    pub next: usize,
    pub s: usize,
    pub a: usize,
    pub s_next: usize,
    pub a_next: usize,
}

/// All per-agent transitions of a set of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub n_states: usize,
    pub n_actions: usize,
    pub steps: Vec<CorpusStep>,
    pub transitions: Vec<Transition>,
}

impl Corpus {
    pub fn from_trajectories(trajs: &[Trajectory], n_states: usize, n_actions: usize) -> Result<Self> {
        let mut steps = Vec::new();
        let mut transitions = Vec::new();
        for traj in trajs {
            let base = steps.len();
            for st in &traj.steps {
                if st.states.iter().any(|s| s.0 >= n_states) || st.actions.iter().any(|a| *a >= n_actions) {
                    return invalid("corpus: trajectory indices exceed the model dimensions");
                }
                steps.push(CorpusStep {
                    mu: st.mu.probs().to_vec(),
                    nu: st.nu.probs().to_vec(),
                    reward: st.reward,
                });
            }
            if traj.final_states.iter().any(|s| s.0 >= n_states) || traj.final_actions.iter().any(|a| *a >= n_actions) {
                return invalid("corpus: trajectory indices exceed the model dimensions");
            }
            steps.push(CorpusStep {
                mu: empirical_mean_field_state(&traj.final_states, n_states)?.into_inner(),
                nu: empirical_mean_field_action(&traj.final_actions, n_actions)?.into_inner(),
                reward: f64::NAN,
            });
            for (t, st) in traj.steps.iter().enumerate() {
                let (ns, na) = match traj.steps.get(t + 1) {
                    Some(nx) => (&nx.states, &nx.actions),
                    None => (&traj.final_states, &traj.final_actions),
                };
                for i in 0..st.states.len() {
                    transitions.push(Transition {
                        step: base + t,
                        next: base + t + 1,
                        s: st.states[i].0,
                        a: st.actions[i],
                        s_next: ns[i].0,
                        a_next: na[i],
                    });
                }
            }
        }
        if transitions.is_empty() {
            return invalid("corpus: no transitions");
        }
        Ok(Self {
            n_states,
            n_actions,
            steps,
            transitions,
        })
    }

    pub fn reward(&self, t: &Transition) -> f64 {
        self.steps[t.step].reward
    }
}

/// Writes trajectories as CSV: episode, step, agent_id, s, a, reward, then
/// one column per μ and ν entry. The bootstrap row of each episode has an
/// empty reward.
pub fn write_trajectories(path: &Path, trajs: &[Trajectory], n_states: usize, n_actions: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["episode".to_string(), "step".into(), "agent_id".into(), "s".into(), "a".into(), "reward".into()];
    header.extend((0..n_states).map(|i| format!("mu_{i}")));
    header.extend((0..n_actions).map(|i| format!("nu_{i}")));
    w.write_record(&header)?;
    for (e, traj) in trajs.iter().enumerate() {
        let final_mu = empirical_mean_field_state(&traj.final_states, n_states)?;
        let final_nu = empirical_mean_field_action(&traj.final_actions, n_actions)?;
        let rows = traj
            .steps
            .iter()
            .map(|st| (&st.states, &st.actions, st.mu.probs(), st.nu.probs(), Some(st.reward)))
            .chain(std::iter::once((
                &traj.final_states,
                &traj.final_actions,
                final_mu.probs(),
                final_nu.probs(),
                None,
            )));
        for (t, (states, actions, mu, nu, reward)) in rows.enumerate() {
            let shared: Vec<String> = mu.iter().chain(nu).map(|x| sig9(*x)).collect();
            for (i, (s, a)) in states.iter().zip(actions.iter()).enumerate() {
                let mut rec = vec![
                    e.to_string(),
                    t.to_string(),
                    i.to_string(),
                    s.0.to_string(),
                    a.to_string(),
                    reward.map(sig9).unwrap_or_default(),
                ];
                rec.extend(shared.iter().cloned());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads trajectories written by [`write_trajectories`]. Mean fields are
/// rebuilt from the recorded states and actions, which is exact.
pub fn read_trajectories(path: &Path, n_states: usize, n_actions: usize) -> Result<Vec<Trajectory>> {
    let mut r = csv::Reader::from_path(path)?;
    let bad = |m: &str| VaiError::InvalidInput(format!("{}: {m}", path.display()));
    // (episode, step) -> agents' (s, a) plus reward
    let mut episodes: Vec<Vec<(Vec<(usize, usize)>, Option<f64>)>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad("short row"));
        let num = |i: usize| -> Result<usize> { field(i)?.parse().map_err(|_| bad("bad integer")) };
        let (e, t, agent, s, a) = (num(0)?, num(1)?, num(2)?, num(3)?, num(4)?);
        let reward = match field(5)? {
            "" => None,
            x => Some(x.parse::<f64>().map_err(|_| bad("bad reward"))?),
        };
        if e > episodes.len() || (e == episodes.len() && (t != 0 || agent != 0)) {
            return Err(bad("episodes out of order"));
        }
        if e == episodes.len() {
            episodes.push(Vec::new());
        }
        let ep = &mut episodes[e];
        if t == ep.len() {
            ep.push((Vec::new(), reward));
        } else if t + 1 != ep.len() {
            return Err(bad("steps out of order"));
        }
        let row = ep.last_mut().expect("pushed");
        if agent != row.0.len() {
            return Err(bad("agents out of order"));
        }
        row.0.push((s, a));
    }
    episodes
        .into_iter()
        .map(|mut rows| {
            let (last, tail_reward) = rows.pop().ok_or_else(|| bad("empty episode"))?;
            if tail_reward.is_some() {
                return Err(bad("episode lacks a bootstrap row"));
            }
            let steps = rows
                .into_iter()
                .map(|(sa, reward)| {
                    let reward = reward.ok_or_else(|| bad("missing reward"))?;
                    let (states, actions): (Vec<LocalState>, Vec<usize>) = sa.into_iter().map(|(s, a)| (LocalState(s), a)).unzip();
                    TrajectoryStep::new(states, actions, n_states, n_actions, reward)
                })
                .collect::<Result<Vec<_>>>()?;
            let (final_states, final_actions) = last.into_iter().map(|(s, a)| (LocalState(s), a)).unzip();
            Ok(Trajectory {
                steps,
                final_states,
                final_actions,
            })
        })
        .collect()
}

/// Cooperative corpus: `episodes` rollouts under π_β with zero budgets, each
/// from its own scenario.
pub fn collect_cooperative(env: &dyn Env, victim: &dyn BehaviorPolicy, episodes: usize, seed: u64) -> Result<Vec<Trajectory>> {
    let zero = BudgetVector::zeros(env.n_agents());
    (0..episodes)
        .map(|e| {
            let start = env.reset(derive_seed(seed, 2 * e as u64))?;
            rollout(env, &start, victim, None, &zero, env.horizon(), derive_seed(seed, 2 * e as u64 + 1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ToyConfig, ToyEnv, VicsekConfig, VicsekEnv, VicsekRulePolicy};
    use crate::learn::policy::{TablePolicy, UniformPolicy};
    use crate::mf::ActionDist;

    fn toy() -> (ToyEnv, TablePolicy) {
        let env = ToyEnv::new(ToyConfig::random(4, 3, 6, 2)).unwrap();
        let table = TablePolicy {
            dists: (0..3).map(|s| env.victim_dist(s)).collect(),
        };
        (env, table)
    }

    #[test]
    fn rollout_is_deterministic_and_consistent() {
        let (env, victim) = toy();
        let start = env.reset(0).unwrap();
        let b = BudgetVector::zeros(4);
        let t1 = rollout(&env, &start, &victim, None, &b, 6, 42).unwrap();
        let t2 = rollout(&env, &start, &victim, None, &b, 6, 42).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.steps.len(), 6);
        for st in &t1.steps {
            assert_eq!(st.mu, empirical_mean_field_state(&st.states, 3).unwrap());
            assert_eq!(st.nu, empirical_mean_field_action(&st.actions, 2).unwrap());
        }
    }

    #[test]
    fn replaying_actions_reproduces_rewards() {
        let (env, victim) = toy();
        let start = env.reset(0).unwrap();
        let traj = rollout(&env, &start, &victim, None, &BudgetVector::zeros(4), 6, 7).unwrap();
        let mut snap = start.reseeded(derive_seed(7, 1));
        for st in &traj.steps {
            assert_eq!(snap.states, st.states);
            let r = env.step(&snap, &st.actions).unwrap();
            assert_eq!(r.reward, st.reward);
            snap = r.snapshot;
        }
    }

    /// Always plays action 1.
    struct Fixed;
    impl LocalPolicy for Fixed {
        fn local_dist(&self, _v: &LocalView) -> ActionDist {
            ActionDist::degenerate(2, 1).unwrap()
        }
    }

    #[test]
    fn full_budget_hands_control_to_adversary() {
        let (env, _) = toy();
        let victim = TablePolicy {
            dists: vec![ActionDist::degenerate(2, 0).unwrap(); 3],
        };
        let start = env.reset(0).unwrap();
        let b = BudgetVector::for_attack_set(4, &[1, 3], 1.0).unwrap();
        let traj = rollout(&env, &start, &victim, Some(&Fixed), &b, 6, 3).unwrap();
        for st in &traj.steps {
            assert_eq!(st.actions, vec![0, 1, 0, 1]);
        }
        let zero = rollout(&env, &start, &victim, Some(&Fixed), &BudgetVector::zeros(4), 6, 3).unwrap();
        assert!(zero.steps.iter().all(|st| st.actions.iter().all(|a| *a == 0)));
    }

    #[test]
    fn csv_round_trip() {
        let env = VicsekEnv::new(VicsekConfig {
            n_agents: 5,
            horizon: 4,
            ..VicsekConfig::default()
        })
        .unwrap();
        let rule = VicsekRulePolicy::with_noise(&env, 0.3);
        let trajs = collect_cooperative(&env, &rule, 3, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        write_trajectories(&path, &trajs, env.n_states(), 5).unwrap();
        let back = read_trajectories(&path, env.n_states(), 5).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in trajs.iter().zip(&back) {
            assert_eq!(a.final_states, b.final_states);
            for (x, y) in a.steps.iter().zip(&b.steps) {
                assert_eq!(x.states, y.states);
                assert_eq!(x.mu, y.mu);
                assert!((x.reward - y.reward).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn corpus_links_bootstrap_rows() {
        let (env, _) = toy();
        let u = UniformPolicy { n_actions: 2 };
        let trajs = collect_cooperative(&env, &u, 2, 0).unwrap();
        let c = Corpus::from_trajectories(&trajs, 3, 2).unwrap();
        assert_eq!(c.transitions.len(), 2 * 6 * 4);
        assert_eq!(c.steps.len(), 2 * 7);
        assert!(c.steps[6].reward.is_nan());
        let last = c.transitions[6 * 4 - 1];
        assert_eq!(last.next, 6);
        assert_eq!(last.s_next, trajs[0].final_states[3].0);
        assert!(Corpus::from_trajectories(&[], 3, 2).is_err());
    }
}
