//! Discrete-turn Vicsek flocking on a torus.
//!
//! Agents move at constant speed and choose one of five heading changes
//! `{−2Δ, −Δ, 0, Δ, 2Δ}`. The shared reward is the order parameter
//! φ = |Σ exp(iθ_j)| / N of the post-step headings. The local state pairs the
//! agent's offset from its neighborhood mean heading with its neighbor count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{action_field, check_actions, torus_distance, wrap, AgentPose, Env, EnvSnapshot, StepResult};
use crate::error::{invalid, Result, VaiError};
use crate::harness::config::EnvSection;
use crate::mf::{empirical_mean_field_state, ActionDist, LocalState, MeanFieldAction};

pub const N_TURNS: usize = 5;

/// How the initial positions are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum VicsekInit {
    Uniform,
    /// Gaussian blobs around uniformly placed centers.
    Clustered { clusters: usize, spread: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VicsekConfig {
    pub n_agents: usize,
    pub horizon: usize,
    pub world_size: f64,
    pub comm_radius: f64,
    pub speed: f64,
    /// Heading change per action unit, Δ.
    pub turn_step: f64,
    pub bearing_bins: usize,
    pub count_bins: usize,
    pub init: VicsekInit,
    /// Width of the uniform angular noise used by the rule policy.
    pub rule_noise: f64,
}

impl Default for VicsekConfig {
    fn default() -> Self {
        Self {
            n_agents: 16,
            horizon: 50,
            world_size: 100.0,
            comm_radius: 20.0,
            speed: 1.0,
            turn_step: PI / 8.0,
            bearing_bins: 8,
            count_bins: 8,
            init: VicsekInit::Uniform,
            rule_noise: 0.0,
        }
    }
}

impl VicsekConfig {
    pub fn from_section(s: &EnvSection) -> Result<Self> {
        let d = Self::default();
        let init = match s.init.as_deref().unwrap_or("uniform") {
            "uniform" => VicsekInit::Uniform,
            "clustered" => VicsekInit::Clustered {
                clusters: s.clusters.unwrap_or(3),
                spread: s.cluster_spread.unwrap_or(5.0),
            },
            other => {
                return Err(VaiError::InvalidConfig(format!(
                    "env.init: unknown value `{other}` (expected uniform or clustered)"
                )))
            }
        };
        Ok(Self {
            n_agents: s.n_agents,
            horizon: s.horizon,
            world_size: s.world_size.unwrap_or(d.world_size),
            comm_radius: s.comm_radius.unwrap_or(d.comm_radius),
            speed: s.speed.unwrap_or(d.speed),
            turn_step: d.turn_step,
            bearing_bins: s.bearing_bins.unwrap_or(d.bearing_bins),
            count_bins: s.count_bins.unwrap_or(d.count_bins),
            init,
            rule_noise: s.noise.unwrap_or(d.rule_noise),
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VaiError::InvalidConfig(m.to_string()));
        if self.n_agents < 2 {
            return bad("vicsek: n_agents must be at least 2");
        }
        if self.horizon < 1 {
            return bad("vicsek: horizon must be at least 1");
        }
        if !(self.world_size > 0.0) || !(self.comm_radius > 0.0) || self.speed < 0.0 {
            return bad("vicsek: world_size and comm_radius must be positive, speed non-negative");
        }
        if self.bearing_bins == 0 || self.count_bins == 0 {
            return bad("vicsek: bin counts must be positive");
        }
        if self.rule_noise < 0.0 {
            return bad("vicsek: noise must be non-negative");
        }
        if let VicsekInit::Clustered { clusters, spread } = self.init {
            if clusters == 0 || spread < 0.0 {
                return bad("vicsek: clusters must be positive and spread non-negative");
            }
        }
        Ok(())
    }
}

/// Angle wrapped into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// |Σ exp(iθ_j)| / N.
pub fn order_parameter(headings: &[f64]) -> f64 {
    let (s, c) = headings
        .iter()
        .fold((0.0, 0.0), |(s, c), h| (s + h.sin(), c + h.cos()));
    ((s * s + c * c).sqrt() / headings.len() as f64).min(1.0)
}

#[derive(Debug, Clone)]
pub struct VicsekEnv {
    cfg: VicsekConfig,
}

impl VicsekEnv {
    pub fn new(cfg: VicsekConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &VicsekConfig {
        &self.cfg
    }

    /// Snapshot built from explicit poses (tests and hand-built scenarios).
    pub fn snapshot_from_poses(&self, poses: Vec<AgentPose>, seed: u64) -> Result<EnvSnapshot> {
        if poses.len() != self.cfg.n_agents {
            return invalid(format!("expected {} poses, got {}", self.cfg.n_agents, poses.len()));
        }
        let states = self.local_states(&poses);
        Ok(EnvSnapshot {
            step: 0,
            mu: empirical_mean_field_state(&states, self.n_states())?,
            nu_prev: MeanFieldAction::uniform(N_TURNS)?,
            states,
            poses,
            demand: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Mean heading of the agents within `radius` of `i`, self included,
    /// and the number of such neighbors excluding self.
    pub fn neighborhood(&self, poses: &[AgentPose], i: usize, radius: f64) -> (f64, usize) {
        let (mut s, mut c, mut count) = (0.0, 0.0, 0usize);
        for (j, p) in poses.iter().enumerate() {
            if j == i || torus_distance(&poses[i], p, self.cfg.world_size) <= radius {
                s += p.heading.sin();
                c += p.heading.cos();
                if j != i {
                    count += 1;
                }
            }
        }
        (s.atan2(c), count)
    }

    fn local_states(&self, poses: &[AgentPose]) -> Vec<LocalState> {
        let bins = self.cfg.bearing_bins;
        let width = 2.0 * PI / bins as f64;
        (0..poses.len())
            .map(|i| {
                let (mean, count) = self.neighborhood(poses, i, self.cfg.comm_radius);
                let offset = wrap_angle(mean - poses[i].heading);
                // bins centered on zero offset so an aligned agent is bin 0
                let ob = ((offset / width).round() as i64).rem_euclid(bins as i64) as usize;
                let cb = count.min(self.cfg.count_bins - 1);
                LocalState(ob * self.cfg.count_bins + cb)
            })
            .collect()
    }

    fn sample_positions(&self, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
        let l = self.cfg.world_size;
        match self.cfg.init {
            VicsekInit::Uniform => (0..self.cfg.n_agents)
                .map(|_| (rng.random::<f64>() * l, rng.random::<f64>() * l))
                .collect(),
            VicsekInit::Clustered { clusters, spread } => {
                let centers: Vec<(f64, f64)> = (0..clusters)
                    .map(|_| (rng.random::<f64>() * l, rng.random::<f64>() * l))
                    .collect();
                let normal = rand_distr::Normal::new(0.0, spread.max(1e-12)).expect("valid spread");
                (0..self.cfg.n_agents)
                    .map(|_| {
                        let c = centers[rng.random_range(0..clusters)];
                        let dx: f64 = rng.sample(normal);
                        let dy: f64 = rng.sample(normal);
                        (wrap(c.0 + dx, l), wrap(c.1 + dy, l))
                    })
                    .collect()
            }
        }
    }
}

impl Env for VicsekEnv {
    fn name(&self) -> &'static str {
        "vicsek"
    }

    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn n_states(&self) -> usize {
        self.cfg.bearing_bins * self.cfg.count_bins
    }

    fn n_actions(&self) -> usize {
        N_TURNS
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&self, seed: u64) -> Result<EnvSnapshot> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = self.sample_positions(&mut rng);
        let poses = positions
            .into_iter()
            .map(|(x, y)| AgentPose {
                x,
                y,
                heading: wrap_angle(rng.random::<f64>() * 2.0 * PI - PI),
            })
            .collect();
        let mut snap = self.snapshot_from_poses(poses, 0)?;
        snap.rng = rng;
        Ok(snap)
    }

    fn step(&self, snapshot: &EnvSnapshot, actions: &[usize]) -> Result<StepResult> {
        check_actions(actions, self.cfg.n_agents, N_TURNS)?;
        let l = self.cfg.world_size;
        let poses: Vec<AgentPose> = snapshot
            .poses
            .iter()
            .zip(actions)
            .map(|(p, &a)| {
                let heading = wrap_angle(p.heading + (a as f64 - 2.0) * self.cfg.turn_step);
                AgentPose {
                    x: wrap(p.x + self.cfg.speed * heading.cos(), l),
                    y: wrap(p.y + self.cfg.speed * heading.sin(), l),
                    heading,
                }
            })
            .collect();
        let headings: Vec<f64> = poses.iter().map(|p| p.heading).collect();
        let reward = order_parameter(&headings);
        let states = self.local_states(&poses);
        let nu = action_field(actions, N_TURNS)?;
        let next = EnvSnapshot {
            step: snapshot.step + 1,
            mu: empirical_mean_field_state(&states, self.n_states())?,
            nu_prev: nu.clone(),
            states,
            poses,
            demand: Vec::new(),
            rng: snapshot.rng.clone(),
        };
        Ok(StepResult { snapshot: next, reward, nu })
    }

    fn distance(&self, snapshot: &EnvSnapshot, i: usize, j: usize) -> f64 {
        torus_distance(&snapshot.poses[i], &snapshot.poses[j], self.cfg.world_size)
    }

    fn layout_dims(&self) -> (usize, usize) {
        let cols = (self.cfg.n_agents as f64).sqrt().ceil() as usize;
        (self.cfg.n_agents.div_ceil(cols), cols)
    }

    fn layout_cell(&self, _snapshot: &EnvSnapshot, i: usize) -> (usize, usize) {
        let cols = self.layout_dims().1;
        (i / cols, i % cols)
    }
}

/// The classic alignment rule: turn toward the neighborhood mean heading,
/// perturbed by uniform angular noise of width `noise`, quantized to the
/// nearest available turn.
#[derive(Debug, Clone)]
pub struct VicsekRulePolicy {
    env: VicsekEnv,
    noise: f64,
}

impl VicsekRulePolicy {
    pub fn new(env: &VicsekEnv) -> Self {
        Self {
            noise: env.cfg.rule_noise,
            env: env.clone(),
        }
    }

    pub fn with_noise(env: &VicsekEnv, noise: f64) -> Self {
        Self {
            env: env.clone(),
            noise: noise.max(0.0),
        }
    }

    /// Exact distribution of the quantized noisy turn.
    pub fn rule_dist(&self, snapshot: &EnvSnapshot, agent: usize) -> ActionDist {
        let (mean, _) = self.env.neighborhood(&snapshot.poses, agent, self.env.cfg.comm_radius);
        let offset = wrap_angle(mean - snapshot.poses[agent].heading);
        let d = self.env.cfg.turn_step;
        let k = N_TURNS as i64 / 2;
        let quantize = |o: f64| ((o / d).round() as i64).clamp(-k, k) + k;
        if self.noise == 0.0 {
            return ActionDist::degenerate(N_TURNS, quantize(offset) as usize).expect("in range");
        }
        let lo = offset - self.noise / 2.0;
        let hi = offset + self.noise / 2.0;
        let probs = (0..N_TURNS as i64)
            .map(|a| {
                let c = (a - k) as f64;
                let left = if a == 0 { f64::NEG_INFINITY } else { (c - 0.5) * d };
                let right = if a == 2 * k { f64::INFINITY } else { (c + 0.5) * d };
                (hi.min(right) - lo.max(left)).max(0.0) / self.noise
            })
            .collect();
        ActionDist::from_weights(probs).expect("noise interval has positive mass")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(n: usize) -> VicsekEnv {
        VicsekEnv::new(VicsekConfig {
            n_agents: n,
            ..VicsekConfig::default()
        })
        .unwrap()
    }

    fn pose(x: f64, y: f64, heading: f64) -> AgentPose {
        AgentPose { x, y, heading }
    }

    #[test]
    fn order_parameter_extremes() {
        assert!((order_parameter(&[0.3; 5]) - 1.0).abs() < 1e-12);
        assert!(order_parameter(&[0.0, PI]) < 1e-12);
    }

    #[test]
    fn reset_is_deterministic() {
        let e = env(4);
        let a = e.reset(11).unwrap();
        let b = e.reset(11).unwrap();
        assert_eq!(a.poses, b.poses);
        assert_eq!(a.states, b.states);
        let c = e.reset(12).unwrap();
        assert_ne!(a.poses, c.poses);
        assert_eq!(a.mu, empirical_mean_field_state(&a.states, e.n_states()).unwrap());
    }

    #[test]
    fn two_agents_meet_halfway() {
        let e = env(2);
        let snap = e
            .snapshot_from_poses(vec![pose(10.0, 10.0, 0.0), pose(11.0, 10.0, PI / 2.0)], 0)
            .unwrap();
        let rule = VicsekRulePolicy::with_noise(&e, 0.0);
        let a0 = rule.rule_dist(&snap, 0).argmax();
        let a1 = rule.rule_dist(&snap, 1).argmax();
        assert_eq!((a0, a1), (4, 0));
        let next = e.step(&snap, &[a0, a1]).unwrap().snapshot;
        for p in &next.poses {
            assert!((p.heading - PI / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_and_isolated_agents_do_not_turn() {
        let e = env(2);
        let rule = VicsekRulePolicy::with_noise(&e, 0.0);
        let snap = e
            .snapshot_from_poses(vec![pose(0.0, 0.0, 1.0), pose(1.0, 0.0, 1.0)], 0)
            .unwrap();
        assert_eq!(rule.rule_dist(&snap, 0).argmax(), 2);
        let far = e
            .snapshot_from_poses(vec![pose(0.0, 0.0, 1.0), pose(50.0, 50.0, -2.0)], 0)
            .unwrap();
        assert_eq!(rule.rule_dist(&far, 0).argmax(), 2);
        assert_eq!(rule.rule_dist(&far, 1).argmax(), 2);
    }

    #[test]
    fn noisy_rule_spreads_mass() {
        let e = env(2);
        let rule = VicsekRulePolicy::with_noise(&e, PI / 4.0);
        let snap = e
            .snapshot_from_poses(vec![pose(0.0, 0.0, 0.0), pose(1.0, 0.0, 0.0)], 0)
            .unwrap();
        let d = rule.rule_dist(&snap, 0);
        // offset 0 with noise width 2Δ: half a cell either side of "no turn"
        assert!((d.probs()[2] - 0.5).abs() < 1e-12);
        assert!((d.probs()[1] - 0.25).abs() < 1e-12);
        assert!((d.probs()[3] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn opposite_headings_cancel() {
        let e = env(2);
        let snap = e
            .snapshot_from_poses(vec![pose(0.0, 0.0, 0.0), pose(60.0, 60.0, PI)], 0)
            .unwrap();
        let r = e.step(&snap, &[2, 2]).unwrap();
        assert!(r.reward < 1e-12);
        assert!(e.step(&snap, &[2]).is_err());
        assert!(e.step(&snap, &[2, 5]).is_err());
    }

    #[test]
    fn full_connectivity_rule_never_loses_order() {
        let cfg = VicsekConfig {
            n_agents: 12,
            comm_radius: 200.0,
            ..VicsekConfig::default()
        };
        let e = VicsekEnv::new(cfg).unwrap();
        let rule = VicsekRulePolicy::with_noise(&e, 0.0);
        for seed in 0..20 {
            let mut snap = e.reset(seed).unwrap();
            let headings: Vec<f64> = snap.poses.iter().map(|p| p.heading).collect();
            let mut prev = order_parameter(&headings);
            for _ in 0..30 {
                let acts: Vec<usize> = (0..12).map(|i| rule.rule_dist(&snap, i).argmax()).collect();
                let r = e.step(&snap, &acts).unwrap();
                assert!(r.reward >= prev - 1e-12, "seed {seed}: {} < {prev}", r.reward);
                prev = r.reward;
                snap = r.snapshot;
            }
        }
    }

    #[test]
    fn layout_covers_agents() {
        let e = env(16);
        let snap = e.reset(0).unwrap();
        assert_eq!(e.layout_dims(), (4, 4));
        assert_eq!(e.layout_cell(&snap, 5), (1, 1));
    }
}
