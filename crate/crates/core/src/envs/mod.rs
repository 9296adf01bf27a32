//! Seedable multi-agent environments with a shared scalar reward.
//!
//! Every environment is a pure transition function over an [`EnvSnapshot`];
//! the snapshot owns the RNG used for any stochastic dynamics, so cloning a
//! snapshot forks an independent, reproducible continuation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::mf::{empirical_mean_field_action, LocalState, MeanFieldAction, MeanFieldState};

pub mod taxi;
pub mod toy;
pub mod vicsek;

pub use taxi::{TaxiConfig, TaxiGrid};
pub use toy::{ToyConfig, ToyEnv};
pub use vicsek::{VicsekConfig, VicsekEnv, VicsekRulePolicy};

/// Continuous (or cell) pose of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone)]
pub struct EnvSnapshot {
    pub step: usize,
    pub poses: Vec<AgentPose>,
    pub states: Vec<LocalState>,
    pub mu: MeanFieldState,
    /// Empirical action field of the previous step (uniform at reset).
    pub nu_prev: MeanFieldAction,
    /// Per-zone outstanding requests (taxi only).
    pub demand: Vec<u32>,
    pub(crate) rng: ChaCha8Rng,
}

impl EnvSnapshot {
    pub fn n_agents(&self) -> usize {
        self.states.len()
    }

    /// Same configuration with a fresh stream for the stochastic dynamics.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.rng = ChaCha8Rng::seed_from_u64(seed);
        s
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub snapshot: EnvSnapshot,
    pub reward: f64,
    pub nu: MeanFieldAction,
}

pub trait Env: Send + Sync {
    fn name(&self) -> &'static str;
    fn n_agents(&self) -> usize;
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn horizon(&self) -> usize;

    /// Deterministic initial configuration for `seed`.
    fn reset(&self, seed: u64) -> Result<EnvSnapshot>;

    fn step(&self, snapshot: &EnvSnapshot, actions: &[usize]) -> Result<StepResult>;

    /// Distance between two agents under the environment's metric.
    fn distance(&self, snapshot: &EnvSnapshot, i: usize, j: usize) -> f64;

    /// Rows and columns of the grid used to lay agents out for heatmaps.
    fn layout_dims(&self) -> (usize, usize);

    /// Heatmap cell of agent `i`.
    fn layout_cell(&self, snapshot: &EnvSnapshot, i: usize) -> (usize, usize);

    /// Symmetric adjacency with zero diagonal: edge iff distance ≤ radius.
    fn observation_graph(&self, snapshot: &EnvSnapshot, radius: f64) -> Result<Vec<Vec<bool>>> {
        observation_graph_by(snapshot.n_agents(), radius, |i, j| self.distance(snapshot, i, j))
    }
}

pub(crate) fn observation_graph_by(
    n: usize,
    radius: f64,
    dist: impl Fn(usize, usize) -> f64,
) -> Result<Vec<Vec<bool>>> {
    if !(radius > 0.0) {
        return invalid(format!("observation radius {radius} must be positive"));
    }
    let mut g = vec![vec![false; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let e = dist(i, j) <= radius;
            g[i][j] = e;
            g[j][i] = e;
        }
    }
    Ok(g)
}

pub(crate) fn check_actions(actions: &[usize], n: usize, n_actions: usize) -> Result<()> {
    if actions.len() != n {
        return invalid(format!("expected {n} actions, got {}", actions.len()));
    }
    if let Some(a) = actions.iter().find(|a| **a >= n_actions) {
        return invalid(format!("action {a} out of range {n_actions}"));
    }
    Ok(())
}

pub(crate) fn action_field(actions: &[usize], n_actions: usize) -> Result<MeanFieldAction> {
    empirical_mean_field_action(actions, n_actions)
}

/// Wrap a coordinate into [0, size).
pub(crate) fn wrap(v: f64, size: f64) -> f64 {
    let w = v.rem_euclid(size);
    // rem_euclid can return `size` itself for tiny negative inputs
    if w >= size {
        0.0
    } else {
        w
    }
}

/// Shortest signed displacement on a ring of circumference `size`.
pub(crate) fn torus_delta(a: f64, b: f64, size: f64) -> f64 {
    let mut d = (b - a).rem_euclid(size);
    if d > size / 2.0 {
        d -= size;
    }
    d
}

pub(crate) fn torus_distance(p: &AgentPose, q: &AgentPose, size: f64) -> f64 {
    let dx = torus_delta(p.x, q.x, size);
    let dy = torus_delta(p.y, q.y, size);
    (dx * dx + dy * dy).sqrt()
}

/// Degree of every node of a boolean adjacency matrix.
pub fn degrees(graph: &[Vec<bool>]) -> Vec<usize> {
    graph.iter().map(|row| row.iter().filter(|e| **e).count()).collect()
}

/// Builds an environment by name from the harness env section.
pub fn build_env(cfg: &crate::harness::config::EnvSection) -> Result<Box<dyn Env>> {
    match cfg.name.as_str() {
        "vicsek" => Ok(Box::new(VicsekEnv::new(VicsekConfig::from_section(cfg)?)?)),
        "taxi" => Ok(Box::new(TaxiGrid::new(TaxiConfig::from_section(cfg)?)?)),
        other => Err(crate::VaiError::InvalidConfig(format!(
            "unknown env `{other}` (expected vicsek or taxi)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(x: f64, y: f64) -> AgentPose {
        AgentPose { x, y, heading: 0.0 }
    }

    #[test]
    fn graph_edges_by_distance() {
        let ps = [pose(0.0, 0.0), pose(0.5, 0.0)];
        let g = observation_graph_by(2, 1.0, |i, j| torus_distance(&ps[i], &ps[j], 100.0)).unwrap();
        assert!(g[0][1] && g[1][0]);
        let ps = [pose(0.0, 0.0), pose(2.0, 0.0)];
        let g = observation_graph_by(2, 1.0, |i, j| torus_distance(&ps[i], &ps[j], 100.0)).unwrap();
        assert!(!g[0][1]);
    }

    #[test]
    fn collinear_path_graph() {
        let ps = [pose(0.0, 0.0), pose(1.0, 0.0), pose(2.0, 0.0)];
        let g = observation_graph_by(3, 1.0, |i, j| torus_distance(&ps[i], &ps[j], 100.0)).unwrap();
        assert_eq!(degrees(&g), vec![1, 2, 1]);
        assert!(observation_graph_by(3, 0.0, |_, _| 0.0).is_err());
    }

    #[test]
    fn torus_wraps() {
        assert!((torus_delta(99.0, 1.0, 100.0) - 2.0).abs() < 1e-12);
        assert!((torus_delta(1.0, 99.0, 100.0) + 2.0).abs() < 1e-12);
        assert_eq!(wrap(-1e-18, 10.0), 0.0);
        assert!((wrap(12.5, 10.0) - 2.5).abs() < 1e-12);
    }
}
