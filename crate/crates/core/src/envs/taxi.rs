//! Taxi supply/demand matching on a torus grid.
//!
//! The grid is split into square zones. Each step every zone receives a
//! Poisson number of requests whose rate peaks at the map center. Taxis move
//! one cell (or stay), and the shared reward penalizes the mismatch between
//! the supply and demand fractions per zone:
//! `r = −(1/Z)·Σ_z |supply_z − demand_z|`, which lies in [−2/Z, 0].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{action_field, check_actions, torus_distance, AgentPose, Env, EnvSnapshot, StepResult};
use crate::error::{Result, VaiError};
use crate::harness::config::EnvSection;
use crate::mf::{empirical_mean_field_state, LocalState, MeanFieldAction};

/// stay, north, south, west, east
pub const N_MOVES: usize = 5;
const MOVES: [(i64, i64); N_MOVES] = [(0, 0), (0, 1), (0, -1), (-1, 0), (1, 0)];
const IMBALANCE_BINS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TaxiConfig {
    pub n_agents: usize,
    pub horizon: usize,
    pub grid: usize,
    pub zone_size: usize,
    /// Request rate far from the center.
    pub demand_base: f64,
    /// Extra rate at the center zone.
    pub demand_peak: f64,
    /// Length scale (in cells) of the central hotspot.
    pub demand_width: f64,
    /// Distinct random cells per reset instead of the even spread.
    pub random_init: bool,
}

impl Default for TaxiConfig {
    fn default() -> Self {
        Self {
            n_agents: 16,
            horizon: 20,
            grid: 8,
            zone_size: 2,
            demand_base: 0.5,
            demand_peak: 4.0,
            demand_width: 2.0,
            random_init: false,
        }
    }
}

impl TaxiConfig {
    pub fn from_section(s: &EnvSection) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            n_agents: s.n_agents,
            horizon: s.horizon,
            grid: s.grid.unwrap_or(d.grid),
            zone_size: s.zone_size.unwrap_or(d.zone_size),
            demand_base: s.demand_base.unwrap_or(d.demand_base),
            demand_peak: s.demand_peak.unwrap_or(d.demand_peak),
            demand_width: s.demand_width.unwrap_or(d.demand_width),
            random_init: match s.init.as_deref().unwrap_or("uniform") {
                "uniform" => false,
                "random" => true,
                other => {
                    return Err(VaiError::InvalidConfig(format!(
                        "env.init: unknown value `{other}` for taxi (expected uniform or random)"
                    )))
                }
            },
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VaiError::InvalidConfig(m));
        if self.n_agents < 2 || self.horizon < 1 {
            return bad("taxi: need n_agents >= 2 and horizon >= 1".into());
        }
        if self.grid == 0 || self.zone_size == 0 || self.grid % self.zone_size != 0 {
            return bad(format!(
                "taxi: grid {} must be a positive multiple of zone_size {}",
                self.grid, self.zone_size
            ));
        }
        if self.n_agents > self.grid * self.grid {
            return bad(format!(
                "taxi: {} agents exceed grid capacity {}",
                self.n_agents,
                self.grid * self.grid
            ));
        }
        if self.demand_base < 0.0 || self.demand_peak < 0.0 || self.demand_base + self.demand_peak <= 0.0 {
            return bad("taxi: demand rates must be non-negative with a positive total".into());
        }
        if !(self.demand_width > 0.0) {
            return bad("taxi: demand_width must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TaxiGrid {
    cfg: TaxiConfig,
    rates: Vec<f64>,
}

impl TaxiGrid {
    pub fn new(cfg: TaxiConfig) -> Result<Self> {
        cfg.validate()?;
        let zpr = cfg.grid / cfg.zone_size;
        let center = cfg.grid as f64 / 2.0;
        let rates = (0..zpr * zpr)
            .map(|z| {
                let zx = (z % zpr) as f64 * cfg.zone_size as f64 + cfg.zone_size as f64 / 2.0;
                let zy = (z / zpr) as f64 * cfg.zone_size as f64 + cfg.zone_size as f64 / 2.0;
                let d2 = (zx - center).powi(2) + (zy - center).powi(2);
                cfg.demand_base + cfg.demand_peak * (-d2 / (2.0 * cfg.demand_width.powi(2))).exp()
            })
            .collect();
        Ok(Self { cfg, rates })
    }

    pub fn config(&self) -> &TaxiConfig {
        &self.cfg
    }

    pub fn n_zones(&self) -> usize {
        self.rates.len()
    }

    /// Expected requests per step in each zone.
    pub fn zone_rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn zone_of(&self, x: usize, y: usize) -> usize {
        let zpr = self.cfg.grid / self.cfg.zone_size;
        (y / self.cfg.zone_size) * zpr + x / self.cfg.zone_size
    }

    /// Spread `n` taxis evenly: one per cell when n fills the grid, a
    /// square lattice when n is a perfect square, else evenly by index.
    pub fn uniform_cells(&self) -> Vec<(usize, usize)> {
        let g = self.cfg.grid;
        let n = self.cfg.n_agents;
        let m = (n as f64).sqrt().round() as usize;
        if n == g * g {
            (0..n).map(|c| (c % g, c / g)).collect()
        } else if m * m == n {
            (0..n)
                .map(|i| {
                    let (cx, cy) = (i % m, i / m);
                    ((2 * cx + 1) * g / (2 * m), (2 * cy + 1) * g / (2 * m))
                })
                .collect()
        } else {
            (0..n).map(|i| i * g * g / n).map(|c| (c % g, c / g)).collect()
        }
    }

    fn cell(p: &AgentPose) -> (usize, usize) {
        (p.x as usize, p.y as usize)
    }

    fn supply(&self, poses: &[AgentPose]) -> Vec<usize> {
        let mut s = vec![0; self.n_zones()];
        for p in poses {
            let (x, y) = Self::cell(p);
            s[self.zone_of(x, y)] += 1;
        }
        s
    }

    fn fractions(counts: impl Iterator<Item = f64>, n: usize) -> Vec<f64> {
        let v: Vec<f64> = counts.collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            v.into_iter().map(|c| c / total).collect()
        } else {
            // no requests anywhere: treat demand as flat
            vec![1.0 / n as f64; n]
        }
    }

    /// −(1/Z)·Σ_z |supply_z − demand_z| on normalized fractions.
    pub fn matching_reward(&self, supply: &[usize], demand: &[u32]) -> f64 {
        let z = self.n_zones();
        let s = Self::fractions(supply.iter().map(|c| *c as f64), z);
        let d = Self::fractions(demand.iter().map(|c| *c as f64), z);
        -s.iter().zip(&d).map(|(a, b)| (a - b).abs()).sum::<f64>() / z as f64
    }

    fn draw_demand(&self, rng: &mut ChaCha8Rng) -> Vec<u32> {
        self.rates
            .iter()
            .map(|&l| {
                if l > 0.0 {
                    Poisson::new(l).expect("positive rate").sample(rng) as u32
                } else {
                    0
                }
            })
            .collect()
    }

    fn local_states(&self, poses: &[AgentPose], demand: &[u32]) -> Vec<LocalState> {
        let z = self.n_zones();
        let supply = self.supply(poses);
        let s = Self::fractions(supply.iter().map(|c| *c as f64), z);
        let d = Self::fractions(demand.iter().map(|c| *c as f64), z);
        let tol = 0.5 / self.cfg.n_agents as f64;
        poses
            .iter()
            .map(|p| {
                let (x, y) = Self::cell(p);
                let zone = self.zone_of(x, y);
                let gap = d[zone] - s[zone];
                let bin = if gap > tol {
                    0
                } else if gap < -tol {
                    2
                } else {
                    1
                };
                LocalState((y * self.cfg.grid + x) * IMBALANCE_BINS + bin)
            })
            .collect()
    }

    fn snapshot(&self, step: usize, poses: Vec<AgentPose>, demand: Vec<u32>, nu_prev: MeanFieldAction, rng: ChaCha8Rng) -> Result<EnvSnapshot> {
        let states = self.local_states(&poses, &demand);
        Ok(EnvSnapshot {
            step,
            mu: empirical_mean_field_state(&states, self.n_states())?,
            nu_prev,
            states,
            poses,
            demand,
            rng,
        })
    }
}

impl Env for TaxiGrid {
    fn name(&self) -> &'static str {
        "taxi"
    }

    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn n_states(&self) -> usize {
        self.cfg.grid * self.cfg.grid * IMBALANCE_BINS
    }

    fn n_actions(&self) -> usize {
        N_MOVES
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&self, seed: u64) -> Result<EnvSnapshot> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = if self.cfg.random_init {
            let g = self.cfg.grid;
            rand::seq::index::sample(&mut rng, g * g, self.cfg.n_agents)
                .into_iter()
                .map(|c| (c % g, c / g))
                .collect()
        } else {
            self.uniform_cells()
        };
        let poses = cells
            .into_iter()
            .map(|(x, y)| AgentPose {
                x: x as f64,
                y: y as f64,
                heading: 0.0,
            })
            .collect();
        let demand = self.draw_demand(&mut rng);
        self.snapshot(0, poses, demand, MeanFieldAction::uniform(N_MOVES)?, rng)
    }

    fn step(&self, snapshot: &EnvSnapshot, actions: &[usize]) -> Result<StepResult> {
        check_actions(actions, self.cfg.n_agents, N_MOVES)?;
        let g = self.cfg.grid as i64;
        let poses: Vec<AgentPose> = snapshot
            .poses
            .iter()
            .zip(actions)
            .map(|(p, &a)| {
                let (dx, dy) = MOVES[a];
                AgentPose {
                    x: (p.x as i64 + dx).rem_euclid(g) as f64,
                    y: (p.y as i64 + dy).rem_euclid(g) as f64,
                    heading: 0.0,
                }
            })
            .collect();
        let reward = self.matching_reward(&self.supply(&poses), &snapshot.demand);
        let mut rng = snapshot.rng.clone();
        let demand = self.draw_demand(&mut rng);
        let nu = action_field(actions, N_MOVES)?;
        let next = self.snapshot(snapshot.step + 1, poses, demand, nu.clone(), rng)?;
        Ok(StepResult { snapshot: next, reward, nu })
    }

    fn distance(&self, snapshot: &EnvSnapshot, i: usize, j: usize) -> f64 {
        torus_distance(&snapshot.poses[i], &snapshot.poses[j], self.cfg.grid as f64)
    }

    fn layout_dims(&self) -> (usize, usize) {
        (self.cfg.grid, self.cfg.grid)
    }

    fn layout_cell(&self, snapshot: &EnvSnapshot, i: usize) -> (usize, usize) {
        let (x, y) = Self::cell(&snapshot.poses[i]);
        (y, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taxi(n: usize, grid: usize) -> TaxiGrid {
        TaxiGrid::new(TaxiConfig {
            n_agents: n,
            grid,
            ..TaxiConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn hundred_taxis_fill_ten_by_ten() {
        let t = taxi(100, 10);
        let snap = t.reset(0).unwrap();
        let mut cells: Vec<(usize, usize)> = snap.poses.iter().map(TaxiGrid::cell).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), 100);
    }

    #[test]
    fn capacity_is_enforced() {
        let cfg = TaxiConfig {
            n_agents: 65,
            grid: 8,
            ..TaxiConfig::default()
        };
        assert!(matches!(TaxiGrid::new(cfg), Err(VaiError::InvalidConfig(_))));
    }

    #[test]
    fn perfect_matching_scores_zero() {
        let t = taxi(16, 8);
        let supply = vec![1usize; t.n_zones()];
        let demand = vec![3u32; t.n_zones()];
        assert_eq!(t.matching_reward(&supply, &demand), 0.0);
        let mut lopsided = vec![0usize; t.n_zones()];
        lopsided[0] = 16;
        let r = t.matching_reward(&lopsided, &demand);
        assert!(r < 0.0 && r >= -1.0);
    }

    #[test]
    fn lattice_placement_is_spread() {
        let t = taxi(16, 8);
        let cells = t.uniform_cells();
        assert_eq!(cells[0], (1, 1));
        assert_eq!(cells[15], (7, 7));
        let snap = t.reset(3).unwrap();
        let supply = t.supply(&snap.poses);
        assert!(supply.iter().all(|s| *s == 1));
    }

    #[test]
    fn center_is_hot() {
        let t = taxi(16, 8);
        let r = t.zone_rates();
        assert!(r[t.zone_of(4, 4)] > r[t.zone_of(0, 0)]);
    }

    #[test]
    fn step_is_reproducible_and_bounded() {
        let t = taxi(16, 8);
        let s0 = t.reset(9).unwrap();
        let acts: Vec<usize> = (0..16).map(|i| i % N_MOVES).collect();
        let a = t.step(&s0, &acts).unwrap();
        let b = t.step(&s0, &acts).unwrap();
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.snapshot.demand, b.snapshot.demand);
        assert!(a.reward <= 0.0 && a.reward >= -1.0);
        assert_eq!(a.snapshot.poses[1].x, 3.0); // (3,1) moved north
        assert_eq!(a.snapshot.poses[1].y, 2.0);
    }
}
