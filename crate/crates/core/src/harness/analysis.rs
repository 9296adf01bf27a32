//! Prediction-vs-attack correlation and vulnerability heatmaps.

use std::path::Path;

use crate::envs::{Env, EnvSnapshot};
use crate::error::{invalid, Result, VaiError};
use crate::harness::ledger::sig9;
use crate::robust::RobustValueModel;
use crate::select::{predicted_drop, AttackSet};

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return invalid(format!("pearson: lengths differ ({} vs {})", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return invalid("pearson: need at least two pairs");
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return invalid("pearson: non-finite input");
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let scale = |m: f64| 1e-24 * n * m.abs().max(1.0).powi(2);
    if sxx <= scale(mx) {
        return Err(VaiError::UndefinedCorrelation("first sample has zero variance".into()));
    }
    if syy <= scale(my) {
        return Err(VaiError::UndefinedCorrelation("second sample has zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSample {
    pub ids: Vec<usize>,
    pub predicted_drop: f64,
    pub realized_return: f64,
}

/// Pairs each subset's telescoped predicted drop with the victim return
/// `realize` reports for it, and correlates the two.
pub fn correlate_prediction_vs_attack(
    v: &RobustValueModel,
    snapshot: &EnvSnapshot,
    subsets: &[AttackSet],
    eps: f64,
    mut realize: impl FnMut(usize, &AttackSet) -> Result<f64>,
) -> Result<(f64, Vec<CorrelationSample>)> {
    if subsets.len() < 2 {
        return invalid("correlation needs at least two subsets");
    }
    let mut samples = Vec::with_capacity(subsets.len());
    for (i, set) in subsets.iter().enumerate() {
        samples.push(CorrelationSample {
            ids: set.ids.clone(),
            predicted_drop: predicted_drop(v, snapshot, &set.ids, eps)?,
            realized_return: realize(i, set)?,
        });
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.predicted_drop).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.realized_return).collect();
    Ok((pearson(&xs, &ys)?, samples))
}

/// Scatter CSV with columns predicted_drop, realized_return, ids.
pub fn write_scatter(path: &Path, samples: &[CorrelationSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["predicted_drop", "realized_return", "ids"])?;
    for s in samples {
        let ids: Vec<String> = s.ids.iter().map(|i| i.to_string()).collect();
        w.write_record([sig9(s.predicted_drop), sig9(s.realized_return), ids.join(";")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapMode {
    /// V(s, μ, 0, 0) − V(s, μ, 1, 0)
    PerAgentEps,
    /// V(s, μ, 0, 0) − V(s, μ, 0, 1/N)
    SingleAdversaryXi,
}

impl HeatmapMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per-agent-eps" => Ok(Self::PerAgentEps),
            "single-adversary-xi" => Ok(Self::SingleAdversaryXi),
            other => invalid(format!("unknown heatmap mode `{other}` (expected per-agent-eps or single-adversary-xi)")),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::PerAgentEps => "per-agent-eps",
            Self::SingleAdversaryXi => "single-adversary-xi",
        }
    }
}

/// Per-agent value change placed on the env's layout grid. Agents sharing
/// a cell are averaged; empty cells hold 0.
pub fn heatmap_grid(v: &RobustValueModel, env: &dyn Env, snapshot: &EnvSnapshot, mode: HeatmapMode) -> Result<Vec<Vec<f64>>> {
    let n = snapshot.n_agents();
    let (rows, cols) = env.layout_dims();
    let mu = snapshot.mu.probs();
    let mut sum = vec![vec![0.0; cols]; rows];
    let mut count = vec![vec![0usize; cols]; rows];
    for i in 0..n {
        let s = snapshot.states[i].0;
        let base = v.value(s, mu, 0.0, 0.0);
        let hit = match mode {
            HeatmapMode::PerAgentEps => v.value(s, mu, 1.0, 0.0),
            HeatmapMode::SingleAdversaryXi => v.value(s, mu, 0.0, 1.0 / n as f64),
        };
        let (r, c) = env.layout_cell(snapshot, i);
        if r >= rows || c >= cols {
            return invalid(format!("agent {i} laid out at ({r}, {c}) outside {rows}x{cols}"));
        }
        sum[r][c] += base - hit;
        count[r][c] += 1;
    }
    Ok(sum
        .into_iter()
        .zip(count)
        .map(|(row, cnt)| row.into_iter().zip(cnt).map(|(s, c)| if c > 0 { s / c as f64 } else { 0.0 }).collect())
        .collect())
}

/// Writes the grid as headerless CSV, one layout row per line.
pub fn export_heatmap(v: &RobustValueModel, env: &dyn Env, snapshot: &EnvSnapshot, mode: HeatmapMode, path: &Path) -> Result<Vec<Vec<f64>>> {
    let grid = heatmap_grid(v, env, snapshot, mode)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in &grid {
        w.write_record(row.iter().map(|x| sig9(*x)))?;
    }
    w.flush()?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_env, TaxiConfig, TaxiGrid};
    use crate::harness::config::EnvSection;
    use proptest::prelude::*;

    #[test]
    fn perfect_lines() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_is_an_error() {
        assert!(matches!(pearson(&[1.0, 2.0, 3.0], &[5.0; 3]), Err(VaiError::UndefinedCorrelation(_))));
        assert!(matches!(pearson(&[0.1; 4], &[1.0, 2.0, 3.0, 4.0]), Err(VaiError::UndefinedCorrelation(_))));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn known_value() {
        // hand-computed: sxy = 6, sxx = 10, syy = 6.8 → r = 6/√68
        let r = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 4.0]).unwrap();
        assert!((r - 6.0 / 68f64.sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn affine_maps_give_sign(xs in prop::collection::vec(-10.0f64..10.0, 3..20), a in -5.0f64..5.0, b in -5.0f64..5.0) {
            prop_assume!(a.abs() > 1e-3);
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            prop_assume!(xs.iter().any(|x| (x - mean).abs() > 1e-3));
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let r = pearson(&xs, &ys).unwrap();
            prop_assert!((r - a.signum()).abs() < 1e-9);
        }

        #[test]
        fn bounded(xs in prop::collection::vec(-10.0f64..10.0, 3..20), seed in 0u64..1000) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * ((i as u64 ^ seed) % 7) as f64 - i as f64).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn constant_value_gives_zero_grid_of_layout_shape() {
        let env = TaxiGrid::new(TaxiConfig::default()).unwrap();
        let snap = env.reset(3).unwrap();
        let v = RobustValueModel::constant(env.n_states(), 0.9, &vec![2.5; env.n_states()]).unwrap();
        for mode in [HeatmapMode::PerAgentEps, HeatmapMode::SingleAdversaryXi] {
            let g = heatmap_grid(&v, &env, &snap, mode).unwrap();
            assert_eq!((g.len(), g[0].len()), env.layout_dims());
            assert!(g.iter().flatten().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn heatmap_csv_shape() {
        let sec = EnvSection {
            name: "vicsek".into(),
            n_agents: 8,
            horizon: 5,
            ..Default::default()
        };
        let env = build_env(&sec).unwrap();
        let snap = env.reset(0).unwrap();
        let v = RobustValueModel::constant(env.n_states(), 0.9, &vec![1.0; env.n_states()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        export_heatmap(&v, env.as_ref(), &snap, HeatmapMode::PerAgentEps, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let (rows, cols) = env.layout_dims();
        assert_eq!(text.lines().count(), rows);
        assert!(text.lines().all(|l| l.split(',').count() == cols));
        assert!(HeatmapMode::parse("bogus").is_err());
    }
}
