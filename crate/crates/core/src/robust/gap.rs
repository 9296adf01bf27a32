//! Cooperative vs worst-case Q gap: closed form against a grid search over
//! the first-order perturbation model.

use crate::error::{invalid, Result, VaiError};
use crate::learn::QModel;
use crate::mf::{norm_unchecked, NormOrder};

/// Largest number of (x, y) grid pairs searched for finite p.
pub const DEFAULT_GAP_CAP: u128 = 20_000_000;

/// Magnitudes reachable on a `grid`-point lattice over [−r, r], deduplicated.
fn magnitudes(r: f64, grid: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..grid)
        .map(|i| (-r + 2.0 * r * i as f64 / (grid - 1) as f64).abs())
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

fn feasible(points: &[f64], idx: &[usize], r: f64, p: f64) -> bool {
    let v: Vec<f64> = idx.iter().map(|i| points[*i]).collect();
    norm_unchecked(&v, p) <= r * (1.0 + 1e-12) + 1e-15
}

/// All magnitude vectors of length `dim` inside the ℓp ball of radius `r`.
fn ball(points: &[f64], dim: usize, r: f64, p: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        if feasible(points, &idx, r, p) {
            out.push(idx.iter().map(|i| points[*i]).collect());
        }
        let mut d = 0;
        loop {
            if d == dim {
                return out;
            }
            idx[d] += 1;
            if idx[d] < points.len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// `(closed_form, brute_force)` for one Q row.
///
/// The closed form is `ε·ξ·‖Q‖_q`. The brute force maximizes
/// `Σ_a |x_a|·|y_a|·|Q_a|` over grid points with `‖x‖_p ≤ ε`, `‖y‖_p ≤ ξ`.
/// For p = ∞ the search separates per action and is exact on any grid that
/// contains the endpoints.
pub fn worst_case_gap_row(row: &[f64], eps: f64, xi: f64, p: f64, grid: usize) -> Result<(f64, f64)> {
    worst_case_gap_row_capped(row, eps, xi, p, grid, DEFAULT_GAP_CAP)
}

pub fn worst_case_gap_row_capped(row: &[f64], eps: f64, xi: f64, p: f64, grid: usize, cap: u128) -> Result<(f64, f64)> {
    if grid < 2 {
        return invalid(format!("grid resolution {grid} < 2"));
    }
    if row.is_empty() || row.iter().any(|v| !v.is_finite()) {
        return invalid("Q row must be non-empty and finite");
    }
    if !(0.0..=1.0).contains(&eps) || !(0.0..=1.0).contains(&xi) {
        return invalid(format!("budgets ({eps}, {xi}) outside [0, 1]"));
    }
    let order = NormOrder::new(p)?;
    let closed = eps * xi * norm_unchecked(row, order.q());
    let xs = magnitudes(eps, grid);
    let ys = magnitudes(xi, grid);
    if p.is_infinite() {
        let best = xs.last().copied().unwrap_or(0.0) * ys.last().copied().unwrap_or(0.0);
        let brute = row.iter().map(|q| best * q.abs()).sum();
        return Ok((closed, brute));
    }
    let dim = row.len() as u32;
    let count = (xs.len() as u128).pow(dim) * (ys.len() as u128).pow(dim);
    if count > cap {
        return Err(VaiError::CapExceeded { count, cap });
    }
    let bx = ball(&xs, row.len(), eps, p);
    let by = ball(&ys, row.len(), xi, p);
    let mut brute = 0.0f64;
    for x in &bx {
        let w: Vec<f64> = x.iter().zip(row).map(|(x, q)| x * q.abs()).collect();
        for y in &by {
            brute = brute.max(w.iter().zip(y).map(|(w, y)| w * y).sum());
        }
    }
    Ok((closed, brute))
}

/// [`worst_case_gap_row`] on `Q(s, ·, μ, ν)`.
#[allow(clippy::too_many_arguments)]
pub fn worst_case_gap(q: &QModel, s: usize, mu: &[f64], nu: &[f64], eps: f64, xi: f64, p: f64, grid: usize) -> Result<(f64, f64)> {
    if s >= q.n_states() {
        return invalid(format!("state {s} out of range"));
    }
    worst_case_gap_row(&q.q_row(s, mu, nu), eps, xi, p, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_action_example() {
        let (cf, bf) = worst_case_gap_row(&[1.0, -1.0], 0.5, 0.5, f64::INFINITY, 11).unwrap();
        assert!((cf - 0.5).abs() < 1e-12);
        assert!((bf - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_budgets_vanish() {
        for (e, x) in [(0.0, 0.7), (0.7, 0.0)] {
            let (cf, bf) = worst_case_gap_row(&[2.0, -3.0, 0.5], e, x, f64::INFINITY, 5).unwrap();
            assert_eq!((cf, bf), (0.0, 0.0));
            let (cf, bf) = worst_case_gap_row(&[2.0, -3.0, 0.5], e, x, 2.0, 5).unwrap();
            assert_eq!((cf, bf), (0.0, 0.0));
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        assert!(worst_case_gap_row(&[1.0], 0.5, 0.5, 1.0, 1).is_err());
    }

    #[test]
    fn l1_ball_concentrates_on_largest_entry() {
        // q = ∞ so the closed form is ε·ξ·max|Q|
        let (cf, bf) = worst_case_gap_row(&[0.5, -2.0, 1.0], 0.4, 0.8, 1.0, 9).unwrap();
        assert!((cf - 0.64).abs() < 1e-12);
        assert!((bf - 0.64).abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let r = worst_case_gap_row_capped(&[1.0; 6], 0.5, 0.5, 2.0, 101, 1000);
        assert!(matches!(r, Err(VaiError::CapExceeded { .. })));
    }

    proptest! {
        #[test]
        fn sup_norm_identity_holds(row in proptest::collection::vec(-5.0f64..5.0, 1..5), e in 0.0f64..1.0, x in 0.0f64..1.0) {
            let (cf, bf) = worst_case_gap_row(&row, e, x, f64::INFINITY, 101).unwrap();
            prop_assert!((cf - bf).abs() <= 0.02 * cf + 1e-6);
        }

        #[test]
        fn brute_force_never_exceeds_holder_bound(row in proptest::collection::vec(-5.0f64..5.0, 1..4), e in 0.0f64..1.0, x in 0.0f64..1.0) {
            // Σ|x||y||Q| ≤ ‖x‖_p ‖y‖_p max|Q| by Hölder twice
            let (_, bf) = worst_case_gap_row(&row, e, x, 2.0, 7).unwrap();
            let m = row.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!(bf <= e * x * m + 1e-9);
        }
    }
}
