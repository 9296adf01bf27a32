//! Exhaustive search over K-subsets.

use std::path::Path;

use rayon::prelude::*;

use super::{check_k, AttackSet, SelectionMethod};
use crate::envs::ToyEnv;
use crate::error::{Result, VaiError};
use crate::harness::ledger::sig9;
use crate::learn::derive_seed;

/// Victim return (mean, std) when `subset` is attacked.
pub trait SubsetEvaluator: Sync {
    fn n_agents(&self) -> usize;
    fn evaluate(&self, subset: &[usize], seed: u64) -> Result<(f64, f64)>;
}

/// Exact centralized adversary on a tabular toy.
pub struct ToyExactEvaluator<'a> {
    pub env: &'a ToyEnv,
    pub eps: f64,
    pub gamma: f64,
}

impl SubsetEvaluator for ToyExactEvaluator<'_> {
    fn n_agents(&self) -> usize {
        self.env.config().n_agents
    }

    fn evaluate(&self, subset: &[usize], _seed: u64) -> Result<(f64, f64)> {
        Ok((self.env.exact_attacked_return(subset, self.eps, self.gamma)?, 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetScore {
    pub subset: Vec<usize>,
    pub victim_return: f64,
    pub std: f64,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All K-subsets of 0..n in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if c[i] < n - k + i {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        c[i] += 1;
        for j in (i + 1)..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// Scores every K-subset (in parallel, one derived seed per subset) and
/// returns the one with the lowest victim return, lowest lexicographic
/// subset on ties.
pub fn select_bruteforce(evaluator: &dyn SubsetEvaluator, k: usize, cap: u64, seed: u64) -> Result<(AttackSet, Vec<SubsetScore>)> {
    let n = evaluator.n_agents();
    check_k(k, n)?;
    let count = binomial(n, k);
    if count > cap as u128 {
        return Err(VaiError::CapExceeded { count, cap: cap as u128 });
    }
    let subsets = combinations(n, k);
    let scores: Vec<SubsetScore> = subsets
        .into_par_iter()
        .enumerate()
        .map(|(idx, subset)| {
            let (victim_return, std) = evaluator.evaluate(&subset, derive_seed(seed, idx as u64))?;
            Ok(SubsetScore { subset, victim_return, std })
        })
        .collect::<Result<_>>()?;
    let min = scores.iter().map(|s| s.victim_return).fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * min.abs().max(1.0);
    let best = scores.iter().find(|s| s.victim_return <= min + tol).expect("at least one subset");
    let set = AttackSet {
        ids: best.subset.clone(),
        method: SelectionMethod::Brute,
        rewards: Vec::new(),
        seed: Some(seed),
    };
    Ok((set, scores))
}

/// Score table with columns subset (ids joined by `;`), victim_return, std.
pub fn write_scores(path: &Path, scores: &[SubsetScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subset", "victim_return", "std"])?;
    for s in scores {
        let ids: Vec<String> = s.subset.iter().map(|i| i.to_string()).collect();
        w.write_record([ids.join(";"), sig9(s.victim_return), sig9(s.std)])?;
    }
    w.flush()?;
    Ok(())
}
