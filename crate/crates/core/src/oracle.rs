//! Offline subset maximisers for the discrete K-Max objective.
//!
//! An oracle takes a P-mode grid and returns a size-K subset together with
//! the approximation factor it certifies: `value >= factor * optimum`.

use serde::{Deserialize, Serialize};

use crate::discretize::{discrete_reward_unchecked, GridMode, ProbGrid};
use crate::subsets::{check_capacity, Combinations, DEFAULT_SUBSET_CAP};
use crate::{Error, Result};

/// Relative tolerance under which two subset values count as tied; ties go
/// to the lexicographically smallest subset.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub subset: Vec<usize>,
    pub value: f64,
    pub approx_factor: f64,
}

/// Common interface so the learner can be run with any maximiser.
pub trait SubsetOracle {
    fn solve(&self, p: &ProbGrid, k: usize) -> Result<OracleResult>;
    /// Factor this oracle guarantees.
    fn approx_factor(&self) -> f64;
}

fn check_grid(p: &ProbGrid, k: usize) -> Result<()> {
    if p.mode != GridMode::P {
        return Err(Error::input("oracle needs a P-mode grid"));
    }
    if k == 0 || k > p.n {
        return Err(Error::input(format!("need 1 <= K <= N, got K = {k}, N = {}", p.n)));
    }
    Ok(())
}

fn improves(value: f64, best: f64) -> bool {
    value > best + TIE_TOL * best.abs().max(1.0)
}

/// Full enumeration of all `C(N, K)` subsets.
#[derive(Debug, Clone, Copy)]
pub struct ExactOracle {
    pub cap: u128,
}

impl Default for ExactOracle {
    fn default() -> Self {
        ExactOracle {
            cap: DEFAULT_SUBSET_CAP,
        }
    }
}

impl SubsetOracle for ExactOracle {
    fn solve(&self, p: &ProbGrid, k: usize) -> Result<OracleResult> {
        exact_oracle_with_cap(p, k, self.cap)
    }

    fn approx_factor(&self) -> f64 {
        1.0
    }
}

/// Marginal-gain greedy.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyOracle;

impl SubsetOracle for GreedyOracle {
    fn solve(&self, p: &ProbGrid, k: usize) -> Result<OracleResult> {
        greedy_oracle(p, k)
    }

    fn approx_factor(&self) -> f64 {
        1.0 - (-1.0_f64).exp()
    }
}

/// Exact argmax of the discrete reward with the default enumeration cap.
pub fn exact_oracle(p: &ProbGrid, k: usize) -> Result<OracleResult> {
    exact_oracle_with_cap(p, k, DEFAULT_SUBSET_CAP)
}

pub fn exact_oracle_with_cap(p: &ProbGrid, k: usize, cap: u128) -> Result<OracleResult> {
    check_grid(p, k)?;
    check_capacity(p.n, k, cap, "use the greedy oracle for instances this large")?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for s in Combinations::new(p.n, k) {
        let v = discrete_reward_unchecked(&s, p);
        match &best {
            Some((_, bv)) if !improves(v, *bv) => {}
            _ => best = Some((s, v)),
        }
    }
    let (subset, value) = best.expect("at least one subset when K <= N");
    Ok(OracleResult {
        subset,
        value,
        approx_factor: 1.0,
    })
}

/// Builds the subset by `K` additions, each maximising the marginal gain;
/// ties go to the lowest arm index. The expected maximum is monotone
/// submodular in the set, so the result is within `1 - 1/e` of optimal.
pub fn greedy_oracle(p: &ProbGrid, k: usize) -> Result<OracleResult> {
    check_grid(p, k)?;
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut current = 0.0;
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..p.n).filter(|i| !chosen.contains(i)) {
            let mut trial = chosen.clone();
            trial.push(i);
            let v = discrete_reward_unchecked(&trial, p);
            match best {
                Some((_, bv)) if !improves(v, bv) => {}
                _ => best = Some((i, v)),
            }
        }
        let (i, v) = best.expect("K <= N leaves a candidate");
        chosen.push(i);
        current = v;
    }
    chosen.sort_unstable();
    let value = discrete_reward_unchecked(&chosen, p);
    debug_assert!((value - current).abs() < 1e-12);
    Ok(OracleResult {
        subset: chosen,
        value,
        approx_factor: 1.0 - (-1.0_f64).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{discrete_reward, BinGrid};
    use approx::assert_abs_diff_eq;

    fn half_grid(rows: Vec<[f64; 2]>) -> ProbGrid {
        let g = BinGrid::new(0.5).unwrap();
        ProbGrid::new(
            GridMode::P,
            g,
            rows.into_iter().map(|r| vec![r[0], r[1], 0.0]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn exact_picks_the_best_pair() {
        let p = half_grid(vec![[0.5, 0.5], [0.5, 0.5], [0.9, 0.1]]);
        let r = exact_oracle(&p, 2).unwrap();
        assert_eq!(r.subset, vec![0, 1]);
        assert_abs_diff_eq!(r.value, 0.375, epsilon = 1e-15);
        assert_abs_diff_eq!(discrete_reward(&[0, 2], &p).unwrap(), 0.275, epsilon = 1e-15);
        assert_abs_diff_eq!(discrete_reward(&[1, 2], &p).unwrap(), 0.275, epsilon = 1e-15);
        assert_eq!(r.approx_factor, 1.0);
    }

    #[test]
    fn full_set_when_k_equals_n() {
        let p = half_grid(vec![[0.2, 0.8], [0.6, 0.4], [0.9, 0.1]]);
        assert_eq!(exact_oracle(&p, 3).unwrap().subset, vec![0, 1, 2]);
    }

    #[test]
    fn identical_rows_tie_break() {
        let p = half_grid(vec![[0.3, 0.7]; 5]);
        assert_eq!(exact_oracle(&p, 3).unwrap().subset, vec![0, 1, 2]);
        assert_eq!(greedy_oracle(&p, 3).unwrap().subset, vec![0, 1, 2]);
    }

    #[test]
    fn greedy_matches_exact_for_k1() {
        let p = half_grid(vec![[0.5, 0.5], [0.1, 0.9], [0.9, 0.1]]);
        assert_eq!(
            greedy_oracle(&p, 1).unwrap().subset,
            exact_oracle(&p, 1).unwrap().subset
        );
    }

    #[test]
    fn capacity_error() {
        let p = half_grid(vec![[0.5, 0.5]; 30]);
        assert!(matches!(
            exact_oracle_with_cap(&p, 15, 1000),
            Err(Error::Capacity { .. })
        ));
        assert!(greedy_oracle(&p, 15).is_ok());
    }

    #[test]
    fn rejects_q_mode_and_bad_k() {
        let mut p = half_grid(vec![[0.5, 0.5]; 3]);
        assert!(exact_oracle(&p, 0).is_err());
        assert!(exact_oracle(&p, 4).is_err());
        p.mode = GridMode::Q;
        assert!(exact_oracle(&p, 2).is_err());
    }
}
