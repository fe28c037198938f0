//! Continuous-to-discrete conversion.
//!
//! Outcomes are binned into `M` half-open bins `[(j-1)eps, j eps)` with
//! representative value `v_j = (j-1) eps`. A discrete arm with bin masses
//! `p_j` is equivalently a stack of independent binary arms, arm `j`
//! firing value `v_j` with probability `q_j = p_j / sum_{j' <= j} p_j'`.
//! Both parameterisations give the same expected maximum, which is what
//! lets the learner estimate `q` and hand `p` to the offline oracle.
//!
//! Bin indices are 1-based as in `v_j = (j-1) eps`; row-major storage uses
//! `j - 1` internally.

use serde::{Deserialize, Serialize};

use crate::env_continuous::ContinuousArm;
use crate::subsets::validate_indices;
use crate::{Error, Result};

/// Largest `K * M` the brute-force oracle accepts.
pub const BRUTEFORCE_MAX_CELLS: usize = 20;

/// Row-sum tolerance for P-mode grids.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Uniform binning of `[0, 1]` with `M * eps > 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    epsilon: f64,
    m: usize,
    values: Vec<f64>,
}

impl BinGrid {
    /// `M = ceil(1/eps)`, bumped by one when `1/eps` is an integer so that
    /// `M * eps > 1` holds strictly; the extra top bin carries no mass for
    /// arms supported on `[0, 1]`.
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(Error::input(format!("epsilon must lie in (0, 1/2], got {epsilon}")));
        }
        let inv = 1.0 / epsilon;
        let nearest = inv.round();
        let m = if (inv - nearest).abs() < 1e-9 {
            nearest as usize + 1
        } else {
            inv.ceil() as usize
        };
        let values = (0..m).map(|j| j as f64 * epsilon).collect();
        Ok(BinGrid { epsilon, m, values })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Number of bins `M`.
    pub fn m(&self) -> usize {
        self.m
    }

    /// `v_1..v_M` (index 0 holds `v_1 = 0`).
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `v_j` for 1-based `j`.
    pub fn value(&self, j: usize) -> f64 {
        self.values[j - 1]
    }

    /// Upper edge of bin `j` clipped to 1.
    fn upper_edge(&self, j: usize) -> f64 {
        if j == self.m {
            1.0
        } else {
            self.values[j].min(1.0)
        }
    }
}

/// 1-based bin of `r`, consistent with the stored `v_j` so that
/// `v_j <= r < v_{j+1}`; `r = 1` lands in bin `M`.
pub fn bin_of(r: f64, grid: &BinGrid) -> Result<usize> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::input(format!("outcome {r} outside [0, 1]")));
    }
    let m = grid.m;
    let mut j = ((r / grid.epsilon).floor() as usize + 1).clamp(1, m);
    while j < m && r >= grid.value(j + 1) {
        j += 1;
    }
    while j > 1 && r < grid.value(j) {
        j -= 1;
    }
    Ok(j)
}

/// Which parameterisation a [`ProbGrid`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// Bin masses `p_{i,j}`.
    P,
    /// Binary-arm probabilities `q_{i,j}`.
    Q,
}

/// `N x M` matrix of probabilities, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbGrid {
    pub mode: GridMode,
    pub n: usize,
    pub grid: BinGrid,
    pub entries: Vec<f64>,
}

impl ProbGrid {
    /// Checked constructor; P-mode rows must sum to 1 within [`ROW_SUM_TOL`].
    pub fn new(mode: GridMode, grid: BinGrid, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = grid.m();
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::input(format!("row {i} has {} entries, M = {m}", row.len())));
            }
            if row.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::input(format!("row {i} has entries outside [0, 1]")));
            }
            if mode == GridMode::P {
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::input(format!("P row {i} sums to {s}")));
                }
            }
            entries.extend_from_slice(row);
        }
        Ok(ProbGrid { mode, n, grid, entries })
    }

    /// Unchecked constructor from a row-major buffer.
    pub fn from_entries(mode: GridMode, grid: BinGrid, n: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), n * grid.m());
        ProbGrid { mode, n, grid, entries }
    }

    pub fn m(&self) -> usize {
        self.grid.m()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.m();
        &self.entries[i * m..(i + 1) * m]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let m = self.m();
        &mut self.entries[i * m..(i + 1) * m]
    }

    /// Entry at arm `i` (0-based) and bin `j` (1-based).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.m() + j - 1]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    fn expect_mode(&self, mode: GridMode) -> Result<()> {
        if self.mode != mode {
            return Err(Error::input(format!(
                "expected {mode:?}-mode grid, got {:?}",
                self.mode
            )));
        }
        Ok(())
    }
}

/// Bin masses `p_{i,j} = F_i(min(j eps, 1)) - F_i((j-1) eps)`.
pub fn cdf_to_p(arms: &[ContinuousArm], grid: &BinGrid) -> ProbGrid {
    let m = grid.m();
    let mut entries = Vec::with_capacity(arms.len() * m);
    for arm in arms {
        let start = entries.len();
        for j in 1..=m {
            let lo = grid.value(j).min(1.0);
            let hi = grid.upper_edge(j);
            entries.push((arm.cdf(hi) - arm.cdf(lo)).max(0.0));
        }
        renormalize(&mut entries[start..]);
    }
    ProbGrid::from_entries(GridMode::P, grid.clone(), arms.len(), entries)
}

fn renormalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    if s > 0.0 && (s - 1.0).abs() > ROW_SUM_TOL * 0.5 {
        row.iter_mut().for_each(|x| *x /= s);
    }
}

/// `q_{i,j} = p_{i,j} / sum_{j' <= j} p_{i,j'}`. A zero denominator gives
/// `q = 1` in bin 1 and `q = 0` above; neither choice changes the
/// reconstructed row.
pub fn p_to_q(p: &ProbGrid) -> Result<ProbGrid> {
    p.expect_mode(GridMode::P)?;
    let mut out = p.clone();
    out.mode = GridMode::Q;
    for i in 0..p.n {
        let src = p.row(i);
        let dst = out.row_mut(i);
        let mut cum = 0.0;
        for j in 0..src.len() {
            cum += src[j];
            dst[j] = if cum > 0.0 {
                (src[j] / cum).clamp(0.0, 1.0)
            } else if j == 0 {
                1.0
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

/// `p_{i,j} = q_{i,j} prod_{j' > j} (1 - q_{i,j'})`; any deficit `1 - sum_j p`
/// (possible when `q_{i,1} < 1`) is added to bin 1, whose value is 0.
pub fn q_to_p(q: &ProbGrid) -> Result<ProbGrid> {
    q.expect_mode(GridMode::Q)?;
    let mut out = q.clone();
    out.mode = GridMode::P;
    for i in 0..q.n {
        let src = q.row(i);
        let dst = out.row_mut(i);
        let mut tail = 1.0;
        for j in (0..src.len()).rev() {
            dst[j] = src[j] * tail;
            tail *= 1.0 - src[j];
        }
        let s: f64 = dst.iter().sum();
        if s < 1.0 {
            dst[0] += 1.0 - s;
        }
    }
    Ok(out)
}

/// Expected maximum of the discretized arms in `s`:
/// `sum_j v_j (G_j - G_{j-1})` with `G_j = prod_{i in s} P[X_i <= bin j]`.
pub fn discrete_reward(s: &[usize], p: &ProbGrid) -> Result<f64> {
    p.expect_mode(GridMode::P)?;
    validate_indices(s, p.n)?;
    Ok(discrete_reward_unchecked(s, p))
}

pub(crate) fn discrete_reward_unchecked(s: &[usize], p: &ProbGrid) -> f64 {
    let m = p.m();
    let values = p.grid.values();
    let mut cums: Vec<f64> = vec![0.0; s.len()];
    let mut prev_g = 0.0;
    let mut total = 0.0;
    for (j, &v) in values.iter().enumerate() {
        let mut g = 1.0;
        for (c, &i) in cums.iter_mut().zip(s) {
            *c += p.entries[i * m + j];
            g *= *c;
        }
        total += v * (g - prev_g);
        prev_g = g;
    }
    total
}

/// `Q_j(S; q) = prod_{k in S, j' > j} (1 - q_{k,j'})` for `j = 0..=M`
/// (index `j` holds `Q_j`; `Q_M = 1`).
pub fn trigger_probabilities(s: &[usize], q: &ProbGrid) -> Vec<f64> {
    let m = q.m();
    let mut out = vec![1.0; m + 1];
    for j in (0..m).rev() {
        // Q_j = Q_{j+1} * prod_k (1 - q_{k, j+1})
        let factor: f64 = s.iter().map(|&k| 1.0 - q.entries[k * m + j]).product();
        out[j] = out[j + 1] * factor;
    }
    out
}

/// Expected maximum of the binary arms `{Y_{i,j}}_{i in s}`:
/// `sum_j v_j (Q_j - Q_{j-1})`.
pub fn binary_reward(s: &[usize], q: &ProbGrid) -> Result<f64> {
    q.expect_mode(GridMode::Q)?;
    validate_indices(s, q.n)?;
    let big_q = trigger_probabilities(s, q);
    let values = q.grid.values();
    Ok((1..=q.m()).map(|j| values[j - 1] * (big_q[j] - big_q[j - 1])).sum())
}

/// Exhaustive expectation over all `2^(K M)` joint realisations of the
/// binary arms. Independent oracle for [`binary_reward`].
pub fn binary_reward_bruteforce(s: &[usize], q: &ProbGrid) -> Result<f64> {
    q.expect_mode(GridMode::Q)?;
    validate_indices(s, q.n)?;
    let m = q.m();
    let cells = s.len() * m;
    if cells > BRUTEFORCE_MAX_CELLS {
        return Err(Error::Size {
            cells,
            limit: BRUTEFORCE_MAX_CELLS,
        });
    }
    let probs: Vec<(f64, f64)> = s
        .iter()
        .flat_map(|&i| (0..m).map(move |j| (q.entries[i * m + j], q.grid.values()[j])))
        .collect();
    let mut total = 0.0;
    for mask in 0u32..(1u32 << cells) {
        let mut prob = 1.0;
        let mut best = 0.0_f64;
        for (bit, &(qq, v)) in probs.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                prob *= qq;
                best = best.max(v);
            } else {
                prob *= 1.0 - qq;
            }
        }
        total += prob * best;
    }
    Ok(total)
}
