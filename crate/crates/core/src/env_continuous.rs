//! Continuous K-Max environments on `[0, 1]`.
//!
//! Every arm carries an analytic CDF, an inverse obtained by bisection and a
//! certified bi-Lipschitz constant `L` such that
//! `(u - v) / L <= F(u) - F(v) <= L (u - v)` for all `0 <= v < u <= 1`.
//! Builtin laws are validated strictly; user-supplied CDFs are only checked
//! and warned about, so deliberate violations can still be simulated.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::{beta::beta_reg, erf::erfc};

use crate::subsets::{validate_action, validate_indices};
use crate::{Error, Result};

/// Bisection stops once the bracket is narrower than this.
pub const INVERSE_CDF_TOL: f64 = 1e-12;

/// Grid size used by the bi-Lipschitz self-check.
pub const LIPSCHITZ_CHECK_POINTS: usize = 1000;

/// Parametric description of a builtin arm law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmKind {
    /// Gaussian `N(mu, sigma^2)` conditioned on `[0, 1]`.
    TruncatedGaussian { mu: f64, sigma: f64 },
    /// Mixture of uniforms; `weights` are renormalised to sum to one.
    UniformMixture {
        weights: Vec<f64>,
        intervals: Vec<[f64; 2]>,
    },
    /// `Beta(a, b)`. Only `a = b = 1` has a density bounded away from 0 and
    /// infinity on the closed interval.
    Beta { a: f64, b: f64 },
}

impl ArmKind {
    /// Uniform law on `[0, 1]`.
    pub fn uniform() -> Self {
        ArmKind::UniformMixture {
            weights: vec![1.0],
            intervals: vec![[0.0, 1.0]],
        }
    }

    /// Near-constant arm at `c`: mass `1 - background` spread on
    /// `[c - half_width, c + half_width]` (clipped to `[0, 1]`) over a uniform
    /// floor of mass `background`. Stands in for a point mass while keeping a
    /// finite bi-Lipschitz constant.
    pub fn steep_ramp(c: f64, half_width: f64, background: f64) -> Self {
        let lo = (c - half_width).max(0.0);
        let hi = (c + half_width).min(1.0);
        ArmKind::UniformMixture {
            weights: vec![background, 1.0 - background],
            intervals: vec![[0.0, 1.0], [lo, hi]],
        }
    }
}

/// User-supplied CDF on `[0, 1]`.
pub type CdfFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Law {
    TruncatedGaussian {
        mu: f64,
        sigma: f64,
        lower: f64,
        mass: f64,
    },
    /// Elementary segments `[x_k, x_{k+1})` with constant density.
    PiecewiseUniform {
        knots: Vec<f64>,
        densities: Vec<f64>,
    },
    Beta {
        a: f64,
        b: f64,
    },
    Custom(CdfFn),
}

/// A single arm's outcome law.
#[derive(Clone)]
pub struct ContinuousArm {
    law: Law,
    kind: Option<ArmKind>,
    lipschitz_upper: f64,
    label: usize,
}

impl fmt::Debug for ContinuousArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContinuousArm")
            .field("kind", &self.kind)
            .field("lipschitz_upper", &self.lipschitz_upper)
            .field("label", &self.label)
            .finish()
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Builds a validated builtin arm; fails on any law whose density vanishes
/// or blows up somewhere on `[0, 1]`.
pub fn builtin_arm(kind: &ArmKind, label: usize) -> Result<ContinuousArm> {
    let (law, lipschitz_upper) = match kind {
        &ArmKind::TruncatedGaussian { mu, sigma } => {
            if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
                return Err(Error::Validation(format!(
                    "truncated_gaussian needs finite mu and sigma > 0, got ({mu}, {sigma})"
                )));
            }
            let lower = std_normal_cdf(-mu / sigma);
            let mass = std_normal_cdf((1.0 - mu) / sigma) - lower;
            let density = |x: f64| std_normal_pdf((x - mu) / sigma) / (sigma * mass);
            let sup = density(mu.clamp(0.0, 1.0));
            let inf = density(0.0).min(density(1.0));
            if !(mass > 0.0) || !(inf > 1e-12) || !sup.is_finite() {
                return Err(Error::Validation(format!(
                    "truncated_gaussian({mu}, {sigma}) has density {inf:e} on [0, 1]; \
                     lower bi-Lipschitz bound fails"
                )));
            }
            (Law::TruncatedGaussian { mu, sigma, lower, mass }, sup.max(1.0 / inf))
        }
        ArmKind::UniformMixture { weights, intervals } => piecewise_uniform(weights, intervals)?,
        &ArmKind::Beta { a, b } => {
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::Validation(format!("beta({a}, {b}) needs a, b > 0")));
            }
            for (shape, end) in [(a, 0), (b, 1)] {
                if shape > 1.0 {
                    return Err(Error::Validation(format!("beta({a}, {b}) density vanishes at {end}")));
                }
                if shape < 1.0 {
                    return Err(Error::Validation(format!(
                        "beta({a}, {b}) density is unbounded at {end}"
                    )));
                }
            }
            (Law::Beta { a, b }, 1.0)
        }
    };
    Ok(ContinuousArm {
        law,
        kind: Some(kind.clone()),
        lipschitz_upper,
        label,
    })
}

fn piecewise_uniform(weights: &[f64], intervals: &[[f64; 2]]) -> Result<(Law, f64)> {
    if weights.is_empty() || weights.len() != intervals.len() {
        return Err(Error::Validation(format!(
            "uniform_mixture needs matching nonempty weights/intervals ({} vs {})",
            weights.len(),
            intervals.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(total > 0.0) {
        return Err(Error::Validation(
            "uniform_mixture weights must be nonnegative with positive sum".into(),
        ));
    }
    for &[a, b] in intervals {
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::Validation(format!(
                "uniform_mixture interval [{a}, {b}] must satisfy 0 <= a < b <= 1"
            )));
        }
    }
    let mut knots: Vec<f64> = vec![0.0, 1.0];
    for &[a, b] in intervals {
        knots.push(a);
        knots.push(b);
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let densities: Vec<f64> = knots
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            weights
                .iter()
                .zip(intervals)
                .filter(|(_, &[a, b])| a <= mid && mid < b)
                .map(|(wt, &[a, b])| wt / total / (b - a))
                .sum()
        })
        .collect();
    for (w, d) in knots.windows(2).zip(&densities) {
        if !(*d > 0.0) {
            return Err(Error::Validation(format!(
                "uniform_mixture has zero density on [{}, {}]",
                w[0], w[1]
            )));
        }
    }
    let sup = densities.iter().cloned().fold(0.0, f64::max);
    let inf = densities.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((Law::PiecewiseUniform { knots, densities }, sup.max(1.0 / inf)))
}

impl ContinuousArm {
    /// Wraps a user CDF. The bi-Lipschitz and boundary conditions are
    /// checked on a grid but violations only produce log warnings; the
    /// returned list repeats them for callers that want to inspect them.
    pub fn custom(cdf: CdfFn, lipschitz_upper: f64, label: usize) -> (Self, Vec<String>) {
        let arm = ContinuousArm {
            law: Law::Custom(cdf),
            kind: None,
            lipschitz_upper,
            label,
        };
        let mut warnings = Vec::new();
        if !(lipschitz_upper >= 1.0) {
            warnings.push(format!("arm {label}: lipschitz_upper {lipschitz_upper} < 1"));
        }
        if let Err(msg) = arm.check_bi_lipschitz(LIPSCHITZ_CHECK_POINTS) {
            warnings.push(msg);
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        (arm, warnings)
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = label;
        self
    }

    pub fn lipschitz_upper(&self) -> f64 {
        self.lipschitz_upper
    }

    /// The builtin description, `None` for custom arms.
    pub fn kind(&self) -> Option<&ArmKind> {
        self.kind.as_ref()
    }

    /// `F(x)`, with `F = 0` left of 0 and `F = 1` right of 1.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let v = match &self.law {
            Law::TruncatedGaussian { mu, sigma, lower, mass } => (std_normal_cdf((x - mu) / sigma) - lower) / mass,
            Law::PiecewiseUniform { knots, densities } => {
                let mut acc = 0.0;
                for (w, d) in knots.windows(2).zip(densities) {
                    if x >= w[1] {
                        acc += d * (w[1] - w[0]);
                    } else {
                        acc += d * (x - w[0]);
                        break;
                    }
                }
                acc
            }
            Law::Beta { a, b } => beta_reg(*a, *b, x),
            Law::Custom(f) => f(x),
        };
        v.clamp(0.0, 1.0)
    }

    /// Generalised inverse by bisection on `[0, 1]` to [`INVERSE_CDF_TOL`].
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        while hi - lo > INVERSE_CDF_TOL {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Interior points where the density may jump (empty for smooth laws).
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.law {
            Law::PiecewiseUniform { knots, .. } => knots[1..knots.len() - 1].to_vec(),
            _ => Vec::new(),
        }
    }

    /// Checks boundary values, monotonicity and the two-sided Lipschitz
    /// inequality on every pair of an `points`-point grid.
    pub fn check_bi_lipschitz(&self, points: usize) -> std::result::Result<(), String> {
        let l = self.lipschitz_upper;
        let xs: Vec<f64> = (0..points).map(|k| k as f64 / (points - 1) as f64).collect();
        let fs: Vec<f64> = xs.iter().map(|&x| self.cdf(x)).collect();
        if fs[0].abs() > 1e-12 || (fs[points - 1] - 1.0).abs() > 1e-12 {
            return Err(format!(
                "arm {}: cdf(0) = {}, cdf(1) = {}",
                self.label,
                fs[0],
                fs[points - 1]
            ));
        }
        const SLACK: f64 = 1e-12;
        for a in 0..points {
            for b in a + 1..points {
                let dx = xs[b] - xs[a];
                let df = fs[b] - fs[a];
                if df < dx / l - SLACK || df > l * dx + SLACK {
                    return Err(format!(
                        "arm {}: bi-Lipschitz bound L = {l} fails on [{}, {}] (dF = {df:e})",
                        self.label, xs[a], xs[b]
                    ));
                }
            }
        }
        Ok(())
    }
}

/// N arms, subset size K and the seed the harness derives streams from.
#[derive(Debug, Clone)]
pub struct ContinuousEnv {
    pub arms: Vec<ContinuousArm>,
    pub k: usize,
    pub rng_seed: u64,
}

impl ContinuousEnv {
    pub fn new(arms: Vec<ContinuousArm>, k: usize, rng_seed: u64) -> Result<Self> {
        if k == 0 || k > arms.len() {
            return Err(Error::input(format!(
                "need 1 <= K <= N, got K = {k}, N = {}",
                arms.len()
            )));
        }
        Ok(ContinuousEnv { arms, k, rng_seed })
    }

    /// Builds every arm from builtin kinds.
    pub fn from_kinds(kinds: &[ArmKind], k: usize, rng_seed: u64) -> Result<Self> {
        let arms = kinds
            .iter()
            .enumerate()
            .map(|(i, kind)| builtin_arm(kind, i))
            .collect::<Result<Vec<_>>>()?;
        Self::new(arms, k, rng_seed)
    }

    pub fn n(&self) -> usize {
        self.arms.len()
    }

    /// Largest certified bi-Lipschitz constant over all arms.
    pub fn lipschitz(&self) -> f64 {
        self.arms.iter().map(|a| a.lipschitz_upper).fold(1.0, f64::max)
    }
}

/// `(r_t, i_t, j_t)`: the maximum, the winning arm and (once discretized)
/// the bin of the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueIndexFeedback {
    pub reward: f64,
    pub winner: usize,
    pub bin: Option<usize>,
}

/// Draws one outcome per arm of `s` by inverse-CDF transform, in the order
/// of `s`.
pub fn sample_outcomes<R: Rng + ?Sized>(env: &ContinuousEnv, s: &[usize], rng: &mut R) -> Result<Vec<f64>> {
    validate_action(s, env.n(), env.k)?;
    Ok(s.iter().map(|&i| env.arms[i].inverse_cdf(rng.gen::<f64>())).collect())
}

/// Maximum and arg-maximum of `outcomes` over `s`; exact ties go to the
/// lowest arm index.
pub fn value_index_feedback(outcomes: &[f64], s: &[usize]) -> Result<ValueIndexFeedback> {
    if s.is_empty() {
        return Err(Error::input("empty action set"));
    }
    if outcomes.len() != s.len() {
        return Err(Error::input(format!(
            "{} outcomes for {} arms",
            outcomes.len(),
            s.len()
        )));
    }
    let mut best = (outcomes[0], s[0]);
    for (&x, &i) in outcomes.iter().zip(s).skip(1) {
        if x > best.0 || (x == best.0 && i < best.1) {
            best = (x, i);
        }
    }
    Ok(ValueIndexFeedback {
        reward: best.0,
        winner: best.1,
        bin: None,
    })
}

/// `r*(S) = integral over [0, 1] of 1 - prod_{i in S} F_i(x)`.
///
/// The interval is split at every density breakpoint of the arms in `S`
/// and each piece is integrated with composite Simpson, using roughly
/// `quad_points` nodes in total. On pieces where the integrand is smooth
/// the error is `O(h^4)`; for mixtures of uniforms with `|S| <= 3` the
/// integrand is a cubic per piece and the rule is exact. For Lipschitz
/// integrands at `10^4` nodes the absolute error stays below `1e-8`.
pub fn expected_max_exact(arms: &[ContinuousArm], s: &[usize], quad_points: usize) -> Result<f64> {
    if quad_points < 2 {
        return Err(Error::input(format!("quad_points must be >= 2, got {quad_points}")));
    }
    validate_indices(s, arms.len())?;
    let mut cuts = vec![0.0, 1.0];
    for &i in s {
        cuts.extend(arms[i].breakpoints());
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let integrand = |x: f64| 1.0 - s.iter().map(|&i| arms[i].cdf(x)).product::<f64>();
    let intervals = quad_points - 1;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut n = ((intervals as f64) * (b - a)).round() as usize;
        n = n.max(2);
        if n % 2 == 1 {
            n += 1;
        }
        total += simpson(&integrand, a, b, n);
    }
    Ok(total)
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let x = a + k as f64 * h;
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    acc * h / 3.0
}

/// Monte Carlo estimate of `r*(S)` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

pub fn expected_max_mc<R: Rng + ?Sized>(
    env: &ContinuousEnv,
    s: &[usize],
    n_samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::input("n_samples must be >= 1"));
    }
    validate_indices(s, env.n())?;
    // Welford
    let (mut mean, mut m2) = (0.0, 0.0);
    for n in 1..=n_samples {
        let x = s
            .iter()
            .map(|&i| env.arms[i].inverse_cdf(rng.gen::<f64>()))
            .fold(f64::NEG_INFINITY, f64::max);
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
    }
    let var = if n_samples > 1 {
        m2 / (n_samples - 1) as f64
    } else {
        0.0
    };
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n_samples as f64).sqrt(),
    })
}
