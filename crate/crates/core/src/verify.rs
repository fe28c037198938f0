//! Executable property suites behind `kmaxband verify`.
//!
//! Each check samples random instances from a fixed seed, measures the
//! worst slack of an inequality (positive means it held everywhere) and
//! counts violations beyond a stated tolerance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dck_ucb::{decomposition_sides, ConcentrationMonitor, DckConfig, DckUcb};
use crate::discretize::{
    binary_reward, binary_reward_bruteforce, cdf_to_p, discrete_reward, p_to_q, q_to_p, BinGrid, GridMode, ProbGrid,
};
use crate::env_continuous::{
    builtin_arm, expected_max_exact, sample_outcomes, value_index_feedback, ArmKind, ContinuousArm, ContinuousEnv,
};
use crate::kmin_exp::{
    fit_mle, gradient_g, hessian_h, neg_log_likelihood, nll_gradient, sample_min_loss, ExpLinearModel, MleExp,
    MleExpConfig, MleHistory,
};
use crate::oracle::{exact_oracle, greedy_oracle};
use crate::subsets::Combinations;
use crate::{sim_rng, Result, SimRng};

/// Outcome of one property check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub samples: u64,
    pub violations: u64,
    /// Worst observed slack of the checked inequality.
    pub margin: f64,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {} samples, {} violations, worst margin {:.3e}; {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.samples,
            self.violations,
            self.margin,
            self.detail
        )
    }
}

/// Tracks the minimum slack and the violation count of `lhs <= rhs + tol`.
#[derive(Debug, Clone)]
struct Slack {
    samples: u64,
    violations: u64,
    worst: f64,
    tol: f64,
}

impl Slack {
    fn new(tol: f64) -> Self {
        Slack {
            samples: 0,
            violations: 0,
            worst: f64::INFINITY,
            tol,
        }
    }

    fn le(&mut self, lhs: f64, rhs: f64) {
        self.samples += 1;
        let slack = rhs - lhs;
        self.worst = self.worst.min(slack);
        if !(slack >= -self.tol) {
            self.violations += 1;
        }
    }

    fn finish(self, name: &str, detail: String) -> Check {
        Check {
            name: name.to_string(),
            passed: self.violations == 0 && self.samples > 0,
            samples: self.samples,
            violations: self.violations,
            margin: self.worst,
            detail,
        }
    }
}

/// Sample sizes for the suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// A few seconds in total.
    Quick,
    /// Sizes of the acceptance gate.
    Full,
}

/// Random bi-Lipschitz builtin arm: a truncated Gaussian or a uniform floor
/// with one or two bumps.
pub fn random_arm_kind(rng: &mut impl Rng) -> ArmKind {
    if rng.gen_bool(0.5) {
        ArmKind::TruncatedGaussian {
            mu: rng.gen_range(0.0..1.0),
            sigma: rng.gen_range(0.3..1.0),
        }
    } else {
        let bumps = rng.gen_range(1..=2);
        let mut weights = vec![rng.gen_range(0.2..0.6)];
        let mut intervals = vec![[0.0, 1.0]];
        for _ in 0..bumps {
            let w = rng.gen_range(0.05..0.5);
            let lo = rng.gen_range(0.0..1.0 - w);
            weights.push(rng.gen_range(0.1..0.5));
            intervals.push([lo, lo + w]);
        }
        ArmKind::UniformMixture { weights, intervals }
    }
}

pub fn random_arms(n: usize, rng: &mut impl Rng) -> Vec<ContinuousArm> {
    (0..n)
        .map(|i| builtin_arm(&random_arm_kind(rng), i).expect("random arms are bi-Lipschitz"))
        .collect()
}

/// Random P-mode grid; each entry is zero with probability `zero_prob`.
pub fn random_p_grid(n: usize, epsilon: f64, zero_prob: f64, rng: &mut impl Rng) -> ProbGrid {
    let grid = BinGrid::new(epsilon).expect("valid epsilon");
    let m = grid.m();
    let rows = (0..n)
        .map(|_| {
            let mut row: Vec<f64> = (0..m)
                .map(|_| {
                    if rng.gen_bool(zero_prob) {
                        0.0
                    } else {
                        -(1.0 - rng.gen::<f64>()).ln()
                    }
                })
                .collect();
            if row.iter().all(|&x| x == 0.0) {
                row[rng.gen_range(0..m)] = 1.0;
            }
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
            row
        })
        .collect();
    ProbGrid::new(GridMode::P, grid, rows).expect("rows sum to one")
}

fn random_subset(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut s = rand::seq::index::sample(rng, n, k).into_vec();
    s.sort_unstable();
    s
}

const EPSILONS: [f64; 3] = [0.25, 0.1, 0.05];

/// `0 <= r*(S) - r_bar(S; p*) <= eps` over all subsets of random instances.
pub fn discretization_error(instances: usize, quad_points: usize, seed: u64) -> Result<Check> {
    let mut rng = sim_rng(seed, 0);
    let mut lower = Slack::new(1e-8);
    let mut upper = Slack::new(1e-8);
    for _ in 0..instances {
        let n = rng.gen_range(2..=6);
        let k = rng.gen_range(2..=3usize).min(n);
        let arms = random_arms(n, &mut rng);
        let grids: Vec<ProbGrid> = EPSILONS
            .iter()
            .map(|&e| Ok(cdf_to_p(&arms, &BinGrid::new(e)?)))
            .collect::<Result<_>>()?;
        for s in Combinations::new(n, k) {
            let exact = expected_max_exact(&arms, &s, quad_points)?;
            for (p, eps) in grids.iter().zip(EPSILONS) {
                let gap = exact - discrete_reward(&s, p)?;
                lower.le(0.0, gap);
                upper.le(gap, eps);
            }
        }
    }
    let passed_lower = lower.violations == 0;
    let mut c = upper.finish(
        "discretization error",
        format!("gap >= 0 worst slack {:.3e}", lower.worst),
    );
    c.passed &= passed_lower;
    c.violations += lower.violations;
    Ok(c)
}

/// `r_q(S; p_to_q(p)) = r_bar(S; p)` on random grids and subsets.
pub fn binary_equivalence(grids: usize, seed: u64) -> Result<Check> {
    let mut rng = sim_rng(seed, 0);
    let mut s = Slack::new(1e-12);
    for _ in 0..grids {
        let n = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=n.min(4));
        let eps = rng.gen_range(0.02..0.5);
        let p = random_p_grid(n, eps, 0.2, &mut rng);
        let q = p_to_q(&p)?;
        let sub = random_subset(n, k, &mut rng);
        let diff = (binary_reward(&sub, &q)? - discrete_reward(&sub, &p)?).abs();
        s.le(diff, 0.0);
    }
    Ok(s.finish("binary = discrete reward", "tolerance 1e-12".into()))
}

/// Closed form vs exhaustive enumeration of binary outcomes, `K <= 3`,
/// `M <= 4`.
pub fn binary_bruteforce(grids: usize, seed: u64) -> Result<Check> {
    let mut rng = sim_rng(seed, 1);
    let mut s = Slack::new(1e-12);
    for _ in 0..grids {
        let k = rng.gen_range(1..=3);
        let n = k + rng.gen_range(0..=2);
        // M in {3, 4}
        let eps = [0.5, 0.4, 0.3][rng.gen_range(0..3)];
        let p = random_p_grid(n, eps, 0.2, &mut rng);
        let q = p_to_q(&p)?;
        let sub = random_subset(n, k, &mut rng);
        let closed = binary_reward(&sub, &q)?;
        let brute = binary_reward_bruteforce(&sub, &q)?;
        s.le((closed - brute).abs(), 0.0);
        s.le((brute - discrete_reward(&sub, &p)?).abs(), 0.0);
    }
    Ok(s.finish("brute-force agreement", "tolerance 1e-12".into()))
}

/// `q' >= q` entrywise implies `r_q(S; q') >= r_q(S; q)`.
pub fn binary_monotonicity(grids: usize, seed: u64) -> Result<Check> {
    let mut rng = sim_rng(seed, 2);
    let mut s = Slack::new(1e-12);
    for _ in 0..grids {
        let n = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=n.min(3));
        let grid = BinGrid::new(rng.gen_range(0.05..0.5))?;
        let len = n * grid.m();
        let q: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
        let q_up: Vec<f64> = q
            .iter()
            .map(|&x| if rng.gen_bool(0.5) { x } else { rng.gen_range(x..=1.0) })
            .collect();
        let lo = ProbGrid::from_entries(GridMode::Q, grid.clone(), n, q);
        let hi = ProbGrid::from_entries(GridMode::Q, grid, n, q_up);
        let sub = random_subset(n, k, &mut rng);
        s.le(binary_reward(&sub, &lo)?, binary_reward(&sub, &hi)?);
    }
    Ok(s.finish("binary-reward monotonicity", "tolerance 1e-12".into()))
}

/// `q_to_p(p_to_q(p)) = p` entrywise.
pub fn roundtrip(grids: usize, seed: u64) -> Result<Check> {
    let mut rng = sim_rng(seed, 3);
    let mut s = Slack::new(1e-12);
    for _ in 0..grids {
        let n = rng.gen_range(1..=6);
        let p = random_p_grid(n, rng.gen_range(0.02..0.5), 0.2, &mut rng);
        let back = q_to_p(&p_to_q(&p)?)?;
        let worst = p
            .entries
            .iter()
            .zip(&back.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        s.le(worst, 0.0);
    }
    Ok(s.finish("p <-> q roundtrip", "tolerance 1e-12".into()))
}

/// The mixed-uniform instance of the concentration, decomposition and
/// regret checks: six arms with densities in `[1/2, 2]`, two of which
/// (indices 1 and 5) put extra mass near the top of the interval.
pub fn reference_kmax_kinds() -> Vec<ArmKind> {
    let mix = |w: f64, lo: f64, hi: f64| ArmKind::UniformMixture {
        weights: vec![1.0 - w, w],
        intervals: vec![[0.0, 1.0], [lo, hi]],
    };
    vec![
        mix(0.5, 0.0, 0.3333),
        mix(0.5, 0.6667, 1.0),
        mix(0.4, 0.0, 0.4),
        mix(0.5, 0.1, 0.5),
        ArmKind::uniform(),
        mix(0.4, 0.6, 1.0),
    ]
}

pub fn reference_kmax_arms() -> Vec<ContinuousArm> {
    reference_kmax_kinds()
        .iter()
        .enumerate()
        .map(|(i, kind)| builtin_arm(kind, i).expect("reference arms are bi-Lipschitz"))
        .collect()
}

/// Runs the learner for `horizon` rounds on `arms`. `visit` sees the
/// learner twice per round: before selection with `None`, then with the
/// selected subset.
fn drive_dck(
    arms: &[ContinuousArm],
    config: DckConfig,
    seed: u64,
    mut visit: impl FnMut(&DckUcb, u64, Option<&[usize]>) -> Result<()>,
) -> Result<()> {
    let env = ContinuousEnv::new(arms.to_vec(), config.k, seed)?;
    let mut learner = DckUcb::new(config.clone())?;
    let mut rng: SimRng = sim_rng(seed, 0);
    for t in 1..=config.horizon {
        visit(&learner, t, None)?;
        let s = learner.select_action()?;
        visit(&learner, t, Some(&s))?;
        let outcomes = sample_outcomes(&env, &s, &mut rng)?;
        learner.update(&s, &value_index_feedback(&outcomes, &s)?)?;
    }
    Ok(())
}

/// Empirical violation rate of `|q_hat - q*| <= bonus + (K-1) L^4 / j^2`
/// over every `(t, i, j)` with `SC > 0`.
pub fn biased_concentration(
    arms: &[ContinuousArm],
    k: usize,
    epsilon: f64,
    horizon: u64,
    seeds: &[u64],
    max_rate: f64,
) -> Result<Check> {
    let lipschitz = arms.iter().map(|a| a.lipschitz_upper()).fold(1.0, f64::max);
    let mut config = DckConfig::tuned(arms.len(), k, lipschitz, horizon);
    config.epsilon = epsilon;
    let q_star = p_to_q(&cdf_to_p(arms, &BinGrid::new(epsilon)?))?;
    let (mut checked, mut violations) = (0u64, 0u64);
    for &seed in seeds {
        let mut monitor = ConcentrationMonitor::new(&q_star, &config)?;
        drive_dck(arms, config.clone(), seed, |l, _, selected| {
            if selected.is_none() {
                monitor.observe_learner(l);
            }
            Ok(())
        })?;
        checked += monitor.checked;
        violations += monitor.violations;
    }
    let rate = if checked == 0 {
        0.0
    } else {
        violations as f64 / checked as f64
    };
    Ok(Check {
        name: "biased concentration".into(),
        passed: checked > 0 && rate <= max_rate,
        samples: checked,
        violations,
        margin: max_rate - rate,
        detail: format!("violation rate {rate:.3e} (limit {max_rate})"),
    })
}

/// `|r_q(S; q_bar) - r_q(S; q*)| <= 2 sum Q*_j v_j |q_bar - q*|` at
/// `rounds` rounds sampled from learner runs.
pub fn decomposition_bound(rounds: usize, seed: u64) -> Result<Check> {
    let arms = reference_kmax_arms();
    let mut rng = sim_rng(seed, 4);
    let mut s = Slack::new(1e-10);
    let per_run = 50;
    let runs = rounds.div_ceil(per_run);
    for run in 0..runs {
        let epsilon = EPSILONS[run % EPSILONS.len()];
        let k = 2 + run % 2;
        let horizon = 400;
        let mut config = DckConfig::tuned(arms.len(), k, 2.0, horizon);
        config.epsilon = epsilon;
        let q_star = p_to_q(&cdf_to_p(&arms, &BinGrid::new(epsilon)?))?;
        let take = per_run.min(rounds - run * per_run);
        let mut picks: Vec<u64> = rand::seq::index::sample(&mut rng, horizon as usize, take)
            .into_iter()
            .map(|t| t as u64 + 1)
            .collect();
        picks.sort_unstable();
        let mut pending: Option<ProbGrid> = None;
        drive_dck(&arms, config, seed.wrapping_add(run as u64), |l, t, selected| {
            match selected {
                None => pending = picks.binary_search(&t).ok().map(|_| l.optimistic_grid()),
                Some(sub) => {
                    if let Some(q_bar) = pending.take() {
                        let (lhs, rhs) = decomposition_sides(sub, &q_bar, &q_star)?;
                        s.le(lhs.abs(), rhs);
                    }
                }
            }
            Ok(())
        })?;
    }
    Ok(s.finish("decomposition bound", "two-sided, tolerance 1e-10".into()))
}

/// Exact oracle against enumeration of the binary-arm reward, and greedy
/// against the `1 - 1/e` guarantee.
pub fn oracle_checks(grids: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = sim_rng(seed, 5);
    let mut exact = Slack::new(1e-12);
    let mut greedy = Slack::new(1e-12);
    let factor = 1.0 - (-1.0f64).exp();
    for _ in 0..grids {
        let n = rng.gen_range(2..=7);
        let k = rng.gen_range(1..=n);
        let p = random_p_grid(n, rng.gen_range(0.05..0.5), 0.3, &mut rng);
        let q = p_to_q(&p)?;
        let best = exact_oracle(&p, k)?;
        let brute = Combinations::new(n, k)
            .map(|s| binary_reward(&s, &q))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        exact.le((best.value - brute).abs(), 0.0);
        exact.le((best.value - discrete_reward(&best.subset, &p)?).abs(), 0.0);
        let g = greedy_oracle(&p, k)?;
        greedy.le(factor * best.value, g.value);
        greedy.le(g.value, best.value);
    }
    Ok(vec![
        exact.finish("exact oracle optimality", "vs binary-arm enumeration".into()),
        greedy.finish("greedy oracle 1-1/e", "factor and upper bound".into()),
    ])
}

fn random_history(rng: &mut SimRng, d: usize, rounds: usize) -> (MleHistory, DVector<f64>) {
    let theta = DVector::from_fn(d, |_, _| rng.gen_range(0.5..1.5));
    let mut h = MleHistory::new();
    for _ in 0..rounds {
        let psi = DVector::from_fn(d, |_, _| rng.gen_range(0.0..1.0));
        let rate = psi.dot(&theta);
        let loss = -(1.0 - rng.gen::<f64>()).ln() / rate;
        h.push(vec![0], loss, psi).expect("valid round");
    }
    (h, theta)
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1e-12)
}

/// Analytic gradient and Hessian against central differences, minimum
/// Hessian eigenvalue against `lambda`, convexity along random chords.
pub fn mle_checks(instances: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = sim_rng(seed, 6);
    let mut grad = Slack::new(0.0);
    let mut hess = Slack::new(0.0);
    let mut eig = Slack::new(1e-9);
    let mut convex = Slack::new(1e-10);
    for _ in 0..instances {
        let d = rng.gen_range(1..=4);
        let rounds = rng.gen_range(0..30);
        let lambda = rng.gen_range(0.0..3.0);
        let (h, theta) = random_history(&mut rng, d, rounds);
        let f = |x: &DVector<f64>| neg_log_likelihood(x, &h, lambda);
        let step = 1e-6;
        let fd = DVector::from_fn(d, |i, _| {
            let mut e = DVector::zeros(d);
            e[i] = step;
            (f(&(&theta + &e)) - f(&(&theta - &e))) / (2.0 * step)
        });
        let g = nll_gradient(&theta, &h, lambda)?;
        grad.le(rel_err(&g, &fd), 1e-5);

        let hs = hessian_h(&theta, &h, lambda)?;
        let step = 1e-5;
        let mut fd_h = DMatrix::zeros(d, d);
        for i in 0..d {
            let mut e = DVector::zeros(d);
            e[i] = step;
            let col =
                (nll_gradient(&(&theta + &e), &h, lambda)? - nll_gradient(&(&theta - &e), &h, lambda)?) / (2.0 * step);
            fd_h.set_column(i, &col);
        }
        hess.le((&hs - &fd_h).norm() / hs.norm().max(1e-12), 1e-4);
        let min_eig = hs.clone().symmetric_eigen().eigenvalues.min();
        eig.le(lambda, min_eig);

        let other = DVector::from_fn(d, |_, _| rng.gen_range(0.5..1.5));
        let a = rng.gen_range(0.01..0.99);
        let mid = &theta * a + &other * (1.0 - a);
        convex.le(f(&mid), a * f(&theta) + (1.0 - a) * f(&other));
        let _ = gradient_g(&theta, &h, lambda)?;
    }
    Ok(vec![
        grad.finish("mle gradient vs finite differences", "relative error <= 1e-5".into()),
        hess.finish("mle hessian vs finite differences", "relative error <= 1e-4".into()),
        eig.finish("mle hessian eigenvalue >= lambda", "tolerance 1e-9".into()),
        convex.finish("mle convexity", "tolerance 1e-10".into()),
    ])
}

/// One-round `d = 1` fits with known minimisers `1/2` (`lambda = 0`) and
/// `sqrt(2) - 1` (`lambda = 1`).
pub fn mle_closed_forms() -> Result<Check> {
    let mut h = MleHistory::new();
    h.push(vec![0], 2.0, DVector::from_element(1, 1.0))?;
    let mut s = Slack::new(0.0);
    let start = DVector::from_element(1, 1.0);
    let a = fit_mle(&h, 0.0, 1e-12, &start)?;
    s.le((a[0] - 0.5).abs(), 1e-8);
    let b = fit_mle(&h, 1.0, 1e-12, &start)?;
    s.le((b[0] - (2f64.sqrt() - 1.0)).abs(), 1e-8);
    Ok(s.finish("mle closed-form fits", "tolerance 1e-8".into()))
}

/// The `d = 3`, `N = 8` model used by the coverage and regret checks.
pub fn reference_kmin_model(k: usize) -> ExpLinearModel {
    let features = vec![
        vec![0.9, 0.1, 0.1],
        vec![0.1, 0.9, 0.1],
        vec![0.1, 0.1, 0.9],
        vec![0.5, 0.5, 0.1],
        vec![0.1, 0.5, 0.5],
        vec![0.5, 0.1, 0.5],
        vec![0.4, 0.4, 0.4],
        vec![0.2, 0.2, 0.2],
    ];
    ExpLinearModel::new(vec![1.5, 0.8, 0.3], features, 2.0, k).expect("reference model is valid")
}

/// Fraction of `(seed, checkpoint)` pairs whose confidence set contains
/// `theta*`.
pub fn mle_coverage(seeds: usize, checkpoints: usize, horizon: u64, delta: f64, min_rate: f64) -> Result<Check> {
    let model = reference_kmin_model(2);
    let every = (horizon / checkpoints as u64).max(1);
    let (mut checked, mut covered) = (0u64, 0u64);
    for seed in 0..seeds as u64 {
        let mut config = MleExpConfig::new(horizon);
        config.delta = Some(delta);
        let mut learner = MleExp::new(config, &model)?;
        let mut rng = sim_rng(seed, 0);
        for t in 1..=horizon {
            let s = learner.select()?;
            if t % every == 0 && checked < (seed + 1) * checkpoints as u64 {
                checked += 1;
                if learner.covers(model.theta_star())? {
                    covered += 1;
                }
            }
            let loss = sample_min_loss(&model, &s, &mut rng)?;
            learner.observe(&s, loss)?;
        }
    }
    let rate = covered as f64 / checked.max(1) as f64;
    Ok(Check {
        name: "mle confidence coverage".into(),
        passed: checked > 0 && rate >= min_rate,
        samples: checked,
        violations: checked - covered,
        margin: rate - min_rate,
        detail: format!("coverage {rate:.4} (need >= {min_rate}, delta = {delta})"),
    })
}

pub fn suite_lemmas(scale: Scale) -> Result<Vec<Check>> {
    let (l1, grids, brute) = match scale {
        Scale::Quick => (10, 200, 50),
        Scale::Full => (50, 1000, 200),
    };
    Ok(vec![
        discretization_error(l1, 10_001, 11)?,
        binary_equivalence(grids, 12)?,
        binary_bruteforce(brute, 13)?,
        binary_monotonicity(grids, 14)?,
        roundtrip(grids, 15)?,
        decomposition_bound(if scale == Scale::Full { 500 } else { 100 }, 16)?,
    ])
}

pub fn suite_oracle(scale: Scale) -> Result<Vec<Check>> {
    oracle_checks(if scale == Scale::Full { 500 } else { 100 }, 21)
}

pub fn suite_concentration(scale: Scale) -> Result<Vec<Check>> {
    let (horizon, seeds): (u64, Vec<u64>) = match scale {
        Scale::Quick => (2_000, (0..3).collect()),
        Scale::Full => (10_000, (0..20).collect()),
    };
    Ok(vec![biased_concentration(
        &reference_kmax_arms(),
        2,
        0.1,
        horizon,
        &seeds,
        0.01,
    )?])
}

pub fn suite_mle(scale: Scale) -> Result<Vec<Check>> {
    let (inst, seeds, horizon) = match scale {
        Scale::Quick => (30, 10, 300),
        Scale::Full => (100, 50, 2_000),
    };
    let mut out = mle_checks(inst, 31)?;
    out.push(mle_closed_forms()?);
    out.push(mle_coverage(seeds, 10, horizon, 0.01, 0.99)?);
    Ok(out)
}
