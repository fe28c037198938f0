use kmaxband::discretize::{bin_of, cdf_to_p, BinGrid};
use kmaxband::env_continuous::{
    builtin_arm, expected_max_exact, expected_max_mc, sample_outcomes, ArmKind, ContinuousArm, ContinuousEnv,
};
use kmaxband::kmin_exp::{expected_min_loss, sample_min_loss, ExpLinearModel};
use kmaxband::sim_rng;
use rand::Rng;

/// Two-sided 1% critical value of the one-sample KS statistic, scaled by `sqrt(n)`.
const KS_CRIT_99: f64 = 1.628;

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn env_of(kinds: &[ArmKind]) -> ContinuousEnv {
    ContinuousEnv::from_kinds(kinds, 1, 0).unwrap()
}

#[test]
fn arm_samplers_pass_ks() {
    let kinds = [
        ArmKind::TruncatedGaussian { mu: 0.6, sigma: 0.2 },
        ArmKind::TruncatedGaussian { mu: 0.1, sigma: 0.5 },
        ArmKind::UniformMixture {
            weights: vec![0.3, 0.7],
            intervals: vec![[0.0, 1.0], [0.4, 0.6]],
        },
        ArmKind::Beta { a: 1.0, b: 1.0 },
    ];
    let env = env_of(&kinds);
    let n = 20_000;
    for (i, kind) in kinds.iter().enumerate() {
        let arm = builtin_arm(kind, i).unwrap();
        let mut rng = sim_rng(40 + i as u64, 0);
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_outcomes(&env, &[i], &mut rng).unwrap()[0])
            .collect();
        let d = ks_statistic(xs, |x| arm.cdf(x));
        assert!(d * (n as f64).sqrt() <= KS_CRIT_99, "{kind:?}: D = {d}");
    }
}

#[test]
fn min_loss_sampler_passes_ks() {
    let model = ExpLinearModel::new(
        vec![0.8, 1.2],
        vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]],
        2.0,
        2,
    )
    .unwrap();
    let s = [0, 2];
    let rate = model.rate(&s).unwrap();
    assert!((rate - (0.8 + 1.0)).abs() < 1e-12);
    let mut rng = sim_rng(7, 0);
    let n = 20_000;
    let xs: Vec<f64> = (0..n).map(|_| sample_min_loss(&model, &s, &mut rng).unwrap()).collect();
    let d = ks_statistic(xs.clone(), |x| 1.0 - (-rate * x).exp());
    assert!(d * (n as f64).sqrt() <= KS_CRIT_99, "D = {d}");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let expected = expected_min_loss(&model, &s).unwrap();
    // Exponential: sd = mean.
    assert!((mean - expected).abs() <= 4.0 * expected / (n as f64).sqrt());
}

/// Monte Carlo estimates land within 4 standard errors of the quadrature
/// value in at least 99% of seeds.
#[test]
fn monte_carlo_is_calibrated_against_quadrature() {
    let kinds = [
        ArmKind::TruncatedGaussian { mu: 0.5, sigma: 0.3 },
        ArmKind::UniformMixture {
            weights: vec![0.5, 0.5],
            intervals: vec![[0.0, 1.0], [0.6, 0.9]],
        },
        ArmKind::uniform(),
    ];
    let env = env_of(&kinds);
    let arms: Vec<ContinuousArm> = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| builtin_arm(k, i).unwrap())
        .collect();
    let s = [0, 1, 2];
    let exact = expected_max_exact(&arms, &s, 10_001).unwrap();
    let seeds = 200;
    let mut inside = 0;
    for seed in 0..seeds {
        let mc = expected_max_mc(&env, &s, 5_000, &mut sim_rng(seed, 9)).unwrap();
        if (mc.estimate - exact).abs() <= 4.0 * mc.std_error {
            inside += 1;
        }
    }
    assert!(inside as f64 >= 0.99 * seeds as f64, "{inside}/{seeds}");
}

#[test]
fn mixed_pair_matches_at_a_million_samples() {
    let kinds = [
        ArmKind::TruncatedGaussian { mu: 0.7, sigma: 0.25 },
        ArmKind::UniformMixture {
            weights: vec![0.4, 0.6],
            intervals: vec![[0.0, 1.0], [0.2, 0.5]],
        },
    ];
    let env = env_of(&kinds);
    let arms: Vec<ContinuousArm> = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| builtin_arm(k, i).unwrap())
        .collect();
    let exact = expected_max_exact(&arms, &[0, 1], 10_001).unwrap();
    let mc = expected_max_mc(&env, &[0, 1], 1_000_000, &mut sim_rng(3, 9)).unwrap();
    assert!((mc.estimate - exact).abs() <= 3.0 * mc.std_error, "{mc:?} vs {exact}");
}

#[test]
fn near_constant_arm_has_expected_max_near_its_location() {
    let arm = builtin_arm(&ArmKind::steep_ramp(0.7, 0.005, 0.01), 0).unwrap();
    let r = expected_max_exact(&[arm], &[0], 10_001).unwrap();
    assert!((r - 0.7).abs() < 3e-3, "{r}");
}

/// Bin masses from the CDF agree with a histogram of samples: every bin
/// count falls inside its binomial interval at a Bonferroni-adjusted 1%
/// level.
#[test]
fn bin_masses_match_sample_histogram() {
    let kind = ArmKind::TruncatedGaussian { mu: 0.55, sigma: 0.2 };
    let arm = builtin_arm(&kind, 0).unwrap();
    let grid = BinGrid::new(0.1).unwrap();
    let p = cdf_to_p(std::slice::from_ref(&arm), &grid);
    let m = grid.m();
    let n = 1_000_000usize;
    let mut counts = vec![0u64; m];
    let mut rng = sim_rng(5, 0);
    for _ in 0..n {
        let x = arm.inverse_cdf(rng.gen::<f64>());
        counts[bin_of(x, &grid).unwrap() - 1] += 1;
    }
    // z for a two-sided 1% / M level, M <= 11.
    let z = 3.32;
    for (j, &count) in counts.iter().enumerate() {
        let pj = p.get(0, j + 1);
        let sd = (n as f64 * pj * (1.0 - pj)).sqrt();
        let diff = (count as f64 - n as f64 * pj).abs();
        assert!(diff <= z * sd + 1.0, "bin {}: count {count} vs mass {pj}", j + 1);
    }
}
