use std::sync::Arc;

use kmaxband::dck_ucb::{decomposition_sides, DckConfig, DckUcb};
use kmaxband::discretize::{
    binary_reward, binary_reward_bruteforce, discrete_reward, p_to_q, q_to_p, BinGrid, GridMode, ProbGrid,
};
use kmaxband::env_continuous::{builtin_arm, expected_max_exact, value_index_feedback, ArmKind, ContinuousArm};
use kmaxband::kmin_exp::{
    fit_mle, neg_log_likelihood, nll_gradient, optimistic_score, ExpLinearModel, MleHistory, MleState,
};
use kmaxband::oracle::{exact_oracle, greedy_oracle};
use kmaxband::subsets::Combinations;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

const EPSILONS: [f64; 5] = [0.5, 0.3, 0.25, 0.2, 0.15];

fn normalized(raw: Vec<f64>) -> Vec<f64> {
    let mut row: Vec<f64> = raw.into_iter().map(|x| if x < 0.2 { 0.0 } else { x }).collect();
    if row.iter().all(|&x| x == 0.0) {
        row[0] = 1.0;
    }
    let s: f64 = row.iter().sum();
    row.iter().map(|x| x / s).collect()
}

/// `(P grid, subset)` with `N <= max_n` arms and `K <= max_k`.
fn p_grid_and_subset(
    max_n: usize,
    max_k: usize,
    epsilons: &'static [f64],
) -> impl Strategy<Value = (ProbGrid, Vec<usize>)> {
    (1..=max_n, prop::sample::select(epsilons))
        .prop_flat_map(move |(n, eps)| {
            let m = BinGrid::new(eps).unwrap().m();
            (
                Just(eps),
                prop::collection::vec(prop::collection::vec(0.0..1.0f64, m), n),
                prop::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n.min(max_k)),
            )
        })
        .prop_map(|(eps, rows, s)| {
            let rows = rows.into_iter().map(normalized).collect();
            (ProbGrid::new(GridMode::P, BinGrid::new(eps).unwrap(), rows).unwrap(), s)
        })
}

fn q_with_perturbation(q: &ProbGrid, deltas: &[f64]) -> ProbGrid {
    let entries = q
        .entries
        .iter()
        .zip(deltas.iter().cycle())
        .map(|(&x, &d)| (x + d).clamp(0.0, 1.0))
        .collect();
    ProbGrid::from_entries(GridMode::Q, q.grid.clone(), q.n, entries)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn p_q_roundtrip_is_identity((p, _s) in p_grid_and_subset(6, 3, &EPSILONS)) {
        let q = p_to_q(&p).unwrap();
        prop_assert!(q.entries.iter().all(|x| (0.0..=1.0).contains(x)));
        let back = q_to_p(&q).unwrap();
        for (a, b) in p.entries.iter().zip(&back.entries) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn binary_and_discrete_rewards_agree((p, s) in p_grid_and_subset(6, 4, &EPSILONS)) {
        let q = p_to_q(&p).unwrap();
        let a = discrete_reward(&s, &p).unwrap();
        let b = binary_reward(&s, &q).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn closed_form_matches_enumeration((p, s) in p_grid_and_subset(4, 3, &[0.5, 0.34])) {
        let q = p_to_q(&p).unwrap();
        let closed = binary_reward(&s, &q).unwrap();
        let brute = binary_reward_bruteforce(&s, &q).unwrap();
        prop_assert!((closed - brute).abs() <= 1e-12, "{closed} vs {brute}");
    }

    #[test]
    fn binary_reward_is_monotone_in_q(
        (p, s) in p_grid_and_subset(5, 3, &EPSILONS),
        bumps in prop::collection::vec(0.0..0.5f64, 1..16),
    ) {
        let q = p_to_q(&p).unwrap();
        let higher = q_with_perturbation(&q, &bumps);
        let lo = binary_reward(&s, &q).unwrap();
        let hi = binary_reward(&s, &higher).unwrap();
        prop_assert!(hi >= lo - 1e-12, "{hi} < {lo}");
    }

    #[test]
    fn decomposition_bound_holds_for_any_perturbation(
        (p, s) in p_grid_and_subset(5, 3, &EPSILONS),
        deltas in prop::collection::vec(-0.6..0.6f64, 1..16),
    ) {
        let q_star = p_to_q(&p).unwrap();
        let q_bar = q_with_perturbation(&q_star, &deltas);
        let (lhs, rhs) = decomposition_sides(&s, &q_bar, &q_star).unwrap();
        prop_assert!(lhs.abs() <= rhs + 1e-12, "|{lhs}| > {rhs}");
    }

    #[test]
    fn greedy_keeps_its_guarantee((p, _s) in p_grid_and_subset(7, 1, &EPSILONS), k in 1usize..4) {
        let k = k.min(p.n);
        let exact = exact_oracle(&p, k).unwrap();
        let greedy = greedy_oracle(&p, k).unwrap();
        prop_assert!(greedy.value <= exact.value + 1e-12);
        prop_assert!(greedy.value >= (1.0 - (-1.0f64).exp()) * exact.value - 1e-12);
        for s in Combinations::new(p.n, k) {
            prop_assert!(discrete_reward(&s, &p).unwrap() <= exact.value + 1e-12);
        }
    }
}

fn dck_config(n: usize, k: usize, eps: f64) -> DckConfig {
    DckConfig {
        epsilon: eps,
        lipschitz: 2.0,
        horizon: 1000,
        n,
        k,
        oracle: Default::default(),
        bonus_log_arg: Default::default(),
        subset_cap: 1_000_000,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Feeds arbitrary value-index feedback and checks the counter
    /// bookkeeping after every round.
    #[test]
    fn counters_stay_consistent(
        feedback in prop::collection::vec((0.0..=1.0f64, 0usize..3, prop::collection::vec(0.0..1.0f64, 3)), 1..80),
    ) {
        let (n, k) = (5, 3);
        let mut learner = DckUcb::new(dck_config(n, k, 0.2)).unwrap();
        let m = learner.grid().m();
        let mut prev_sc = vec![0u64; n * m];
        for (reward, winner_pos, outcomes) in feedback {
            let s = learner.select_action().unwrap();
            prop_assert_eq!(s.len(), k);
            let outcomes: Vec<f64> = outcomes
                .iter()
                .enumerate()
                .map(|(p, &u)| if p == winner_pos { reward } else { u * reward })
                .collect();
            let fb = value_index_feedback(&outcomes, &s).unwrap();
            learner.update(&s, &fb).unwrap();
            let counters = &learner.state().counters;
            for i in 0..n {
                for j in 1..=m {
                    prop_assert!(counters.c(i, j) <= counters.sc(i, j));
                    if j > 1 {
                        prop_assert!(counters.sc(i, j - 1) <= counters.sc(i, j));
                    }
                    let idx = i * m + j - 1;
                    prop_assert!(counters.sc[idx] >= prev_sc[idx]);
                    let q = learner.q_hat(i, j);
                    if counters.sc(i, j) > 0 {
                        prop_assert!((q - counters.c(i, j) as f64 / counters.sc(i, j) as f64).abs() < 1e-15);
                    }
                }
            }
            prev_sc = counters.sc.clone();
        }
    }
}

fn arm_kind() -> impl Strategy<Value = ArmKind> {
    prop_oneof![
        (0.1..0.9f64, 0.3..1.0f64).prop_map(|(mu, sigma)| ArmKind::TruncatedGaussian { mu, sigma }),
        (0.1..0.6f64, 0.0..0.6f64, 0.2..0.4f64).prop_map(|(w, lo, width)| ArmKind::UniformMixture {
            weights: vec![1.0 - w, w],
            intervals: vec![[0.0, 1.0], [lo, lo + width]],
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn inverse_cdf_is_monotone_and_inverts(kind in arm_kind(), us in prop::collection::vec(0.0..1.0f64, 2..20)) {
        let arm = builtin_arm(&kind, 0).unwrap();
        let mut us = us;
        us.sort_by(f64::total_cmp);
        let xs: Vec<f64> = us.iter().map(|&u| arm.inverse_cdf(u)).collect();
        for w in xs.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for (&u, &x) in us.iter().zip(&xs) {
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert!((arm.cdf(x) - u).abs() <= 1e-9, "F({x}) = {} != {u}", arm.cdf(x));
        }
    }

    /// Replacing an arm by the maximum of two independent copies (CDF
    /// `F^2`, a first-order dominating law) never lowers the expected max.
    #[test]
    fn expected_max_is_monotone_under_dominance(kinds in prop::collection::vec(arm_kind(), 2..4)) {
        let arms: Vec<ContinuousArm> = kinds.iter().enumerate().map(|(i, k)| builtin_arm(k, i).unwrap()).collect();
        let base = arms[0].clone();
        let squared: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(move |x| base.cdf(x).powi(2));
        let (dominant, _) = ContinuousArm::custom(squared, 4.0, 0);
        let mut better = arms.clone();
        better[0] = dominant;
        let s: Vec<usize> = (0..arms.len()).collect();
        let before = expected_max_exact(&arms, &s, 4001).unwrap();
        let after = expected_max_exact(&better, &s, 4001).unwrap();
        prop_assert!(after >= before - 1e-9, "{after} < {before}");
    }
}

fn kmin_history(model: &ExpLinearModel, rounds: &[(Vec<usize>, f64)]) -> MleHistory {
    let mut h = MleHistory::new();
    for (s, loss) in rounds {
        h.push_with_features(model.features(), s.clone(), *loss).unwrap();
    }
    h
}

fn small_model() -> ExpLinearModel {
    ExpLinearModel::new(
        vec![1.0, 0.6],
        vec![
            vec![0.9, 0.1],
            vec![0.1, 0.9],
            vec![0.5, 0.5],
            vec![0.7, 0.3],
            vec![0.2, 0.6],
        ],
        1.5,
        2,
    )
    .unwrap()
}

fn random_rounds() -> impl Strategy<Value = Vec<(Vec<usize>, f64)>> {
    prop::collection::vec(
        (prop::sample::subsequence((0..5).collect::<Vec<_>>(), 2), 0.01..3.0f64),
        3..40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// The regularised negative log-likelihood lies above its tangent
    /// planes, and Newton lands on the same minimiser from any start.
    #[test]
    fn mle_objective_is_convex_with_unique_minimiser(
        rounds in random_rounds(),
        a in prop::collection::vec(0.05..1.5f64, 2),
        b in prop::collection::vec(0.05..1.5f64, 2),
        starts in prop::collection::vec(prop::collection::vec(0.05..1.5f64, 2), 10),
    ) {
        let model = small_model();
        let h = kmin_history(&model, &rounds);
        let lambda = 0.5;
        let (a, b) = (DVector::from_vec(a), DVector::from_vec(b));
        let fa = neg_log_likelihood(&a, &h, lambda);
        let fb = neg_log_likelihood(&b, &h, lambda);
        let grad_a = nll_gradient(&a, &h, lambda).unwrap();
        prop_assert!(fb >= fa + grad_a.dot(&(&b - &a)) - 1e-9 * (1.0 + fa.abs()));

        let reference = fit_mle(&h, lambda, 1e-12, &DVector::from_element(2, 0.5)).unwrap();
        for start in starts {
            let fit = fit_mle(&h, lambda, 1e-12, &DVector::from_vec(start)).unwrap();
            prop_assert!((&fit - &reference).norm() <= 1e-7, "{fit} vs {reference}");
        }
    }

    /// Whenever theta* lies in the ellipsoid, the optimistic score of every
    /// subset upper-bounds its true rate.
    #[test]
    fn optimism_under_coverage(
        offset in prop::collection::vec(-0.3..0.3f64, 2),
        diag in prop::collection::vec(1.0..20.0f64, 2),
        off_diag in -0.9..0.9f64,
    ) {
        let model = small_model();
        let theta_hat = model.theta_star() + DVector::from_vec(offset);
        let c = off_diag * (diag[0] * diag[1]).sqrt();
        let hessian = DMatrix::from_row_slice(2, 2, &[diag[0], c, c, diag[1]]);
        let gap = model.theta_star() - &theta_hat;
        let dist = (gap.transpose() * &hessian * &gap)[(0, 0)].sqrt();
        let state = MleState { theta_hat, lambda_t: 1.0, gamma_t: dist * 1.000_001 + 1e-12, hessian };
        for s in Combinations::new(model.n(), model.k()) {
            let psi = model.psi(&s);
            let score = optimistic_score(&psi, &state).unwrap();
            let truth = psi.dot(model.theta_star());
            prop_assert!(score >= truth - 1e-10, "{s:?}: {score} < {truth}");
        }
    }
}
