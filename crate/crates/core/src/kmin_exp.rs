//! Exponential K-Min bandits with linear rates and full-bandit feedback.
//!
//! Arm `i` produces losses `Exp(mu_i)` with `mu_i = phi(i)^T theta*`. Only
//! the minimum loss of the played subset is observed, and that minimum is
//! `Exp(psi(S)^T theta*)` with `psi(S) = sum_{i in S} phi(i)`. The learner
//! fits a ridge-regularised MLE of `theta*` by damped Newton, builds a
//! confidence region around it and plays the subset with the most
//! optimistic total rate.
//!
//! The likelihood only depends on the history through, per distinct
//! subset, its play count and the summed losses, so every evaluation costs
//! `O(#subsets played * d^2)` regardless of the horizon.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::oracle::TIE_TOL;
use crate::subsets::{check_capacity, validate_action, Combinations, DEFAULT_SUBSET_CAP};
use crate::{Error, Result};

/// Minimum per-arm rate accepted for a simulated model.
pub const MIN_RATE_MARGIN: f64 = 1e-3;

/// Default gradient-norm tolerance of [`fit_mle`].
pub const DEFAULT_FIT_TOL: f64 = 1e-9;

/// Newton iteration cap of [`fit_mle`].
pub const MAX_NEWTON_ITERS: usize = 100;

/// `theta*`, the feature table and the parameter-ball radius `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpLinearModel {
    theta_star: DVector<f64>,
    features: Vec<DVector<f64>>,
    v_bound: f64,
    k: usize,
}

impl ExpLinearModel {
    pub fn new(theta_star: Vec<f64>, features: Vec<Vec<f64>>, v_bound: f64, k: usize) -> Result<Self> {
        let d = theta_star.len();
        if d == 0 || features.is_empty() {
            return Err(Error::Model("need d >= 1 and at least one arm".into()));
        }
        if k == 0 || k > features.len() {
            return Err(Error::Model(format!(
                "need 1 <= K <= N, got K = {k}, N = {}",
                features.len()
            )));
        }
        let theta_star = DVector::from_vec(theta_star);
        if !(v_bound > 0.0) || theta_star.norm() > v_bound * (1.0 + 1e-12) {
            return Err(Error::Model(format!(
                "|theta*| = {} exceeds V = {v_bound}",
                theta_star.norm()
            )));
        }
        let mut feats = Vec::with_capacity(features.len());
        for (i, f) in features.into_iter().enumerate() {
            if f.len() != d {
                return Err(Error::Model(format!("feature {i} has dimension {}, d = {d}", f.len())));
            }
            let f = DVector::from_vec(f);
            if f.norm() > 1.0 + 1e-12 {
                return Err(Error::Model(format!("|phi({i})| = {} > 1", f.norm())));
            }
            let mu = f.dot(&theta_star);
            if !(mu >= MIN_RATE_MARGIN) {
                return Err(Error::Model(format!(
                    "arm {i} has rate {mu}, below the margin {MIN_RATE_MARGIN}"
                )));
            }
            feats.push(f);
        }
        Ok(ExpLinearModel {
            theta_star,
            features: feats,
            v_bound,
            k,
        })
    }

    pub fn d(&self) -> usize {
        self.theta_star.len()
    }

    pub fn n(&self) -> usize {
        self.features.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn v_bound(&self) -> f64 {
        self.v_bound
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    /// `mu_i = phi(i)^T theta*`.
    pub fn arm_rate(&self, i: usize) -> f64 {
        self.features[i].dot(&self.theta_star)
    }

    /// `psi(S) = sum_{i in S} phi(i)`.
    pub fn psi(&self, s: &[usize]) -> DVector<f64> {
        psi_of(&self.features, s)
    }

    /// `psi(S)^T theta*`, the rate of the observed minimum.
    pub fn rate(&self, s: &[usize]) -> Result<f64> {
        validate_action(s, self.n(), self.k)?;
        let r = self.psi(s).dot(&self.theta_star);
        if !(r > 0.0) {
            return Err(Error::Model(format!("nonpositive rate {r} for {s:?}")));
        }
        Ok(r)
    }

    /// `L* = sup_S l*(S) = 1 / min_S psi(S)^T theta*`, by enumeration.
    pub fn l_star(&self) -> Result<f64> {
        check_capacity(self.n(), self.k, DEFAULT_SUBSET_CAP, "supply l_star explicitly")?;
        let mut min_rate = f64::INFINITY;
        for s in Combinations::new(self.n(), self.k) {
            min_rate = min_rate.min(self.psi(&s).dot(&self.theta_star));
        }
        Ok(1.0 / min_rate)
    }
}

pub(crate) fn psi_of(features: &[DVector<f64>], s: &[usize]) -> DVector<f64> {
    let mut acc = DVector::zeros(features[0].len());
    for &i in s {
        acc += &features[i];
    }
    acc
}

/// One draw of `min_{i in S} X_i ~ Exp(psi(S)^T theta*)` via `-ln(u) / rate`.
pub fn sample_min_loss<R: Rng + ?Sized>(model: &ExpLinearModel, s: &[usize], rng: &mut R) -> Result<f64> {
    let rate = model.rate(s)?;
    // u in (0, 1]
    let u = 1.0 - rng.gen::<f64>();
    Ok(-u.ln() / rate)
}

/// `l*(S) = 1 / (psi(S)^T theta*)`.
pub fn expected_min_loss(model: &ExpLinearModel, s: &[usize]) -> Result<f64> {
    Ok(1.0 / model.rate(s)?)
}

#[derive(Debug, Clone, PartialEq)]
struct Group {
    psi: DVector<f64>,
    count: u64,
}

/// Played subsets and observed losses.
#[derive(Debug, Clone, Default)]
pub struct MleHistory {
    /// `(S_i, l_i)` in play order.
    pub rounds: Vec<(Vec<usize>, f64)>,
    groups: Vec<Group>,
    index: HashMap<Vec<usize>, usize>,
    /// `sum_i l_i psi(S_i)`.
    loss_psi: Option<DVector<f64>>,
}

impl MleHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Appends a round; `psi` must equal `psi(s)` for the model's features.
    pub fn push(&mut self, s: Vec<usize>, loss: f64, psi: DVector<f64>) -> Result<()> {
        if !(loss >= 0.0) || !loss.is_finite() {
            return Err(Error::input(format!("loss must be finite and >= 0, got {loss}")));
        }
        let mut key = s.clone();
        key.sort_unstable();
        match self.loss_psi.as_mut() {
            Some(acc) => {
                if acc.len() != psi.len() {
                    return Err(Error::input("psi dimension changed within a history"));
                }
                acc.axpy(loss, &psi, 1.0);
            }
            None => self.loss_psi = Some(&psi * loss),
        }
        match self.index.get(&key) {
            Some(&g) => self.groups[g].count += 1,
            None => {
                self.index.insert(key, self.groups.len());
                self.groups.push(Group { psi, count: 1 });
            }
        }
        self.rounds.push((s, loss));
        Ok(())
    }

    /// Convenience for building histories straight from a feature table.
    pub fn push_with_features(&mut self, features: &[DVector<f64>], s: Vec<usize>, loss: f64) -> Result<()> {
        let psi = psi_of(features, &s);
        self.push(s, loss, psi)
    }

    fn loss_psi(&self, d: usize) -> DVector<f64> {
        self.loss_psi.clone().unwrap_or_else(|| DVector::zeros(d))
    }

    /// True when `psi(S_i)^T theta > 0` for every recorded round.
    pub fn in_domain(&self, theta: &DVector<f64>) -> bool {
        self.groups.iter().all(|g| g.psi.dot(theta) > 0.0)
    }
}

fn domain_error(theta: &DVector<f64>) -> Error {
    Error::Model(format!(
        "theta {:?} leaves the domain psi(S_i)^T theta > 0",
        theta.as_slice()
    ))
}

/// `L_t(theta; lambda) = sum_i [-ln(psi_i^T theta) + psi_i^T theta l_i] + lambda/2 |theta|^2`,
/// `+inf` outside the domain.
pub fn neg_log_likelihood(theta: &DVector<f64>, history: &MleHistory, lambda: f64) -> f64 {
    let mut total = 0.0;
    for g in &history.groups {
        let z = g.psi.dot(theta);
        if !(z > 0.0) {
            return f64::INFINITY;
        }
        total -= g.count as f64 * z.ln();
    }
    total + theta.dot(&history.loss_psi(theta.len())) + 0.5 * lambda * theta.norm_squared()
}

/// `g_t(theta; lambda) = sum_i psi_i / (psi_i^T theta) - lambda theta`.
///
/// This is not the gradient of [`neg_log_likelihood`]; that one is
/// `-g_t(theta) + sum_i l_i psi_i`, see [`nll_gradient`].
pub fn gradient_g(theta: &DVector<f64>, history: &MleHistory, lambda: f64) -> Result<DVector<f64>> {
    let mut g = -lambda * theta;
    for grp in &history.groups {
        let z = grp.psi.dot(theta);
        if !(z > 0.0) {
            return Err(domain_error(theta));
        }
        g.axpy(grp.count as f64 / z, &grp.psi, 1.0);
    }
    Ok(g)
}

/// Gradient of [`neg_log_likelihood`].
pub fn nll_gradient(theta: &DVector<f64>, history: &MleHistory, lambda: f64) -> Result<DVector<f64>> {
    Ok(history.loss_psi(theta.len()) - gradient_g(theta, history, lambda)?)
}

/// `H_t(theta; lambda) = lambda I + sum_i psi_i psi_i^T / (psi_i^T theta)^2`.
pub fn hessian_h(theta: &DVector<f64>, history: &MleHistory, lambda: f64) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let mut h = DMatrix::identity(d, d) * lambda;
    for grp in &history.groups {
        let z = grp.psi.dot(theta);
        if !(z > 0.0) {
            return Err(domain_error(theta));
        }
        h.ger(grp.count as f64 / (z * z), &grp.psi, &grp.psi, 1.0);
    }
    Ok(h)
}

/// Solves `h x = b` for symmetric PSD `h`, falling back to a pseudo-inverse
/// when `h` is singular.
fn solve_psd(h: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = h.clone().cholesky() {
        return chol.solve(b);
    }
    h.clone()
        .svd(true, true)
        .solve(b, 1e-14 * h.norm().max(1.0))
        .unwrap_or_else(|_| DVector::zeros(b.len()))
}

/// Minimises [`neg_log_likelihood`] by damped Newton from `start`, halving
/// steps that would leave the open domain or fail to make progress. Stops
/// once `|grad L| <= tol`.
pub fn fit_mle(history: &MleHistory, lambda: f64, tol: f64, start: &DVector<f64>) -> Result<DVector<f64>> {
    if !(lambda > 0.0) && history.is_empty() {
        return Err(Error::input("fit_mle needs lambda > 0 or a nonempty history"));
    }
    if !history.in_domain(start) {
        return Err(domain_error(start));
    }
    let mut theta = start.clone();
    let mut value = neg_log_likelihood(&theta, history, lambda);
    let mut grad = nll_gradient(&theta, history, lambda)?;
    for _ in 0..MAX_NEWTON_ITERS {
        let gnorm = grad.norm();
        if gnorm <= tol {
            return Ok(theta);
        }
        let h = hessian_h(&theta, history, lambda)?;
        let step = solve_psd(&h, &grad);
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-30 {
            let cand = &theta - &step * alpha;
            if history.in_domain(&cand) {
                let cand_value = neg_log_likelihood(&cand, history, lambda);
                let cand_grad = nll_gradient(&cand, history, lambda)?;
                if cand_value < value || cand_grad.norm() < gnorm {
                    theta = cand;
                    value = cand_value;
                    grad = cand_grad;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let grad_norm = grad.norm();
    if grad_norm <= tol {
        return Ok(theta);
    }
    Err(Error::Solver {
        iterations: MAX_NEWTON_ITERS,
        grad_norm,
        last_iterate: theta.as_slice().to_vec(),
    })
}

/// `lambda_t = max{1, (2 d M1 / V) ln(e sqrt(1 + t L*/d) + 1/delta)}`.
pub fn lambda_schedule(t: f64, d: usize, m1: f64, v_bound: f64, l_star: f64, delta: f64) -> f64 {
    let d = d as f64;
    let inner = std::f64::consts::E * (1.0 + t * l_star / d).sqrt() + 1.0 / delta;
    (2.0 * d * m1 / v_bound * inner.ln()).max(1.0)
}

/// Confidence radius
/// `sqrt(lam)(1/(2 M1) + V) + (2 M1 d / sqrt(lam))(ln 2 + ln(1 + t L*/(lam d)) / 2)
///  + (2 M1 / sqrt(lam)) ln(1/delta)`.
pub fn gamma_schedule(t: f64, d: usize, m1: f64, v_bound: f64, l_star: f64, lambda_t: f64, delta: f64) -> f64 {
    let d = d as f64;
    let sl = lambda_t.sqrt();
    sl * (1.0 / (2.0 * m1) + v_bound)
        + 2.0 * m1 * d / sl * (std::f64::consts::LN_2 + 0.5 * (1.0 + t * l_star / (lambda_t * d)).ln())
        + 2.0 * m1 / sl * (1.0 / delta).ln()
}

/// `M1 = L* / sqrt(2)`.
pub fn m1_of(l_star: f64) -> f64 {
    l_star / std::f64::consts::SQRT_2
}

/// Exact membership test `|g(theta) - g(theta_hat)|_{H(theta)^-1} <= gamma`.
pub fn in_confidence_set(
    theta: &DVector<f64>,
    theta_hat: &DVector<f64>,
    history: &MleHistory,
    lambda_t: f64,
    gamma_t: f64,
) -> Result<bool> {
    Ok(confidence_distance(theta, theta_hat, history, lambda_t)? <= gamma_t)
}

/// `|g(theta) - g(theta_hat)|_{H(theta)^-1}`.
pub fn confidence_distance(
    theta: &DVector<f64>,
    theta_hat: &DVector<f64>,
    history: &MleHistory,
    lambda_t: f64,
) -> Result<f64> {
    let gap = gradient_g(theta, history, lambda_t)? - gradient_g(theta_hat, history, lambda_t)?;
    let h = hessian_h(theta, history, lambda_t)?;
    let x = solve_psd(&h, &gap);
    Ok(x.dot(&gap).max(0.0).sqrt())
}

/// Fitted parameters for the current round.
#[derive(Debug, Clone, PartialEq)]
pub struct MleState {
    pub theta_hat: DVector<f64>,
    pub lambda_t: f64,
    pub gamma_t: f64,
    pub hessian: DMatrix<f64>,
}

/// `psi^T theta_hat + gamma |psi|_{H^-1}`, the largest value of
/// `psi^T theta` over the ellipsoid `|theta - theta_hat|_H <= gamma`.
pub fn optimistic_score(psi: &DVector<f64>, state: &MleState) -> Result<f64> {
    let x = state
        .hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Model("hessian is not positive definite".into()))?
        .solve(psi);
    Ok(psi.dot(&state.theta_hat) + state.gamma_t * psi.dot(&x).max(0.0).sqrt())
}

/// Scores every size-`k` subset by `psi^T theta_hat + gamma |psi|_{H^-1}`
/// (the maximum of `psi^T theta` over the ellipsoid
/// `|theta - theta_hat|_H <= gamma`) and returns the best one with its
/// maximiser, projected onto `|theta| <= v_bound`.
pub fn optimistic_select(
    features: &[DVector<f64>],
    k: usize,
    state: &MleState,
    v_bound: f64,
    cap: u128,
) -> Result<(Vec<usize>, DVector<f64>)> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::input(format!("need 1 <= K <= N, got K = {k}, N = {n}")));
    }
    check_capacity(n, k, cap, "optimistic selection enumerates all subsets")?;
    let h_inv = match state.hessian.clone().cholesky() {
        Some(c) => c.inverse(),
        None => state
            .hessian
            .clone()
            .pseudo_inverse(1e-14)
            .map_err(|e| Error::Model(e.to_string()))?,
    };
    let gamma = state.gamma_t;
    let mut best: Option<(Vec<usize>, f64, DVector<f64>, f64)> = None;
    for s in Combinations::new(n, k) {
        let psi = psi_of(features, &s);
        let h_psi = &h_inv * &psi;
        let width = psi.dot(&h_psi).max(0.0).sqrt();
        let score = psi.dot(&state.theta_hat) + gamma * width;
        let better = match &best {
            None => true,
            Some((_, b, _, _)) => score > b + TIE_TOL * b.abs().max(1.0),
        };
        if better {
            best = Some((s, score, h_psi, width));
        }
    }
    let (s, _, h_psi, width) = best.expect("K <= N leaves a subset");
    let mut theta = state.theta_hat.clone();
    if width > 0.0 {
        theta.axpy(gamma / width, &h_psi, 1.0);
    }
    let norm = theta.norm();
    if norm > v_bound {
        theta *= v_bound / norm;
    }
    Ok((s, theta))
}

/// Knobs for the MLE learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleExpConfig {
    pub horizon: u64,
    /// Failure probability; `None` means `1 / T`.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Upper bound on the expected loss of any subset; `None` computes it
    /// from the model.
    #[serde(default)]
    pub l_star: Option<f64>,
    /// Fixed regularisation instead of the schedule.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Fixed confidence radius instead of the schedule.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_cap")]
    pub subset_cap: u128,
}

fn default_tol() -> f64 {
    DEFAULT_FIT_TOL
}

fn default_cap() -> u128 {
    DEFAULT_SUBSET_CAP
}

impl MleExpConfig {
    pub fn new(horizon: u64) -> Self {
        MleExpConfig {
            horizon,
            delta: None,
            l_star: None,
            lambda: None,
            gamma: None,
            tol: DEFAULT_FIT_TOL,
            subset_cap: DEFAULT_SUBSET_CAP,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(1.0 / self.horizon.max(1) as f64)
    }
}

/// The optimistic MLE learner. Knows the features, `V` and `K`, never
/// `theta*`.
#[derive(Debug, Clone)]
pub struct MleExp {
    config: MleExpConfig,
    features: Vec<DVector<f64>>,
    k: usize,
    v_bound: f64,
    l_star: f64,
    history: MleHistory,
    state: Option<MleState>,
    theta_tilde: Option<DVector<f64>>,
}

impl MleExp {
    /// `l_star` falls back to the model's exact value when the config does
    /// not supply one.
    pub fn new(config: MleExpConfig, model: &ExpLinearModel) -> Result<Self> {
        let l_star = match config.l_star {
            Some(l) => l,
            None => model.l_star()?,
        };
        Self::build(config, model.features().to_vec(), model.k(), model.v_bound(), l_star)
    }

    fn build(config: MleExpConfig, features: Vec<DVector<f64>>, k: usize, v_bound: f64, l_star: f64) -> Result<Self> {
        if config.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        let delta = config.delta();
        if !(delta > 0.0 && delta < 1.0 + 1e-15) {
            return Err(Error::Config(format!("delta must lie in (0, 1], got {delta}")));
        }
        if !(l_star > 0.0) {
            return Err(Error::Config(format!("l_star must be positive, got {l_star}")));
        }
        Ok(MleExp {
            features,
            k,
            v_bound,
            l_star,
            history: MleHistory::new(),
            state: None,
            theta_tilde: None,
            config,
        })
    }

    /// Learner built from the feature table alone; `config.l_star` must be
    /// set since `theta*` is unknown.
    pub fn from_features(config: MleExpConfig, features: Vec<Vec<f64>>, v_bound: f64, k: usize) -> Result<Self> {
        let l_star = config
            .l_star
            .ok_or_else(|| Error::Config("l_star is required without a model".into()))?;
        let d = features.first().map_or(0, Vec::len);
        if d == 0 {
            return Err(Error::Model("need d >= 1 and at least one arm".into()));
        }
        if k == 0 || k > features.len() {
            return Err(Error::Model(format!(
                "need 1 <= K <= N, got K = {k}, N = {}",
                features.len()
            )));
        }
        if !(v_bound > 0.0) {
            return Err(Error::Model(format!("V must be positive, got {v_bound}")));
        }
        let mut feats = Vec::with_capacity(features.len());
        for (i, f) in features.into_iter().enumerate() {
            if f.len() != d {
                return Err(Error::Model(format!("feature {i} has dimension {}, d = {d}", f.len())));
            }
            let f = DVector::from_vec(f);
            if f.norm() > 1.0 + 1e-12 {
                return Err(Error::Model(format!("|phi({i})| = {} > 1", f.norm())));
            }
            feats.push(f);
        }
        Self::build(config, feats, k, v_bound, l_star)
    }

    pub fn d(&self) -> usize {
        self.features[0].len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn history(&self) -> &MleHistory {
        &self.history
    }

    /// Parameters fitted for the round most recently selected.
    pub fn state(&self) -> Option<&MleState> {
        self.state.as_ref()
    }

    pub fn theta_tilde(&self) -> Option<&DVector<f64>> {
        self.theta_tilde.as_ref()
    }

    pub fn l_star(&self) -> f64 {
        self.l_star
    }

    /// 1-based index of the round about to be played.
    pub fn round(&self) -> u64 {
        self.history.len() as u64 + 1
    }

    /// `(lambda_t, gamma_t)` for round `t`, honouring overrides.
    pub fn schedules(&self, t: u64) -> (f64, f64) {
        let d = self.d();
        let m1 = m1_of(self.l_star);
        let delta = self.config.delta();
        let lambda = self
            .config
            .lambda
            .unwrap_or_else(|| lambda_schedule(t as f64, d, m1, self.v_bound, self.l_star, delta));
        let gamma = self
            .config
            .gamma
            .unwrap_or_else(|| gamma_schedule(t as f64, d, m1, self.v_bound, self.l_star, lambda, delta));
        (lambda, gamma)
    }

    fn start_point(&self) -> Result<DVector<f64>> {
        let d = self.d();
        let default = DVector::from_element(d, self.v_bound / (d as f64).sqrt());
        let candidates = [
            self.state.as_ref().map(|s| s.theta_hat.clone()),
            self.theta_tilde.clone(),
            Some(default),
        ];
        candidates
            .into_iter()
            .flatten()
            .find(|c| self.history.in_domain(c))
            .ok_or_else(|| Error::Model("no feasible warm start for the MLE".into()))
    }

    /// Fits `theta_hat_t`, computes the confidence radius and picks `S_t`.
    pub fn select(&mut self) -> Result<Vec<usize>> {
        let t = self.round();
        let (lambda_t, gamma_t) = self.schedules(t);
        let start = self.start_point()?;
        let theta_hat = fit_mle(&self.history, lambda_t, self.config.tol, &start)?;
        let hessian = hessian_h(&theta_hat, &self.history, lambda_t)?;
        let state = MleState {
            theta_hat,
            lambda_t,
            gamma_t,
            hessian,
        };
        let (s, theta_tilde) = optimistic_select(&self.features, self.k, &state, self.v_bound, self.config.subset_cap)?;
        self.state = Some(state);
        self.theta_tilde = Some(theta_tilde);
        Ok(s)
    }

    /// Records the loss observed for `s`.
    pub fn observe(&mut self, s: &[usize], loss: f64) -> Result<()> {
        validate_action(s, self.features.len(), self.k)?;
        self.history.push_with_features(&self.features, s.to_vec(), loss)
    }

    /// Whether `theta` passes the exact confidence-set test for the round
    /// just selected (history excludes that round).
    pub fn covers(&self, theta: &DVector<f64>) -> Result<bool> {
        let st = self
            .state
            .as_ref()
            .ok_or_else(|| Error::input("no round selected yet"))?;
        in_confidence_set(theta, &st.theta_hat, &self.history, st.lambda_t, st.gamma_t)
    }
}

/// One full round: select, draw the loss from `model`, record it.
pub fn run_round<R: Rng + ?Sized>(
    model: &ExpLinearModel,
    learner: &mut MleExp,
    rng: &mut R,
) -> Result<(Vec<usize>, f64)> {
    let s = learner.select()?;
    let loss = sample_min_loss(model, &s, rng)?;
    learner.observe(&s, loss)?;
    Ok((s, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim_rng;
    use approx::assert_abs_diff_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn one_round_1d() -> MleHistory {
        let mut h = MleHistory::new();
        h.push(vec![0], 2.0, v(&[1.0])).unwrap();
        h
    }

    #[test]
    fn model_validation() {
        assert!(ExpLinearModel::new(vec![1.0], vec![vec![1.0], vec![0.5]], 2.0, 1).is_ok());
        assert!(ExpLinearModel::new(vec![1.0], vec![vec![1.5]], 2.0, 1).is_err());
        assert!(ExpLinearModel::new(vec![3.0], vec![vec![1.0]], 2.0, 1).is_err());
        assert!(ExpLinearModel::new(vec![1.0], vec![vec![0.0]], 2.0, 1).is_err());
        assert!(ExpLinearModel::new(vec![1.0, 0.0], vec![vec![1.0]], 2.0, 1).is_err());
    }

    #[test]
    fn expected_loss_values() {
        let m = ExpLinearModel::new(vec![4.0], vec![vec![0.25], vec![0.5], vec![1.0]], 4.0, 2).unwrap();
        assert_abs_diff_eq!(expected_min_loss(&m, &[0, 1]).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        let single = ExpLinearModel::new(vec![4.0], vec![vec![1.0]], 4.0, 1).unwrap();
        assert_abs_diff_eq!(expected_min_loss(&single, &[0]).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(m.l_star().unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn sampling_mean_and_determinism() {
        let m = ExpLinearModel::new(vec![4.0], vec![vec![0.25], vec![0.5]], 4.0, 2).unwrap();
        let a = sample_min_loss(&m, &[0, 1], &mut sim_rng(3, 0)).unwrap();
        let b = sample_min_loss(&m, &[0, 1], &mut sim_rng(3, 0)).unwrap();
        assert_eq!(a, b);
        let mut rng = sim_rng(11, 0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_min_loss(&m, &[0, 1], &mut rng).unwrap())
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 1.0 / 3.0).abs() <= 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn likelihood_examples() {
        let empty = MleHistory::new();
        let unit = v(&[0.6, 0.8]);
        assert_abs_diff_eq!(neg_log_likelihood(&unit, &empty, 2.0), 1.0, epsilon = 1e-15);
        let h = one_round_1d();
        assert_abs_diff_eq!(
            neg_log_likelihood(&v(&[0.5]), &h, 0.0),
            2f64.ln() + 1.0,
            epsilon = 1e-15
        );
        assert_eq!(neg_log_likelihood(&v(&[-0.5]), &h, 0.0), f64::INFINITY);
    }

    #[test]
    fn gradient_examples() {
        let empty = MleHistory::new();
        let theta = v(&[0.3, -0.2]);
        assert_eq!(gradient_g(&theta, &empty, 1.5).unwrap(), -1.5 * &theta);
        let h = one_round_1d();
        assert_abs_diff_eq!(gradient_g(&v(&[0.5]), &h, 0.0).unwrap()[0], 2.0, epsilon = 1e-15);
        assert!(gradient_g(&v(&[-0.1]), &h, 0.0).is_err());
        assert!(hessian_h(&v(&[0.0]), &h, 0.0).is_err());
    }

    #[test]
    fn hessian_of_empty_history_is_ridge() {
        let h = hessian_h(&v(&[0.1, 0.2, 0.3]), &MleHistory::new(), 2.5).unwrap();
        assert_eq!(h, DMatrix::identity(3, 3) * 2.5);
    }

    #[test]
    fn closed_form_fits() {
        let h = one_round_1d();
        let start = v(&[1.0]);
        let a = fit_mle(&h, 0.0, 1e-12, &start).unwrap();
        assert_abs_diff_eq!(a[0], 0.5, epsilon = 1e-10);
        let b = fit_mle(&h, 1.0, 1e-12, &start).unwrap();
        assert_abs_diff_eq!(b[0], 2f64.sqrt() - 1.0, epsilon = 1e-10);
        assert!(fit_mle(&MleHistory::new(), 0.0, 1e-9, &start).is_err());
        assert!(fit_mle(&h, 1.0, 1e-9, &v(&[-1.0])).is_err());
    }

    #[test]
    fn schedules() {
        // second term below 1 -> clamp
        assert_eq!(lambda_schedule(0.0, 1, 0.01, 10.0, 0.01, 1.0), 1.0);
        let (d, m1, vb, ls) = (3usize, 2.0, 1.0, 2.0);
        let expected = 2.0 * 3.0 * 2.0 / 1.0 * (std::f64::consts::E + 1.0).ln();
        assert_abs_diff_eq!(lambda_schedule(0.0, d, m1, vb, ls, 1.0), expected, epsilon = 1e-12);
        let mut prev = 0.0;
        for t in 0..100 {
            let l = lambda_schedule(t as f64 * 37.0, d, m1, vb, ls, 0.05);
            assert!(l >= prev);
            prev = l;
        }
        let g = gamma_schedule(1.0, 1, 1.0, 1.0, 1.0, 1.0, (-1.0f64).exp());
        assert_abs_diff_eq!(g, 3.5 + 3.0 * 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g, 5.5794, epsilon = 1e-4);
        let lam = 4.0;
        let g0 = gamma_schedule(0.0, 2, 0.7, 1.5, 1.0, lam, 1.0);
        let direct = 2.0 * (1.0 / 1.4 + 1.5) + 2.0 * 0.7 * 2.0 / 2.0 * 2f64.ln();
        assert_abs_diff_eq!(g0, direct, epsilon = 1e-12);
        assert!(gamma_schedule(5.0, 2, 0.7, 1.5, 1.0, lam, 0.01) > gamma_schedule(5.0, 2, 0.7, 1.5, 1.0, lam, 0.1));
    }

    #[test]
    fn confidence_set_edges() {
        let feats = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let mut h = MleHistory::new();
        h.push_with_features(&feats, vec![0], 0.5).unwrap();
        h.push_with_features(&feats, vec![1], 1.5).unwrap();
        let th = v(&[1.0, 1.0]);
        assert!(in_confidence_set(&th, &th, &h, 1.0, 0.0).unwrap());
        assert!(!in_confidence_set(&v(&[2.0, 1.0]), &th, &h, 1.0, 0.0).unwrap());
        assert!(in_confidence_set(&v(&[-1.0, 1.0]), &th, &h, 1.0, 1.0).is_err());
    }

    #[test]
    fn optimistic_select_edges() {
        let feats = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.6, 0.6])];
        let state = MleState {
            theta_hat: v(&[1.0, 2.0]),
            lambda_t: 1.0,
            gamma_t: 0.0,
            hessian: DMatrix::identity(2, 2),
        };
        let (s, th) = optimistic_select(&feats, 2, &state, 10.0, DEFAULT_SUBSET_CAP).unwrap();
        // psi^T theta_hat: {0,1} = 3, {0,2} = 2.8, {1,2} = 3.8
        assert_eq!(s, vec![1, 2]);
        assert_eq!(th, state.theta_hat);

        let same = vec![v(&[1.0]); 4];
        let st1 = MleState {
            theta_hat: v(&[1.0]),
            lambda_t: 1.0,
            gamma_t: 2.0,
            hessian: DMatrix::identity(1, 1),
        };
        let (s, th) = optimistic_select(&same, 2, &st1, 100.0, DEFAULT_SUBSET_CAP).unwrap();
        assert_eq!(s, vec![0, 1]);
        let psi = psi_of(&same, &s);
        assert!(psi.dot(&th) >= psi.dot(&st1.theta_hat));
        assert_abs_diff_eq!(th[0], 3.0, epsilon = 1e-12);
        // projection onto the ball
        let (_, th) = optimistic_select(&same, 2, &st1, 2.0, DEFAULT_SUBSET_CAP).unwrap();
        assert_abs_diff_eq!(th.norm(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn first_round_uses_ridge_hessian() {
        let m = ExpLinearModel::new(
            vec![1.0, 0.5],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.6]],
            2.0,
            2,
        )
        .unwrap();
        let mut learner = MleExp::new(MleExpConfig::new(100), &m).unwrap();
        let s = learner.select().unwrap();
        let st = learner.state().unwrap();
        assert_eq!(st.hessian, DMatrix::identity(2, 2) * st.lambda_t);
        // empty history: minimiser of the pure ridge is the origin
        assert!(st.theta_hat.norm() < 1e-9);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn run_is_deterministic() {
        let m = ExpLinearModel::new(
            vec![1.0, 0.5],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.6]],
            2.0,
            2,
        )
        .unwrap();
        let trace = |seed| {
            let mut learner = MleExp::new(MleExpConfig::new(50), &m).unwrap();
            let mut rng = sim_rng(seed, 0);
            (0..50)
                .map(|_| run_round(&m, &mut learner, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(trace(4), trace(4));
    }
}
