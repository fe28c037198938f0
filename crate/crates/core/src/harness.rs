//! Experiment orchestration: configs, policies, exact regret traces,
//! growth-exponent fits and CSV / JSON artifacts.
//!
//! Every seed owns two independent random streams, one for the environment
//! and one for the policy, so a policy that consumes randomness never
//! perturbs the outcomes drawn for another policy under the same seed.
//! Seeds run on a rayon pool and are gathered back in seed order, which
//! keeps every artifact independent of the worker count.

use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use lru::LruCache;
use nalgebra::DVector;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dck_ucb::{
    bonus_bias_diagnostics, default_epsilon, scaled_epsilon, BonusLogArg, DckConfig, DckUcb, OracleChoice,
};
use crate::discretize::{cdf_to_p, p_to_q, BinGrid, ProbGrid};
use crate::env_continuous::{
    expected_max_exact, sample_outcomes, value_index_feedback, ArmKind, ContinuousArm, ContinuousEnv,
};
use crate::kmin_exp::{sample_min_loss, ExpLinearModel, MleExp, MleExpConfig};
use crate::subsets::{check_capacity, format_action, parse_action, Combinations, DEFAULT_SUBSET_CAP};
use crate::{sim_rng, Error, Result, SimRng};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "KMAX_OUT_DIR";

/// Output directory used when neither the config nor the environment names one.
pub const DEFAULT_OUT_DIR: &str = "kmax_out";

/// Quadrature nodes for exact expected maxima.
pub const DEFAULT_QUAD_POINTS: usize = 10_001;

/// Capacity of the per-worker subset-value cache.
pub const VALUE_CACHE_CAPACITY: usize = 100_000;

/// Fraction of the horizon discarded before exponent fits.
pub const DEFAULT_BURN_IN: f64 = 0.2;

const ENV_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    KmaxContinuous,
    KminExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    DckUcb,
    MleExp,
    UniformRandom,
    OracleKnown,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::DckUcb => "dck_ucb",
            PolicyKind::MleExp => "mle_exp",
            PolicyKind::UniformRandom => "uniform_random",
            PolicyKind::OracleKnown => "oracle_known",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory for artifacts; falls back to `$KMAX_OUT_DIR`, then `kmax_out`.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// File stem; defaults to `<problem>_<policy>`.
    #[serde(default)]
    pub name: Option<String>,
}

/// Declarative description of one experiment. See [`SCHEMA`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub policy: PolicyKind,
    pub horizon: u64,
    pub seeds: Vec<u64>,
    pub k: usize,
    /// Worker threads; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub diagnostics: bool,
    #[serde(default)]
    pub output: OutputConfig,

    #[serde(default)]
    pub arms: Vec<ArmKind>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub c0: Option<f64>,
    #[serde(default)]
    pub lipschitz: Option<f64>,
    #[serde(default)]
    pub bonus_log_arg: Option<BonusLogArg>,
    #[serde(default)]
    pub oracle: Option<OracleChoice>,
    #[serde(default)]
    pub quad_points: Option<usize>,

    #[serde(default)]
    pub theta_star: Option<Vec<f64>>,
    #[serde(default)]
    pub features: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub v_bound: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub l_star: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
}

/// Text printed by `--print-schema`.
pub const SCHEMA: &str = r#"Experiment config (TOML)

Top-level keys
  problem        "kmax_continuous" | "kmin_exponential"          required
  policy         "dck_ucb" | "mle_exp" | "uniform_random" | "oracle_known"
                 (dck_ucb needs kmax_continuous, mle_exp needs kmin_exponential)
  horizon        integer >= 1                                     required
  seeds          nonempty list of integers                        required
  k              subset size, 1 <= k <= number of arms            required
  workers        worker threads, 0 = one per core                 default 0
  diagnostics    add reward and learner diagnostics to the CSV    default false

kmax_continuous keys
  [[arms]]       one table per arm, in index order (0-based)
    kind = "truncated_gaussian"  mu, sigma
    kind = "uniform_mixture"     weights = [..], intervals = [[lo, hi], ..]
    kind = "beta"                a, b   (only a = b = 1 is bi-Lipschitz)
  epsilon        bin width in (0, 0.5]                 default: tuned from c0
  c0             scale of the tuned width               default 1
  lipschitz      L known to the learner                 default: certified max over arms
  bonus_log_arg  "nmt_horizon" | "nmt_round"            default "nmt_horizon"
  oracle         "exact" | "greedy"                     default "exact"
  quad_points    quadrature nodes for exact regret      default 10001

kmin_exponential keys
  theta_star     list of d reals                        required
  features       list of N lists of d reals, |phi| <= 1 required
  v_bound        radius V of the parameter ball         required
  delta          confidence level                       default 1/horizon
  l_star         upper bound on expected subset loss    default: exact from the model
  lambda         fixed regulariser                      default: schedule
  gamma          fixed confidence radius                default: schedule

[output]
  dir            artifact directory      default $KMAX_OUT_DIR, else "kmax_out"
  name           file stem               default "<problem>_<policy>"

Artifacts: <name>.csv (t, seed, action, inst_regret, cum_regret[, diagnostics]),
<name>_summary.json, and <name>_state.json with --dump-state.
"#;

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        let kmax_knobs = [
            ("epsilon", self.epsilon.is_some()),
            ("c0", self.c0.is_some()),
            ("lipschitz", self.lipschitz.is_some()),
            ("bonus_log_arg", self.bonus_log_arg.is_some()),
            ("oracle", self.oracle.is_some()),
            ("quad_points", self.quad_points.is_some()),
            ("arms", !self.arms.is_empty()),
        ];
        let kmin_knobs = [
            ("theta_star", self.theta_star.is_some()),
            ("features", self.features.is_some()),
            ("v_bound", self.v_bound.is_some()),
            ("delta", self.delta.is_some()),
            ("l_star", self.l_star.is_some()),
            ("lambda", self.lambda.is_some()),
            ("gamma", self.gamma.is_some()),
        ];
        let (foreign, policy_ok, n) = match self.problem {
            Problem::KmaxContinuous => (kmin_knobs, !matches!(self.policy, PolicyKind::MleExp), self.arms.len()),
            Problem::KminExponential => (
                kmax_knobs,
                !matches!(self.policy, PolicyKind::DckUcb),
                self.features.as_ref().map_or(0, Vec::len),
            ),
        };
        if let Some((key, _)) = foreign.iter().find(|(_, set)| *set) {
            return bad(format!("key `{key}` does not apply to problem {:?}", self.problem));
        }
        if !policy_ok {
            return bad(format!(
                "policy {} does not apply to problem {:?}",
                self.policy.name(),
                self.problem
            ));
        }
        if n == 0 {
            return bad("no arms declared".into());
        }
        if self.k == 0 || self.k > n {
            return bad(format!("need 1 <= k <= N, got k = {}, N = {n}", self.k));
        }
        if self.epsilon.is_some() && self.c0.is_some() {
            return bad("set at most one of epsilon and c0".into());
        }
        if let Some(c0) = self.c0 {
            if !(c0 > 0.0) {
                return bad(format!("c0 must be positive, got {c0}"));
            }
        }
        if self.problem == Problem::KminExponential && (self.theta_star.is_none() || self.v_bound.is_none()) {
            return bad("kmin_exponential needs theta_star, features and v_bound".into());
        }
        if let Some(q) = self.quad_points {
            if q < 3 {
                return bad(format!("quad_points must be >= 3, got {q}"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the config.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn stem(&self) -> String {
        self.output.name.clone().unwrap_or_else(|| {
            let problem = match self.problem {
                Problem::KmaxContinuous => "kmax",
                Problem::KminExponential => "kmin",
            };
            format!("{problem}_{}", self.policy.name())
        })
    }

    /// Configured directory, else `$KMAX_OUT_DIR`, else `kmax_out`.
    pub fn out_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    fn quad_points(&self) -> usize {
        self.quad_points.unwrap_or(DEFAULT_QUAD_POINTS)
    }
}

/// Configs for `sweep`: `key` (a dotted path into the TOML table) set to
/// each of `values`, each parsed as a TOML value when possible and as a
/// string otherwise. Output stems get a `_<key>=<value>` suffix.
pub fn sweep_configs(base_toml: &str, key: &str, values: &[String]) -> Result<Vec<(String, ExperimentConfig)>> {
    let base: toml::Table = toml::from_str(base_toml).map_err(|e| Error::Config(e.to_string()))?;
    let path: Vec<&str> = key.split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad sweep key `{key}`")));
    }
    let mut out = Vec::with_capacity(values.len());
    for raw in values {
        let value = parse_toml_value(raw);
        let mut table = base.clone();
        set_path(&mut table, &path, value)?;
        let mut cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let stem = format!("{}_{key}={raw}", cfg.stem());
        cfg.output.name = Some(stem.clone());
        cfg.validate()?;
        out.push((stem, cfg));
    }
    Ok(out)
}

fn parse_toml_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// A built environment.
#[derive(Debug, Clone)]
pub enum Instance {
    KMax { env: ContinuousEnv, quad_points: usize },
    KMin(ExpLinearModel),
}

impl Instance {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        match cfg.problem {
            Problem::KmaxContinuous => Ok(Instance::KMax {
                env: ContinuousEnv::from_kinds(&cfg.arms, cfg.k, 0)?,
                quad_points: cfg.quad_points(),
            }),
            Problem::KminExponential => Ok(Instance::KMin(ExpLinearModel::new(
                cfg.theta_star.clone().unwrap_or_default(),
                cfg.features.clone().unwrap_or_default(),
                cfg.v_bound.unwrap_or(0.0),
                cfg.k,
            )?)),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Instance::KMax { env, .. } => env.n(),
            Instance::KMin(m) => m.n(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Instance::KMax { env, .. } => env.k,
            Instance::KMin(m) => m.k(),
        }
    }

    /// Exact objective of `s`: `r*(S)` for K-Max, `l*(S)` for K-Min.
    pub fn value(&self, s: &[usize]) -> Result<f64> {
        match self {
            Instance::KMax { env, quad_points } => expected_max_exact(&env.arms, s, *quad_points),
            Instance::KMin(m) => Ok(1.0 / m.psi(s).dot(m.theta_star())),
        }
    }

    /// True when larger values are better.
    pub fn maximises(&self) -> bool {
        matches!(self, Instance::KMax { .. })
    }
}

/// `S*` and its exact value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestAction {
    pub subset: Vec<usize>,
    pub value: f64,
}

/// Enumerates all `C(N, K)` subsets; the first strict optimum in
/// lexicographic order wins.
pub fn best_action_exact(instance: &Instance) -> Result<BestAction> {
    let (n, k) = (instance.n(), instance.k());
    check_capacity(n, k, DEFAULT_SUBSET_CAP, "S* needs full enumeration")?;
    let sign = if instance.maximises() { 1.0 } else { -1.0 };
    let mut best: Option<BestAction> = None;
    for s in Combinations::new(n, k) {
        let v = instance.value(&s)?;
        if best.as_ref().is_none_or(|b| sign * v > sign * b.value) {
            best = Some(BestAction { subset: s, value: v });
        }
    }
    Ok(best.expect("K <= N leaves a subset"))
}

/// Bounded LRU of exact subset values, keyed by the sorted subset.
pub struct ValueCache<'a> {
    instance: &'a Instance,
    cache: LruCache<Vec<usize>, f64>,
}

impl<'a> ValueCache<'a> {
    pub fn new(instance: &'a Instance, capacity: usize) -> Self {
        ValueCache {
            instance,
            cache: LruCache::new(NonZeroUsize::new(capacity.max(1)).expect("nonzero")),
        }
    }

    pub fn value(&mut self, s: &[usize]) -> Result<f64> {
        let mut key = s.to_vec();
        key.sort_unstable();
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let v = self.instance.value(&key)?;
        self.cache.put(key, v);
        Ok(v)
    }
}

/// One round of a regret trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: u64,
    pub action: Vec<usize>,
    pub inst_regret: f64,
    pub cum_regret: f64,
    /// Values for [`RegretTrace::diagnostic_columns`], same order.
    pub diagnostics: Vec<f64>,
}

/// Per-seed output of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub seed: u64,
    pub config_digest: String,
    pub diagnostic_columns: Vec<String>,
    pub records: Vec<RoundRecord>,
    /// Learner state for `--dump-state`.
    pub state: Option<serde_json::Value>,
}

impl RegretTrace {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cum_regret)
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cum_regret).collect()
    }
}

/// Runtime switches that do not change the regret itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub diagnostics: bool,
    pub dump_state: bool,
    /// Overrides the config's worker count when set.
    pub workers: Option<usize>,
}

enum Learner {
    Dck(Box<DckUcb>, Option<ProbGrid>),
    Mle(Box<MleExp>),
    Uniform,
    Fixed(Vec<usize>),
}

fn dck_config(cfg: &ExperimentConfig, arms: &[ContinuousArm]) -> DckConfig {
    let n = arms.len();
    let lipschitz = cfg
        .lipschitz
        .unwrap_or_else(|| arms.iter().map(|a| a.lipschitz_upper()).fold(1.0, f64::max));
    let epsilon = match (cfg.epsilon, cfg.c0) {
        (Some(e), _) => e,
        (None, Some(c0)) => scaled_epsilon(c0, n, cfg.k, lipschitz, cfg.horizon),
        (None, None) => default_epsilon(n, cfg.k, lipschitz, cfg.horizon),
    };
    DckConfig {
        epsilon,
        lipschitz,
        horizon: cfg.horizon,
        n,
        k: cfg.k,
        oracle: cfg.oracle.unwrap_or_default(),
        bonus_log_arg: cfg.bonus_log_arg.unwrap_or_default(),
        subset_cap: DEFAULT_SUBSET_CAP,
    }
}

fn mle_config(cfg: &ExperimentConfig) -> MleExpConfig {
    let mut c = MleExpConfig::new(cfg.horizon);
    c.delta = cfg.delta;
    c.l_star = cfg.l_star;
    c.lambda = cfg.lambda;
    c.gamma = cfg.gamma;
    c
}

fn diagnostic_columns(problem: Problem, policy: PolicyKind) -> Vec<String> {
    let mut cols = vec!["reward".to_string()];
    match (problem, policy) {
        (Problem::KmaxContinuous, PolicyKind::DckUcb) => cols.extend(["bonus".into(), "bias".into()]),
        (Problem::KminExponential, PolicyKind::MleExp) => cols.extend(["gamma".into(), "theta_err".into()]),
        _ => {}
    }
    cols
}

fn is_checkpoint(t: u64, horizon: u64) -> bool {
    t == horizon || (t >= 10 && 10u64.pow(t.ilog10()) == t)
}

/// Runs one seed of a built instance.
pub fn run_seed(
    cfg: &ExperimentConfig,
    instance: &Instance,
    best: &BestAction,
    seed: u64,
    opts: RunOptions,
) -> Result<RegretTrace> {
    let diagnostics = opts.diagnostics || cfg.diagnostics;
    let mut env_rng = sim_rng(seed, ENV_STREAM);
    let mut policy_rng = sim_rng(seed, POLICY_STREAM);
    let (n, k) = (instance.n(), instance.k());
    let mut learner = match (cfg.policy, instance) {
        (PolicyKind::DckUcb, Instance::KMax { env, .. }) => {
            let learner = DckUcb::new(dck_config(cfg, &env.arms))?;
            let q_star = if diagnostics {
                Some(p_to_q(&cdf_to_p(&env.arms, learner.grid()))?)
            } else {
                None
            };
            Learner::Dck(Box::new(learner), q_star)
        }
        (PolicyKind::MleExp, Instance::KMin(model)) => Learner::Mle(Box::new(MleExp::new(mle_config(cfg), model)?)),
        (PolicyKind::UniformRandom, _) => Learner::Uniform,
        (PolicyKind::OracleKnown, _) => Learner::Fixed(best.subset.clone()),
        (p, _) => return Err(Error::Config(format!("policy {} does not fit the instance", p.name()))),
    };
    let mut cache = ValueCache::new(instance, VALUE_CACHE_CAPACITY);
    let mut records = Vec::with_capacity(cfg.horizon as usize);
    let mut checkpoints = Vec::new();
    let mut cum = 0.0;
    for t in 1..=cfg.horizon {
        let round = |e: Error| e.at_round(t as usize);
        let action = match &mut learner {
            Learner::Dck(l, _) => l.select_action().map_err(round)?,
            Learner::Mle(l) => l.select().map_err(round)?,
            Learner::Uniform => uniform_action(n, k, &mut policy_rng),
            Learner::Fixed(s) => s.clone(),
        };
        let mut diag = Vec::new();
        if diagnostics {
            match &learner {
                Learner::Dck(l, Some(q_star)) => {
                    let (bonus, bias) = bonus_bias_diagnostics(l, &action, q_star).map_err(round)?;
                    diag.extend([bonus, bias]);
                }
                Learner::Mle(l) => {
                    let st = l.state().expect("selected");
                    if let Instance::KMin(model) = instance {
                        diag.extend([st.gamma_t, (&st.theta_hat - model.theta_star()).norm()]);
                    }
                }
                _ => {}
            }
        }
        let reward = match (instance, &mut learner) {
            (Instance::KMax { env, .. }, learner) => {
                let outcomes = sample_outcomes(env, &action, &mut env_rng).map_err(round)?;
                let fb = value_index_feedback(&outcomes, &action).map_err(round)?;
                if let Learner::Dck(l, _) = learner {
                    l.update(&action, &fb).map_err(round)?;
                }
                fb.reward
            }
            (Instance::KMin(model), learner) => {
                let loss = sample_min_loss(model, &action, &mut env_rng).map_err(round)?;
                if let Learner::Mle(l) = learner {
                    l.observe(&action, loss).map_err(round)?;
                }
                loss
            }
        };
        if opts.dump_state && is_checkpoint(t, cfg.horizon) {
            if let Learner::Mle(l) = &learner {
                let theta = l.state().expect("selected").theta_hat.as_slice().to_vec();
                checkpoints.push(serde_json::json!({ "t": t, "theta_hat": theta }));
            }
        }
        let value = cache.value(&action).map_err(round)?;
        let inst = if instance.maximises() {
            best.value - value
        } else {
            value - best.value
        };
        cum += inst;
        if diagnostics {
            diag.insert(0, reward);
        }
        records.push(RoundRecord {
            t,
            action,
            inst_regret: inst,
            cum_regret: cum,
            diagnostics: diag,
        });
    }
    let state = if opts.dump_state {
        match &learner {
            Learner::Dck(l, _) => Some(serde_json::to_value(l.state()).expect("state serialises")),
            Learner::Mle(_) => Some(serde_json::json!({ "checkpoints": checkpoints })),
            _ => None,
        }
    } else {
        None
    };
    Ok(RegretTrace {
        seed,
        config_digest: cfg.digest(),
        diagnostic_columns: if diagnostics {
            diagnostic_columns(cfg.problem, cfg.policy)
        } else {
            Vec::new()
        },
        records,
        state,
    })
}

fn uniform_action(n: usize, k: usize, rng: &mut SimRng) -> Vec<usize> {
    let mut s = sample(rng, n, k).into_vec();
    s.sort_unstable();
    s
}

/// Builds the instance, computes `S*` once and runs every seed on a pool of
/// `workers` threads. Traces come back in the order of `cfg.seeds`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<RegretTrace>> {
    cfg.validate()?;
    let instance = Instance::from_config(cfg)?;
    let best = best_action_exact(&instance)?;
    let workers = opts.workers.unwrap_or(cfg.workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, &instance, &best, seed, opts))
            .collect()
    })
}

/// Result of a growth-exponent fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthExponent {
    Fitted(f64),
    /// Regret is identically zero after burn-in; no exponent exists.
    Undefined,
}

impl GrowthExponent {
    pub fn value(self) -> Option<f64> {
        match self {
            GrowthExponent::Fitted(x) => Some(x),
            GrowthExponent::Undefined => None,
        }
    }
}

/// Least-squares slope of `ln R(t)` against `ln t` over `t > burn_in * T`,
/// where `cum[t-1] = R(t)`. Rounds with zero regret are skipped.
pub fn fit_growth_exponent_curve(cum: &[f64], burn_in: f64) -> GrowthExponent {
    let horizon = cum.len() as f64;
    let pts: Vec<(f64, f64)> = cum
        .iter()
        .enumerate()
        .map(|(i, &r)| ((i + 1) as f64, r))
        .filter(|&(t, r)| t > burn_in * horizon && r > 0.0)
        .map(|(t, r)| (t.ln(), r.ln()))
        .collect();
    if pts.len() < 2 {
        return GrowthExponent::Undefined;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    GrowthExponent::Fitted(sxy / sxx)
}

pub fn fit_growth_exponent(trace: &RegretTrace, burn_in: f64) -> GrowthExponent {
    fit_growth_exponent_curve(&trace.cumulative(), burn_in)
}

/// Pointwise mean of the cumulative-regret curves.
pub fn mean_curve(traces: &[RegretTrace]) -> Vec<f64> {
    let len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| traces.iter().map(|t| t.records[i].cum_regret).sum::<f64>() / traces.len() as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_regret: f64,
    pub exponent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_digest: String,
    pub burn_in: f64,
    pub seeds: Vec<SeedSummary>,
    pub mean_final_regret: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_final_regret: f64,
    /// Exponent fitted to the seed-averaged regret curve.
    pub mean_curve_exponent: Option<f64>,
}

pub fn summarize(traces: &[RegretTrace], burn_in: f64) -> Result<Summary> {
    if traces.is_empty() {
        return Err(Error::input("no traces to summarise"));
    }
    let seeds: Vec<SeedSummary> = traces
        .iter()
        .map(|t| SeedSummary {
            seed: t.seed,
            final_regret: t.final_regret(),
            exponent: fit_growth_exponent(t, burn_in).value(),
        })
        .collect();
    let n = seeds.len() as f64;
    let mean = seeds.iter().map(|s| s.final_regret).sum::<f64>() / n;
    let std = if seeds.len() > 1 {
        (seeds.iter().map(|s| (s.final_regret - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        config_digest: traces[0].config_digest.clone(),
        burn_in,
        seeds,
        mean_final_regret: mean,
        std_final_regret: std,
        mean_curve_exponent: fit_growth_exponent_curve(&mean_curve(traces), burn_in).value(),
    })
}

/// CSV text for `traces`, seeds in the given order.
pub fn csv_string(traces: &[RegretTrace]) -> Result<String> {
    if traces.is_empty() {
        return Err(Error::input("no traces to emit"));
    }
    let cols = &traces[0].diagnostic_columns;
    if traces.iter().any(|t| &t.diagnostic_columns != cols) {
        return Err(Error::input("traces disagree on diagnostic columns"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t", "seed", "action", "inst_regret", "cum_regret"];
    header.extend(cols.iter().map(String::as_str));
    w.write_record(&header).map_err(csv_err)?;
    for trace in traces {
        let seed = trace.seed.to_string();
        for r in &trace.records {
            let mut row = vec![
                r.t.to_string(),
                seed.clone(),
                format_action(&r.action),
                r.inst_regret.to_string(),
                r.cum_regret.to_string(),
            ];
            row.extend(r.diagnostics.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV is ASCII"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::input(format!("csv: {e}"))
}

/// Parses CSV produced by [`csv_string`]. The digest is not stored in the
/// CSV and comes back empty.
pub fn parse_csv(text: &str) -> Result<Vec<RegretTrace>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    let fixed = ["t", "seed", "action", "inst_regret", "cum_regret"];
    if header.len() < fixed.len() || header.iter().zip(fixed).any(|(a, b)| a != b) {
        return Err(Error::input("unexpected CSV header"));
    }
    let cols: Vec<String> = header.iter().skip(fixed.len()).map(str::to_string).collect();
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| Error::input(format!("bad number `{s}`: {e}")))
    };
    let mut traces: Vec<RegretTrace> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let t: u64 = row[0].parse().map_err(|e| Error::input(format!("bad t: {e}")))?;
        let seed: u64 = row[1].parse().map_err(|e| Error::input(format!("bad seed: {e}")))?;
        let record = RoundRecord {
            t,
            action: parse_action(&row[2])?,
            inst_regret: num(&row[3])?,
            cum_regret: num(&row[4])?,
            diagnostics: row.iter().skip(fixed.len()).map(num).collect::<Result<_>>()?,
        };
        match traces.last_mut() {
            Some(tr) if tr.seed == seed => tr.records.push(record),
            _ => traces.push(RegretTrace {
                seed,
                config_digest: String::new(),
                diagnostic_columns: cols.clone(),
                records: vec![record],
                state: None,
            }),
        }
    }
    Ok(traces)
}

/// Paths written by [`emit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub state: Option<PathBuf>,
}

/// Writes `<stem>.csv`, `<stem>_summary.json` and, when any trace carries a
/// state, `<stem>_state.json` into `dir`.
pub fn emit(traces: &[RegretTrace], dir: &Path, stem: &str) -> Result<Artifacts> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write(&csv_path, csv_string(traces)?.as_bytes())?;
    let summary = summarize(traces, DEFAULT_BURN_IN)?;
    let summary_path = dir.join(format!("{stem}_summary.json"));
    write(
        &summary_path,
        serde_json::to_string_pretty(&summary)
            .expect("summary serialises")
            .as_bytes(),
    )?;
    let state = if traces.iter().any(|t| t.state.is_some()) {
        let states: Vec<_> = traces
            .iter()
            .map(|t| serde_json::json!({ "seed": t.seed, "state": t.state }))
            .collect();
        let path = dir.join(format!("{stem}_state.json"));
        write(
            &path,
            serde_json::to_string(&states).expect("state serialises").as_bytes(),
        )?;
        Some(path)
    } else {
        None
    };
    Ok(Artifacts {
        csv: csv_path,
        summary: summary_path,
        state,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path) -> Result<Vec<RegretTrace>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

/// `q*` on the grid of width `epsilon` for the arms of a K-Max config.
pub fn q_star_for(arms: &[ContinuousArm], epsilon: f64) -> Result<ProbGrid> {
    p_to_q(&cdf_to_p(arms, &BinGrid::new(epsilon)?))
}

/// `theta*` as a vector, for K-Min configs.
pub fn theta_star_of(cfg: &ExperimentConfig) -> Option<DVector<f64>> {
    cfg.theta_star.clone().map(DVector::from_vec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn kmin_cfg(policy: &str, horizon: u64) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(&format!(
            r#"
problem = "kmin_exponential"
policy = "{policy}"
horizon = {horizon}
seeds = [1, 2]
k = 2
theta_star = [1.0, 2.0, 3.0]
features = [[1, 0, 0], [0, 1, 0], [0, 0, 1]]
v_bound = 4.0
"#
        ))
        .unwrap()
    }

    #[test]
    fn one_hot_kmin_best_is_top_rates() {
        let cfg = kmin_cfg("oracle_known", 5);
        let best = best_action_exact(&Instance::from_config(&cfg).unwrap()).unwrap();
        assert_eq!(best.subset, vec![1, 2]);
        assert_abs_diff_eq!(best.value, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn full_set_when_k_equals_n() {
        let mut cfg = kmin_cfg("oracle_known", 5);
        cfg.k = 3;
        let best = best_action_exact(&Instance::from_config(&cfg).unwrap()).unwrap();
        assert_eq!(best.subset, vec![0, 1, 2]);
    }

    #[test]
    fn oracle_policy_has_zero_regret() {
        let traces = run_experiment(&kmin_cfg("oracle_known", 20), RunOptions::default()).unwrap();
        assert!(traces.iter().all(|t| t.final_regret() == 0.0));
        assert_eq!(fit_growth_exponent(&traces[0], 0.2), GrowthExponent::Undefined);
    }

    #[test]
    fn validation_rejects_mismatched_knobs() {
        let base = "problem = \"kmin_exponential\"\npolicy = \"mle_exp\"\nhorizon = 3\nseeds = [1]\nk = 1\ntheta_star = [1.0]\nfeatures = [[1.0]]\nv_bound = 1.0\n";
        assert!(ExperimentConfig::from_toml_str(base).is_ok());
        assert!(ExperimentConfig::from_toml_str(&format!("{base}epsilon = 0.1\n")).is_err());
        assert!(ExperimentConfig::from_toml_str(&base.replace("mle_exp", "dck_ucb")).is_err());
        assert!(ExperimentConfig::from_toml_str(&base.replace("seeds = [1]", "seeds = []")).is_err());
        assert!(ExperimentConfig::from_toml_str(&base.replace("horizon = 3", "horizon = 0")).is_err());
        assert!(ExperimentConfig::from_toml_str(&format!("{base}bogus = 1\n")).is_err());
    }

    #[test]
    fn exponent_of_exact_power_laws() {
        let curve: Vec<f64> = (1..=1000).map(|t| 3.0 * (t as f64).powf(0.75)).collect();
        assert_abs_diff_eq!(
            fit_growth_exponent_curve(&curve, 0.2).value().unwrap(),
            0.75,
            epsilon = 1e-6
        );
        let line: Vec<f64> = (1..=1000).map(|t| 0.1 * t as f64).collect();
        assert_abs_diff_eq!(
            fit_growth_exponent_curve(&line, 0.2).value().unwrap(),
            1.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn sweep_sets_keys() {
        let base = "problem = \"kmin_exponential\"\npolicy = \"mle_exp\"\nhorizon = 3\nseeds = [1]\nk = 1\ntheta_star = [1.0]\nfeatures = [[1.0], [0.5]]\nv_bound = 1.0\n";
        let cfgs = sweep_configs(base, "horizon", &["5".into(), "7".into()]).unwrap();
        assert_eq!(cfgs.len(), 2);
        assert_eq!(cfgs[1].1.horizon, 7);
        assert_eq!(cfgs[0].0, "kmin_mle_exp_horizon=5");
        let cfgs = sweep_configs(base, "output.dir", &["somewhere".into()]).unwrap();
        assert_eq!(cfgs[0].1.output.dir, Some(PathBuf::from("somewhere")));
    }

    #[test]
    fn checkpoints() {
        let hits: Vec<u64> = (1..=2000).filter(|&t| is_checkpoint(t, 1500)).collect();
        assert_eq!(hits, vec![10, 100, 1000, 1500]);
    }
}
