//! Federated maximum-likelihood estimation of MDM parameters.
//!
//! Inference runs as a one-shot initialization round followed by `T`
//! generalized-EM rounds. In every round each sampled client computes a
//! statistics packet from its own record and the current parameters; the
//! server updates parameters from the cohort aggregate alone.
//!
//! [`full_batch_update`] evaluates the same update rules directly over a
//! complete record list. It is the deterministic iteration whose
//! log-likelihood is non-decreasing, and serves as a reference for
//! [`em_round`] run on the whole population.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{
    run_round, sample_cohort, AggregateReport, ClientPopulation, ClientStatsPacket, CountColumns,
    EmStats, Execution, InitStats,
};
use crate::model::{log_likelihood, responsibilities, ClientRecord, MdmParams, SampleCountDist};
use crate::sampling::RngHandle;
use crate::special::psi;

pub const DEFAULT_ALPHA_FLOOR: f64 = 1e-8;

/// Fresh component assignments tried before initialization gives up.
pub const MAX_INIT_ATTEMPTS: u64 = 10;

/// A component whose aggregate responsibility falls below this fraction of
/// the contributing cohort keeps its previous `α` and `π`.
pub const COMPONENT_DEATH_FRACTION: f64 = 1e-12;

const EARLY_STOP_TOLERANCE: f64 = 1e-6;
const EARLY_STOP_PATIENCE: usize = 5;

/// What a client does when every component gives it zero probability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// Send a zero packet; the round's divisor counts contributors only.
    #[default]
    Skip,
    /// Abort the round with [`Error::DegenerateClient`].
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Number of mixture components K.
    pub k: usize,
    /// Number of EM rounds T.
    pub rounds: usize,
    /// Initialization cohort size; `None` uses every client.
    pub init_cohort_size: Option<usize>,
    /// Per-round EM cohort size; `None` uses every client.
    pub em_cohort_size: Option<usize>,
    pub alpha_floor: f64,
    pub degenerate_policy: DegeneratePolicy,
    /// Record the full-population log likelihood after every round.
    pub track_log_likelihood: bool,
    /// Stop once the tracked log likelihood has improved by less than 1e-6
    /// in each of the last five rounds. Implies likelihood tracking.
    pub early_stop: bool,
    pub execution: Execution,
}

impl InferenceConfig {
    /// Full-population cohorts and default settings.
    pub fn new(k: usize, rounds: usize) -> Self {
        InferenceConfig {
            k,
            rounds,
            init_cohort_size: None,
            em_cohort_size: None,
            alpha_floor: DEFAULT_ALPHA_FLOOR,
            degenerate_policy: DegeneratePolicy::Skip,
            track_log_likelihood: false,
            early_stop: false,
            execution: Execution::Deterministic,
        }
    }

    pub fn with_cohorts(mut self, init: Option<usize>, em: Option<usize>) -> Self {
        self.init_cohort_size = init;
        self.em_cohort_size = em;
        self
    }

    fn check(&self, pop: &ClientPopulation) -> Result<()> {
        if self.k == 0 {
            return Err(Error::contract("K must be at least 1"));
        }
        if !(self.alpha_floor.is_finite() && self.alpha_floor > 0.0) {
            return Err(Error::contract(format!(
                "alpha floor must be positive, got {}",
                self.alpha_floor
            )));
        }
        for (name, size) in [("init", self.init_cohort_size), ("EM", self.em_cohort_size)] {
            let size = size.unwrap_or(pop.len());
            if size < self.k || size > pop.len() {
                return Err(Error::contract(format!(
                    "{name} cohort size {size} must be between K = {} and M = {}",
                    self.k,
                    pop.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSnapshot {
    /// 0 is the initialization.
    pub round: usize,
    pub params: MdmParams,
    pub log_likelihood: Option<f64>,
}

/// Parameters after initialization and after every EM round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub snapshots: Vec<RoundSnapshot>,
    /// Union of all cohorts that took part in the run.
    pub clients_seen: BTreeSet<usize>,
}

// ---------------------------------------------------------------------------
// Client side

/// Initialization packet of a client that picked `component` out of `k`.
pub fn init_packet(rec: &ClientRecord, component: usize, k: usize) -> ClientStatsPacket {
    let c = rec.num_categories();
    let mut p = vec![vec![0.0; c]; k];
    let mut q = vec![vec![0.0; c]; k];
    let mut e = vec![0.0; k];
    e[component] = 1.0;
    let norm = rec.normalized();
    for (j, x) in norm.into_iter().enumerate() {
        p[component][j] = x;
        q[component][j] = x * x;
    }
    ClientStatsPacket::Init(InitStats {
        e: CountColumns::single_column(rec.n(), e),
        p,
        q,
    })
}

/// EM packet: responsibilities and the digamma statistics they weight.
pub fn em_packet(
    rec: &ClientRecord,
    params: &MdmParams,
    policy: DegeneratePolicy,
) -> Result<ClientStatsPacket> {
    let omega = match responsibilities(rec, params) {
        Ok(w) => w,
        Err(Error::DegenerateClient { .. }) if policy == DegeneratePolicy::Skip => {
            return Ok(ClientStatsPacket::Em(EmStats::zero(params.k(), params.c())));
        }
        Err(e) => return Err(e),
    };
    let n = rec.n() as f64;
    let mut u = Vec::with_capacity(params.k());
    let mut v = Vec::with_capacity(params.k());
    for (k, alpha) in params.alpha().iter().enumerate() {
        let w = omega[k];
        let row: Vec<f64> = rec
            .counts()
            .iter()
            .zip(alpha)
            .map(|(&c, &a)| {
                if c == 0 {
                    0.0
                } else {
                    w * (psi(c as f64 + a) - psi(a))
                }
            })
            .collect();
        u.push(row);
        let a0 = params.alpha0(k);
        v.push(w * (psi(n + a0) - psi(a0)));
    }
    Ok(ClientStatsPacket::Em(EmStats {
        e: CountColumns::single_column(rec.n(), omega.clone()),
        omega,
        u,
        v,
        weight: 1.0,
    }))
}

// ---------------------------------------------------------------------------
// Server side

/// Moment-matched Dirichlet parameters from first and second moments of the
/// normalized histograms. The precision comes from the first category; if
/// its empirical variance is not positive the precision falls back to 1.
pub fn moment_match_alpha(mean: &[f64], second: &[f64], floor: f64) -> Vec<f64> {
    let (p1, q1) = (mean[0], second[0]);
    let denom = q1 - p1 * p1;
    let scale = (p1 - q1) / denom;
    let scale = if denom > 0.0 && scale.is_finite() && scale > 0.0 {
        scale
    } else {
        1.0
    };
    mean.iter().map(|&m| (scale * m).max(floor)).collect()
}

/// Initial parameters from an aggregate of [`init_packet`]s.
///
/// Fails with [`Error::Init`] if some component received no clients.
pub fn init_from_aggregate(
    report: &AggregateReport,
    max_n: u32,
    alpha_floor: f64,
) -> Result<MdmParams> {
    let stats = report
        .as_init()
        .ok_or_else(|| Error::contract("initialization needs an aggregate of init packets"))?;
    let k = stats.e.rows();
    let mut alpha = Vec::with_capacity(k);
    let mut pi = Vec::with_capacity(k);
    for comp in 0..k {
        let m = stats.e.row_sum(comp);
        if m <= 0.0 {
            return Err(Error::Init(format!("component {comp} received no clients")));
        }
        pi.push(SampleCountDist::from_weights(&stats.e.row(comp), m));
        let mean: Vec<f64> = stats.p[comp].iter().map(|x| x / m).collect();
        let second: Vec<f64> = stats.q[comp].iter().map(|x| x / m).collect();
        alpha.push(moment_match_alpha(&mean, &second, alpha_floor));
    }
    MdmParams::new(vec![1.0 / k as f64; k], alpha, pi, max_n)
}

struct UpdateSums<'a> {
    omega: &'a [f64],
    contributors: f64,
    pi_weights: Vec<BTreeMap<u32, f64>>,
    u: &'a [Vec<f64>],
    v: &'a [f64],
}

fn apply_update(prev: &MdmParams, sums: UpdateSums<'_>, alpha_floor: f64) -> Result<MdmParams> {
    if sums.contributors <= 0.0 {
        return Err(Error::domain(
            "no client in the cohort has positive probability under the current parameters",
        ));
    }
    let k = prev.k();
    let mut tau: Vec<f64> = sums.omega.iter().map(|w| w / sums.contributors).collect();
    let mut alpha = Vec::with_capacity(k);
    let mut pi = Vec::with_capacity(k);
    for comp in 0..k {
        let w = sums.omega[comp];
        if w < COMPONENT_DEATH_FRACTION * sums.contributors {
            alpha.push(prev.alpha()[comp].clone());
            pi.push(prev.pi()[comp].clone());
            continue;
        }
        pi.push(SampleCountDist::from_weights(&sums.pi_weights[comp], w));
        let v = sums.v[comp];
        alpha.push(
            prev.alpha()[comp]
                .iter()
                .zip(&sums.u[comp])
                .map(|(&a, &u)| (a * u / v).max(alpha_floor))
                .collect(),
        );
    }
    let total: f64 = tau.iter().sum();
    tau.iter_mut().for_each(|t| *t /= total);
    MdmParams::new(tau, alpha, pi, prev.max_n())
}

/// New parameters from an aggregate of [`em_packet`]s computed against
/// `prev`.
pub fn update_from_aggregate(
    prev: &MdmParams,
    report: &AggregateReport,
    alpha_floor: f64,
) -> Result<MdmParams> {
    let stats = report
        .as_em()
        .ok_or_else(|| Error::contract("EM update needs an aggregate of EM packets"))?;
    if stats.omega.len() != prev.k() {
        return Err(Error::contract("aggregate and parameters disagree on K"));
    }
    let pi_weights = (0..prev.k()).map(|k| stats.e.row(k)).collect();
    apply_update(
        prev,
        UpdateSums {
            omega: &stats.omega,
            contributors: stats.weight,
            pi_weights,
            u: &stats.u,
            v: &stats.v,
        },
        alpha_floor,
    )
}

// ---------------------------------------------------------------------------
// Orchestration

/// One-shot initialization round.
///
/// Each cohort client picks a component uniformly at random; the server
/// normalizes per-component sample-count histograms into `π` and
/// moment-matches `α`. `τ` starts uniform.
pub fn init_params(
    pop: &ClientPopulation,
    cfg: &InferenceConfig,
    rng: RngHandle,
) -> Result<MdmParams> {
    cfg.check(pop)?;
    let size = cfg.init_cohort_size.unwrap_or(pop.len());
    let cohort = sample_cohort(pop, size, rng.derive(0))?;
    let max_n = pop.max_n();
    let k = cfg.k;
    let mut last_err = None;
    for attempt in 0..MAX_INIT_ATTEMPTS {
        let assign = rng.derive(1 + attempt);
        let report = run_round(pop, &cohort, cfg.execution, |i, rec| {
            let component = assign.derive(i as u64).rng().random_range(0..k);
            Ok(init_packet(rec, component, k))
        })?;
        match init_from_aggregate(&report, max_n, cfg.alpha_floor) {
            Ok(params) => return Ok(params),
            Err(e @ Error::Init(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Init(format!(
        "no assignment in {MAX_INIT_ATTEMPTS} attempts gave every component a client ({})",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

fn em_round_with_cohort(
    pop: &ClientPopulation,
    params: &MdmParams,
    cfg: &InferenceConfig,
    cohort: &[usize],
) -> Result<MdmParams> {
    let report = run_round(pop, cohort, cfg.execution, |_, rec| {
        em_packet(rec, params, cfg.degenerate_policy)
    })?;
    update_from_aggregate(params, &report, cfg.alpha_floor)
}

/// One EM round over a freshly sampled cohort.
pub fn em_round(
    pop: &ClientPopulation,
    params: &MdmParams,
    cfg: &InferenceConfig,
    rng: RngHandle,
) -> Result<MdmParams> {
    cfg.check(pop)?;
    let cohort = sample_cohort(pop, cfg.em_cohort_size.unwrap_or(pop.len()), rng)?;
    em_round_with_cohort(pop, params, cfg, &cohort)
}

/// The update rules evaluated directly over every record, without cohorts
/// or packets. `τ` is divided by the number of contributing records.
pub fn full_batch_update(
    records: &[ClientRecord],
    params: &MdmParams,
    cfg: &InferenceConfig,
) -> Result<MdmParams> {
    if records.is_empty() {
        return Err(Error::contract("full-batch update over no records"));
    }
    let k = params.k();
    let mut omega_sum = vec![0.0; k];
    let mut pi_weights = vec![BTreeMap::<u32, f64>::new(); k];
    let mut num = vec![vec![0.0; params.c()]; k];
    let mut den = vec![0.0; k];
    let mut contributors = 0.0;
    for rec in records {
        let omega = match responsibilities(rec, params) {
            Ok(w) => w,
            Err(Error::DegenerateClient { .. })
                if cfg.degenerate_policy == DegeneratePolicy::Skip =>
            {
                continue
            }
            Err(e) => return Err(e),
        };
        contributors += 1.0;
        for comp in 0..k {
            let w = omega[comp];
            omega_sum[comp] += w;
            *pi_weights[comp].entry(rec.n()).or_insert(0.0) += w;
            let alpha = &params.alpha()[comp];
            for (j, &c) in rec.counts().iter().enumerate() {
                if c > 0 {
                    num[comp][j] += w * (psi(c as f64 + alpha[j]) - psi(alpha[j]));
                }
            }
            let a0 = params.alpha0(comp);
            den[comp] += w * (psi(rec.n() as f64 + a0) - psi(a0));
        }
    }
    apply_update(
        params,
        UpdateSums {
            omega: &omega_sum,
            contributors,
            pi_weights,
            u: &num,
            v: &den,
        },
        cfg.alpha_floor,
    )
}

fn plateaued(snapshots: &[RoundSnapshot]) -> bool {
    if snapshots.len() <= EARLY_STOP_PATIENCE {
        return false;
    }
    snapshots[snapshots.len() - EARLY_STOP_PATIENCE - 1..]
        .windows(2)
        .all(|w| match (w[0].log_likelihood, w[1].log_likelihood) {
            (Some(a), Some(b)) => b - a < EARLY_STOP_TOLERANCE,
            _ => false,
        })
}

/// Initialization followed by `cfg.rounds` EM rounds.
pub fn fit(
    pop: &ClientPopulation,
    cfg: &InferenceConfig,
    rng: RngHandle,
) -> Result<(MdmParams, InferenceTrace)> {
    cfg.check(pop)?;
    let track = cfg.track_log_likelihood || cfg.early_stop;
    let loglik = |p: &MdmParams| -> Result<Option<f64>> {
        if track {
            log_likelihood(pop.records(), p).map(Some)
        } else {
            Ok(None)
        }
    };
    let mut trace = InferenceTrace::default();

    let init_rng = rng.derive(0);
    let init_cohort = sample_cohort(
        pop,
        cfg.init_cohort_size.unwrap_or(pop.len()),
        init_rng.derive(0),
    )?;
    trace.clients_seen.extend(init_cohort.iter().copied());
    let mut params = init_params(pop, cfg, init_rng)?;
    trace.snapshots.push(RoundSnapshot {
        round: 0,
        log_likelihood: loglik(&params)?,
        params: params.clone(),
    });

    let em_size = cfg.em_cohort_size.unwrap_or(pop.len());
    for t in 0..cfg.rounds {
        let cohort = sample_cohort(pop, em_size, rng.derive(1 + t as u64))?;
        trace.clients_seen.extend(cohort.iter().copied());
        params = em_round_with_cohort(pop, &params, cfg, &cohort)?;
        trace.snapshots.push(RoundSnapshot {
            round: t + 1,
            log_likelihood: loglik(&params)?,
            params: params.clone(),
        });
        if cfg.early_stop && plateaued(&trace.snapshots) {
            break;
        }
    }
    Ok((params, trace))
}
