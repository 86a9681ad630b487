//! Mixture-of-Dirichlet-Multinomials parameters and probability mass
//! functions.
//!
//! All probabilities are handled in log space. A zero probability is the
//! explicit sentinel [`LOG_ZERO`] (negative infinity), which propagates
//! through [`log_sum_exp`] without producing NaN.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::ln_gamma;

/// Log of probability zero.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

const SUM_TOLERANCE: f64 = 1e-9;

/// One federated client: a histogram of the modelled feature over `C`
/// categories and the client's total sample count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct ClientRecord {
    c: Vec<u32>,
    n: u32,
}

#[derive(Deserialize)]
struct RawRecord {
    c: Vec<u32>,
    n: u32,
}

impl TryFrom<RawRecord> for ClientRecord {
    type Error = Error;

    fn try_from(raw: RawRecord) -> Result<Self> {
        ClientRecord::new(raw.c, raw.n)
    }
}

impl ClientRecord {
    pub fn new(c: Vec<u32>, n: u32) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::contract("client histogram has no categories"));
        }
        if n == 0 {
            return Err(Error::contract("client sample count must be positive"));
        }
        let total: u64 = c.iter().map(|&x| x as u64).sum();
        if total != n as u64 {
            return Err(Error::contract(format!(
                "histogram sums to {total} but n = {n}"
            )));
        }
        Ok(ClientRecord { c, n })
    }

    /// Build a record whose sample count is the histogram total.
    pub fn from_counts(c: Vec<u32>) -> Result<Self> {
        let total: u64 = c.iter().map(|&x| x as u64).sum();
        let n = u32::try_from(total)
            .map_err(|_| Error::contract("histogram total does not fit in u32"))?;
        ClientRecord::new(c, n)
    }

    pub fn counts(&self) -> &[u32] {
        &self.c
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn num_categories(&self) -> usize {
        self.c.len()
    }

    /// Histogram divided by `n`.
    pub fn normalized(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.c.iter().map(|&x| x as f64 / n).collect()
    }
}

/// A sparse probability distribution over sample counts `1..=N`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleCountDist {
    probs: BTreeMap<u32, f64>,
}

#[derive(Serialize, Deserialize)]
struct SupportPoint {
    n: u32,
    p: f64,
}

impl Serialize for SampleCountDist {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let points: Vec<SupportPoint> = self
            .probs
            .iter()
            .map(|(&n, &p)| SupportPoint { n, p })
            .collect();
        points.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SampleCountDist {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let points = Vec::<SupportPoint>::deserialize(deserializer)?;
        let mut probs = BTreeMap::new();
        for pt in points {
            if probs.insert(pt.n, pt.p).is_some() {
                return Err(serde::de::Error::custom(format!(
                    "duplicate support point n = {}",
                    pt.n
                )));
            }
        }
        Ok(SampleCountDist { probs })
    }
}

impl SampleCountDist {
    /// Distribution from explicit `(n, p)` pairs; zero-probability points
    /// are dropped.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut probs = BTreeMap::new();
        for (n, p) in pairs {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::contract(format!(
                    "invalid probability {p} at n = {n}"
                )));
            }
            if p > 0.0 {
                *probs.entry(n).or_insert(0.0) += p;
            }
        }
        let dist = SampleCountDist { probs };
        dist.validate(u32::MAX)?;
        Ok(dist)
    }

    pub fn point_mass(n: u32) -> Self {
        SampleCountDist {
            probs: BTreeMap::from([(n, 1.0)]),
        }
    }

    /// Empirical distribution of the given sample counts.
    pub fn empirical(counts: impl IntoIterator<Item = u32>) -> Result<Self> {
        let mut hist: BTreeMap<u32, u64> = BTreeMap::new();
        let mut total = 0u64;
        for n in counts {
            *hist.entry(n).or_insert(0) += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::contract("empirical distribution of no values"));
        }
        let probs = hist
            .into_iter()
            .map(|(n, m)| (n, m as f64 / total as f64))
            .collect();
        Ok(SampleCountDist { probs })
    }

    /// Normalize non-negative weights into a distribution. Entries with zero
    /// weight are left out of the support.
    pub(crate) fn from_weights(weights: &BTreeMap<u32, f64>, total: f64) -> Self {
        let probs = weights
            .iter()
            .filter(|(_, &w)| w > 0.0)
            .map(|(&n, &w)| (n, w / total))
            .collect();
        SampleCountDist { probs }
    }

    pub fn prob(&self, n: u32) -> f64 {
        self.probs.get(&n).copied().unwrap_or(0.0)
    }

    pub fn ln_prob(&self, n: u32) -> f64 {
        match self.probs.get(&n) {
            Some(&p) if p > 0.0 => p.ln(),
            _ => LOG_ZERO,
        }
    }

    /// Support points in ascending order with their probabilities.
    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.probs.iter().map(|(&n, &p)| (n, p))
    }

    pub fn support_len(&self) -> usize {
        self.probs.len()
    }

    pub fn max_support(&self) -> Option<u32> {
        self.probs.keys().next_back().copied()
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    fn validate(&self, max_n: u32) -> Result<()> {
        if self.probs.is_empty() {
            return Err(Error::contract(
                "sample-count distribution has empty support",
            ));
        }
        for (&n, &p) in &self.probs {
            if n == 0 || n > max_n {
                return Err(Error::contract(format!(
                    "sample-count support point {n} outside 1..={max_n}"
                )));
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::contract(format!(
                    "invalid probability {p} at n = {n}"
                )));
            }
        }
        let total = self.total();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::contract(format!(
                "sample-count distribution sums to {total}"
            )));
        }
        Ok(())
    }
}

/// Parameters of a K-component MDM over C categories with sample counts
/// bounded by N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct MdmParams {
    tau: Vec<f64>,
    alpha: Vec<Vec<f64>>,
    pi: Vec<SampleCountDist>,
    max_n: u32,
}

#[allow(non_snake_case)]
#[derive(Serialize, Deserialize)]
struct RawParams {
    K: usize,
    C: usize,
    N: u32,
    tau: Vec<f64>,
    alpha: Vec<Vec<f64>>,
    pi: Vec<SampleCountDist>,
}

impl TryFrom<RawParams> for MdmParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let params = MdmParams::new(raw.tau, raw.alpha, raw.pi, raw.N)?;
        if params.k() != raw.K || params.c() != raw.C {
            return Err(Error::contract(format!(
                "declared K={} C={} but arrays give K={} C={}",
                raw.K,
                raw.C,
                params.k(),
                params.c()
            )));
        }
        Ok(params)
    }
}

impl From<MdmParams> for RawParams {
    fn from(p: MdmParams) -> Self {
        RawParams {
            K: p.k(),
            C: p.c(),
            N: p.max_n,
            tau: p.tau,
            alpha: p.alpha,
            pi: p.pi,
        }
    }
}

impl MdmParams {
    pub fn new(
        tau: Vec<f64>,
        alpha: Vec<Vec<f64>>,
        pi: Vec<SampleCountDist>,
        max_n: u32,
    ) -> Result<Self> {
        let k = tau.len();
        if k == 0 {
            return Err(Error::contract("mixture needs at least one component"));
        }
        if alpha.len() != k || pi.len() != k {
            return Err(Error::contract(format!(
                "component count mismatch: tau {k}, alpha {}, pi {}",
                alpha.len(),
                pi.len()
            )));
        }
        if tau.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::contract(format!("invalid mixture weights {tau:?}")));
        }
        let tau_sum: f64 = tau.iter().sum();
        if (tau_sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::contract(format!("mixture weights sum to {tau_sum}")));
        }
        let c = alpha[0].len();
        if c == 0 {
            return Err(Error::contract("Dirichlet parameters have no categories"));
        }
        for (i, row) in alpha.iter().enumerate() {
            if row.len() != c {
                return Err(Error::contract(format!(
                    "alpha row {i} has {} entries, expected {c}",
                    row.len()
                )));
            }
            if row.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                return Err(Error::contract(format!(
                    "alpha row {i} has a non-positive entry: {row:?}"
                )));
            }
        }
        if max_n == 0 {
            return Err(Error::contract("sample-count bound N must be positive"));
        }
        for dist in &pi {
            dist.validate(max_n)?;
        }
        Ok(MdmParams {
            tau,
            alpha,
            pi,
            max_n,
        })
    }

    pub fn k(&self) -> usize {
        self.tau.len()
    }

    pub fn c(&self) -> usize {
        self.alpha[0].len()
    }

    /// Upper bound N on client sample counts.
    pub fn max_n(&self) -> u32 {
        self.max_n
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn pi(&self) -> &[SampleCountDist] {
        &self.pi
    }

    /// Concentration `α_0 = Σ_j α_kj` of component `k`.
    pub fn alpha0(&self, k: usize) -> f64 {
        self.alpha[k].iter().sum()
    }

    /// Reorder components so that new component `i` is old component
    /// `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.k())?;
        MdmParams::new(
            perm.iter().map(|&i| self.tau[i]).collect(),
            perm.iter().map(|&i| self.alpha[i].clone()).collect(),
            perm.iter().map(|&i| self.pi[i].clone()).collect(),
            self.max_n,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub(crate) fn check_permutation(perm: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if perm.len() != k {
        return Err(Error::contract(format!(
            "permutation has length {}, expected {k}",
            perm.len()
        )));
    }
    for &i in perm {
        if i >= k || std::mem::replace(&mut seen[i], true) {
            return Err(Error::contract(format!(
                "{perm:?} is not a permutation of 0..{k}"
            )));
        }
    }
    Ok(())
}

/// `ln Σ exp(x_i)`, shifted by the maximum. Returns [`LOG_ZERO`] when every
/// input is `LOG_ZERO` (or the slice is empty).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Dirichlet-multinomial log pmf `ln p(c | n, α)`.
pub fn log_dm_pmf(c: &[u32], n: u32, alpha: &[f64]) -> Result<f64> {
    if c.len() != alpha.len() {
        return Err(Error::contract(format!(
            "histogram has {} categories but alpha has {}",
            c.len(),
            alpha.len()
        )));
    }
    let total: u64 = c.iter().map(|&x| x as u64).sum();
    if total != n as u64 {
        return Err(Error::contract(format!(
            "histogram sums to {total} but n = {n}"
        )));
    }
    if alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::contract(format!(
            "alpha must be positive: {alpha:?}"
        )));
    }
    Ok(log_dm_pmf_unchecked(c, n, alpha))
}

/// Dirichlet-multinomial log pmf for pre-validated inputs.
///
/// Categories with `c_j = 0` contribute exactly zero and are skipped.
pub(crate) fn log_dm_pmf_unchecked(c: &[u32], n: u32, alpha: &[f64]) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let alpha0: f64 = alpha.iter().sum();
    let mut acc = ln_gamma(alpha0) + ln_gamma(n + 1.0) - ln_gamma(n + alpha0);
    for (&cj, &aj) in c.iter().zip(alpha) {
        if cj > 0 {
            let cj = cj as f64;
            acc += ln_gamma(cj + aj) - ln_gamma(aj) - ln_gamma(cj + 1.0);
        }
    }
    acc
}

/// `ln p(c, n | α, π) = ln p(c | n, α) + ln π_n`.
pub fn log_joint_pmf(rec: &ClientRecord, alpha: &[f64], pi: &SampleCountDist) -> Result<f64> {
    let ln_pi = pi.ln_prob(rec.n);
    let ln_dm = log_dm_pmf(&rec.c, rec.n, alpha)?;
    if ln_pi == LOG_ZERO {
        return Ok(LOG_ZERO);
    }
    Ok(ln_dm + ln_pi)
}

fn check_dims(rec: &ClientRecord, params: &MdmParams) -> Result<()> {
    if rec.num_categories() != params.c() {
        return Err(Error::contract(format!(
            "client has {} categories, model has {}",
            rec.num_categories(),
            params.c()
        )));
    }
    Ok(())
}

/// Per-component `ln τ_k + ln p(c, n | α_k, π_k)`.
pub(crate) fn component_log_weights(rec: &ClientRecord, params: &MdmParams) -> Vec<f64> {
    (0..params.k())
        .map(|k| {
            let tau = params.tau[k];
            let ln_pi = params.pi[k].ln_prob(rec.n);
            if tau <= 0.0 || ln_pi == LOG_ZERO {
                LOG_ZERO
            } else {
                tau.ln() + ln_pi + log_dm_pmf_unchecked(&rec.c, rec.n, &params.alpha[k])
            }
        })
        .collect()
}

/// Mixture log pmf `ln Σ_k τ_k p(c, n | α_k, π_k)`.
pub fn log_mdm_pmf(rec: &ClientRecord, params: &MdmParams) -> Result<f64> {
    check_dims(rec, params)?;
    Ok(log_sum_exp(&component_log_weights(rec, params)))
}

/// Dataset log likelihood `Σ_i ln q(c_i, n_i)`.
pub fn log_likelihood(records: &[ClientRecord], params: &MdmParams) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::contract("log likelihood of an empty record list"));
    }
    let mut total = 0.0;
    for rec in records {
        total += log_mdm_pmf(rec, params)?;
    }
    Ok(total)
}

/// Normalize per-component log weights into posterior probabilities.
/// Returns `None` when every weight is [`LOG_ZERO`].
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let norm = log_sum_exp(log_weights);
    if norm == LOG_ZERO {
        return None;
    }
    let mut w: Vec<f64> = log_weights.iter().map(|&l| (l - norm).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    Some(w)
}

/// Posterior component probabilities `ω` for one client.
pub fn responsibilities(rec: &ClientRecord, params: &MdmParams) -> Result<Vec<f64>> {
    check_dims(rec, params)?;
    normalize_log_weights(&component_log_weights(rec, params))
        .ok_or(Error::DegenerateClient { n: rec.n })
}
