//! Choosing the number of mixture components by validation log likelihood.
//!
//! Every candidate K is fitted independently (in parallel, on independent
//! random streams). A validation cohort of clients that never took part in
//! any fit is then scored under each model, and the smallest K whose mean
//! per-client log likelihood is within `tie_tolerance` of the best wins.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{sample_cohort, ClientPopulation};
use crate::inference::{fit, InferenceConfig};
use crate::json::fmt_f64;
use crate::model::{log_mdm_pmf, MdmParams};
use crate::sampling::RngHandle;

/// Nats per client.
pub const DEFAULT_TIE_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub candidates: Vec<usize>,
    /// Settings shared by every candidate fit; its `k` is ignored.
    pub inference: InferenceConfig,
    pub tie_tolerance: f64,
}

impl SelectionConfig {
    pub fn new(candidates: Vec<usize>, inference: InferenceConfig) -> Self {
        SelectionConfig {
            candidates,
            inference,
            tie_tolerance: DEFAULT_TIE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub k: usize,
    pub params: MdmParams,
    /// Mean per-client validation log likelihood; `-inf` if some validation
    /// client has zero probability under the model.
    pub mean_validation_log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport {
    /// Sorted by K.
    pub candidates: Vec<CandidateFit>,
    pub chosen_k: usize,
    pub tie_tolerance: f64,
    pub validation_size: usize,
}

impl KSelectionReport {
    /// `K,mean_val_loglik` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,mean_val_loglik\n");
        for c in &self.candidates {
            out.push_str(&format!(
                "{},{}\n",
                c.k,
                fmt_f64(c.mean_validation_log_likelihood)
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }
}

/// Smallest K whose score is within `tolerance` of the maximum.
pub fn choose_k(scores: &[(usize, f64)], tolerance: f64) -> Option<usize> {
    let best = scores
        .iter()
        .map(|&(_, s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .filter(|&&(_, s)| s >= best - tolerance)
        .map(|&(k, _)| k)
        .min()
}

fn normalized_candidates(sel: &SelectionConfig) -> Result<Vec<usize>> {
    let ks: BTreeSet<usize> = sel.candidates.iter().copied().collect();
    if ks.is_empty() {
        return Err(Error::contract("no candidate K values"));
    }
    if ks.contains(&0) {
        return Err(Error::contract("candidate K values must be positive"));
    }
    if sel.tie_tolerance.is_nan() || sel.tie_tolerance < 0.0 {
        return Err(Error::contract("tie tolerance must be non-negative"));
    }
    Ok(ks.into_iter().collect())
}

fn fit_candidates(
    train: &ClientPopulation,
    ks: &[usize],
    sel: &SelectionConfig,
    rng: RngHandle,
) -> Result<Vec<(usize, MdmParams, BTreeSet<usize>)>> {
    ks.par_iter()
        .map(|&k| {
            let cfg = InferenceConfig {
                k,
                ..sel.inference.clone()
            };
            let (params, trace) = fit(train, &cfg, rng.derive(k as u64))?;
            Ok((k, params, trace.clients_seen))
        })
        .collect()
}

fn score(validation: &ClientPopulation, params: &MdmParams) -> Result<f64> {
    let mut total = 0.0;
    for rec in validation.records() {
        total += log_mdm_pmf(rec, params)?;
    }
    Ok(total / validation.len() as f64)
}

fn assemble(
    fits: Vec<(usize, MdmParams, BTreeSet<usize>)>,
    validation: &ClientPopulation,
    tie_tolerance: f64,
) -> Result<KSelectionReport> {
    let candidates = fits
        .into_iter()
        .map(|(k, params, _)| {
            Ok(CandidateFit {
                k,
                mean_validation_log_likelihood: score(validation, &params)?,
                params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<(usize, f64)> = candidates
        .iter()
        .map(|c| (c.k, c.mean_validation_log_likelihood))
        .collect();
    let chosen_k = choose_k(&scores, tie_tolerance).expect("non-empty candidates");
    Ok(KSelectionReport {
        candidates,
        chosen_k,
        tie_tolerance,
        validation_size: validation.len(),
    })
}

/// Select K on a finite population.
///
/// A validation cohort of `val_cohort_size` clients is set aside first; the
/// fits only ever see the remaining clients.
pub fn select_k(
    pop: &ClientPopulation,
    sel: &SelectionConfig,
    val_cohort_size: usize,
    rng: RngHandle,
) -> Result<KSelectionReport> {
    let ks = normalized_candidates(sel)?;
    if val_cohort_size == 0 || val_cohort_size >= pop.len() {
        return Err(Error::contract(format!(
            "validation cohort of {val_cohort_size} cannot be drawn from {} clients while leaving any for training",
            pop.len()
        )));
    }
    let val_idx = sample_cohort(pop, val_cohort_size, rng.derive(u64::MAX))?;
    let held: BTreeSet<usize> = val_idx.iter().copied().collect();
    let train_idx: Vec<usize> = (0..pop.len()).filter(|i| !held.contains(i)).collect();
    let train = pop.subset(&train_idx)?;
    let validation = pop.subset(&val_idx)?;

    let fits = fit_candidates(&train, &ks, sel, rng)?;
    for (k, _, seen) in &fits {
        if seen.iter().any(|&i| held.contains(&train_idx[i])) {
            return Err(Error::contract(format!(
                "validation client was used while fitting K = {k}"
            )));
        }
    }
    assemble(fits, &validation, sel.tie_tolerance)
}

/// Select K with a separately supplied validation population (for example
/// fresh draws from a known generator).
pub fn select_k_with_validation(
    train: &ClientPopulation,
    validation: &ClientPopulation,
    sel: &SelectionConfig,
    rng: RngHandle,
) -> Result<KSelectionReport> {
    let ks = normalized_candidates(sel)?;
    if validation.num_categories() != train.num_categories() {
        return Err(Error::contract(
            "validation and training clients disagree on C",
        ));
    }
    let fits = fit_candidates(train, &ks, sel, rng)?;
    assemble(fits, validation, sel.tie_tolerance)
}
