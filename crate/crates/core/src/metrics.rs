//! Parameter-recovery metrics against a known ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MdmParams;

/// Components beyond this make exhaustive alignment too expensive.
pub const MAX_ALIGN_COMPONENTS: usize = 8;

/// Normalized error `sqrt(Σ ((x_i − y_i) / y_i)^2)` against ground truth `y`.
pub fn nmse(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::contract(format!(
            "nmse of vectors with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let mut acc = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        if yi == 0.0 {
            return Err(Error::domain("nmse ground truth has a zero entry"));
        }
        let r = (xi - yi) / yi;
        acc += r * r;
    }
    Ok(acc.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedNmseReport {
    /// Fitted component `permutation[i]` is matched to truth component `i`.
    pub permutation: Vec<usize>,
    pub nmse_tau: f64,
    pub nmse_alpha: f64,
    pub nmse_pi: f64,
}

/// All permutations of `0..k` in lexicographic order.
fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    let mut used = vec![false; k];
    fn go(k: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in 0..k {
            if !used[i] {
                used[i] = true;
                current.push(i);
                go(k, current, used, out);
                current.pop();
                used[i] = false;
            }
        }
    }
    go(k, &mut current, &mut used, &mut out);
    out
}

fn flat_alpha(params: &MdmParams, perm: &[usize]) -> Vec<f64> {
    perm.iter()
        .flat_map(|&i| params.alpha()[i].iter().copied())
        .collect()
}

/// Resolve label switching by the component permutation that minimizes
/// `α` NMSE, then score `τ`, `α` and `π` under it.
///
/// `π` is compared on the ground truth's support; fitted probabilities
/// missing there count as zero.
pub fn align_and_score(fitted: &MdmParams, truth: &MdmParams) -> Result<AlignedNmseReport> {
    if fitted.k() != truth.k() || fitted.c() != truth.c() || fitted.max_n() != truth.max_n() {
        return Err(Error::contract(format!(
            "cannot compare K={} C={} N={} against K={} C={} N={}",
            fitted.k(),
            fitted.c(),
            fitted.max_n(),
            truth.k(),
            truth.c(),
            truth.max_n()
        )));
    }
    let k = truth.k();
    if k > MAX_ALIGN_COMPONENTS {
        return Err(Error::contract(format!(
            "exhaustive alignment supports at most {MAX_ALIGN_COMPONENTS} components, got {k}"
        )));
    }
    let identity: Vec<usize> = (0..k).collect();
    let truth_alpha = flat_alpha(truth, &identity);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        let score = nmse(&flat_alpha(fitted, &perm), &truth_alpha)?;
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, perm));
        }
    }
    let (nmse_alpha, permutation) = best.expect("at least one permutation");

    let tau_fit: Vec<f64> = permutation.iter().map(|&i| fitted.tau()[i]).collect();
    let nmse_tau = nmse(&tau_fit, truth.tau())?;

    let mut pi_fit = Vec::new();
    let mut pi_true = Vec::new();
    for (t, &f) in permutation.iter().enumerate() {
        for (n, p) in truth.pi()[t].iter() {
            if p > 0.0 {
                pi_true.push(p);
                pi_fit.push(fitted.pi()[f].prob(n));
            }
        }
    }
    let nmse_pi = nmse(&pi_fit, &pi_true)?;

    Ok(AlignedNmseReport {
        permutation,
        nmse_tau,
        nmse_alpha,
        nmse_pi,
    })
}
