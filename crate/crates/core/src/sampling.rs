//! Seeded random generation: Dirichlet, multinomial and MDM client draws.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClientRecord, MdmParams, SampleCountDist};

/// A reproducible random stream identified by `(seed, stream)`.
///
/// Handles are plain values. Child handles are derived by tag, so work split
/// across clients or rounds draws from independent streams regardless of
/// execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngHandle {
    pub seed: u64,
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngHandle {
    pub fn new(seed: u64) -> Self {
        RngHandle { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        RngHandle { seed, stream }
    }

    /// Child handle for sub-task `tag`.
    pub fn derive(&self, tag: u64) -> Self {
        RngHandle {
            seed: self.seed,
            stream: splitmix64(splitmix64(self.stream) ^ tag),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Uniform draw on (0, 1].
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// `ln G` for `G ~ Gamma(shape, 1)` (Marsaglia–Tsang; shapes below one are
/// boosted through `G(a) = G(a + 1) U^{1/a}`, applied in log space so tiny
/// shapes cannot underflow).
fn sample_ln_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let boost = open_unit(rng).ln() / shape;
        return sample_ln_gamma(shape + 1.0, rng) + boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = open_unit(rng);
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return (d * v).ln();
        }
    }
}

/// Draw `p ~ Dir(α)`.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if alpha.is_empty() || alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::domain(format!(
            "Dirichlet parameters must be positive: {alpha:?}"
        )));
    }
    let logs: Vec<f64> = alpha.iter().map(|&a| sample_ln_gamma(a, rng)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

fn check_probabilities(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::domain(format!("invalid probability vector {p:?}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("probabilities sum to {total}")));
    }
    Ok(())
}

/// Draw `c ~ Mult(n, p)` by sequential conditional binomials. The result
/// always sums to exactly `n`.
pub fn sample_multinomial<R: Rng + ?Sized>(n: u32, p: &[f64], rng: &mut R) -> Result<Vec<u32>> {
    check_probabilities(p)?;
    let mut counts = vec![0u32; p.len()];
    let mut remaining = n as u64;
    let mut mass_left = 1.0f64;
    let last = p.len() - 1;
    for (j, &pj) in p.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if j == last {
            counts[j] = remaining as u32;
            break;
        }
        let q = if mass_left > 0.0 {
            (pj / mass_left).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let draw = Binomial::new(remaining, q)
            .map_err(|e| Error::domain(format!("binomial({remaining}, {q}): {e}")))?
            .sample(rng);
        counts[j] = draw as u32;
        remaining -= draw;
        mass_left -= pj;
    }
    Ok(counts)
}

/// Index drawn with probability proportional to `weights`.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Draw a sample count from a sparse distribution.
pub fn sample_count<R: Rng + ?Sized>(dist: &SampleCountDist, rng: &mut R) -> u32 {
    let target = rng.random::<f64>() * dist.total();
    let mut acc = 0.0;
    let mut last = 0;
    for (n, p) in dist.iter() {
        acc += p;
        last = n;
        if target < acc {
            return n;
        }
    }
    last
}

/// Draw one client from the MDM generative process: component `k ~ τ`,
/// `n ~ π_k`, `p ~ Dir(α_k)`, `c ~ Mult(n, p)`. The component index is
/// returned for inspection only.
pub fn sample_client<R: Rng + ?Sized>(params: &MdmParams, rng: &mut R) -> (ClientRecord, usize) {
    let k = sample_categorical(params.tau(), rng);
    let n = sample_count(&params.pi()[k], rng);
    let p = sample_dirichlet(&params.alpha()[k], rng).expect("validated alpha");
    let c = sample_multinomial(n, &p, rng).expect("normalized Dirichlet draw");
    (ClientRecord::new(c, n).expect("multinomial sums to n"), k)
}

/// `m` independent clients, each drawn from its own derived stream, along
/// with the generating component of each.
pub fn gen_labelled_federation(
    params: &MdmParams,
    m: usize,
    rng: RngHandle,
) -> Result<Vec<(ClientRecord, usize)>> {
    if m == 0 {
        return Err(Error::contract(
            "synthetic federation needs at least one client",
        ));
    }
    Ok((0..m)
        .into_par_iter()
        .map(|i| sample_client(params, &mut rng.derive(i as u64).rng()))
        .collect())
}

/// `m` independent clients drawn from `params`.
pub fn gen_synthetic_federation(
    params: &MdmParams,
    m: usize,
    rng: RngHandle,
) -> Result<Vec<ClientRecord>> {
    Ok(gen_labelled_federation(params, m, rng)?
        .into_iter()
        .map(|(rec, _)| rec)
        .collect())
}
