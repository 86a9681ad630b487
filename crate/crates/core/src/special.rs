//! Log-gamma and digamma on the positive reals.
//!
//! Both functions shift small arguments upward with the standard recurrences
//! and finish with an asymptotic (Stirling / de Moivre) series. Around the two
//! roots of `ln Γ` (x = 1 and x = 2) a Taylor series in `ζ(k) - 1` is used
//! instead so that relative accuracy survives the cancellation.

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Arguments below this are shifted up before the asymptotic series.
const ASYMPTOTIC_START: f64 = 10.0;

/// Half-width of the Taylor window around x = 1 and x = 2.
const ROOT_WINDOW: f64 = 0.2;

/// ζ(k) − 1 for k = 2, 3, …, 25.
#[allow(clippy::excessive_precision)]
const ZETA_MINUS_ONE: [f64; 24] = [
    0.644_934_066_848_226_4,
    0.202_056_903_159_594_3,
    0.082_323_233_711_138_19,
    0.036_927_755_143_369_93,
    0.017_343_061_984_449_14,
    0.008_349_277_381_922_827,
    0.004_077_356_197_944_339,
    0.002_008_392_826_082_214,
    0.000_994_575_127_818_085_3,
    0.000_494_188_604_119_464_6,
    0.000_246_086_553_308_048_3,
    0.000_122_713_347_578_489_1,
    6.124_813_505_870_483e-5,
    3.058_823_630_702_049e-5,
    1.528_225_940_865_187e-5,
    7.637_197_637_899_762e-6,
    3.817_293_264_999_84e-6,
    1.908_212_716_553_939e-6,
    9.539_620_338_727_961e-7,
    4.769_329_867_878_065e-7,
    2.384_505_027_277_33e-7,
    1.192_199_259_653_111e-7,
    5.960_818_905_125_948e-8,
    2.980_350_351_465_228e-8,
];

fn check_arg(x: f64, name: &str) -> Result<()> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::domain(format!(
            "{name} requires a finite positive argument, got {x}"
        )));
    }
    Ok(())
}

/// `ln Γ(x)` for finite `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_arg(x, "log_gamma")?;
    Ok(ln_gamma(x))
}

/// `ψ(x) = d/dx ln Γ(x)` for finite `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check_arg(x, "digamma")?;
    Ok(psi(x))
}

/// Unchecked log-gamma for hot loops whose arguments are already validated.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    if (x - 1.0).abs() < ROOT_WINDOW {
        let z = x - 1.0;
        return ln_gamma_2p(z) - z.ln_1p();
    }
    if (x - 2.0).abs() < ROOT_WINDOW {
        return ln_gamma_2p(x - 2.0);
    }
    if x >= ASYMPTOTIC_START {
        return stirling(x);
    }
    let mut shifted = x;
    let mut prod = 1.0;
    while shifted < ASYMPTOTIC_START {
        prod *= shifted;
        shifted += 1.0;
    }
    stirling(shifted) - prod.ln()
}

/// `ln Γ(2 + z)` for small `|z|` via
/// `z(1 − γ) + Σ_{k≥2} (−1)^k (ζ(k) − 1) z^k / k`.
fn ln_gamma_2p(z: f64) -> f64 {
    let mut acc = 0.0;
    let mut zk = z;
    for (i, zeta) in ZETA_MINUS_ONE.iter().enumerate() {
        let k = (i + 2) as f64;
        zk *= z;
        let term = zeta * zk / k;
        if i % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    z * (1.0 - EULER_GAMMA) + acc
}

fn stirling(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli terms B_{2k} / (2k (2k - 1) x^{2k-1}), Horner in 1/x^2.
    let series = inv
        * (1.0 / 12.0
            + inv2
                * (-1.0 / 360.0
                    + inv2
                        * (1.0 / 1260.0
                            + inv2
                                * (-1.0 / 1680.0
                                    + inv2
                                        * (1.0 / 1188.0
                                            + inv2
                                                * (-691.0 / 360_360.0 + inv2 * (1.0 / 156.0)))))));
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series
}

/// Unchecked digamma for hot loops.
pub(crate) fn psi(x: f64) -> f64 {
    debug_assert!(x > 0.0 && x.is_finite());
    let mut shift = 0.0;
    let mut z = x;
    while z < ASYMPTOTIC_START {
        shift -= 1.0 / z;
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32_760.0 - inv2 / 12.0))))));
    shift + z.ln() - 0.5 * inv - series
}
