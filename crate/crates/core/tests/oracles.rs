//! Independent oracles: exact rational arithmetic for the pmfs and
//! responsibilities, and structural checks of the EM round.

use approx::assert_relative_eq;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use proptest::prelude::*;

use mdmfed_core::federation::ClientPopulation;
use mdmfed_core::inference::{em_round, full_batch_update, init_params, InferenceConfig};
use mdmfed_core::model::{log_mdm_pmf, responsibilities, ClientRecord, MdmParams, SampleCountDist};
use mdmfed_core::presets;
use mdmfed_core::sampling::{gen_synthetic_federation, RngHandle};

fn q(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn rising(x: &BigRational, m: u32) -> BigRational {
    (0..m).fold(BigRational::one(), |acc, i| acc * (x + q(i as i64, 1)))
}

fn factorial(m: u32) -> BigRational {
    (1..=m).fold(BigRational::one(), |acc, i| acc * q(i as i64, 1))
}

/// `n! / ∏ c_j! · ∏ α_j^(c_j) / α0^(n)` with rising factorials.
fn exact_dm(c: &[u32], alpha: &[BigRational]) -> BigRational {
    let n: u32 = c.iter().sum();
    let a0 = alpha.iter().fold(q(0, 1), |acc, a| acc + a);
    let mut p = factorial(n) / rising(&a0, n);
    for (&cj, aj) in c.iter().zip(alpha) {
        p = p * rising(aj, cj) / factorial(cj);
    }
    p
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap()
}

struct ExactModel {
    tau: Vec<BigRational>,
    alpha: Vec<Vec<BigRational>>,
    pi: Vec<Vec<(u32, BigRational)>>,
}

impl ExactModel {
    fn float(&self, max_n: u32) -> MdmParams {
        MdmParams::new(
            self.tau.iter().map(to_f64).collect(),
            self.alpha
                .iter()
                .map(|r| r.iter().map(to_f64).collect())
                .collect(),
            self.pi
                .iter()
                .map(|d| {
                    SampleCountDist::from_pairs(d.iter().map(|(n, p)| (*n, to_f64(p)))).unwrap()
                })
                .collect(),
            max_n,
        )
        .unwrap()
    }

    fn joint(&self, k: usize, c: &[u32]) -> BigRational {
        let n: u32 = c.iter().sum();
        let pi = self.pi[k]
            .iter()
            .find(|(m, _)| *m == n)
            .map(|(_, p)| p.clone())
            .unwrap_or(q(0, 1));
        &self.tau[k] * pi * exact_dm(c, &self.alpha[k])
    }
}

fn model() -> ExactModel {
    ExactModel {
        tau: vec![q(1, 3), q(2, 3)],
        alpha: vec![
            vec![q(1, 2), q(3, 2), q(2, 1)],
            vec![q(5, 1), q(1, 4), q(3, 4)],
        ],
        pi: vec![
            vec![(3, q(1, 2)), (7, q(1, 2))],
            vec![(3, q(1, 5)), (5, q(4, 5))],
        ],
    }
}

#[test]
fn mixture_pmf_matches_exact_rationals() {
    let exact = model();
    let params = exact.float(7);
    for c in [
        vec![1u32, 0, 2],
        vec![0, 3, 0],
        vec![2, 2, 3],
        vec![1, 1, 3],
    ] {
        let rec = ClientRecord::from_counts(c.clone()).unwrap();
        let total = exact.joint(0, &c) + exact.joint(1, &c);
        assert_relative_eq!(
            log_mdm_pmf(&rec, &params).unwrap(),
            to_f64(&total).ln(),
            max_relative = 1e-13
        );
    }
}

#[test]
fn responsibilities_match_exact_rationals() {
    let exact = model();
    let params = exact.float(7);
    for c in [vec![1u32, 0, 2], vec![3, 0, 0], vec![0, 1, 4]] {
        let rec = ClientRecord::from_counts(c.clone()).unwrap();
        let joints = [exact.joint(0, &c), exact.joint(1, &c)];
        let total = &joints[0] + &joints[1];
        let omega = responsibilities(&rec, &params).unwrap();
        for k in 0..2 {
            assert_relative_eq!(
                omega[k],
                to_f64(&(&joints[k] / &total)),
                max_relative = 1e-13,
                epsilon = 1e-300
            );
        }
    }
    // n = 7 only has support in the first component.
    let only_first = ClientRecord::from_counts(vec![2, 2, 3]).unwrap();
    assert_eq!(
        responsibilities(&only_first, &params).unwrap(),
        vec![1.0, 0.0]
    );
}

fn population(name: &str, m: usize, seed: u64) -> ClientPopulation {
    let truth = presets::preset(name).unwrap();
    ClientPopulation::new(gen_synthetic_federation(&truth, m, RngHandle::new(seed)).unwrap())
        .unwrap()
}

fn assert_params_close(a: &MdmParams, b: &MdmParams, tol: f64) {
    assert_eq!((a.k(), a.c()), (b.k(), b.c()));
    for k in 0..a.k() {
        assert!((a.tau()[k] - b.tau()[k]).abs() <= tol, "tau {k}");
        for (x, y) in a.alpha()[k].iter().zip(&b.alpha()[k]) {
            assert!(
                (x - y).abs() <= tol * y.abs().max(1.0),
                "alpha {k}: {x} vs {y}"
            );
        }
        for (n, p) in a.pi()[k].iter() {
            assert!((p - b.pi()[k].prob(n)).abs() <= tol, "pi {k} at {n}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn em_round_is_permutation_equivariant(seed in 0u64..1000, perm_idx in 0usize..6) {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let perm = perms[perm_idx];
        let pop = population("table1:medium-3", 150, seed);
        let cfg = InferenceConfig::new(3, 1);
        let start = init_params(&pop, &cfg, RngHandle::new(seed + 1)).unwrap();
        let plain = em_round(&pop, &start, &cfg, RngHandle::new(seed + 2)).unwrap();
        let shuffled = em_round(&pop, &start.permuted(&perm).unwrap(), &cfg, RngHandle::new(seed + 2)).unwrap();
        assert_params_close(&shuffled, &plain.permuted(&perm).unwrap(), 1e-12);
    }

    #[test]
    fn full_cohort_round_equals_batch(seed in 0u64..1000) {
        let pop = population("table1:high-2", 120, seed);
        let cfg = InferenceConfig::new(2, 1);
        let start = init_params(&pop, &cfg, RngHandle::new(seed + 7)).unwrap();
        let a = em_round(&pop, &start, &cfg, RngHandle::new(seed + 8)).unwrap();
        let b = full_batch_update(pop.records(), &start, &cfg).unwrap();
        assert_params_close(&a, &b, 1e-10);
    }

    #[test]
    fn updated_params_stay_well_formed(seed in 0u64..1000, k in 1usize..4) {
        let pop = population("table1:low-2", 80, seed);
        let cfg = InferenceConfig::new(k, 1).with_cohorts(None, Some(40));
        let start = init_params(&pop, &cfg, RngHandle::new(seed)).unwrap();
        let next = em_round(&pop, &start, &cfg, RngHandle::new(seed + 1)).unwrap();
        prop_assert!((next.tau().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..next.k() {
            prop_assert!(next.alpha()[k].iter().all(|&a| a.is_finite() && a >= cfg.alpha_floor));
            prop_assert!((next.pi()[k].total() - 1.0).abs() < 1e-9);
        }
    }
}
