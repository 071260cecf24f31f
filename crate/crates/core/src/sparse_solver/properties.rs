use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use crate::sparse_solver::{irls_solve, l1_oracle, l21_norm, min_l2_solution, IrlsConfig, WeightMode};

fn instance(seed: u64, p: usize, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = DMatrix::from_fn(p, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    (c, b)
}

fn blockwise() -> IrlsConfig {
    IrlsConfig {
        weight_mode: WeightMode::Blockwise,
        block_size: 3,
        ..IrlsConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn block_permutation_permutes_the_solution(seed in any::<u64>(), blocks in 3usize..12) {
        let (c, b) = instance(seed, 4, 3 * blocks);
        let mut order: Vec<usize> = (0..blocks).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let permuted = DMatrix::from_fn(4, 3 * blocks, |i, j| c[(i, 3 * order[j / 3] + j % 3)]);
        let beta = DVector::zeros(4);
        let r = irls_solve(&c, &beta, &b, &blockwise()).unwrap();
        let rp = irls_solve(&permuted, &beta, &b, &blockwise()).unwrap();
        for (k, &src) in order.iter().enumerate() {
            for e in 0..3 {
                let (x, y) = (rp.u[3 * k + e], r.u[3 * src + e]);
                prop_assert!((x - y).abs() <= 1e-7 * (1.0 + r.u.amax()), "block {k}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn every_solution_is_feasible(seed in any::<u64>(), p in 1usize..6, extra in 1usize..20, offset in -2.0f64..2.0) {
        let (c, z) = instance(seed, p, p + extra);
        let beta = DVector::from_element(p, offset);
        let cfg = IrlsConfig { block_size: 1, ..IrlsConfig::default() };
        let r = irls_solve(&c, &beta, &z, &cfg).unwrap();
        let rhs = &z - &beta;
        prop_assert!(r.constraint_residual <= 1e-6 * rhs.norm().max(1e-300));
        prop_assert!(((&c * &r.u) - &rhs).norm() <= 1e-6 * rhs.norm().max(1e-300));
    }

    #[test]
    fn certificate_is_sound(seed in any::<u64>(), p in 1usize..4, extra in 1usize..7) {
        let (c, b) = instance(seed, p, p + extra);
        let cfg = IrlsConfig { block_size: 1, j_max: 3, ..IrlsConfig::default() };
        let r = irls_solve(&c, &DVector::zeros(p), &b, &cfg).unwrap();
        let best = l1_oracle(&c, &b).unwrap().l1;
        let gap = r.duality_gap.unwrap();
        prop_assert!(r.cost_l1 - best <= gap + 1e-9 * best, "true gap {} > certified {gap}", r.cost_l1 - best);
    }

    #[test]
    fn blockwise_never_loses_to_min_l2(seed in any::<u64>()) {
        let (c, b) = instance(seed, 6, 30);
        let r = irls_solve(&c, &DVector::zeros(6), &b, &blockwise()).unwrap();
        let l2 = min_l2_solution(&c, &b).unwrap();
        prop_assert!(r.cost_l21 <= l21_norm(l2.as_slice(), 3) * (1.0 + 1e-12));
    }
}

#[test]
fn two_column_example_reaches_the_cheaper_vertex() {
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    let b = DVector::from_element(1, 2.0);
    let oracle = l1_oracle(&c, &b).unwrap();
    assert_eq!(oracle.l1, 1.0);
    let cfg = IrlsConfig {
        block_size: 1,
        ..IrlsConfig::default()
    };
    let r = irls_solve(&c, &DVector::zeros(1), &b, &cfg).unwrap();
    assert!(r.converged);
    assert!((r.cost_l1 - 1.0).abs() < 1e-5);
}

#[test]
fn satisfied_constraint_returns_zero_in_one_pass() {
    let (c, _) = instance(9, 6, 60);
    let beta = DVector::from_fn(6, |i, _| i as f64 - 2.5);
    let r = irls_solve(&c, &beta, &beta, &blockwise()).unwrap();
    assert_eq!(r.iterations, 1);
    assert!(r.converged);
    assert!(r.u.iter().all(|v| *v == 0.0));
}
