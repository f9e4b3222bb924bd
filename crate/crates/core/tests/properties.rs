mod common;

use common::*;
use product_kanerva::episodes::{gen_binding_episode, gen_random_episode};
use product_kanerva::machine::{write_single, AddressWeights, MachineState};
use product_kanerva::mixture::{read_mixture, write_mixture, OneHotAssignment};
use product_kanerva::numerics::{cholesky_spd, kl_diag_gaussian, kl_matrix_normal, solve_regularized_ls};
use product_kanerva::oracle::{build_joint, cross_machine_coupling, oracle_posterior};
use product_kanerva::product::{
    compute_gamma, read_product, read_with_addresses, solve_addresses, write_product, MachineWeights,
};
use product_kanerva::{SymMatrix, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn exponents(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..k).map(|_| 1.0 - rng.random::<f64>()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cholesky_reconstructs(n in 1usize..12, seed in any::<u64>()) {
        let a = random_spd(n, &mut rng(seed));
        let l = cholesky_spd(&a).unwrap();
        let err = (l.reconstruct() - a.as_matrix()).norm();
        prop_assert!(err <= 1e-10 * a.as_matrix().norm());
    }

    #[test]
    fn least_squares_is_a_minimum(c in 1usize..8, m in 1usize..8, lambda in 0.01..2.0f64, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mat = normal_matrix(c, m, &mut r);
        let z = normal_vector(c, &mut r);
        let w = solve_regularized_ls(&mat, &z, lambda).unwrap();
        let objective = |w: &Vector| (&mat * w - &z).norm_squared() + lambda * w.norm_squared();
        let best = objective(&w);
        for _ in 0..20 {
            let dir = normal_vector(m, &mut r).normalize() * 1e-3;
            prop_assert!(objective(&(&w + dir)) >= best - 1e-12);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equality(n in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mu1: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let mu2: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let v1: Vec<f64> = (0..n).map(|_| r.random_range(0.1..3.0)).collect();
        let v2: Vec<f64> = (0..n).map(|_| r.random_range(0.1..3.0)).collect();
        prop_assert!(kl_diag_gaussian(&mu1, &v1, &mu2, &v2).unwrap() >= 0.0);
        prop_assert!(kl_diag_gaussian(&mu1, &v1, &mu1, &v1).unwrap().abs() <= 1e-12);

        let (r1, r2) = (normal_matrix(2, n, &mut r), normal_matrix(2, n, &mut r));
        let (a, b) = (random_spd(n, &mut r), random_spd(n, &mut r));
        prop_assert!(kl_matrix_normal(&r1, &a, &r2, &b).unwrap() >= 0.0);
        prop_assert!(kl_matrix_normal(&r1, &a, &r1, &a).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn write_keeps_cov_symmetric_psd_and_contracts(c in 1usize..5, m in 1usize..7, seed in any::<u64>()) {
        let mut r = rng(seed);
        let state = MachineState::new(normal_matrix(c, m, &mut r), random_spd(m, &mut r), r.random_range(0.2..2.0)).unwrap();
        let address = AddressWeights::from_mean(normal_vector(m, &mut r));
        let post = write_single(&state, &normal_vector(c, &mut r), &address).unwrap();
        let v = post.cov().as_matrix();
        prop_assert_eq!(v, &v.transpose());
        let eigs = post.cov().eigenvalues();
        prop_assert!(eigs[0] >= -1e-10 * eigs[m - 1].abs());
        let (before, after) = (state.cov().quad_form(&address.w), post.cov().quad_form(&address.w));
        prop_assert!(after < before || before == 0.0);
    }

    #[test]
    fn woodbury_form(m in 1usize..7, seed in any::<u64>()) {
        let mut r = rng(seed);
        let sigma = r.random_range(0.2..2.0);
        let state = MachineState::new(normal_matrix(2, m, &mut r), random_spd(m, &mut r), sigma).unwrap();
        let w = normal_vector(m, &mut r);
        let post = write_single(&state, &normal_vector(2, &mut r), &AddressWeights::from_mean(w.clone())).unwrap();
        let expected = (state.cov().as_matrix().clone().try_inverse().unwrap() + &w * w.transpose() / (sigma * sigma))
            .try_inverse()
            .unwrap();
        prop_assert!(max_abs_diff(post.cov().as_matrix(), &expected) <= 1e-8);
    }

    #[test]
    fn single_machine_writes_commute(c in 1usize..4, m in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let state = MachineState::new(normal_matrix(c, m, &mut r), random_spd(m, &mut r), 0.8).unwrap();
        let (z1, z2) = (normal_vector(c, &mut r), normal_vector(c, &mut r));
        let a1 = AddressWeights::from_mean(normal_vector(m, &mut r));
        let a2 = AddressWeights::from_mean(normal_vector(m, &mut r));
        let ab = write_single(&write_single(&state, &z1, &a1).unwrap(), &z2, &a2).unwrap();
        let ba = write_single(&write_single(&state, &z2, &a2).unwrap(), &z1, &a1).unwrap();
        prop_assert!(max_abs_diff(ab.mean(), ba.mean()) <= 1e-8);
        prop_assert!(max_abs_diff(ab.cov().as_matrix(), ba.cov().as_matrix()) <= 1e-8);
    }

    #[test]
    fn single_machine_product_read_matches(c in 1usize..5, m in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let state = random_state(c, 1, m, &mut r);
        let z = normal_vector(c, &mut r);
        let read = read_product(&state, &z, &MachineWeights::uniform(&state.sigmas()).unwrap()).unwrap();
        let machine = &state.machines()[0];
        let direct = machine.mean() * &read.addresses[0].w;
        prop_assert!((read.mu_z - direct).amax() <= 1e-12);
    }

    #[test]
    fn shared_error_moves_every_machine_along_d(k in 1usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let state = random_state(4, k, 3, &mut r);
        let addresses = random_addresses(&state, &mut r);
        let weights = compute_gamma(&exponents(k, &mut r), &state.sigmas()).unwrap();
        let mu = read_with_addresses(&state, addresses.clone(), &weights).unwrap().mu_z;
        let d = normal_vector(4, &mut r);
        let out = write_product(&state, &(&mu + &d), &weights, &addresses).unwrap();
        let unit = d.normalize();
        for (before, after) in state.machines().iter().zip(out.machines()) {
            let change = after.mean() - before.mean();
            // Every column of the change is a multiple of d.
            let off_axis = &change - &unit * (unit.transpose() * &change);
            prop_assert!(off_axis.amax() <= 1e-10 * (1.0 + change.amax()));
        }
    }

    #[test]
    fn readout_is_linear_in_means(k in 1usize..4, s in -3.0..3.0f64, seed in any::<u64>()) {
        let mut r = rng(seed);
        let state = random_state(3, k, 2, &mut r);
        let addresses = random_addresses(&state, &mut r);
        let weights = compute_gamma(&exponents(k, &mut r), &state.sigmas()).unwrap();
        let base = read_with_addresses(&state, addresses.clone(), &weights).unwrap().mu_z;
        let scaled = read_with_addresses(&state.scaled_means(s), addresses, &weights).unwrap().mu_z;
        prop_assert!((scaled - base * s).amax() <= 1e-12);
    }

    #[test]
    fn mixture_matches_one_hot_product(k in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let state = random_state(3, k, 2, &mut r);
        let z = normal_vector(3, &mut r);
        let index = r.random_range(0..k);
        let addresses = solve_addresses(&state, &z, &mut r).unwrap();
        let hot = OneHotAssignment::new(index, k).unwrap();
        let w = MachineWeights::one_hot(index, &state.sigmas()).unwrap();
        let a = write_mixture(&state, &z, &hot, &addresses).unwrap();
        let b = write_product(&state, &z, &w, &addresses).unwrap();
        for (x, y) in a.machines().iter().zip(b.machines()) {
            prop_assert!(max_abs_diff(x.mean(), y.mean()) <= 1e-12);
            prop_assert!(max_abs_diff(x.cov().as_matrix(), y.cov().as_matrix()) <= 1e-12);
        }
        let read = read_mixture(&state, &z, &hot).unwrap();
        prop_assert!((read - read_product(&state, &z, &w).unwrap().mu_z).amax() <= 1e-12);
    }

    #[test]
    fn product_write_equals_joint_conditioning(c in prop::sample::select(vec![1usize, 3]), k in 1usize..4,
                                              mi in prop::sample::select(vec![2usize, 4]), seed in any::<u64>()) {
        let mut r = rng(seed);
        let state = random_state(c, k, mi, &mut r);
        let addresses = random_addresses(&state, &mut r);
        let exps = exponents(k, &mut r);
        let z = normal_vector(c, &mut r);
        let fast = write_product(&state, &z, &compute_gamma(&exps, &state.sigmas()).unwrap(), &addresses).unwrap();
        let exact = oracle_posterior(&state, &addresses, &exps, &z).unwrap();
        for (f, e) in fast.machines().iter().zip(&exact) {
            prop_assert!(max_abs_diff(f.mean(), &e.mean) <= 1e-8);
            prop_assert!(max_abs_diff(f.cov().as_matrix(), e.cov.as_matrix()) <= 1e-8);
            let shrink = SymMatrix::new(f.cov().as_matrix() - e.cov.as_matrix()).unwrap();
            prop_assert!(shrink.eigenvalues()[0].abs() <= 1e-8);
        }
    }

    #[test]
    fn oracle_posterior_is_loewner_smaller(k in 1usize..4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let state = random_state(2, k, 3, &mut r);
        let addresses = random_addresses(&state, &mut r);
        let posts = oracle_posterior(&state, &addresses, &exponents(k, &mut r), &normal_vector(2, &mut r)).unwrap();
        for (p, m) in posts.iter().zip(state.machines()) {
            let diff = SymMatrix::new(m.cov().as_matrix() - p.cov.as_matrix()).unwrap();
            prop_assert!(diff.eigenvalues()[0] >= -1e-9);
        }
    }

    #[test]
    fn joint_couples_machines_only_through_z(seed in any::<u64>()) {
        let mut r = rng(seed);
        let state = random_state(2, 2, 2, &mut r);
        let addresses = random_addresses(&state, &mut r);
        let joint = build_joint(&state, &addresses, &exponents(2, &mut r)).unwrap();
        let (before, after) = cross_machine_coupling(&joint).unwrap();
        prop_assert!(before > 0.0);
        prop_assert!(after <= 1e-10 * (1.0 + before));
    }

    #[test]
    fn generators_are_pure(t in 0usize..20, c in 1usize..6, seed in any::<u64>()) {
        prop_assert_eq!(gen_random_episode(t, c, seed), gen_random_episode(t, c, seed));
        let channels = 1 + (seed % 3) as usize;
        prop_assert_eq!(
            gen_binding_episode(t, c * channels, channels, seed).unwrap(),
            gen_binding_episode(t, c * channels, channels, seed).unwrap()
        );
    }
}
