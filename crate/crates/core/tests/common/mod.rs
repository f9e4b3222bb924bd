#![allow(dead_code)]

use product_kanerva::machine::{AddressWeights, MachineState};
use product_kanerva::{Matrix, ProductConfig, ProductState, SymMatrix, Vector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector<R: Rng>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `A Aᵀ / m + 0.2 I`, comfortably conditioned.
pub fn random_spd<R: Rng>(m: usize, rng: &mut R) -> SymMatrix {
    let a = normal_matrix(m, m, rng);
    SymMatrix::new(&a * a.transpose() / m as f64 + Matrix::identity(m, m) * 0.2).unwrap()
}

/// Product state with random means, random SPD covariances and random noise.
pub fn random_state<R: Rng>(c: usize, k: usize, mi: usize, rng: &mut R) -> ProductState {
    let cfg = ProductConfig::new(c, k * mi, k).unwrap();
    let machines = (0..k)
        .map(|_| {
            let sigma = rng.random_range(0.3..1.5);
            MachineState::new(normal_matrix(c, mi, rng), random_spd(mi, rng), sigma).unwrap()
        })
        .collect();
    ProductState::new(machines, cfg).unwrap()
}

pub fn random_addresses<R: Rng>(state: &ProductState, rng: &mut R) -> Vec<AddressWeights> {
    state.machines().iter().map(|m| AddressWeights::from_mean(normal_vector(m.columns(), rng))).collect()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax()
}
