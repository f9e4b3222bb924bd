//! Mixture variant: a categorical draw picks one machine per step, which is
//! read and written exactly as a lone Kanerva Machine.

use rand::Rng;

use crate::assignment::SIMPLEX_TOL;
use crate::error::{check_len, Error, Result};
use crate::machine::AddressWeights;
use crate::numerics::{solve_regularized_ls, Vector};
use crate::product::ProductState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotAssignment {
    index: usize,
    k: usize,
}

impl OneHotAssignment {
    pub fn new(index: usize, k: usize) -> Result<Self> {
        if index >= k {
            return Err(Error::Config(format!("machine index {index} out of range for k = {k}")));
        }
        Ok(Self { index, k })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn as_vector(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.k];
        v[self.index] = 1.0;
        v
    }
}

/// Draws machine `i` with probability `γ_i`.
pub fn sample_assignment<R: Rng + ?Sized>(gamma: &[f64], rng: &mut R) -> Result<OneHotAssignment> {
    let sum: f64 = gamma.iter().sum();
    if gamma.is_empty() || gamma.iter().any(|g| !(*g >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidSimplex(sum));
    }
    let u: f64 = rng.random::<f64>() * sum;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &g) in gamma.iter().enumerate() {
        if g > 0.0 {
            last_positive = i;
            acc += g;
            if u < acc {
                return OneHotAssignment::new(i, gamma.len());
            }
        }
    }
    OneHotAssignment::new(last_positive, gamma.len())
}

fn check_assignment(state: &ProductState, assignment: &OneHotAssignment) -> Result<()> {
    check_len("assignment size", state.k(), assignment.k)
}

/// Gated write: the selected machine takes a single-machine update with its
/// own prediction error; every other machine is returned as is.
pub fn write_mixture(
    state: &ProductState,
    z: &Vector,
    assignment: &OneHotAssignment,
    addresses: &[AddressWeights],
) -> Result<ProductState> {
    check_assignment(state, assignment)?;
    check_len("write observation", state.code_size(), z.len())?;
    check_len("address count", state.k(), addresses.len())?;
    let i = assignment.index;
    let chosen = &state.machines()[i];
    let w = &addresses[i].w;
    check_len("address", chosen.columns(), w.len())?;
    let delta = z - chosen.mean() * w;
    let sigma = chosen.sigma();
    let updated = chosen.kalman_step(&delta, w, sigma * sigma);
    let machines =
        state.machines().iter().enumerate().map(|(j, m)| if j == i { updated.clone() } else { m.clone() }).collect();
    ProductState::new(machines, state.config().clone())
}

/// Readout `R_i w_i` of the selected machine.
pub fn read_mixture(state: &ProductState, z_query: &Vector, assignment: &OneHotAssignment) -> Result<Vector> {
    check_assignment(state, assignment)?;
    check_len("query", state.code_size(), z_query.len())?;
    let chosen = &state.machines()[assignment.index];
    let w = solve_regularized_ls(chosen.mean(), z_query, state.config().lambda)?;
    Ok(chosen.mean() * w)
}
