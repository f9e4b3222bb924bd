//! A single Kanerva Machine: a matrix-normal memory `M ~ N(R, V ⊗ I_c)` read
//! through `z | M ~ N(M w, σ² I)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{solve_regularized_ls, Matrix, SymMatrix, Vector};

pub const DEFAULT_PSI: f64 = 1.0;
pub const DEFAULT_SIGMA: f64 = 1.0;
/// Standard deviation of the address noise when addresses are sampled.
pub const DEFAULT_ADDRESS_STD: f64 = 0.3;

/// Predictive variances below this are treated as a collapsed update and skipped.
const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    mean: Matrix,
    cov: SymMatrix,
    sigma: f64,
}

impl MachineState {
    pub fn new(mean: Matrix, cov: SymMatrix, sigma: f64) -> Result<Self> {
        check_len("machine covariance", mean.ncols(), cov.dim())?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { mean, cov, sigma })
    }

    /// Mean matrix `R` (`c × m_i`).
    pub fn mean(&self) -> &Matrix {
        &self.mean
    }

    /// Column covariance `V` (`m_i × m_i`).
    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn code_size(&self) -> usize {
        self.mean.nrows()
    }

    pub fn columns(&self) -> usize {
        self.mean.ncols()
    }

    /// `wᵀ V w + noise_var`.
    pub fn predictive_variance_with(&self, w: &Vector, noise_var: f64) -> f64 {
        self.cov.quad_form(w) + noise_var
    }

    /// Rank-one Kalman step shared by the single, product and mixture writes:
    /// `R ← R + β Δ (V w)ᵀ`, `V ← V − β (V w)(V w)ᵀ`, `β = 1 / (wᵀVw + noise_var)`.
    pub(crate) fn kalman_step(&self, delta: &Vector, w: &Vector, noise_var: f64) -> MachineState {
        let vw = self.cov.as_matrix() * w;
        let denom = w.dot(&vw) + noise_var;
        if !(denom >= DEGENERATE_VARIANCE) {
            log::warn!("degenerate memory update skipped (predictive variance {denom:e})");
            return self.clone();
        }
        let beta = 1.0 / denom;
        let mut mean = self.mean.clone();
        mean.ger(beta, delta, &vw, 1.0);
        // Downdating with u = √β·Vw and unit scale makes every entry
        // −u_i·u_j, which is symmetric bit for bit.
        let u = &vw * beta.sqrt();
        let mut cov = self.cov.as_matrix().clone();
        cov.ger(-1.0, &u, &u, 1.0);
        MachineState { mean, cov: SymMatrix::from_symmetric(cov), sigma: self.sigma }
    }

    /// Covariance-only half of [`Self::kalman_step`], for updates whose mean
    /// correction is computed separately.
    pub(crate) fn with_mean(&self, mean: Matrix) -> MachineState {
        MachineState { mean, cov: self.cov.clone(), sigma: self.sigma }
    }
}

/// Draws `R` with i.i.d. standard normal entries and sets `V = ψ I`.
pub fn init_prior<R: Rng + ?Sized>(
    code_size: usize,
    columns: usize,
    psi: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<MachineState> {
    if code_size == 0 || columns == 0 {
        return Err(Error::Config("code size and column count must be positive".into()));
    }
    if !(psi > 0.0) {
        return Err(Error::Config(format!("psi must be positive, got {psi}")));
    }
    let mean = Matrix::from_fn(code_size, columns, |_, _| rng.sample(StandardNormal));
    MachineState::new(mean, SymMatrix::scaled_identity(columns, psi), sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AddressSource {
    Mean,
    Sampled,
}

/// How addresses are produced from the least-squares solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum Addressing {
    #[default]
    Mean,
    Sampled {
        std: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AddressWeights {
    pub w: Vector,
    pub source: AddressSource,
    pub sample_std: f64,
}

impl AddressWeights {
    pub fn from_mean(w: Vector) -> Self {
        Self { w, source: AddressSource::Mean, sample_std: 0.0 }
    }
}

/// Least-squares address of `z` against the memory mean, optionally jittered
/// with i.i.d. Gaussian noise.
pub fn solve_address<R: Rng + ?Sized>(
    state: &MachineState,
    z: &Vector,
    lambda: f64,
    addressing: Addressing,
    rng: &mut R,
) -> Result<AddressWeights> {
    check_len("address query", state.code_size(), z.len())?;
    let mut w = solve_regularized_ls(&state.mean, z, lambda)?;
    match addressing {
        Addressing::Mean => Ok(AddressWeights::from_mean(w)),
        Addressing::Sampled { std } => {
            if !(std >= 0.0) {
                return Err(Error::Config(format!("address std must be >= 0, got {std}")));
            }
            for x in w.iter_mut() {
                let eps: f64 = rng.sample(StandardNormal);
                *x += std * eps;
            }
            Ok(AddressWeights { w, source: AddressSource::Sampled, sample_std: std })
        }
    }
}

/// Predictive mean `R w` and isotropic variance `wᵀVw + σ²`.
pub fn read_single(state: &MachineState, address: &AddressWeights) -> Result<(Vector, f64)> {
    check_len("address", state.columns(), address.w.len())?;
    let mean = &state.mean * &address.w;
    let var = state.predictive_variance_with(&address.w, state.sigma * state.sigma);
    Ok((mean, var))
}

/// Bayesian posterior of the memory after observing `z` at `address`.
pub fn write_single(state: &MachineState, z: &Vector, address: &AddressWeights) -> Result<MachineState> {
    check_len("write observation", state.code_size(), z.len())?;
    check_len("address", state.columns(), address.w.len())?;
    let delta = z - &state.mean * &address.w;
    Ok(state.kalman_step(&delta, &address.w, state.sigma * state.sigma))
}
