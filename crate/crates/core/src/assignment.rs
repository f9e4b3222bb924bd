//! Machine-weight policies and the superposition history buffer.
//!
//! No learned assignment network is provided. The policies here produce the
//! exponents `r` from fixed rules, and the history buffer keeps the running
//! mean of `[z, γ]` so a policy can condition on episode history.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{solve_regularized_ls, Vector};
use crate::product::{compute_gamma, MachineWeights, ProductState};

pub const DEFAULT_TAU: f64 = 1.0;

/// Tolerance on `Σ γ = 1` for externally supplied simplex weights.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Running superposition `Ω_t = (1/t)[z_t, γ_t] + ((t−1)/t) Ω_{t−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryBuffer {
    omega: Vector,
    steps: usize,
}

impl HistoryBuffer {
    pub fn new(dim: usize) -> Self {
        Self { omega: Vector::zeros(dim), steps: 0 }
    }

    /// Buffer sized for `[z, γ]` of the given memory (`c + k`).
    pub fn for_state(state: &ProductState) -> Self {
        Self::new(state.code_size() + state.k())
    }

    pub fn omega(&self) -> &Vector {
        &self.omega
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

pub fn history_update(history: &HistoryBuffer, z: &Vector, gamma: &[f64]) -> Result<HistoryBuffer> {
    check_len("history embedding", history.omega.len(), z.len() + gamma.len())?;
    let t = history.steps + 1;
    let tf = t as f64;
    let embed = z.iter().chain(gamma.iter());
    let omega = Vector::from_iterator(
        history.omega.len(),
        history.omega.iter().zip(embed).map(|(&old, &x)| x / tf + old * ((tf - 1.0) / tf)),
    );
    Ok(HistoryBuffer { omega, steps: t })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub enum AssignmentPolicy {
    /// `r = 1` for every machine.
    #[default]
    Uniform,
    /// A fixed exponent vector.
    Fixed(Vec<f64>),
    /// `r = softmax(−‖z − R_i w_i‖² / τ)` over machines.
    ResidualSoftmax { tau: f64 },
    /// A fixed simplex vector used directly as `γ`.
    Categorical(Vec<f64>),
}

fn check_simplex(gamma: &[f64]) -> Result<()> {
    let sum: f64 = gamma.iter().sum();
    if gamma.iter().any(|g| !(*g >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidSimplex(sum));
    }
    Ok(())
}

/// Machine weights for observation (or query) `z`.
pub fn policy_evaluate(
    policy: &AssignmentPolicy,
    state: &ProductState,
    z: &Vector,
    history: &HistoryBuffer,
) -> Result<MachineWeights> {
    check_len("policy input", state.code_size(), z.len())?;
    check_len("history buffer", state.code_size() + state.k(), history.omega.len())?;
    let sigmas = state.sigmas();
    match policy {
        AssignmentPolicy::Uniform => MachineWeights::uniform(&sigmas),
        AssignmentPolicy::Fixed(r) => compute_gamma(r, &sigmas),
        AssignmentPolicy::ResidualSoftmax { tau } => {
            if !(*tau > 0.0) {
                return Err(Error::Config(format!("tau must be positive, got {tau}")));
            }
            let lambda = state.config().lambda;
            let residuals = state
                .machines()
                .iter()
                .map(|m| {
                    let w = solve_regularized_ls(m.mean(), z, lambda)?;
                    Ok((z - m.mean() * w).norm_squared())
                })
                .collect::<Result<Vec<f64>>>()?;
            compute_gamma(&softmax_neg(&residuals, *tau), &sigmas)
        }
        AssignmentPolicy::Categorical(gamma) => {
            check_len("categorical weights", state.k(), gamma.len())?;
            check_simplex(gamma)?;
            let r: Vec<f64> = gamma.iter().zip(&sigmas).map(|(g, s)| g * s * s).collect();
            let eta =
                r.iter().zip(&sigmas).map(|(&ri, &s)| if ri > 0.0 { s / ri.sqrt() } else { f64::INFINITY }).collect();
            Ok(MachineWeights { r, eta, gamma: gamma.clone() })
        }
    }
}

/// `softmax(−x / τ)`, shifted by the minimum for stability.
fn softmax_neg(x: &[f64], tau: f64) -> Vec<f64> {
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = x.iter().map(|&v| (-(v - min) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Prior over machine exponents used when generating without a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MachinePrior {
    Uniform,
    Fixed(Vec<f64>),
    /// `ln r_i ~ N(mean, std²)` independently.
    LogNormal {
        mean: f64,
        std: f64,
    },
}

impl MachinePrior {
    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            MachinePrior::Uniform => Ok(vec![1.0; k]),
            MachinePrior::Fixed(r) => {
                check_len("prior exponents", k, r.len())?;
                Ok(r.clone())
            }
            MachinePrior::LogNormal { mean, std } => Ok((0..k)
                .map(|_| {
                    let e: f64 = rng.sample(StandardNormal);
                    (mean + std * e).exp()
                })
                .collect()),
        }
    }
}
