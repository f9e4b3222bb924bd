//! The product memory: `k` Kanerva Machines combined through a generalized
//! product of their joint distributions with `z`.
//!
//! Reading returns the precision-weighted readout `μ_z = Σ γ_i R_i w_i`.
//! Writing computes a single prediction error `Δ = z − μ_z` from the
//! pre-update state and applies it to every machine with its own gain
//! `β_i = 1 / (w_iᵀ V_i w_i + σ_i² / r_i)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assignment::{history_update, policy_evaluate, AssignmentPolicy, HistoryBuffer, MachinePrior};
use crate::error::{check_len, Error, Result};
use crate::machine::{init_prior, solve_address, AddressWeights, Addressing, MachineState};
use crate::numerics::{Matrix, Vector, DEFAULT_LAMBDA};

/// Settling iterations used when generating from the memory.
pub const DEFAULT_SETTLE_ITERS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductConfig {
    pub code_size: usize,
    pub columns_per_machine: usize,
    pub machines: usize,
    pub lambda: f64,
    pub settle_iters: usize,
    /// Number of coupled refinement passes in a write. One pass is the
    /// fully parallel update; more passes re-evaluate each machine's residual
    /// against the other machines' refreshed readouts.
    pub coupling_iters: usize,
    pub addressing: Addressing,
}

impl ProductConfig {
    /// Splits `total_columns` evenly across `machines`.
    pub fn new(code_size: usize, total_columns: usize, machines: usize) -> Result<Self> {
        if machines == 0 || code_size == 0 {
            return Err(Error::Config("need at least one machine and a positive code size".into()));
        }
        if total_columns == 0 || !total_columns.is_multiple_of(machines) {
            return Err(Error::Config(format!("{machines} machines do not divide {total_columns} columns")));
        }
        Ok(Self {
            code_size,
            columns_per_machine: total_columns / machines,
            machines,
            lambda: DEFAULT_LAMBDA,
            settle_iters: DEFAULT_SETTLE_ITERS,
            coupling_iters: 1,
            addressing: Addressing::Mean,
        })
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_coupling_iters(mut self, iters: usize) -> Self {
        self.coupling_iters = iters;
        self
    }

    pub fn with_addressing(mut self, addressing: Addressing) -> Self {
        self.addressing = addressing;
        self
    }

    pub fn total_columns(&self) -> usize {
        self.columns_per_machine * self.machines
    }

    fn validate(&self) -> Result<()> {
        if self.machines == 0 || self.code_size == 0 || self.columns_per_machine == 0 {
            return Err(Error::Config("machine count, code size and columns must be positive".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.coupling_iters == 0 {
            return Err(Error::Config("coupling_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductState {
    machines: Vec<MachineState>,
    config: ProductConfig,
}

impl ProductState {
    pub fn new(machines: Vec<MachineState>, config: ProductConfig) -> Result<Self> {
        config.validate()?;
        check_len("machine count", config.machines, machines.len())?;
        for m in &machines {
            check_len("machine code size", config.code_size, m.code_size())?;
            check_len("machine columns", config.columns_per_machine, m.columns())?;
        }
        Ok(Self { machines, config })
    }

    /// Independent priors for every machine, drawn in machine order from `rng`.
    pub fn prior<R: Rng + ?Sized>(config: ProductConfig, psi: f64, sigma: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let machines = (0..config.machines)
            .map(|_| init_prior(config.code_size, config.columns_per_machine, psi, sigma, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(machines, config)
    }

    pub fn machines(&self) -> &[MachineState] {
        &self.machines
    }

    pub fn config(&self) -> &ProductConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.machines.len()
    }

    pub fn code_size(&self) -> usize {
        self.config.code_size
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.machines.iter().map(MachineState::sigma).collect()
    }

    /// Every machine with its mean matrix scaled by `s`.
    pub fn scaled_means(&self, s: f64) -> ProductState {
        let machines = self.machines.iter().map(|m| m.with_mean(m.mean() * s)).collect();
        ProductState { machines, config: self.config.clone() }
    }
}

/// Per-step machine weights: product exponents `r`, effective observation
/// noises `η = σ/√r`, and normalized precisions `γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineWeights {
    pub r: Vec<f64>,
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl MachineWeights {
    pub fn k(&self) -> usize {
        self.gamma.len()
    }

    /// Exponent vector with a single active machine.
    pub fn one_hot(index: usize, sigmas: &[f64]) -> Result<Self> {
        let mut r = vec![0.0; sigmas.len()];
        if index >= r.len() {
            return Err(Error::Config(format!("machine index {index} out of range")));
        }
        r[index] = 1.0;
        compute_gamma(&r, sigmas)
    }

    pub fn uniform(sigmas: &[f64]) -> Result<Self> {
        compute_gamma(&vec![1.0; sigmas.len()], sigmas)
    }

    /// Effective noise variance `η_i² = σ_i² / r_i`, or `None` for inactive machines.
    pub fn noise_var(&self, i: usize, sigma: f64) -> Option<f64> {
        let r = self.r[i];
        (r > 0.0).then(|| sigma * sigma / r)
    }
}

/// `γ_i = (r_i/σ_i²) / Σ_j (r_j/σ_j²)` and `η_i = σ_i/√r_i`.
pub fn compute_gamma(r: &[f64], sigmas: &[f64]) -> Result<MachineWeights> {
    check_len("sigmas", r.len(), sigmas.len())?;
    if let Some(bad) = r.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::Config(format!("machine exponents must be finite and >= 0, got {bad}")));
    }
    if let Some(bad) = sigmas.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::NonPositiveVariance(*bad));
    }
    let precisions: Vec<f64> = r.iter().zip(sigmas).map(|(&ri, &s)| ri / (s * s)).collect();
    let total: f64 = precisions.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroWeights);
    }
    let gamma = precisions.iter().map(|p| p / total).collect();
    let eta = r.iter().zip(sigmas).map(|(&ri, &s)| if ri > 0.0 { s / ri.sqrt() } else { f64::INFINITY }).collect();
    Ok(MachineWeights { r: r.to_vec(), eta, gamma })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadResult {
    pub mu_z: Vector,
    pub per_machine: Vec<Vector>,
    pub weights: MachineWeights,
    pub addresses: Vec<AddressWeights>,
}

/// `Σ γ_i v_i`, skipping machines with zero weight.
pub fn combine_readouts(per_machine: &[Vector], gamma: &[f64]) -> Vector {
    let c = per_machine.first().map_or(0, Vector::len);
    let mut mu = Vector::zeros(c);
    for (v, &g) in per_machine.iter().zip(gamma) {
        if g != 0.0 {
            mu.axpy(g, v, 1.0);
        }
    }
    mu
}

fn check_weights(state: &ProductState, weights: &MachineWeights) -> Result<()> {
    check_len("machine weights", state.k(), weights.k())?;
    check_len("machine exponents", state.k(), weights.r.len())?;
    if weights.r.iter().all(|&r| r == 0.0) {
        return Err(Error::AllZeroWeights);
    }
    Ok(())
}

fn check_addresses(state: &ProductState, addresses: &[AddressWeights]) -> Result<()> {
    check_len("address count", state.k(), addresses.len())?;
    for a in addresses {
        check_len("address", state.config.columns_per_machine, a.w.len())?;
    }
    Ok(())
}

/// Least-squares addresses of `z` against every machine's mean.
pub fn solve_addresses<R: Rng + ?Sized>(state: &ProductState, z: &Vector, rng: &mut R) -> Result<Vec<AddressWeights>> {
    check_len("query", state.code_size(), z.len())?;
    let lambda = state.config.lambda;
    match state.config.addressing {
        Addressing::Mean => mean_addresses(state, z),
        sampled => state.machines.iter().map(|m| solve_address(m, z, lambda, sampled, rng)).collect(),
    }
}

fn mean_addresses(state: &ProductState, z: &Vector) -> Result<Vec<AddressWeights>> {
    let lambda = state.config.lambda;
    let solve =
        |m: &MachineState| crate::numerics::solve_regularized_ls(m.mean(), z, lambda).map(AddressWeights::from_mean);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if state.k() > 1 {
            return state.machines.par_iter().map(solve).collect();
        }
    }
    state.machines.iter().map(solve).collect()
}

fn per_machine_readouts(state: &ProductState, addresses: &[AddressWeights]) -> Vec<Vector> {
    state.machines.iter().zip(addresses).map(|(m, a)| m.mean() * &a.w).collect()
}

/// Weighted readout for caller-supplied addresses.
pub fn read_with_addresses(
    state: &ProductState,
    addresses: Vec<AddressWeights>,
    weights: &MachineWeights,
) -> Result<ReadResult> {
    check_weights(state, weights)?;
    check_addresses(state, &addresses)?;
    let per_machine = per_machine_readouts(state, &addresses);
    let mu_z = combine_readouts(&per_machine, &weights.gamma);
    Ok(ReadResult { mu_z, per_machine, weights: weights.clone(), addresses })
}

/// Queried reconstruction: least-squares mean addresses per machine, then the
/// precision-weighted readout.
pub fn read_product(state: &ProductState, z_query: &Vector, weights: &MachineWeights) -> Result<ReadResult> {
    check_len("query", state.code_size(), z_query.len())?;
    check_weights(state, weights)?;
    let addresses = mean_addresses(state, z_query)?;
    read_with_addresses(state, addresses, weights)
}

/// One coupled write. Returns the new state and `‖Δ‖`.
fn write_product_inner(
    state: &ProductState,
    z: &Vector,
    weights: &MachineWeights,
    addresses: &[AddressWeights],
) -> Result<(ProductState, f64)> {
    check_len("write observation", state.code_size(), z.len())?;
    check_weights(state, weights)?;
    check_addresses(state, addresses)?;

    let readouts = per_machine_readouts(state, addresses);
    let mu_z = combine_readouts(&readouts, &weights.gamma);
    let delta = z - &mu_z;
    let delta_norm = delta.norm();

    let iters = state.config.coupling_iters;
    let machines = if iters <= 1 {
        let update = |i: usize| -> MachineState {
            let m = &state.machines[i];
            match weights.noise_var(i, m.sigma()) {
                Some(noise) => m.kalman_step(&delta, &addresses[i].w, noise),
                None => m.clone(),
            }
        };
        map_machines(state.k(), update)
    } else {
        coupled_refinement(state, z, weights, addresses, &readouts, iters)
    };

    Ok((ProductState { machines, config: state.config.clone() }, delta_norm))
}

fn map_machines<F>(k: usize, f: F) -> Vec<MachineState>
where
    F: Fn(usize) -> MachineState + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if k > 1 {
            return (0..k).into_par_iter().map(f).collect();
        }
    }
    (0..k).map(f).collect()
}

/// Jacobi-style refinement: on pass `n`, machine `i` sees the residual
/// `z − Σ_{j≠i} γ_j R_j⁽ⁿ⁻¹⁾ w_j − γ_i R_i⁽⁰⁾ w_i`. Covariances do not depend
/// on the residual and are updated once.
fn coupled_refinement(
    state: &ProductState,
    z: &Vector,
    weights: &MachineWeights,
    addresses: &[AddressWeights],
    prior_readouts: &[Vector],
    iters: usize,
) -> Vec<MachineState> {
    let k = state.k();
    // Gain and projected gain per machine: β_i, V_i w_i, β_i w_iᵀ V_i w_i.
    let gains: Vec<Option<(f64, Vector, f64)>> = (0..k)
        .map(|i| {
            let m = &state.machines[i];
            weights.noise_var(i, m.sigma()).and_then(|noise| {
                let w = &addresses[i].w;
                let vw = m.cov().as_matrix() * w;
                let q = w.dot(&vw);
                let denom = q + noise;
                (denom >= 1e-12).then(|| (1.0 / denom, vw, q / denom))
            })
        })
        .collect();

    let mut readouts: Vec<Vector> = prior_readouts.to_vec();
    let mut deltas: Vec<Vector> = vec![Vector::zeros(state.code_size()); k];
    for _ in 0..iters {
        let mixed = combine_readouts(&readouts, &weights.gamma);
        for i in 0..k {
            // Swap this machine's refreshed readout back to its prior value.
            let g = weights.gamma[i];
            deltas[i] = z - &mixed + (&readouts[i] - &prior_readouts[i]) * g;
        }
        for i in 0..k {
            if let Some((_, _, proj)) = &gains[i] {
                readouts[i] = &prior_readouts[i] + &deltas[i] * *proj;
            }
        }
    }

    (0..k)
        .map(|i| {
            let m = &state.machines[i];
            match &gains[i] {
                Some(_) => {
                    m.kalman_step(&deltas[i], &addresses[i].w, weights.noise_var(i, m.sigma()).unwrap_or(f64::INFINITY))
                }
                None => m.clone(),
            }
        })
        .collect()
}

/// Coupled Bayesian write of `z` into every machine.
pub fn write_product(
    state: &ProductState,
    z: &Vector,
    weights: &MachineWeights,
    addresses: &[AddressWeights],
) -> Result<ProductState> {
    write_product_inner(state, z, weights, addresses).map(|(s, _)| s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub weights: MachineWeights,
    pub delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub steps: Vec<StepRecord>,
    pub history: HistoryBuffer,
}

/// Writes an episode item by item: policy → addresses → coupled write →
/// history update.
pub fn write_episode<R: Rng + ?Sized>(
    state: &ProductState,
    episode: &[Vector],
    policy: &AssignmentPolicy,
    rng: &mut R,
) -> Result<(ProductState, EpisodeLog)> {
    let mut current = state.clone();
    let mut history = HistoryBuffer::for_state(state);
    let mut steps = Vec::with_capacity(episode.len());
    for (t, z) in episode.iter().enumerate() {
        let weights = policy_evaluate(policy, &current, z, &history)?;
        let addresses = solve_addresses(&current, z, rng)?;
        let (next, delta_norm) = write_product_inner(&current, z, &weights, &addresses)?;
        history = history_update(&history, z, &weights.gamma)?;
        steps.push(StepRecord { t: t + 1, weights, delta_norm });
        current = next;
    }
    Ok((current, EpisodeLog { steps, history }))
}

/// Reads every query against a fixed state.
pub fn query_episode(
    state: &ProductState,
    queries: &[Vector],
    policy: &AssignmentPolicy,
    history: &HistoryBuffer,
) -> Result<Vec<ReadResult>> {
    queries
        .iter()
        .map(|q| {
            let weights = policy_evaluate(policy, state, q, history)?;
            read_product(state, q, &weights)
        })
        .collect()
}

/// Iterates `z ← μ_z(z)` for `iters` rounds.
pub fn attractor_settle(
    state: &ProductState,
    z0: &Vector,
    iters: usize,
    policy: &AssignmentPolicy,
    history: &HistoryBuffer,
) -> Result<Vector> {
    check_len("settle start", state.code_size(), z0.len())?;
    let mut z = z0.clone();
    for _ in 0..iters {
        let weights = policy_evaluate(policy, state, &z, history)?;
        z = read_product(state, &z, &weights)?.mu_z;
    }
    Ok(z)
}

/// Generates a latent: standard-normal addresses, machine exponents from
/// `prior`, one weighted read, then `settle_iters` rounds of settling.
pub fn sample_latent<R: Rng + ?Sized>(
    state: &ProductState,
    prior: &MachinePrior,
    policy: &AssignmentPolicy,
    history: &HistoryBuffer,
    rng: &mut R,
    settle_iters: usize,
) -> Result<Vector> {
    let addresses = state
        .machines
        .iter()
        .map(|m| AddressWeights {
            w: Vector::from_fn(m.columns(), |_, _| rng.sample(StandardNormal)),
            source: crate::machine::AddressSource::Sampled,
            sample_std: 1.0,
        })
        .collect();
    let r = prior.sample(state.k(), rng)?;
    let weights = compute_gamma(&r, &state.sigmas())?;
    let start = read_with_addresses(state, addresses, &weights)?.mu_z;
    attractor_settle(state, &start, settle_iters, policy, history)
}

/// Column-stacked mean of all machines, `c × m`.
pub fn stacked_means(state: &ProductState) -> Matrix {
    let c = state.code_size();
    let total = state.config.total_columns();
    let mut out = Matrix::zeros(c, total);
    let mut offset = 0;
    for m in &state.machines {
        out.columns_mut(offset, m.columns()).copy_from(m.mean());
        offset += m.columns();
    }
    out
}
