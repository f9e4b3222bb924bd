//! Brute-force reference for one product write.
//!
//! The joint over `x = (z, vec M_1, …, vec M_k)` is assembled in precision
//! form for a single code row (rows are independent and share one precision
//! because of the `⊗ I_c` structure):
//!
//! ```text
//!   Λ_z     = Σ r_i / σ_i²
//!   Λ_{c_i} = −(r_i / σ_i²) w_i
//!   Λ_{M_i} = V_i⁻¹ + (r_i / σ_i²) w_i w_iᵀ
//! ```
//!
//! with mean `(μ_z, R_1[row], …, R_k[row])`, where `μ_z` is the conditional
//! mean of `z` given `M = R` read off the precision blocks. The joint is then
//! inverted to covariance form and conditioned on the observed `z` with the
//! ordinary Schur-complement formulas. The conditioning itself never calls
//! into the product update code; only [`equivalence_sweep`] does, to compare.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::machine::{AddressWeights, MachineState};
use crate::numerics::{cholesky_spd, Matrix, SymMatrix, Vector};
use crate::product::{compute_gamma, write_product, ProductConfig, ProductState};

/// Upper bound on the per-row joint dimension `1 + Σ m_i`.
pub const MAX_JOINT_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub machine: usize,
    pub offset: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct JointGaussian {
    /// One row per code dimension; column 0 is the `z` coordinate.
    pub mean: Matrix,
    pub precision: SymMatrix,
    /// Blocks of the machines present in the joint (those with `r_i > 0`).
    pub blocks: Vec<Block>,
    pub code_rows: usize,
    pub machines: usize,
}

impl JointGaussian {
    pub fn dim(&self) -> usize {
        self.precision.dim()
    }

    pub fn z_mean(&self) -> Vector {
        self.mean.column(0).into_owned()
    }

    /// Dense covariance `Λ⁻¹`.
    pub fn covariance(&self) -> Result<SymMatrix> {
        Ok(cholesky_spd(&self.precision)?.inverse())
    }
}

/// Posterior of one machine: mean matrix and column covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MachinePosterior {
    pub mean: Matrix,
    pub cov: SymMatrix,
}

pub fn build_joint(state: &ProductState, addresses: &[AddressWeights], r: &[f64]) -> Result<JointGaussian> {
    let k = state.k();
    check_len("oracle addresses", k, addresses.len())?;
    check_len("oracle exponents", k, r.len())?;
    if r.iter().all(|&x| x == 0.0) {
        return Err(Error::AllZeroWeights);
    }

    let mut blocks = Vec::new();
    let mut dim = 1;
    for (i, m) in state.machines().iter().enumerate() {
        check_len("oracle address", m.columns(), addresses[i].w.len())?;
        if r[i] > 0.0 {
            blocks.push(Block { machine: i, offset: dim, width: m.columns() });
            dim += m.columns();
        }
    }
    if dim > MAX_JOINT_DIM {
        return Err(Error::Config(format!("oracle joint dimension {dim} exceeds {MAX_JOINT_DIM}")));
    }

    let c = state.code_size();
    let mut precision = Matrix::zeros(dim, dim);
    let mut mean = Matrix::zeros(c, dim);
    for b in &blocks {
        let m = &state.machines()[b.machine];
        let w = &addresses[b.machine].w;
        let a = r[b.machine] / (m.sigma() * m.sigma());
        let v_inv = cholesky_spd(m.cov())?.inverse();

        precision[(0, 0)] += a;
        for p in 0..b.width {
            precision[(b.offset + p, 0)] = -a * w[p];
            precision[(0, b.offset + p)] = -a * w[p];
            for q in 0..b.width {
                precision[(b.offset + p, b.offset + q)] = v_inv.as_matrix()[(p, q)] + a * w[p] * w[q];
            }
        }
        mean.columns_mut(b.offset, b.width).copy_from(m.mean());
    }

    // E[z | M = R] = −Λ_z⁻¹ Σ_i Λ_{c_i}ᵀ R_i[row]
    let lz = precision[(0, 0)];
    for row in 0..c {
        let mut acc = 0.0;
        for col in 1..dim {
            acc += precision[(0, col)] * mean[(row, col)];
        }
        mean[(row, 0)] = -acc / lz;
    }

    Ok(JointGaussian { mean, precision: SymMatrix::new(precision)?, blocks, code_rows: c, machines: k })
}

/// Conditions the joint on `z` and returns per-machine posterior marginals.
/// Machines excluded from the joint come back as `None`.
pub fn condition_on_observation(joint: &JointGaussian, z: &Vector) -> Result<Vec<Option<MachinePosterior>>> {
    check_len("oracle observation", joint.code_rows, z.len())?;
    let sigma = joint.covariance()?;
    let s = sigma.as_matrix();
    let dim = joint.dim();
    let szz = s[(0, 0)];
    if !(szz > 0.0) {
        return Err(Error::NotPositiveDefinite { index: 0, pivot: szz });
    }
    let gain: Vector = Vector::from_fn(dim - 1, |i, _| s[(i + 1, 0)] / szz);

    // Σ_MM − Σ_Mz Σ_zz⁻¹ Σ_zM
    let mut post_cov = s.view((1, 1), (dim - 1, dim - 1)).into_owned();
    for p in 0..dim - 1 {
        for q in 0..dim - 1 {
            post_cov[(p, q)] -= s[(p + 1, 0)] * s[(q + 1, 0)] / szz;
        }
    }

    let mut out = vec![None; joint.machines];
    for b in &joint.blocks {
        let o = b.offset - 1;
        let cov = SymMatrix::new(post_cov.view((o, o), (b.width, b.width)).into_owned())?;
        let mut mean = Matrix::zeros(joint.code_rows, b.width);
        for row in 0..joint.code_rows {
            let innovation = z[row] - joint.mean[(row, 0)];
            for p in 0..b.width {
                mean[(row, p)] = joint.mean[(row, b.offset + p)] + gain[o + p] * innovation;
            }
        }
        out[b.machine] = Some(MachinePosterior { mean, cov });
    }
    Ok(out)
}

/// Oracle posterior for every machine, passing excluded machines through.
pub fn oracle_posterior(
    state: &ProductState,
    addresses: &[AddressWeights],
    r: &[f64],
    z: &Vector,
) -> Result<Vec<MachinePosterior>> {
    let joint = build_joint(state, addresses, r)?;
    let posts = condition_on_observation(&joint, z)?;
    Ok(posts
        .into_iter()
        .zip(state.machines())
        .map(|(p, m)| p.unwrap_or_else(|| MachinePosterior { mean: m.mean().clone(), cov: m.cov().clone() }))
        .collect())
}

/// Largest absolute entry in the cross-machine blocks of a covariance over
/// the joint's memory coordinates (offsets relative to the full joint).
fn max_cross_block(cov: &Matrix, blocks: &[Block], shift: usize) -> f64 {
    let mut worst = 0.0_f64;
    for a in blocks {
        for b in blocks {
            if a.machine == b.machine {
                continue;
            }
            for p in 0..a.width {
                for q in 0..b.width {
                    worst = worst.max(cov[(a.offset - shift + p, b.offset - shift + q)].abs());
                }
            }
        }
    }
    worst
}

/// Cross-machine covariance magnitudes `(before, after)` conditioning on `z`.
///
/// Before conditioning the shared `z` coordinate correlates the machines;
/// after conditioning the memory precision is block diagonal, so the
/// factored per-machine posterior loses nothing.
pub fn cross_machine_coupling(joint: &JointGaussian) -> Result<(f64, f64)> {
    let s = joint.covariance()?;
    let dim = joint.dim();
    let m = s.as_matrix();
    let before = max_cross_block(m, &joint.blocks, 0);
    let szz = m[(0, 0)];
    let mut post = m.view((1, 1), (dim - 1, dim - 1)).into_owned();
    for p in 0..dim - 1 {
        for q in 0..dim - 1 {
            post[(p, q)] -= m[(p + 1, 0)] * m[(q + 1, 0)] / szz;
        }
    }
    let after = max_cross_block(&post, &joint.blocks, 1);
    Ok((before, after))
}

/// Outcome of comparing the product write against the oracle on many
/// random instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub instances: usize,
    pub max_mean_deviation: f64,
    pub max_cov_deviation: f64,
}

impl SweepReport {
    pub fn max_deviation(&self) -> f64 {
        self.max_mean_deviation.max(self.max_cov_deviation)
    }
}

/// Random desk-size instance: N(0,1) means, well-conditioned SPD
/// covariances, noise in [0.3, 1.5), Gaussian addresses, exponents in (0, 1].
pub fn random_instance<R: Rng + ?Sized>(
    c: usize,
    k: usize,
    columns: usize,
    rng: &mut R,
) -> Result<(ProductState, Vec<AddressWeights>, Vec<f64>, Vector)> {
    let cfg = ProductConfig::new(c, k * columns, k)?;
    fn normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }
    let mut machines = Vec::with_capacity(k);
    let mut addresses = Vec::with_capacity(k);
    for _ in 0..k {
        let mean = normal(c, columns, rng);
        let a = normal(columns, columns, rng);
        let cov = SymMatrix::new(&a * a.transpose() / columns as f64 + Matrix::identity(columns, columns) * 0.2)?;
        let w = normal(columns, 1, rng).column(0).into_owned();
        let sigma = 0.3 + 1.2 * rng.random::<f64>();
        machines.push(MachineState::new(mean, cov, sigma)?);
        addresses.push(AddressWeights::from_mean(w));
    }
    let r = (0..k).map(|_| 1.0 - rng.random::<f64>()).collect();
    let z = Vector::from_fn(c, |_, _| rng.sample(StandardNormal));
    Ok((ProductState::new(machines, cfg)?, addresses, r, z))
}

/// Runs `per_cell` random instances for every `c ∈ {1,3}`, `k ∈ {1,2,3}`,
/// `m_i ∈ {2,4}` and records the worst disagreement between
/// [`write_product`] and [`oracle_posterior`].
pub fn equivalence_sweep(per_cell: usize, seed: u64) -> Result<SweepReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SweepReport { instances: 0, max_mean_deviation: 0.0, max_cov_deviation: 0.0 };
    for c in [1, 3] {
        for k in [1, 2, 3] {
            for columns in [2, 4] {
                for _ in 0..per_cell {
                    let (state, addresses, r, z) = random_instance(c, k, columns, &mut rng)?;
                    let weights = compute_gamma(&r, &state.sigmas())?;
                    let fast = write_product(&state, &z, &weights, &addresses)?;
                    let exact = oracle_posterior(&state, &addresses, &r, &z)?;
                    for (f, e) in fast.machines().iter().zip(&exact) {
                        report.max_mean_deviation = report.max_mean_deviation.max((f.mean() - &e.mean).amax());
                        report.max_cov_deviation =
                            report.max_cov_deviation.max((f.cov().as_matrix() - e.cov.as_matrix()).amax());
                    }
                    report.instances += 1;
                }
            }
        }
    }
    Ok(report)
}
