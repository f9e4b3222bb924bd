//! Wall-clock benchmark of product steps and the `c + a·k + b·(m/k)³`
//! runtime model fitted to it.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::product::{read_product, solve_addresses, write_product, MachineWeights, ProductConfig, ProductState};

/// Iterations run and discarded before timing starts.
pub const WARMUP_ITERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Write,
    Read,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Write => "write",
            StepKind::Read => "read",
        }
    }
}

impl std::str::FromStr for StepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "write" => Ok(StepKind::Write),
            "read" => Ok(StepKind::Read),
            other => Err(Error::Config(format!("unknown step kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub m: usize,
    pub k: usize,
    pub kind: StepKind,
    /// Median over trials of the mean per-step time.
    pub mean_seconds: f64,
    /// Spread of the per-trial means.
    pub std_seconds: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub m: usize,
    pub k_list: Vec<usize>,
    pub c: usize,
    pub steps: usize,
    pub trials: usize,
    /// Worker threads for per-machine work; `None` uses the global pool.
    pub threads: Option<usize>,
    pub kinds: Vec<StepKind>,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(m: usize, k_list: Vec<usize>) -> Self {
        Self { m, k_list, c: 32, steps: 10, trials: 5, threads: Some(1), kinds: vec![StepKind::Write], seed: 0 }
    }
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Mean seconds per step over one trial of `steps` calls.
fn time_steps(state: &ProductState, zs: &[Vector], kind: StepKind, rng: &mut ChaCha8Rng) -> Result<f64> {
    let weights = MachineWeights::uniform(&state.sigmas())?;
    let mut current = state.clone();
    let run = |current: &mut ProductState, z: &Vector, rng: &mut ChaCha8Rng| -> Result<()> {
        match kind {
            StepKind::Write => {
                let addresses = solve_addresses(current, z, rng)?;
                *current = write_product(current, z, &weights, &addresses)?;
            }
            StepKind::Read => {
                std::hint::black_box(read_product(current, z, &weights)?);
            }
        }
        Ok(())
    };
    for z in zs.iter().cycle().take(WARMUP_ITERS) {
        run(&mut current, z, rng)?;
    }
    let start = Instant::now();
    for z in zs {
        run(&mut current, z, rng)?;
    }
    Ok(start.elapsed().as_secs_f64() / zs.len() as f64)
}

fn bench_inner(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zs: Vec<Vector> = crate::episodes::gen_random_episode(cfg.steps, cfg.c, cfg.seed).items;
    let states = cfg
        .k_list
        .iter()
        .map(|&k| ProductState::prior(ProductConfig::new(cfg.c, cfg.m, k)?, 1.0, 1.0, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, StepKind)> =
        (0..states.len()).flat_map(|i| cfg.kinds.iter().map(move |&kind| (i, kind))).collect();

    // Trials are the outer loop so slow spells on a shared machine are spread
    // over every configuration instead of landing on one.
    let mut samples = vec![Vec::with_capacity(cfg.trials); cells.len()];
    for _ in 0..cfg.trials {
        for (cell, &(i, kind)) in cells.iter().enumerate() {
            samples[cell].push(time_steps(&states[i], &zs, kind, &mut rng)?);
        }
    }
    Ok(cells
        .iter()
        .zip(samples)
        .map(|(&(i, kind), mut per_trial)| {
            let std_seconds = std_dev(&per_trial);
            BenchRecord {
                m: cfg.m,
                k: cfg.k_list[i],
                kind,
                mean_seconds: median(&mut per_trial),
                std_seconds,
                trials: cfg.trials,
            }
        })
        .collect())
}

/// Times product steps for every `k` in the list.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if cfg.k_list.is_empty() || cfg.steps == 0 || cfg.trials == 0 || cfg.c == 0 {
        return Err(Error::Config("benchmark needs k values, steps, trials and a code size".into()));
    }
    if let Some(&k) = cfg.k_list.iter().find(|&&k| k == 0 || !cfg.m.is_multiple_of(k)) {
        return Err(Error::Config(format!("k = {k} does not divide m = {}", cfg.m)));
    }
    #[cfg(feature = "parallel")]
    if let Some(threads) = cfg.threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        return pool.install(|| bench_inner(cfg));
    }
    bench_inner(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Per-machine overhead.
    pub a: f64,
    /// Cubic coefficient.
    pub b: f64,
    /// Fixed overhead.
    pub c: f64,
    pub r_squared: f64,
    pub k_opt: f64,
}

impl ScalingFit {
    pub fn predict(&self, m: usize, k: f64) -> f64 {
        self.c + self.a * k + self.b * (m as f64 / k).powi(3)
    }
}

/// Minimizer of `a·k + b·(m/k)³` over real `k`, without clamping.
pub fn k_opt_formula(a: f64, b: f64, m: usize) -> f64 {
    (3.0 * b * (m as f64).powi(3) / a).powf(0.25)
}

/// Least squares restricted to the columns in `mask`; `None` if the reduced
/// system is rank deficient.
fn subset_ls(x: &Matrix, y: &Vector, mask: &[bool]) -> Option<Vec<f64>> {
    let cols: Vec<usize> = (0..x.ncols()).filter(|&j| mask[j]).collect();
    let mut coef = vec![0.0; x.ncols()];
    if cols.is_empty() {
        return Some(coef);
    }
    let mut sub = x.select_columns(cols.iter());
    // Equilibrate so the cubic column does not swamp the others.
    let scales: Vec<f64> = sub.column_iter().map(|c| c.norm()).collect();
    if scales.contains(&0.0) {
        return None;
    }
    for (j, s) in scales.iter().enumerate() {
        sub.column_mut(j).unscale_mut(*s);
    }
    let qr = sub.qr();
    let r = qr.r();
    let max_diag = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * max_diag) {
        return None;
    }
    let qty = qr.q().transpose() * y;
    let beta = r.solve_upper_triangular(&qty)?;
    for (pos, &j) in cols.iter().enumerate() {
        coef[j] = beta[pos] / scales[pos];
    }
    Some(coef)
}

/// Fits `t = c + a·k + b·(m/k)³` with all coefficients constrained to be
/// nonnegative, by solving every active set and keeping the best feasible one.
pub fn fit_scaling(records: &[BenchRecord], m: usize) -> Result<ScalingFit> {
    let mut ks: Vec<usize> = records.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < 4 {
        return Err(Error::InsufficientData { needed: 4, got: ks.len() });
    }
    let n = records.len();
    let x = Matrix::from_fn(n, 3, |i, j| {
        let k = records[i].k as f64;
        match j {
            0 => 1.0,
            1 => k,
            _ => (m as f64 / k).powi(3),
        }
    });
    let y = Vector::from_iterator(n, records.iter().map(|r| r.mean_seconds));

    let mut best: Option<(f64, Vec<f64>)> = None;
    for bits in 0..8u8 {
        let mask = [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0];
        let Some(coef) = subset_ls(&x, &y, &mask) else { continue };
        if coef.iter().any(|&v| v < 0.0) {
            continue;
        }
        let resid = &y - &x * Vector::from_column_slice(&coef);
        let sse = resid.norm_squared();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, coef));
        }
    }
    let (sse, coef) = best.expect("the empty active set is always feasible");

    let mean = y.mean();
    let sst = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let r_squared = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    let (c, a, b) = (coef[0], coef[1], coef[2]);
    let k_opt = match k_opt_formula(a, b, m) {
        v if v.is_nan() => 1.0,
        v => v.clamp(1.0, m.max(1) as f64),
    };
    Ok(ScalingFit { a, b, c, r_squared, k_opt })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(m: usize, ks: &[usize], f: impl Fn(f64) -> f64) -> Vec<BenchRecord> {
        ks.iter()
            .map(|&k| BenchRecord {
                m,
                k,
                kind: StepKind::Write,
                mean_seconds: f(k as f64),
                std_seconds: 0.0,
                trials: 1,
            })
            .collect()
    }

    #[test]
    fn exact_recovery() {
        let m = 24;
        let records = synthetic(m, &[1, 2, 3, 4, 6, 8, 12], |k| 0.01 + 0.001 * k + 0.2 * (m as f64 / k).powi(3));
        let fit = fit_scaling(&records, m).unwrap();
        assert!((fit.a - 0.001).abs() < 1e-9, "{fit:?}");
        assert!((fit.b - 0.2).abs() < 1e-9, "{fit:?}");
        assert!((fit.c - 0.01).abs() < 1e-9, "{fit:?}");
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.k_opt, m as f64);
    }

    #[test]
    fn negative_coefficient_is_clamped() {
        let m = 12;
        let records = synthetic(m, &[1, 2, 3, 4, 6], |k| 5.0 - 0.1 * k + 0.001 * (m as f64 / k).powi(3));
        let fit = fit_scaling(&records, m).unwrap();
        assert_eq!(fit.a, 0.0);
        assert!(fit.b >= 0.0 && fit.c >= 0.0);
        assert_eq!(fit.k_opt, m as f64);
    }

    #[test]
    fn needs_four_distinct_k() {
        let records = synthetic(12, &[1, 2, 3, 3, 2], |k| k);
        assert!(matches!(fit_scaling(&records, 12), Err(Error::InsufficientData { needed: 4, got: 3 })));
    }

    #[test]
    fn k_opt_arithmetic() {
        assert!((k_opt_formula(1.0, 1.0, 2) - 24f64.powf(0.25)).abs() < 1e-12);
        assert!((k_opt_formula(1.0, 1.0, 2) - 2.2134).abs() < 1e-4);
    }

    #[test]
    fn reference_fit_round_trips() {
        let fit = ScalingFit {
            a: 3.318e-08,
            b: 2.176e-01,
            c: 3.676e-02,
            r_squared: 0.996,
            k_opt: k_opt_formula(3.318e-08, 2.176e-01, 400).clamp(1.0, 400.0),
        };
        let back: ScalingFit = serde_json::from_str(&serde_json::to_string(&fit).unwrap()).unwrap();
        assert_eq!(back.a.to_bits(), fit.a.to_bits());
        assert_eq!(back.b.to_bits(), fit.b.to_bits());
        assert_eq!(back.c.to_bits(), fit.c.to_bits());
        assert_eq!(back, fit);
    }

    #[test]
    fn bench_shape_and_errors() {
        let mut cfg = BenchConfig::new(12, vec![1, 2, 3]);
        cfg.steps = 2;
        cfg.trials = 2;
        cfg.c = 4;
        cfg.kinds = vec![StepKind::Write, StepKind::Read];
        let recs = run_bench(&cfg).unwrap();
        assert_eq!(recs.len(), 6);
        assert!(recs.iter().all(|r| r.mean_seconds > 0.0 && r.trials == 2));
        cfg.k_list = vec![1, 5];
        assert!(matches!(run_bench(&cfg), Err(Error::Config(_))));
    }
}
