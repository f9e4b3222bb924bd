//! Synthetic latent episodes and the capacity / binding experiments run on
//! them. Latent vectors stand in for encoder outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::assignment::AssignmentPolicy;
use crate::error::{Error, Result};
use crate::machine::{DEFAULT_PSI, DEFAULT_SIGMA};
use crate::numerics::{cosine_similarity, Vector, DEFAULT_LAMBDA};
use crate::product::{query_episode, write_episode, ProductConfig, ProductState};

pub const DEFAULT_TRIALS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub generator: String,
    pub seed: u64,
    pub channels: usize,
    /// Channel zeroed out in the queries, for binding episodes.
    pub mask: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub items: Vec<Vector>,
    pub meta: EpisodeMeta,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn standard_normal_items<R: Rng + ?Sized>(t: usize, c: usize, rng: &mut R) -> Vec<Vector> {
    (0..t).map(|_| Vector::from_fn(c, |_, _| rng.sample(StandardNormal))).collect()
}

/// `t` i.i.d. standard normal latents of length `c`.
pub fn gen_random_episode(t: usize, c: usize, seed: u64) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Episode {
        items: standard_normal_items(t, c, &mut rng),
        meta: EpisodeMeta { generator: "random".into(), seed, channels: 1, mask: None },
    }
}

/// Items made of `channels` independent sub-vectors, and queries equal to the
/// items with the middle channel zeroed.
pub fn gen_binding_episode(t: usize, c: usize, channels: usize, seed: u64) -> Result<(Episode, Episode, usize)> {
    if channels == 0 || !c.is_multiple_of(channels) {
        return Err(Error::IndivisibleCode { code: c, channels });
    }
    let mask = channels / 2;
    let width = c / channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = standard_normal_items(t, c, &mut rng);
    let queries = items
        .iter()
        .map(|z| {
            let mut q = z.clone();
            q.rows_mut(mask * width, width).fill(0.0);
            q
        })
        .collect();
    let meta = EpisodeMeta { generator: "binding".into(), seed, channels, mask: Some(mask) };
    Ok((Episode { items, meta: meta.clone() }, Episode { items: queries, meta }, mask))
}

/// Shared settings of the synthetic memory experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub total_columns: usize,
    pub machines: usize,
    pub code_size: usize,
    pub lambda: f64,
    pub sigma: f64,
    pub psi: f64,
    pub trials: usize,
    pub seed: u64,
    pub policy: AssignmentPolicy,
}

impl ExperimentConfig {
    pub fn new(total_columns: usize, machines: usize, code_size: usize) -> Self {
        Self {
            total_columns,
            machines,
            code_size,
            lambda: DEFAULT_LAMBDA,
            sigma: DEFAULT_SIGMA,
            psi: DEFAULT_PSI,
            trials: DEFAULT_TRIALS,
            seed: 0,
            policy: AssignmentPolicy::Uniform,
        }
    }

    fn product_config(&self) -> Result<ProductConfig> {
        Ok(ProductConfig::new(self.code_size, self.total_columns, self.machines)?.with_lambda(self.lambda))
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        self.product_config().map(|_| ())
    }

    /// Generator for one trial. Priors are drawn column by column, so the
    /// same trial sees the same random numbers whatever the factorization.
    fn trial_rng(&self, trial: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub k: usize,
    pub mse: f64,
    pub cosine: f64,
}

fn mse(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm_squared() / a.len() as f64
}

/// Writes a fresh memory with `items` and reads each query back.
fn store_and_recall<R: Rng + ?Sized>(
    cfg: &ExperimentConfig,
    items: &[Vector],
    queries: &[Vector],
    rng: &mut R,
) -> Result<Vec<Vector>> {
    let state = ProductState::prior(cfg.product_config()?, cfg.psi, cfg.sigma, rng)?;
    let (written, log) = write_episode(&state, items, &cfg.policy, rng)?;
    Ok(query_episode(&written, queries, &cfg.policy, &log.history)?.into_iter().map(|r| r.mu_z).collect())
}

fn run_trials<T, F>(trials: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    let out: Vec<Result<T>> = (0..trials).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    let out: Vec<Result<T>> = (0..trials).map(f).collect();
    out.into_iter().collect()
}

/// Store/recall error against episode length, averaged over trials.
pub fn capacity_curve(cfg: &ExperimentConfig, t_values: &[usize]) -> Result<Vec<CapacityRow>> {
    if t_values.is_empty() {
        return Err(Error::Config("capacity curve needs at least one episode length".into()));
    }
    cfg.validate()?;
    let per_trial = run_trials(cfg.trials, |trial| {
        let mut rng = cfg.trial_rng(trial);
        t_values
            .iter()
            .map(|&t| {
                let items = standard_normal_items(t, cfg.code_size, &mut rng);
                let recalled = store_and_recall(cfg, &items, &items, &mut rng)?;
                let n = t.max(1) as f64;
                let m: f64 = items.iter().zip(&recalled).map(|(z, r)| mse(z, r)).sum::<f64>() / n;
                let cos: f64 = items.iter().zip(&recalled).map(|(z, r)| cosine_similarity(z, r)).sum::<f64>() / n;
                Ok((m, cos))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let trials = cfg.trials as f64;
    Ok(t_values
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let (m, cos) = per_trial.iter().fold((0.0, 0.0), |(a, b), row| (a + row[j].0, b + row[j].1));
            CapacityRow { t, k: cfg.machines, mse: m / trials, cosine: cos / trials }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BindingRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub k: usize,
    /// Mean cosine between the reconstructed and true masked channel.
    pub masked_cosine: f64,
    /// Same, over the visible channels.
    pub visible_cosine: f64,
}

/// Pattern completion: store items, query with one channel blanked, and
/// score how well the blanked channel is filled in.
pub fn binding_experiment(cfg: &ExperimentConfig, t: usize, channels: usize) -> Result<BindingRow> {
    cfg.validate()?;
    if t == 0 {
        return Err(Error::Config("binding episode must have at least one item".into()));
    }
    let c = cfg.code_size;
    if channels == 0 || !c.is_multiple_of(channels) {
        return Err(Error::IndivisibleCode { code: c, channels });
    }
    let width = c / channels;
    let per_trial = run_trials(cfg.trials, |trial| {
        let mut rng = cfg.trial_rng(trial);
        let episode_seed: u64 = rng.random();
        let (items, queries, mask) = gen_binding_episode(t, c, channels, episode_seed)?;
        let recalled = store_and_recall(cfg, &items.items, &queries.items, &mut rng)?;
        let mut masked = 0.0;
        let mut visible = 0.0;
        for (z, r) in items.items.iter().zip(&recalled) {
            let sub = |v: &Vector| v.rows(mask * width, width).into_owned();
            masked += cosine_similarity(&sub(z), &sub(r));
            let mut zv = z.clone();
            let mut rv = r.clone();
            zv.rows_mut(mask * width, width).fill(0.0);
            rv.rows_mut(mask * width, width).fill(0.0);
            visible += cosine_similarity(&zv, &rv);
        }
        Ok((masked / t as f64, visible / t as f64))
    })?;
    let trials = cfg.trials as f64;
    let (masked, visible) = per_trial.iter().fold((0.0, 0.0), |(a, b), r| (a + r.0, b + r.1));
    Ok(BindingRow { t, k: cfg.machines, masked_cosine: masked / trials, visible_cosine: visible / trials })
}
