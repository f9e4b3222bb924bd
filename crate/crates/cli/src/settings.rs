//! Flag / config-file merging. A flag always beats the file; `--seed` falls
//! back to `PKM_SEED` before the file is consulted.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use product_kanerva::assignment::{AssignmentPolicy, DEFAULT_TAU};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// Total memory columns.
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of machines.
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated machine counts.
    #[arg(long = "k-list", value_delimiter = ',')]
    pub k_list: Option<Vec<usize>>,
    /// Latent code size.
    #[arg(long)]
    pub c: Option<usize>,
    /// Episode length(s), comma separated.
    #[arg(long = "T", value_delimiter = ',')]
    pub t: Option<Vec<usize>>,
    /// Address regularizer.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Observation noise of every machine.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Prior column variance.
    #[arg(long)]
    pub psi: Option<f64>,
    /// uniform | softmax | fixed:r1,r2,… | categorical:g1,g2,…
    #[arg(long)]
    pub policy: Option<String>,
    /// Temperature of the softmax policy.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, env = "PKM_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Worker threads for per-machine work (bench-scaling).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Timed steps per trial (bench-scaling).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Channels in binding episodes.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// TOML file supplying defaults for any of the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

impl OneOrMany {
    fn into_vec(self) -> Vec<usize> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    m: Option<usize>,
    k: Option<usize>,
    k_list: Option<Vec<usize>>,
    c: Option<usize>,
    #[serde(rename = "T")]
    t: Option<OneOrMany>,
    lambda: Option<f64>,
    sigma: Option<f64>,
    psi: Option<f64>,
    policy: Option<String>,
    tau: Option<f64>,
    seed: Option<u64>,
    trials: Option<usize>,
    threads: Option<usize>,
    steps: Option<usize>,
    channels: Option<usize>,
    out: Option<PathBuf>,
    format: Option<Format>,
}

fn load_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl Opts {
    /// Fills every unset flag from the config file, if one was given.
    pub fn resolve(mut self) -> Result<Opts> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let f = load_file(&path)?;
        macro_rules! fill {
            ($($field:ident),*) => { $( if self.$field.is_none() { self.$field = f.$field; } )* };
        }
        fill!(m, k, k_list, c, lambda, sigma, psi, policy, tau, seed, trials, threads, steps, channels, out, format);
        if self.t.is_none() {
            self.t = f.t.map(OneOrMany::into_vec);
        }
        Ok(self)
    }

    pub fn k_values(&self, default: &[usize]) -> Vec<usize> {
        match (&self.k_list, self.k) {
            (Some(list), _) => list.clone(),
            (None, Some(k)) => vec![k],
            (None, None) => default.to_vec(),
        }
    }

    pub fn t_values(&self, default: &[usize]) -> Vec<usize> {
        self.t.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }

    pub fn policy(&self) -> Result<AssignmentPolicy> {
        parse_policy(self.policy.as_deref().unwrap_or("uniform"), self.tau)
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|x| x.trim().parse::<f64>().with_context(|| format!("bad number {x:?}"))).collect()
}

pub fn parse_policy(spec: &str, tau: Option<f64>) -> Result<AssignmentPolicy> {
    let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match name {
        "uniform" => AssignmentPolicy::Uniform,
        "softmax" => AssignmentPolicy::ResidualSoftmax { tau: tau.unwrap_or(DEFAULT_TAU) },
        "fixed" => AssignmentPolicy::Fixed(parse_list(args)?),
        "categorical" => AssignmentPolicy::Categorical(parse_list(args)?),
        other => bail!("unknown policy {other:?} (expected uniform, softmax, fixed:…, categorical:…)"),
    })
}
