//! Browser bindings for the demo page in `www/`.
//!
//! Each export takes plain numbers and returns a JSON string the page plots.
//! The `*_json` functions do the work and are what the native tests call;
//! the `#[wasm_bindgen]` wrappers only translate errors into JS exceptions.

// `!(x > 0.0)` is deliberate throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use product_kanerva::assignment::AssignmentPolicy;
use product_kanerva::episodes::{capacity_curve, gen_random_episode, ExperimentConfig};
use product_kanerva::numerics::cosine_similarity;
use product_kanerva::product::{query_episode, write_episode, ProductConfig, ProductState};
use product_kanerva::scaling::k_opt_formula;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Keeps a single click from freezing the tab.
const MAX_WORK: usize = 400_000;

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn parse_lengths(list: &str) -> Result<Vec<usize>, String> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad episode length {s:?}")))
        .collect()
}

fn policy(name: &str, tau: f64) -> Result<AssignmentPolicy, String> {
    match name {
        "uniform" => Ok(AssignmentPolicy::Uniform),
        "softmax" => Ok(AssignmentPolicy::ResidualSoftmax { tau }),
        other => Err(format!("unknown policy {other:?}")),
    }
}

#[derive(Serialize)]
struct CapacityPoint {
    k: usize,
    t: usize,
    mse: f64,
    cosine: f64,
}

/// Capacity curves for every `k` in `ks` (comma separated).
#[allow(clippy::too_many_arguments)]
pub fn capacity_json(
    m: usize,
    ks: &str,
    c: usize,
    lengths: &str,
    lambda: f64,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<String, String> {
    let ks = parse_lengths(ks)?;
    let ts = parse_lengths(lengths)?;
    let work = ks.len() * trials * ts.iter().sum::<usize>() * m * c;
    if work > MAX_WORK * 100 {
        return Err("that configuration is too large for the browser demo".into());
    }
    let mut out = Vec::new();
    for k in ks {
        let mut cfg = ExperimentConfig::new(m, k, c);
        cfg.lambda = lambda;
        cfg.sigma = sigma;
        cfg.trials = trials;
        cfg.seed = seed;
        for row in capacity_curve(&cfg, &ts).map_err(|e| e.to_string())? {
            out.push(CapacityPoint { k, t: row.t, mse: row.mse, cosine: row.cosine });
        }
    }
    to_json(&out)
}

#[derive(Serialize)]
struct EpisodeTrace {
    gamma: Vec<Vec<f64>>,
    delta_norm: Vec<f64>,
    recall_cosine: Vec<f64>,
}

/// Writes one random episode and returns per-step machine weights, the
/// shared prediction-error norm, and the recall cosine of every item.
#[allow(clippy::too_many_arguments)]
pub fn episode_json(
    m: usize,
    k: usize,
    c: usize,
    t: usize,
    policy_name: &str,
    tau: f64,
    sigma: f64,
    seed: u64,
) -> Result<String, String> {
    if t * m * c > MAX_WORK * 10 {
        return Err("that episode is too large for the browser demo".into());
    }
    let policy = policy(policy_name, tau)?;
    let cfg = ProductConfig::new(c, m, k).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = ProductState::prior(cfg, 1.0, sigma, &mut rng).map_err(|e| e.to_string())?;
    let items = gen_random_episode(t, c, seed.wrapping_add(1)).items;
    let (written, log) = write_episode(&state, &items, &policy, &mut rng).map_err(|e| e.to_string())?;
    let reads = query_episode(&written, &items, &policy, &log.history).map_err(|e| e.to_string())?;
    to_json(&EpisodeTrace {
        gamma: log.steps.iter().map(|s| s.weights.gamma.clone()).collect(),
        delta_norm: log.steps.iter().map(|s| s.delta_norm).collect(),
        recall_cosine: items.iter().zip(&reads).map(|(z, r)| cosine_similarity(z, &r.mu_z)).collect(),
    })
}

#[derive(Serialize)]
struct CostCurve {
    k: Vec<usize>,
    seconds: Vec<f64>,
    k_opt: f64,
}

/// Runtime model `c + a·k + b·(m/k)³` over the divisors of `m`.
pub fn cost_model_json(a: f64, b: f64, c: f64, m: usize) -> Result<String, String> {
    if m == 0 || !(a > 0.0) || !(b >= 0.0) {
        return Err("need m ≥ 1, a > 0 and b ≥ 0".into());
    }
    let k: Vec<usize> = (1..=m).filter(|k| m.is_multiple_of(*k)).collect();
    let seconds = k.iter().map(|&k| c + a * k as f64 + b * (m as f64 / k as f64).powi(3)).collect();
    to_json(&CostCurve { k, seconds, k_opt: k_opt_formula(a, b, m).clamp(1.0, m as f64) })
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn capacity(
    m: usize,
    ks: &str,
    c: usize,
    lengths: &str,
    lambda: f64,
    sigma: f64,
    trials: usize,
    seed: u32,
) -> Result<String, JsValue> {
    capacity_json(m, ks, c, lengths, lambda, sigma, trials, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn episode(
    m: usize,
    k: usize,
    c: usize,
    t: usize,
    policy_name: &str,
    tau: f64,
    sigma: f64,
    seed: u32,
) -> Result<String, JsValue> {
    episode_json(m, k, c, t, policy_name, tau, sigma, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn cost_model(a: f64, b: f64, c: f64, m: usize) -> Result<String, JsValue> {
    cost_model_json(a, b, c, m).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn capacity_points() {
        let v: Value = serde_json::from_str(&capacity_json(8, "1,2", 6, "1,4", 0.1, 0.3, 2, 3).unwrap()).unwrap();
        let pts = v.as_array().unwrap();
        assert_eq!(pts.len(), 4);
        assert!(pts[0]["cosine"].as_f64().unwrap() > 0.9);
        assert!(capacity_json(8, "1,3", 6, "1", 0.1, 0.3, 1, 0).is_err());
    }

    #[test]
    fn episode_trace() {
        let v: Value = serde_json::from_str(&episode_json(12, 3, 10, 5, "softmax", 0.5, 0.3, 1).unwrap()).unwrap();
        assert_eq!(v["gamma"].as_array().unwrap().len(), 5);
        let g: f64 = v["gamma"][0].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((g - 1.0).abs() < 1e-9);
        assert_eq!(v["recall_cosine"].as_array().unwrap().len(), 5);
        assert!(episode_json(12, 3, 10, 5, "greedy", 0.5, 0.3, 1).is_err());
    }

    #[test]
    fn cost_curve() {
        let v: Value = serde_json::from_str(&cost_model_json(1.0, 1.0, 0.0, 2).unwrap()).unwrap();
        assert_eq!(v["k"], serde_json::json!([1, 2]));
        assert!((v["k_opt"].as_f64().unwrap() - 2.0).abs() < 1e-12);
        let v: Value = serde_json::from_str(&cost_model_json(3.318e-08, 2.176e-01, 3.676e-02, 400).unwrap()).unwrap();
        assert_eq!(v["k_opt"].as_f64().unwrap(), 400.0);
    }
}
