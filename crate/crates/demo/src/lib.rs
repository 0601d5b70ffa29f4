//! Browser bindings. Every exported function takes plain numbers or a JSON
//! string and returns JSON, so the page needs no generated typings.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use lmp_kbrl::environments::{sample_alpha_stable, sample_sparse_noise};
use lmp_kbrl::harness::{run_trial, MethodKind, MethodSpec, RunSpec};
use lmp_kbrl::rff::{gaussian_kernel, RffMap, StateAction};
use lmp_kbrl::rng::stream_rng;
use lmp_kbrl::{ApiConfig, Bandwidth, ExperimentConfig, NoiseConfig, StateVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

const MAX_POINTS: usize = 400;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct CurveRequest {
    pub noise: String,
    pub order: usize,
    pub steps: usize,
    pub seed: u64,
    pub sigma: f64,
    pub rff_dim: usize,
    pub n_av: usize,
    pub alpha: f64,
    pub fixed: Vec<f64>,
}

impl Default for CurveRequest {
    fn default() -> Self {
        Self {
            noise: "sparse".into(),
            order: 10,
            steps: 5000,
            seed: 1,
            sigma: 0.4,
            rff_dim: 150,
            n_av: 10,
            alpha: 0.75,
            fixed: vec![1.0, 1.5, 2.0],
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub label: String,
    pub step: Vec<usize>,
    pub dev_db: Vec<f64>,
    pub final_db: f64,
    /// Share of steps spent at each exponent.
    pub actions: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize)]
pub struct CurveResponse {
    pub change_step: usize,
    pub curves: Vec<Curve>,
}

fn noise_config(kind: &str) -> Result<NoiseConfig, String> {
    match kind {
        "alpha_stable" => Ok(NoiseConfig::paper_alpha_stable()),
        "sparse" => Ok(NoiseConfig::paper_sparse()),
        "none" => Ok(NoiseConfig::None),
        other => Err(format!("unknown noise kind {other:?}")),
    }
}

/// Block means so long runs plot as at most `MAX_POINTS` points.
fn decimate(values: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let block = values.len().div_ceil(MAX_POINTS).max(1);
    values
        .chunks(block)
        .enumerate()
        .map(|(i, c)| (i * block, c.iter().sum::<f64>() / c.len() as f64))
        .unzip()
}

fn shares(actions: &[f64]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for &a in actions {
        match out.iter_mut().find(|(p, _)| *p == a) {
            Some(e) => e.1 += 1.0,
            None => out.push((a, 1.0)),
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = actions.len().max(1) as f64;
    out.into_iter().map(|(p, c)| (p, c / n)).collect()
}

/// One trial of the agent against fixed exponents and random `p` on a shared
/// stream, with the system changed halfway.
pub fn learning_curves(req: &CurveRequest) -> Result<CurveResponse, String> {
    let api = ApiConfig {
        rff_dim: req.rff_dim,
        n_av: req.n_av,
        alpha: req.alpha,
        bandwidth: Bandwidth::Fixed { sigma: req.sigma },
        ..ApiConfig::default()
    };
    let mut methods = vec![MethodSpec::named("agent", MethodKind::Api(api))];
    methods.extend(req.fixed.iter().map(|&p| MethodSpec::new(MethodKind::FixedP { p })));
    methods.push(MethodSpec::new(MethodKind::RandomP {
        grid: lmp_kbrl::ActionGrid::quarter_steps(),
    }));
    let spec = RunSpec {
        name: "demo".into(),
        experiment: ExperimentConfig {
            filter_order: req.order,
            rho: 1e-3,
            total_steps: req.steps,
            change_step: req.steps / 2,
            noise: noise_config(&req.noise)?,
        },
        methods,
        trials: 1,
        seed: req.seed,
        per_trial: false,
    };
    spec.validate().map_err(|e| e.to_string())?;

    let mut curves = Vec::new();
    for m in &spec.methods {
        let r = run_trial(&spec, m, 0).map_err(|e| e.to_string())?;
        let tail = r.deviation_db.len().min(500);
        let final_db = r.deviation_db[r.deviation_db.len() - tail..].iter().sum::<f64>() / tail as f64;
        let (step, dev_db) = decimate(&r.deviation_db);
        curves.push(Curve {
            label: m.label(),
            step,
            dev_db,
            final_db,
            actions: shares(&r.actions),
        });
    }
    Ok(CurveResponse {
        change_step: spec.experiment.change_step,
        curves,
    })
}

#[derive(Debug, Serialize)]
pub struct KernelResponse {
    pub distance: Vec<f64>,
    pub exact: Vec<f64>,
    pub approx: Vec<f64>,
    pub mean_abs_error: f64,
}

/// Exact Gaussian kernel against its random-feature estimate for pairs at
/// increasing distance along random directions.
pub fn kernel_approximation(dim: usize, sigma: f64, seed: u64) -> Result<KernelResponse, String> {
    if dim == 0 || !(sigma > 0.0) {
        return Err("dimension and bandwidth must be positive".into());
    }
    let mut rng = stream_rng(seed, 1);
    let map = RffMap::sample(dim, sigma, &mut rng).map_err(|e| e.to_string())?;
    let base = StateAction::new(StateVector::new(-0.5, -0.3, 0.6, 0.2), 1.5);
    let n = 120;
    let mut out = KernelResponse {
        distance: Vec::with_capacity(n),
        exact: Vec::with_capacity(n),
        approx: Vec::with_capacity(n),
        mean_abs_error: 0.0,
    };
    for i in 0..n {
        let r = 4.0 * sigma * i as f64 / (n - 1) as f64;
        let mut dir = [0.0; 5];
        for d in &mut dir {
            *d = rng.random::<f64>() - 0.5;
        }
        let len = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let z = base.to_array();
        let other = StateAction::new(
            StateVector::new(
                z[0] + r * dir[0] / len,
                z[1] + r * dir[1] / len,
                z[2] + r * dir[2] / len,
                z[3] + r * dir[3] / len,
            ),
            z[4] + r * dir[4] / len,
        );
        let exact = gaussian_kernel(&base, &other, sigma);
        let approx = lmp_kbrl::linalg::dot(&map.features(&base), &map.features(&other));
        out.mean_abs_error += (exact - approx).abs() / n as f64;
        out.distance.push(r);
        out.exact.push(exact);
        out.approx.push(approx);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct NoiseResponse {
    /// Lower edges of the `log10 |o|` bins.
    pub edges: Vec<f64>,
    pub alpha_stable: Vec<f64>,
    pub sparse: Vec<f64>,
}

/// Histograms of `log10 |o|` for both outlier models, as fractions of `n`.
pub fn noise_histogram(n: usize, seed: u64) -> NoiseResponse {
    let (lo, hi, bins) = (-4.0, 5.0, 45);
    let width = (hi - lo) / bins as f64;
    let bin = |o: f64| {
        let v = o.abs().max(1e-12).log10();
        (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
    };
    let mut rng = stream_rng(seed, 0);
    let mut stable = vec![0.0; bins];
    let mut sparse = vec![0.0; bins];
    // Signal power of a unit-variance system of order 10.
    let power = 10.0;
    for _ in 0..n {
        stable[bin(sample_alpha_stable(1.0, 0.5, 1.0, &mut rng))] += 1.0;
        sparse[bin(sample_sparse_noise(0.1, 100.0, 30.0, power, &mut rng))] += 1.0;
    }
    let scale = 1.0 / n.max(1) as f64;
    NoiseResponse {
        edges: (0..bins).map(|i| lo + width * i as f64).collect(),
        alpha_stable: stable.into_iter().map(|c| c * scale).collect(),
        sparse: sparse.into_iter().map(|c| c * scale).collect(),
    }
}

fn to_js<T: Serialize>(value: &T) -> Result<String, JsValue> {
    serde_json::to_string(value).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// `request` is a JSON object with any of the [`CurveRequest`] fields.
#[wasm_bindgen(js_name = learningCurves)]
pub fn learning_curves_js(request: &str) -> Result<String, JsValue> {
    let req: CurveRequest = serde_json::from_str(request).map_err(|e| JsValue::from_str(&e.to_string()))?;
    to_js(&learning_curves(&req).map_err(|e| JsValue::from_str(&e))?)
}

#[wasm_bindgen(js_name = kernelApproximation)]
pub fn kernel_approximation_js(dim: usize, sigma: f64, seed: u32) -> Result<String, JsValue> {
    to_js(&kernel_approximation(dim, sigma, seed as u64).map_err(|e| JsValue::from_str(&e))?)
}

#[wasm_bindgen(js_name = noiseHistogram)]
pub fn noise_histogram_js(n: usize, seed: u32) -> Result<String, JsValue> {
    to_js(&noise_histogram(n, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimation_keeps_means() {
        let v: Vec<f64> = (0..1000).map(f64::from).collect();
        let (s, m) = decimate(&v);
        assert!(m.len() <= MAX_POINTS);
        assert_eq!(s[1], 3);
        assert_eq!(m[0], 1.0);
    }

    #[test]
    fn shares_sum_to_one() {
        let s = shares(&[2.0, 1.0, 2.0, 1.5]);
        assert_eq!(s, vec![(1.0, 0.25), (1.5, 0.25), (2.0, 0.5)]);
    }
}
