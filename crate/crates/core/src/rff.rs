//! Random Fourier features for the Gaussian kernel on the state-action space.
//!
//! ```text
//! φ(z) = sqrt(2/D) [cos(v_1ᵀz + b_1), …, cos(v_Dᵀz + b_D)]
//! v_i ~ N(0, σ⁻² I),  b_i ~ U[0, 2π)
//! ```
//!
//! so that `φ(z)ᵀφ(z') ≈ exp(-‖z - z'‖² / (2σ²))`. A state-action pair is the
//! five-vector `[s1, s2, s3, s4, p]`.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state_features::StateVector;

/// Dimension of a state-action pair.
pub const INPUT_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateAction {
    pub s: StateVector,
    pub a: f64,
}

impl StateAction {
    pub fn new(s: StateVector, a: f64) -> Self {
        Self { s, a }
    }

    pub fn to_array(self) -> [f64; INPUT_DIM] {
        [self.s.s1, self.s.s2, self.s.s3, self.s.s4, self.a]
    }
}

/// Exact Gaussian kernel `exp(-‖z - z'‖² / (2σ²))`.
pub fn gaussian_kernel(z: &StateAction, z2: &StateAction, sigma: f64) -> f64 {
    let (a, b) = (z.to_array(), z2.to_array());
    let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-sq / (2.0 * sigma * sigma)).exp()
}

/// Frozen random projection. Frequencies are stored row-major, one row of
/// [`INPUT_DIM`] entries per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RffMap {
    sigma: f64,
    frequencies: Vec<[f64; INPUT_DIM]>,
    phases: Vec<f64>,
}

impl RffMap {
    /// Draws a map with `dim` features and bandwidth `sigma`.
    pub fn sample<R: Rng + ?Sized>(dim: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        let (unit, phases) = sample_unit_parts(dim, rng);
        Self::from_unit_parts(unit, phases, sigma)
    }

    /// Builds a map from standard-normal frequencies, scaling them by `1/σ`.
    pub fn from_unit_parts(unit: Vec<[f64; INPUT_DIM]>, phases: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("RFF bandwidth must be positive, got {sigma}")));
        }
        let frequencies = unit
            .into_iter()
            .map(|row| row.map(|v| v / sigma))
            .collect();
        Self::from_parts(frequencies, phases, sigma)
    }

    pub fn from_parts(frequencies: Vec<[f64; INPUT_DIM]>, phases: Vec<f64>, sigma: f64) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::InvalidConfig("RFF dimension must be positive".into()));
        }
        if frequencies.len() != phases.len() {
            return Err(Error::DimensionMismatch {
                expected: frequencies.len(),
                found: phases.len(),
            });
        }
        Ok(Self {
            sigma,
            frequencies,
            phases,
        })
    }

    pub fn dim(&self) -> usize {
        self.phases.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn frequencies(&self) -> &[[f64; INPUT_DIM]] {
        &self.frequencies
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    fn scale(&self) -> f64 {
        (2.0 / self.dim() as f64).sqrt()
    }

    pub fn features(&self, z: &StateAction) -> Vec<f64> {
        let z = z.to_array();
        let scale = self.scale();
        self.frequencies
            .iter()
            .zip(&self.phases)
            .map(|(v, b)| {
                let arg: f64 = v.iter().zip(&z).map(|(vi, zi)| vi * zi).sum::<f64>() + b;
                scale * arg.cos()
            })
            .collect()
    }

    /// Splits `vᵢᵀz + bᵢ` into its state part and caches `cos`/`sin` of it,
    /// so features for every action on a grid cost no further trigonometry.
    pub fn project_state(&self, s: &StateVector) -> StateProjection {
        let s = s.to_array();
        let mut cos = Vec::with_capacity(self.dim());
        let mut sin = Vec::with_capacity(self.dim());
        for (v, b) in self.frequencies.iter().zip(&self.phases) {
            let u = v[0] * s[0] + v[1] * s[1] + v[2] * s[2] + v[3] * s[3] + b;
            let (su, cu) = u.sin_cos();
            cos.push(cu);
            sin.push(su);
        }
        StateProjection { cos, sin }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::to_writer(std::io::BufWriter::new(file), self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Standard-normal frequency rows and uniform phases.
pub fn sample_unit_parts<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> (Vec<[f64; INPUT_DIM]>, Vec<f64>) {
    let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
    let mut unit = Vec::with_capacity(dim);
    let mut phases = Vec::with_capacity(dim);
    for _ in 0..dim {
        let mut row = [0.0; INPUT_DIM];
        for v in row.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        unit.push(row);
        phases.push(phase.sample(rng));
    }
    (unit, phases)
}

/// `cos(uᵢ)` and `sin(uᵢ)` for `uᵢ = vᵢ[..4]ᵀs + bᵢ`.
#[derive(Debug, Clone)]
pub struct StateProjection {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

/// Per-action tables `cos(vᵢ[4] a)`, `sin(vᵢ[4] a)` for a fixed action grid.
#[derive(Debug, Clone)]
pub struct GridTables {
    actions: Vec<f64>,
    scale: f64,
    cos: Vec<Vec<f64>>,
    sin: Vec<Vec<f64>>,
}

impl GridTables {
    pub fn new(map: &RffMap, actions: &[f64]) -> Self {
        let mut cos = Vec::with_capacity(actions.len());
        let mut sin = Vec::with_capacity(actions.len());
        for &a in actions {
            let (s, c): (Vec<f64>, Vec<f64>) = map
                .frequencies
                .iter()
                .map(|v| (v[INPUT_DIM - 1] * a).sin_cos())
                .unzip();
            cos.push(c);
            sin.push(s);
        }
        Self {
            actions: actions.to_vec(),
            scale: map.scale(),
            cos,
            sin,
        }
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }
}

impl StateProjection {
    /// Feature vector of `(s, actions[k])`, written into `out`.
    pub fn features_into(&self, tables: &GridTables, k: usize, out: &mut [f64]) {
        let (ca, sa) = (&tables.cos[k], &tables.sin[k]);
        for i in 0..out.len() {
            out[i] = tables.scale * (self.cos[i] * ca[i] - self.sin[i] * sa[i]);
        }
    }

    pub fn features(&self, tables: &GridTables, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cos.len()];
        self.features_into(tables, k, &mut out);
        out
    }

    /// `wᵀφ(s, a)` for a single grid action.
    pub fn q_value(&self, w: &[f64], tables: &GridTables, k: usize) -> f64 {
        let (ca, sa) = (&tables.cos[k], &tables.sin[k]);
        let mut acc = 0.0;
        for i in 0..w.len() {
            acc += w[i] * (self.cos[i] * ca[i] - self.sin[i] * sa[i]);
        }
        tables.scale * acc
    }

    /// Grid index minimizing `wᵀφ(s, a)`; ties go to the lowest index.
    pub fn greedy_index(&self, w: &[f64], tables: &GridTables) -> usize {
        let mut best = 0;
        let mut best_q = f64::INFINITY;
        for k in 0..tables.actions.len() {
            let q = self.q_value(w, tables, k);
            if q < best_q {
                best_q = q;
                best = k;
            }
        }
        best
    }

    /// `min_a wᵀφ(s, a)` over the grid.
    pub fn min_q(&self, w: &[f64], tables: &GridTables) -> f64 {
        (0..tables.actions.len())
            .map(|k| self.q_value(w, tables, k))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Median pairwise Euclidean distance, the usual bandwidth heuristic.
pub fn median_pairwise_distance(points: &[[f64; INPUT_DIM]]) -> Option<f64> {
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d.push(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    Some(if d.len().is_multiple_of(2) { 0.5 * (d[m - 1] + d[m]) } else { d[m] })
}
