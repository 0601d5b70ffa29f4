//! Synthetic system-identification streams `y = θ*ᵀx + o` with i.i.d.
//! standard Gaussian regressors, heavy-tailed or sparse outlier noise, and a
//! single abrupt change of `θ*`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseConfig {
    /// Stable law `S(alpha, beta, sigma, 0)`.
    AlphaStable { alpha: f64, beta: f64, sigma: f64 },
    /// Uniform outliers on `[-range, range]` with probability `outlier_prob`,
    /// Gaussian noise at `snr_db` otherwise.
    Sparse {
        outlier_prob: f64,
        outlier_range: f64,
        snr_db: f64,
    },
    /// Noise-free observations.
    None,
}

impl NoiseConfig {
    pub fn paper_alpha_stable() -> Self {
        NoiseConfig::AlphaStable {
            alpha: 1.0,
            beta: 0.5,
            sigma: 1.0,
        }
    }

    pub fn paper_sparse() -> Self {
        NoiseConfig::Sparse {
            outlier_prob: 0.1,
            outlier_range: 100.0,
            snr_db: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseConfig::AlphaStable { alpha, beta, sigma } => {
                if !(alpha > 0.0 && alpha <= 2.0) {
                    return Err(Error::InvalidConfig(format!("stability index {alpha} outside (0, 2]")));
                }
                if !(-1.0..=1.0).contains(&beta) {
                    return Err(Error::InvalidConfig(format!("skewness {beta} outside [-1, 1]")));
                }
                if !(sigma > 0.0) {
                    return Err(Error::InvalidConfig(format!("stable scale {sigma} must be positive")));
                }
            }
            NoiseConfig::Sparse {
                outlier_prob,
                outlier_range,
                snr_db,
            } => {
                if !(0.0..=1.0).contains(&outlier_prob) {
                    return Err(Error::InvalidConfig(format!("outlier probability {outlier_prob} outside [0, 1]")));
                }
                if !(outlier_range >= 0.0) || !snr_db.is_finite() {
                    return Err(Error::InvalidConfig("invalid sparse-outlier parameters".into()));
                }
            }
            NoiseConfig::None => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub filter_order: usize,
    pub rho: f64,
    pub total_steps: usize,
    pub change_step: usize,
    pub noise: NoiseConfig,
}

impl ExperimentConfig {
    /// `L = 100`, `ρ = 1e-3`, change at 20 000 of 40 000 steps.
    pub fn paper(noise: NoiseConfig) -> Self {
        Self {
            filter_order: 100,
            rho: 1e-3,
            total_steps: 40_000,
            change_step: 20_000,
            noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_order == 0 {
            return Err(Error::InvalidConfig("filter order must be positive".into()));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.rho)));
        }
        if self.total_steps == 0 || self.change_step >= self.total_steps {
            return Err(Error::InvalidConfig(format!(
                "change step {} must precede total steps {}",
                self.change_step, self.total_steps
            )));
        }
        self.noise.validate()
    }
}

/// One draw of the stable law `S(alpha, beta, sigma, 0)` (the "S1"
/// parameterization) by the Chambers–Mallows–Stuck transform.
pub fn sample_alpha_stable<R: Rng + ?Sized>(alpha: f64, beta: f64, sigma: f64, rng: &mut R) -> f64 {
    let v = Uniform::new(-FRAC_PI_2, FRAC_PI_2).expect("valid range").sample(rng);
    let w: f64 = Exp1.sample(rng);
    if alpha == 1.0 {
        let shifted = FRAC_PI_2 + beta * v;
        let x = (shifted * v.tan() - beta * ((FRAC_PI_2 * w * v.cos()) / shifted).ln()) / FRAC_PI_2;
        sigma * x + beta * sigma * sigma.ln() / FRAC_PI_2
    } else {
        let t = beta * (PI * alpha / 2.0).tan();
        let b = t.atan() / alpha;
        let s = (1.0 + t * t).powf(1.0 / (2.0 * alpha));
        let x = s * (alpha * (v + b)).sin() / v.cos().powf(1.0 / alpha)
            * ((v - alpha * (v + b)).cos() / w).powf((1.0 - alpha) / alpha);
        sigma * x
    }
}

/// Sparse-outlier noise. `signal_power` is `E[(θ*ᵀx)²]`, i.e. `‖θ*‖²` for
/// standard Gaussian `x`.
pub fn sample_sparse_noise<R: Rng + ?Sized>(
    outlier_prob: f64,
    outlier_range: f64,
    snr_db: f64,
    signal_power: f64,
    rng: &mut R,
) -> f64 {
    if rng.random::<f64>() < outlier_prob {
        if outlier_range == 0.0 {
            return 0.0;
        }
        Uniform::new_inclusive(-outlier_range, outlier_range)
            .expect("valid range")
            .sample(rng)
    } else {
        let std = (signal_power / 10f64.powf(snr_db / 10.0)).sqrt();
        Normal::new(0.0, std).expect("finite std").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub x: Vec<f64>,
    pub y: f64,
    /// Noise realization, `y - θ*ᵀx`.
    pub o: f64,
    /// Whether `θ*` was redrawn just before this sample.
    pub changed: bool,
}

/// Seeded data stream. Two environments with the same configuration and seed
/// emit identical samples.
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: ExperimentConfig,
    rng: ChaCha8Rng,
    theta_star: Vec<f64>,
    signal_power: f64,
    step: usize,
}

impl Environment {
    pub fn new(cfg: ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(seed, 0);
        let theta_star = gaussian_vector(cfg.filter_order, &mut rng);
        let signal_power = dot(&theta_star, &theta_star);
        Ok(Self {
            cfg,
            rng,
            theta_star,
            signal_power,
            step: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    /// Index of the next sample.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn next_sample(&mut self) -> StreamSample {
        let changed = self.step == self.cfg.change_step && self.step > 0;
        if changed {
            self.theta_star = gaussian_vector(self.cfg.filter_order, &mut self.rng);
            self.signal_power = dot(&self.theta_star, &self.theta_star);
        }
        let x = gaussian_vector(self.cfg.filter_order, &mut self.rng);
        let o = match self.cfg.noise {
            NoiseConfig::AlphaStable { alpha, beta, sigma } => sample_alpha_stable(alpha, beta, sigma, &mut self.rng),
            NoiseConfig::Sparse {
                outlier_prob,
                outlier_range,
                snr_db,
            } => sample_sparse_noise(outlier_prob, outlier_range, snr_db, self.signal_power, &mut self.rng),
            NoiseConfig::None => 0.0,
        };
        let y = dot(&self.theta_star, &x) + o;
        self.step += 1;
        // recompute so that y - θ*ᵀx reproduces o bit-exactly
        let o = y - dot(&self.theta_star, &x);
        StreamSample { x, y, o, changed }
    }

    /// Writes `n,o,y,changed` for the first `steps` samples of a fresh
    /// environment with this configuration and seed.
    pub fn dump_csv(cfg: ExperimentConfig, seed: u64, steps: usize, path: &Path) -> Result<()> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut env = Environment::new(cfg, seed)?;
        let file = std::fs::File::create(path).map_err(io_err)?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "n,o,y,changed").map_err(io_err)?;
        for n in 0..steps {
            let s = env.next_sample();
            writeln!(out, "{n},{},{},{}", s.o, s.y, u8::from(s.changed)).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

fn gaussian_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg(noise: NoiseConfig) -> ExperimentConfig {
        ExperimentConfig {
            filter_order: 5,
            rho: 1e-3,
            total_steps: 100,
            change_step: 50,
            noise,
        }
    }

    #[test]
    fn stable_alpha_two_is_gaussian_with_variance_two_sigma_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_alpha_stable(2.0, 0.0, 1.0, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 2.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn stable_cauchy_median_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut xs: Vec<f64> = (0..100_000).map(|_| sample_alpha_stable(1.0, 0.0, 1.0, &mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let median = 0.5 * (xs[49_999] + xs[50_000]);
        assert!(median.abs() < 0.05, "median {median}");
        // Cauchy quartiles are ±1
        assert!((xs[75_000] - 1.0).abs() < 0.05);
    }

    #[test]
    fn stable_draws_are_seeded() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10).map(|_| sample_alpha_stable(1.0, 0.5, 1.0, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn stable_general_branch_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(a, b) in &[(0.5, -1.0), (1.5, 0.5), (1.9, 1.0), (1.2, 0.0)] {
            for _ in 0..1000 {
                assert!(sample_alpha_stable(a, b, 2.0, &mut rng).is_finite());
            }
        }
    }

    #[test]
    fn sparse_all_outliers_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_sparse_noise(1.0, 100.0, 30.0, 100.0, &mut rng)).collect();
        assert!(xs.iter().all(|x| x.abs() <= 100.0));
        xs.sort_by(f64::total_cmp);
        // Kolmogorov–Smirnov against U[-100, 100]; 1.628 is the 1% critical value
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = (x + 100.0) / 200.0;
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d * (n as f64).sqrt() < 1.628, "KS statistic {d}");
    }

    #[test]
    fn sparse_gaussian_variance_matches_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_sparse_noise(0.0, 100.0, 30.0, 100.0, &mut rng)).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var - 0.1).abs() < 0.005, "variance {var}");
    }

    #[test]
    fn sparse_outlier_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        // Gaussian part at 30 dB of power 1 never exceeds 0.5 in practice;
        // count draws that came from the outlier branch through a tagged run.
        let mut outliers = 0;
        for _ in 0..n {
            if rng.clone().random::<f64>() < 0.1 {
                outliers += 1;
            }
            sample_sparse_noise(0.1, 100.0, 30.0, 1.0, &mut rng);
        }
        let frac = outliers as f64 / n as f64;
        assert!((frac - 0.1).abs() < 0.01, "fraction {frac}");
    }

    #[test]
    fn noise_free_stream_matches_model() {
        let mut env = Environment::new(cfg(NoiseConfig::None), 9).unwrap();
        for _ in 0..20 {
            let s = env.next_sample();
            assert_eq!(s.o, 0.0);
            assert_eq!(s.y, dot(env.theta_star(), &s.x));
        }
    }

    #[test]
    fn model_identity_is_exact() {
        let mut env = Environment::new(cfg(NoiseConfig::paper_alpha_stable()), 10).unwrap();
        for _ in 0..100 {
            let s = env.next_sample();
            assert_eq!(s.y - dot(env.theta_star(), &s.x), s.o);
        }
    }

    #[test]
    fn system_changes_once_at_change_step() {
        let mut env = Environment::new(cfg(NoiseConfig::paper_sparse()), 11).unwrap();
        let initial = env.theta_star().to_vec();
        for n in 0..100 {
            let s = env.next_sample();
            assert_eq!(s.changed, n == 50);
            if n < 50 {
                assert_eq!(env.theta_star(), initial.as_slice());
            } else {
                assert_ne!(env.theta_star(), initial.as_slice());
            }
        }
    }

    #[test]
    fn regressor_covariance_is_identity() {
        let mut env = Environment::new(cfg(NoiseConfig::None), 12).unwrap();
        let n = 10_000;
        let mut diag = [0.0; 5];
        for _ in 0..n {
            let s = env.next_sample();
            for (d, x) in diag.iter_mut().zip(&s.x) {
                *d += x * x / n as f64;
            }
        }
        assert!(diag.iter().all(|d| (d - 1.0).abs() < 0.1), "{diag:?}");
    }

    #[test]
    fn seeded_streams_repeat() {
        let c = cfg(NoiseConfig::paper_alpha_stable());
        let mut a = Environment::new(c, 13).unwrap();
        let mut b = Environment::new(c, 13).unwrap();
        for _ in 0..100 {
            assert_eq!(a.next_sample(), b.next_sample());
        }
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(NoiseConfig::None);
        c.change_step = 100;
        assert!(c.validate().is_err());
        let c = cfg(NoiseConfig::Sparse {
            outlier_prob: 1.5,
            outlier_range: 1.0,
            snr_db: 30.0,
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stream.csv");
        Environment::dump_csv(cfg(NoiseConfig::paper_sparse()), 1, 60, &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,o,y,changed");
        assert_eq!(lines.len(), 61);
        assert!(lines[51].ends_with(",1"));
    }
}
