//! Discrete diffusion noise machinery.
//!
//! A cosine schedule over `T` levels defines the cumulative
//! signal-retention table alpha_bar; forward noising mixes the clean target
//! with a Gaussian draw, and the x0-prediction sampler re-noises the model's
//! clean prediction down to the next level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor for the alpha_bar table; keeps the signal-to-noise ratio positive
/// after the cosine hits zero at t = T.
const ALPHA_BAR_FLOOR: f64 = 1e-8;

/// Precomputed alpha_bar table for `t_max` noise levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSchedule {
    t_max: usize,
    s: f64,
    alpha_bar: Vec<f64>,
}

/// A noised target together with the level and the Gaussian draw used, so
/// the noising is reproducible: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
#[derive(Debug, Clone)]
pub struct NoisyTarget {
    pub x_t: Vec<f64>,
    pub t: usize,
    pub epsilon: Vec<f64>,
}

/// Cosine schedule: f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2),
/// alpha_bar_t = f(t) / f(0).
pub fn build_cosine_schedule(t_max: usize, s: f64) -> Result<NoiseSchedule> {
    if t_max < 1 {
        return Err(Error::Argument("schedule needs at least one level".into()));
    }
    if !(0.0 < s && s < 0.1) {
        return Err(Error::Argument(format!(
            "schedule offset s must lie in (0, 0.1), got {s}"
        )));
    }
    let f = |t: f64| {
        let angle = ((t / t_max as f64 + s) / (1.0 + s)) * std::f64::consts::FRAC_PI_2;
        angle.cos().powi(2)
    };
    let f0 = f(0.0);
    let alpha_bar = (0..=t_max)
        .map(|t| (f(t as f64) / f0).clamp(ALPHA_BAR_FLOOR, 1.0))
        .collect();
    Ok(NoiseSchedule { t_max, s, alpha_bar })
}

impl NoiseSchedule {
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn offset(&self) -> f64 {
        self.s
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// (sqrt(alpha_bar_t), sqrt(1 - alpha_bar_t)).
    pub fn mixing_coefficients(&self, t: usize) -> Result<(f64, f64)> {
        if t > self.t_max {
            return Err(Error::Argument(format!(
                "noise level {t} out of range [0, {}]",
                self.t_max
            )));
        }
        let ab = self.alpha_bar[t];
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    }

    /// Forward noising of a normalized target vector.
    pub fn add_noise(&self, x0: &[f64], t: usize, epsilon: &[f64]) -> Result<NoisyTarget> {
        if epsilon.len() != x0.len() {
            return Err(Error::Dimension {
                expected: x0.len(),
                got: epsilon.len(),
                context: "noise vector".into(),
            });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in clean target".into()));
        }
        let (signal, noise) = self.mixing_coefficients(t)?;
        let x_t = x0
            .iter()
            .zip(epsilon)
            .map(|(x, e)| signal * x + noise * e)
            .collect();
        Ok(NoisyTarget {
            x_t,
            t,
            epsilon: epsilon.to_vec(),
        })
    }

    /// One x0-prediction sampler step: re-noise the predicted clean target
    /// down to level t - 1.
    pub fn denoise_step(
        &self,
        x0_pred: &[f64],
        t: usize,
        epsilon: &[f64],
    ) -> Result<Vec<f64>> {
        if t == 0 {
            return Err(Error::Argument(
                "denoise_step needs t >= 1; level 0 is already clean".into(),
            ));
        }
        Ok(self.add_noise(x0_pred, t - 1, epsilon)?.x_t)
    }

    /// `k` noise levels evenly spaced from t_max down, ending at 1. Used by
    /// the iterative sampler.
    pub fn spaced_levels(&self, k: usize) -> Vec<usize> {
        if k == 0 {
            return Vec::new();
        }
        if k == 1 {
            return vec![self.t_max];
        }
        (0..k)
            .map(|i| {
                let frac = i as f64 / (k - 1) as f64;
                let t = self.t_max as f64 - frac * (self.t_max - 1) as f64;
                t.round() as usize
            })
            .collect()
    }
}
