//! Per-joint affine normalization.
//!
//! The diffusion process operates on joint values mapped from
//! [lower, upper] to [-1, 1]; without this, a shared Gaussian noise scale
//! is meaningless across heterogeneous joint ranges.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Normalizer {
    center: Vec<f64>,
    half_range: Vec<f64>,
}

impl Normalizer {
    pub fn from_limits(limits: &[(f64, f64)]) -> Result<Self> {
        for &(lo, hi) in limits {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::Validation(format!(
                    "normalizer needs lower < upper, got ({lo}, {hi})"
                )));
            }
        }
        Ok(Self {
            center: limits.iter().map(|(lo, hi)| (lo + hi) / 2.0).collect(),
            half_range: limits.iter().map(|(lo, hi)| (hi - lo) / 2.0).collect(),
        })
    }

    pub fn for_robot(robot: &RobotModel) -> Self {
        Self::from_limits(&robot.limits()).expect("robot limits are validated at parse time")
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: len,
                context: "normalizer input".into(),
            });
        }
        Ok(())
    }

    pub fn normalize(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_len(values.len())?;
        Ok(values
            .iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(v, (c, h))| (v - c) / h)
            .collect())
    }

    pub fn denormalize(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.check_len(values.len())?;
        Ok(values
            .iter()
            .zip(self.center.iter().zip(&self.half_range))
            .map(|(v, (c, h))| v * h + c)
            .collect())
    }

    fn constants(&self, like: &Tensor) -> Result<(Tensor, Tensor)> {
        let device = like.device();
        let center = Tensor::from_vec(self.center.clone(), (1, self.dim()), device)?
            .to_dtype(like.dtype())?;
        let half = Tensor::from_vec(self.half_range.clone(), (1, self.dim()), device)?
            .to_dtype(like.dtype())?;
        Ok((center, half))
    }

    /// (batch, dof) tensor version of [`Self::normalize`].
    pub fn normalize_t(&self, values: &Tensor) -> Result<Tensor> {
        self.check_len(values.dims2()?.1)?;
        let (center, half) = self.constants(values)?;
        Ok(values.broadcast_sub(&center)?.broadcast_div(&half)?)
    }

    /// (batch, dof) tensor version of [`Self::denormalize`].
    pub fn denormalize_t(&self, values: &Tensor) -> Result<Tensor> {
        self.check_len(values.dims2()?.1)?;
        let (center, half) = self.constants(values)?;
        Ok(values.broadcast_mul(&half)?.broadcast_add(&center)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn round_trip_and_bounds() {
        let n = Normalizer::from_limits(&[(-1.2, 1.2), (-1.0, 1.0), (0.0, 3.0)]).unwrap();
        let q = vec![-1.2, 1.0, 1.5];
        let norm = n.normalize(&q).unwrap();
        assert!((norm[0] + 1.0).abs() < 1e-12);
        assert!((norm[1] - 1.0).abs() < 1e-12);
        assert!(norm[2].abs() < 1e-12);
        let back = n.denormalize(&norm).unwrap();
        for (a, b) in back.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_version_agrees_with_scalar_version() {
        let n = Normalizer::from_limits(&[(-1.2, 1.2), (-1.0, 1.0)]).unwrap();
        let device = Device::Cpu;
        let t = Tensor::from_vec(vec![0.3f64, -0.5, 1.1, 0.9], (2, 2), &device)
            .unwrap()
            .to_dtype(DType::F64)
            .unwrap();
        let norm = n.normalize_t(&t).unwrap().to_vec2::<f64>().unwrap();
        let row0 = n.normalize(&[0.3, -0.5]).unwrap();
        assert!((norm[0][0] - row0[0]).abs() < 1e-12);
        assert!((norm[0][1] - row0[1]).abs() < 1e-12);
        let back = n
            .denormalize_t(&n.normalize_t(&t).unwrap())
            .unwrap()
            .to_vec2::<f64>()
            .unwrap();
        assert!((back[1][0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn degenerate_limits_are_rejected() {
        assert!(Normalizer::from_limits(&[(1.0, 1.0)]).is_err());
    }
}
