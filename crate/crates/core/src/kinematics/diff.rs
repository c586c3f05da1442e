//! Tensor-valued forward kinematics.
//!
//! The training loss needs gradients to flow from the Cartesian error back
//! into the predicted joint values, so this variant builds the transform
//! composition out of elementary differentiable tensor ops: per joint the
//! rotation is I + sin(q) K + (1 - cos(q)) K^2 with a constant
//! skew matrix K, embedded in 4x4 homogeneous form and chained with batched
//! matmuls.

use candle_core::{DType, Device, Tensor};

use super::{JointKind, KinematicChain, RobotModel};
use crate::error::{Error, Result};

enum Step {
    Fixed(Tensor),
    Revolute {
        origin: Tensor,
        skew: Tensor,
        skew_sq: Tensor,
        dof_index: usize,
    },
}

/// Differentiable FK for one chain, precomputed constant tensors.
pub struct DiffFk {
    base: Tensor,
    eef: Tensor,
    identity: Tensor,
    steps: Vec<Step>,
    dof: usize,
}

fn iso_tensor(iso: &nalgebra::Isometry3<f64>, device: &Device, dtype: DType) -> Result<Tensor> {
    let m = iso.to_homogeneous();
    let rows: Vec<f64> = (0..4).flat_map(|r| (0..4).map(move |c| m[(r, c)])).collect();
    Ok(Tensor::from_vec(rows, (4, 4), device)?.to_dtype(dtype)?)
}

impl DiffFk {
    pub fn new(chain: &KinematicChain, device: &Device, dtype: DType) -> Result<Self> {
        let mut steps = Vec::new();
        let mut dof_index = 0;
        for (j, joint) in chain.joints.iter().enumerate() {
            if j > chain.eef_joint_index() {
                break;
            }
            match joint.kind {
                JointKind::Fixed => {
                    steps.push(Step::Fixed(iso_tensor(&joint.origin, device, dtype)?));
                }
                JointKind::Revolute => {
                    let a = joint.axis;
                    #[rustfmt::skip]
                    let k = vec![
                        0.0, -a.z,  a.y, 0.0,
                        a.z,  0.0, -a.x, 0.0,
                       -a.y,  a.x,  0.0, 0.0,
                        0.0,  0.0,  0.0, 0.0,
                    ];
                    let skew = Tensor::from_vec(k.clone(), (4, 4), device)?.to_dtype(dtype)?;
                    let skew_sq = skew.matmul(&skew)?;
                    steps.push(Step::Revolute {
                        origin: iso_tensor(&joint.origin, device, dtype)?,
                        skew,
                        skew_sq,
                        dof_index,
                    });
                    dof_index += 1;
                }
            }
        }
        Ok(Self {
            base: iso_tensor(&chain.base_frame, device, dtype)?,
            eef: iso_tensor(&chain.eef_offset, device, dtype)?,
            identity: Tensor::eye(4, dtype, device)?,
            steps,
            dof: chain.dof(),
        })
    }

    /// Number of configuration values the chain expects per sample.
    pub fn dof(&self) -> usize {
        self.dof
    }

    /// End-effector positions for a batch of configurations.
    ///
    /// `q` has shape (batch, dof) in radians; returns (batch, 3) in meters.
    pub fn positions(&self, q: &Tensor) -> Result<Tensor> {
        let (_batch, dof) = q.dims2()?;
        if dof != self.dof {
            return Err(Error::Dimension {
                expected: self.dof,
                got: dof,
                context: "differentiable FK configuration".into(),
            });
        }
        let mut transform = self.base.unsqueeze(0)?;
        for step in &self.steps {
            match step {
                Step::Fixed(origin) => {
                    transform = transform.broadcast_matmul(origin)?;
                }
                Step::Revolute {
                    origin,
                    skew,
                    skew_sq,
                    dof_index,
                } => {
                    transform = transform.broadcast_matmul(origin)?;
                    let theta = q.narrow(1, *dof_index, 1)?.unsqueeze(2)?;
                    let sin = theta.sin()?;
                    let one_minus_cos = (1.0 - theta.cos()?)?;
                    let rot = self
                        .identity
                        .broadcast_add(&sin.broadcast_mul(skew)?)?
                        .broadcast_add(&one_minus_cos.broadcast_mul(skew_sq)?)?;
                    transform = transform.broadcast_matmul(&rot)?;
                }
            }
        }
        transform = transform.broadcast_matmul(&self.eef)?;
        Ok(transform.narrow(1, 0, 3)?.narrow(2, 3, 1)?.squeeze(2)?)
    }
}

/// Differentiable FK across all chains of a robot.
pub struct RobotDiffFk {
    chains: Vec<DiffFk>,
    ranges: Vec<std::ops::Range<usize>>,
    dof: usize,
}

impl RobotDiffFk {
    pub fn new(robot: &RobotModel, device: &Device, dtype: DType) -> Result<Self> {
        let chains = robot
            .chains
            .iter()
            .map(|c| DiffFk::new(c, device, dtype))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            chains,
            ranges: robot.chain_ranges(),
            dof: robot.dof(),
        })
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    /// (batch, robot dof) -> (batch, 3 * n_chains), chains in layout order.
    pub fn positions(&self, q: &Tensor) -> Result<Tensor> {
        let (_batch, dof) = q.dims2()?;
        if dof != self.dof {
            return Err(Error::Dimension {
                expected: self.dof,
                got: dof,
                context: "robot differentiable FK configuration".into(),
            });
        }
        let mut parts = Vec::with_capacity(self.chains.len());
        for (fk, range) in self.chains.iter().zip(&self.ranges) {
            let slice = q.narrow(1, range.start, range.end - range.start)?;
            parts.push(fk.positions(&slice)?);
        }
        Ok(Tensor::cat(&parts, 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{bundled, load_chain, JointConfiguration};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_fk_matches_analytic_fk() {
        let device = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for doc in [bundled::SYNTHETIC_3DOF, bundled::NICOL_LEFT] {
            let chain = load_chain(doc, "bundled").unwrap();
            let fk = DiffFk::new(&chain, &device, DType::F64).unwrap();
            let batch = 5;
            let mut qs = Vec::new();
            for _ in 0..batch {
                for (lo, hi) in chain.limits() {
                    qs.push(rng.gen_range(lo..hi));
                }
            }
            let q = Tensor::from_vec(qs.clone(), (batch, chain.dof()), &device).unwrap();
            let pos = fk.positions(&q).unwrap().to_vec2::<f64>().unwrap();
            for (b, row) in pos.iter().enumerate() {
                let slice = &qs[b * chain.dof()..(b + 1) * chain.dof()];
                let reference = chain.forward_kinematics(slice).unwrap().position;
                for (i, v) in row.iter().enumerate() {
                    assert!(
                        (v - reference[i]).abs() < 1e-9,
                        "chain {} batch {b} axis {i}: {v} vs {}",
                        chain.name,
                        reference[i]
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_of_position_matches_jacobian() {
        let device = Device::Cpu;
        let chain = load_chain(bundled::SYNTHETIC_3DOF, "synthetic").unwrap();
        let fk = DiffFk::new(&chain, &device, DType::F64).unwrap();
        let q_vals = vec![0.4, -0.3, 0.7];
        let q = candle_core::Var::from_vec(q_vals.clone(), (1, 3), &device).unwrap();
        // Differentiate the x coordinate; its gradient is the Jacobian's first row.
        let x = fk
            .positions(q.as_tensor())
            .unwrap()
            .narrow(1, 0, 1)
            .unwrap()
            .sum_all()
            .unwrap();
        let grads = x.backward().unwrap();
        let g = grads
            .get(&q)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1::<f64>()
            .unwrap();
        let jac = chain.jacobian(&q_vals).unwrap();
        for j in 0..3 {
            assert!(
                (g[j] - jac[(0, j)]).abs() < 1e-9,
                "dx/dq{j}: autodiff {} vs analytic {}",
                g[j],
                jac[(0, j)]
            );
        }
    }

    #[test]
    fn robot_fk_concatenates_chains() {
        let device = Device::Cpu;
        let robot = crate::kinematics::RobotModel::diri();
        let fk = RobotDiffFk::new(&robot, &device, DType::F64).unwrap();
        let q = Tensor::zeros((2, 26), DType::F64, &device).unwrap();
        let pos = fk.positions(&q).unwrap();
        assert_eq!(pos.dims(), &[2, 6]);
        let row = pos.narrow(0, 0, 1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let poses = robot
            .forward_kinematics(&JointConfiguration::new(vec![0.0; 26], "diri-26"))
            .unwrap();
        for (c, pose) in poses.iter().enumerate() {
            for i in 0..3 {
                assert!((row[3 * c + i] - pose.position[i]).abs() < 1e-9);
            }
        }
    }
}
