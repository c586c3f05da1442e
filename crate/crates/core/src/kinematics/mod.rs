//! Kinematic chain descriptions and forward kinematics.
//!
//! A [`KinematicChain`] is a serial sequence of joints. The end effector
//! hangs off a designated joint frame (`eef_joint`); joints listed after it
//! (e.g. hand joints) belong to the chain's configuration vector but do not
//! move the end effector. [`RobotModel`] groups several chains (one per arm)
//! behind a single flat joint layout.

mod parse;

pub mod diff;

use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use parse::{load_chain, load_chain_file};

/// Bundled chain description documents, also shipped under `chains/`.
pub mod bundled {
    pub const SYNTHETIC_3DOF: &str = include_str!("../../../../chains/synthetic_3dof.chain");
    pub const NICOL_LEFT: &str = include_str!("../../../../chains/nicol_left.chain");
    pub const NICOL_RIGHT: &str = include_str!("../../../../chains/nicol_right.chain");
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Fixed,
}

/// One joint of a serial chain. `axis` and `limits` are ignored for fixed
/// joints; `origin` is the rigid transform from the parent joint frame.
#[derive(Debug, Clone)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub origin: Isometry3<f64>,
    /// (lower, upper) in radians.
    pub limits: (f64, f64),
}

impl JointSpec {
    pub fn is_actuated(&self) -> bool {
        self.kind == JointKind::Revolute
    }
}

/// Cartesian pose of the end effector.
#[derive(Debug, Clone, PartialEq)]
pub struct EndEffectorPose {
    /// Position in meters, base coordinates.
    pub position: Vector3<f64>,
    /// Unit quaternion (w, x, y, z) when orientation was requested.
    pub orientation: Option<UnitQuaternion<f64>>,
}

impl EndEffectorPose {
    /// Position followed by quaternion (w, x, y, z); identity rotation when
    /// no orientation is stored.
    pub fn as_seven(&self) -> [f64; 7] {
        let q = self.orientation.unwrap_or_else(UnitQuaternion::identity);
        [
            self.position.x,
            self.position.y,
            self.position.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ]
    }
}

/// A vector of joint angles bound to a named layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointConfiguration {
    pub values: Vec<f64>,
    pub layout_id: String,
}

impl JointConfiguration {
    pub fn new(values: Vec<f64>, layout_id: impl Into<String>) -> Self {
        Self {
            values,
            layout_id: layout_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A single serial kinematic chain.
#[derive(Debug, Clone)]
pub struct KinematicChain {
    pub name: String,
    pub joints: Vec<JointSpec>,
    pub base_frame: Isometry3<f64>,
    pub eef_offset: Isometry3<f64>,
    /// Index of the joint whose frame carries `eef_offset`. Joints after it
    /// (hand joints) do not move the end effector.
    eef_joint: usize,
}

impl KinematicChain {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<JointSpec>,
        base_frame: Isometry3<f64>,
        eef_offset: Isometry3<f64>,
        eef_joint: Option<usize>,
    ) -> Result<Self> {
        let name = name.into();
        if joints.is_empty() {
            return Err(Error::Validation(format!("chain '{name}' has no joints")));
        }
        let eef_joint = eef_joint.unwrap_or(joints.len() - 1);
        if eef_joint >= joints.len() {
            return Err(Error::Validation(format!(
                "chain '{name}': eef joint index {eef_joint} out of range"
            )));
        }
        let chain = Self {
            name,
            joints,
            base_frame,
            eef_offset,
            eef_joint,
        };
        chain.validate()?;
        Ok(chain)
    }

    fn validate(&self) -> Result<()> {
        for joint in &self.joints {
            if joint.is_actuated() {
                let norm = joint.axis.norm();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::Validation(format!(
                        "joint '{}': axis {:?} is not a unit vector (norm {norm})",
                        joint.name, joint.axis
                    )));
                }
                if joint.limits.0 >= joint.limits.1 {
                    return Err(Error::Validation(format!(
                        "joint '{}': lower limit {} must be below upper limit {}",
                        joint.name, joint.limits.0, joint.limits.1
                    )));
                }
            }
            let rot = joint.origin.rotation.to_rotation_matrix();
            let err = (rot.matrix() * rot.matrix().transpose()
                - nalgebra::Matrix3::identity())
            .abs()
            .max();
            if err > 1e-9 {
                return Err(Error::Validation(format!(
                    "joint '{}': origin rotation is not orthonormal (error {err})",
                    joint.name
                )));
            }
        }
        Ok(())
    }

    /// Number of actuated joints (the chain's configuration length).
    pub fn dof(&self) -> usize {
        self.joints.iter().filter(|j| j.is_actuated()).count()
    }

    /// (lower, upper) per actuated joint, in layout order.
    pub fn limits(&self) -> Vec<(f64, f64)> {
        self.joints
            .iter()
            .filter(|j| j.is_actuated())
            .map(|j| j.limits)
            .collect()
    }

    /// Whether actuated joint `i` (configuration index) moves the end effector.
    pub fn moves_eef(&self, dof_index: usize) -> bool {
        let mut k = 0;
        for (j, joint) in self.joints.iter().enumerate() {
            if joint.is_actuated() {
                if k == dof_index {
                    return j <= self.eef_joint;
                }
                k += 1;
            }
        }
        false
    }

    pub fn eef_joint_index(&self) -> usize {
        self.eef_joint
    }

    fn check_config(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::Dimension {
                expected: self.dof(),
                got: q.len(),
                context: format!("joint configuration for chain '{}'", self.name),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite joint value in configuration for chain '{}'",
                self.name
            )));
        }
        Ok(())
    }

    /// Forward kinematics: end-effector pose for configuration `q`.
    pub fn forward_kinematics(&self, q: &[f64]) -> Result<EndEffectorPose> {
        self.check_config(q)?;
        let mut transform = self.base_frame;
        let mut qi = 0;
        for (j, joint) in self.joints.iter().enumerate() {
            if j > self.eef_joint {
                break;
            }
            transform *= joint.origin;
            if joint.is_actuated() {
                let rot = UnitQuaternion::from_axis_angle(&Unit::new_unchecked(joint.axis), q[qi]);
                transform *= Isometry3::from_parts(Translation3::identity(), rot);
                qi += 1;
            }
        }
        transform *= self.eef_offset;
        Ok(EndEffectorPose {
            position: transform.translation.vector,
            orientation: Some(transform.rotation),
        })
    }

    /// World positions of the base, every joint frame up to the end-effector
    /// joint, and the end effector. Used by the synthetic renderer.
    pub fn link_positions(&self, q: &[f64]) -> Result<Vec<Point3<f64>>> {
        self.check_config(q)?;
        let mut points = vec![Point3::from(self.base_frame.translation.vector)];
        let mut transform = self.base_frame;
        let mut qi = 0;
        for (j, joint) in self.joints.iter().enumerate() {
            if j > self.eef_joint {
                break;
            }
            transform *= joint.origin;
            if joint.is_actuated() {
                let rot = UnitQuaternion::from_axis_angle(&Unit::new_unchecked(joint.axis), q[qi]);
                transform *= Isometry3::from_parts(Translation3::identity(), rot);
                qi += 1;
            }
            points.push(Point3::from(transform.translation.vector));
        }
        let eef = transform * self.eef_offset;
        points.push(Point3::from(eef.translation.vector));
        Ok(points)
    }

    /// Analytic position Jacobian, 3 x dof (meters per radian). Columns for
    /// joints downstream of the end-effector attachment are zero.
    pub fn jacobian(&self, q: &[f64]) -> Result<nalgebra::DMatrix<f64>> {
        self.check_config(q)?;
        let eef = self.forward_kinematics(q)?.position;
        let mut jac = nalgebra::DMatrix::zeros(3, self.dof());
        let mut transform = self.base_frame;
        let mut qi = 0;
        for (j, joint) in self.joints.iter().enumerate() {
            if j > self.eef_joint {
                break;
            }
            transform *= joint.origin;
            if joint.is_actuated() {
                // Revolute column: z_i x (p_eef - p_i), axis and origin taken
                // in world frame before applying the joint rotation.
                let world_axis = transform.rotation * joint.axis;
                let joint_pos = transform.translation.vector;
                let rot = UnitQuaternion::from_axis_angle(&Unit::new_unchecked(joint.axis), q[qi]);
                transform *= Isometry3::from_parts(Translation3::identity(), rot);
                let col = world_axis.cross(&(eef - joint_pos));
                jac.set_column(qi, &col);
                qi += 1;
            }
        }
        Ok(jac)
    }
}

/// A robot as a set of chains sharing one flat joint layout. The
/// configuration vector concatenates the chains' actuated joints in order.
#[derive(Debug, Clone)]
pub struct RobotModel {
    pub layout_id: String,
    pub chains: Vec<KinematicChain>,
}

impl RobotModel {
    pub fn new(layout_id: impl Into<String>, chains: Vec<KinematicChain>) -> Result<Self> {
        if chains.is_empty() {
            return Err(Error::Validation("robot model needs at least one chain".into()));
        }
        Ok(Self {
            layout_id: layout_id.into(),
            chains,
        })
    }

    /// The bundled 3-DoF synthetic arm.
    pub fn synthetic_3dof() -> Self {
        let chain = load_chain(bundled::SYNTHETIC_3DOF, "bundled synthetic_3dof")
            .expect("bundled synthetic chain is valid");
        Self {
            layout_id: "synthetic-3dof".into(),
            chains: vec![chain],
        }
    }

    /// The bundled NICOL-like two-arm layout (2 x 13 joints, last five of
    /// each arm are hand joints that do not move the arm end effector).
    pub fn diri() -> Self {
        let left = load_chain(bundled::NICOL_LEFT, "bundled nicol_left").expect("valid chain");
        let right = load_chain(bundled::NICOL_RIGHT, "bundled nicol_right").expect("valid chain");
        Self {
            layout_id: "diri-26".into(),
            chains: vec![left, right],
        }
    }

    pub fn for_layout(layout_id: &str) -> Result<Self> {
        match layout_id {
            "synthetic-3dof" => Ok(Self::synthetic_3dof()),
            "diri-26" => Ok(Self::diri()),
            other => Err(Error::Argument(format!("unknown joint layout '{other}'"))),
        }
    }

    pub fn dof(&self) -> usize {
        self.chains.iter().map(|c| c.dof()).sum()
    }

    pub fn limits(&self) -> Vec<(f64, f64)> {
        self.chains.iter().flat_map(|c| c.limits()).collect()
    }

    /// Configuration-vector ranges per chain.
    pub fn chain_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut ranges = Vec::with_capacity(self.chains.len());
        let mut start = 0;
        for chain in &self.chains {
            ranges.push(start..start + chain.dof());
            start += chain.dof();
        }
        ranges
    }

    fn check_layout(&self, q: &JointConfiguration) -> Result<()> {
        if q.layout_id != self.layout_id {
            return Err(Error::Argument(format!(
                "configuration layout '{}' does not match robot layout '{}'",
                q.layout_id, self.layout_id
            )));
        }
        if q.len() != self.dof() {
            return Err(Error::Dimension {
                expected: self.dof(),
                got: q.len(),
                context: format!("configuration for layout '{}'", self.layout_id),
            });
        }
        Ok(())
    }

    /// Forward kinematics per chain.
    pub fn forward_kinematics(&self, q: &JointConfiguration) -> Result<Vec<EndEffectorPose>> {
        self.check_layout(q)?;
        self.chains
            .iter()
            .zip(self.chain_ranges())
            .map(|(chain, range)| chain.forward_kinematics(&q.values[range]))
            .collect()
    }

    /// Clamp every value into its joint's limits.
    pub fn clamp(&self, q: &mut JointConfiguration) -> Result<()> {
        self.check_layout(q)?;
        for (value, (lo, hi)) in q.values.iter_mut().zip(self.limits()) {
            *value = value.clamp(lo, hi);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
