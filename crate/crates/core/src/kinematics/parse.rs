//! Chain description documents.
//!
//! A chain file is a small TOML document:
//!
//! ```toml
//! name = "synthetic_3dof"
//! dof = 3
//!
//! [base_frame]
//! xyz = [0.0, 0.0, 0.0]
//! rpy = [0.0, 0.0, 0.0]
//!
//! [eef_offset]
//! xyz = [0.05, 0.0, 0.0]
//! rpy = [0.0, 0.0, 0.0]
//!
//! [[joints]]
//! name = "yaw"
//! kind = "revolute"
//! axis = [0.0, 0.0, 1.0]
//! origin = { xyz = [0.0, 0.0, 0.05], rpy = [0.0, 0.0, 0.0] }
//! limits = [-1.2, 1.2]
//! ```
//!
//! `eef_joint` optionally names the joint that carries the end-effector
//! offset; joints listed after it (hand joints) stay in the configuration
//! vector but do not move the end effector. An optional `parent` per joint
//! exists only to detect branching descriptions, which are rejected.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::Deserialize;

use super::{JointKind, JointSpec, KinematicChain};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainDoc {
    name: String,
    /// Declared number of actuated joints, cross-checked after parsing.
    dof: usize,
    base_frame: Option<FrameDoc>,
    eef_offset: Option<FrameDoc>,
    eef_joint: Option<String>,
    joints: Vec<JointDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    xyz: [f64; 3],
    rpy: [f64; 3],
}

impl FrameDoc {
    fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.xyz[0], self.xyz[1], self.xyz[2]),
            UnitQuaternion::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2]),
        )
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    kind: JointKind,
    axis: Option<[f64; 3]>,
    origin: Option<FrameDoc>,
    limits: Option<[f64; 2]>,
    parent: Option<String>,
}

/// Parse and validate a chain description document.
///
/// `context` names the source (file path) for error messages.
pub fn load_chain(document: &str, context: &str) -> Result<KinematicChain> {
    let doc: ChainDoc =
        toml::from_str(document).map_err(|e| Error::parse(context, e.to_string()))?;

    reject_branching(&doc, context)?;

    let mut joints = Vec::with_capacity(doc.joints.len());
    let mut eef_joint = None;
    for (i, jd) in doc.joints.iter().enumerate() {
        let axis = match (jd.kind, jd.axis) {
            (JointKind::Fixed, _) => Vector3::zeros(),
            (JointKind::Revolute, Some(a)) => Vector3::new(a[0], a[1], a[2]),
            (JointKind::Revolute, None) => {
                return Err(Error::parse(
                    context,
                    format!("joint '{}': revolute joint needs an axis", jd.name),
                ))
            }
        };
        let limits = match (jd.kind, jd.limits) {
            (JointKind::Fixed, _) => (0.0, 0.0),
            (JointKind::Revolute, Some([lo, hi])) => (lo, hi),
            (JointKind::Revolute, None) => {
                return Err(Error::parse(
                    context,
                    format!("joint '{}': revolute joint needs limits", jd.name),
                ))
            }
        };
        if doc.eef_joint.as_deref() == Some(jd.name.as_str()) {
            eef_joint = Some(i);
        }
        joints.push(JointSpec {
            name: jd.name.clone(),
            kind: jd.kind,
            axis,
            origin: jd
                .origin
                .as_ref()
                .map(FrameDoc::to_isometry)
                .unwrap_or_else(Isometry3::identity),
            limits,
        });
    }

    if let Some(name) = &doc.eef_joint {
        if eef_joint.is_none() {
            return Err(Error::parse(
                context,
                format!("eef_joint '{name}' does not name any joint"),
            ));
        }
    }

    let chain = KinematicChain::new(
        doc.name,
        joints,
        doc.base_frame
            .as_ref()
            .map(FrameDoc::to_isometry)
            .unwrap_or_else(Isometry3::identity),
        doc.eef_offset
            .as_ref()
            .map(FrameDoc::to_isometry)
            .unwrap_or_else(Isometry3::identity),
        eef_joint,
    )?;

    if chain.dof() != doc.dof {
        return Err(Error::Validation(format!(
            "{context}: document declares dof = {}, but {} actuated joints were parsed",
            doc.dof,
            chain.dof()
        )));
    }
    Ok(chain)
}

/// Load a chain from a file on disk.
pub fn load_chain_file(path: &std::path::Path) -> Result<KinematicChain> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_chain(&text, &path.display().to_string())
}

/// A robot may own multiple chains, but each document must describe a single
/// serial chain: every joint's parent is the joint listed before it.
fn reject_branching(doc: &ChainDoc, context: &str) -> Result<()> {
    for (i, jd) in doc.joints.iter().enumerate() {
        let Some(parent) = &jd.parent else { continue };
        let expected = if i == 0 { None } else { Some(&doc.joints[i - 1].name) };
        if Some(parent) != expected {
            return Err(Error::UnsupportedTopology(format!(
                "{context}: joint '{}' declares parent '{parent}', but a serial chain \
                 requires the preceding joint{}",
                jd.name,
                expected
                    .map(|n| format!(" '{n}'"))
                    .unwrap_or_else(|| " (none, it is the root)".into()),
            )));
        }
    }
    Ok(())
}
