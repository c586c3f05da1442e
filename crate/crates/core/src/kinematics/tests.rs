use approx::assert_abs_diff_eq;
use nalgebra::{Isometry3, Matrix4, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

/// Independent brute-force oracle: composes plain 4x4 homogeneous matrices,
/// with the axis-angle rotation written out via the Rodrigues formula.
/// Deliberately shares no code with `forward_kinematics`.
pub fn oracle_fk(chain: &KinematicChain, q: &[f64]) -> Vector3<f64> {
    fn to_mat(iso: &Isometry3<f64>) -> Matrix4<f64> {
        iso.to_homogeneous()
    }
    fn rodrigues(axis: &Vector3<f64>, theta: f64) -> Matrix4<f64> {
        let (x, y, z) = (axis.x, axis.y, axis.z);
        let k = nalgebra::Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0);
        let r = nalgebra::Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos());
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m
    }

    let mut t = to_mat(&chain.base_frame);
    let mut qi = 0;
    for (j, joint) in chain.joints.iter().enumerate() {
        if j > chain.eef_joint_index() {
            break;
        }
        t *= to_mat(&joint.origin);
        if joint.is_actuated() {
            t *= rodrigues(&joint.axis, q[qi]);
            qi += 1;
        }
    }
    t *= to_mat(&chain.eef_offset);
    Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)])
}

fn one_link_chain() -> KinematicChain {
    let doc = r#"
        name = "one_link"
        dof = 1
        [eef_offset]
        xyz = [1.0, 0.0, 0.0]
        rpy = [0.0, 0.0, 0.0]
        [[joints]]
        name = "j0"
        kind = "revolute"
        axis = [0.0, 0.0, 1.0]
        limits = [-3.0, 3.0]
    "#;
    load_chain(doc, "one_link").unwrap()
}

fn two_link_planar() -> KinematicChain {
    let doc = r#"
        name = "two_link"
        dof = 2
        [eef_offset]
        xyz = [0.5, 0.0, 0.0]
        rpy = [0.0, 0.0, 0.0]
        [[joints]]
        name = "j0"
        kind = "revolute"
        axis = [0.0, 0.0, 1.0]
        limits = [-3.2, 3.2]
        [[joints]]
        name = "j1"
        kind = "revolute"
        axis = [0.0, 0.0, 1.0]
        origin = { xyz = [0.5, 0.0, 0.0], rpy = [0.0, 0.0, 0.0] }
        limits = [-3.2, 3.2]
    "#;
    load_chain(doc, "two_link").unwrap()
}

fn random_config(chain: &KinematicChain, rng: &mut impl Rng) -> Vec<f64> {
    chain
        .limits()
        .iter()
        .map(|&(lo, hi)| rng.gen_range(lo..hi))
        .collect()
}

#[test]
fn one_link_chain_parses_with_one_actuated_joint() {
    let chain = one_link_chain();
    assert_eq!(chain.dof(), 1);
    assert_eq!(chain.joints.len(), 1);
}

#[test]
fn synthetic_chain_has_three_revolute_joints() {
    let chain = load_chain(bundled::SYNTHETIC_3DOF, "synthetic").unwrap();
    assert_eq!(chain.dof(), 3);
    assert!(chain.joints.iter().all(|j| j.kind == JointKind::Revolute));
}

#[test]
fn non_unit_axis_is_rejected() {
    let doc = r#"
        name = "bad"
        dof = 1
        [[joints]]
        name = "j0"
        kind = "revolute"
        axis = [0.0, 0.0, 2.0]
        limits = [-1.0, 1.0]
    "#;
    match load_chain(doc, "bad") {
        Err(Error::Validation(msg)) => assert!(msg.contains("unit vector"), "{msg}"),
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn branching_document_is_rejected() {
    let doc = r#"
        name = "tree"
        dof = 3
        [[joints]]
        name = "root"
        kind = "revolute"
        axis = [0.0, 0.0, 1.0]
        limits = [-1.0, 1.0]
        [[joints]]
        name = "a"
        kind = "revolute"
        axis = [0.0, 0.0, 1.0]
        limits = [-1.0, 1.0]
        parent = "root"
        [[joints]]
        name = "b"
        kind = "revolute"
        axis = [0.0, 0.0, 1.0]
        limits = [-1.0, 1.0]
        parent = "root"
    "#;
    assert!(matches!(
        load_chain(doc, "tree"),
        Err(Error::UnsupportedTopology(_))
    ));
}

#[test]
fn malformed_document_reports_parse_error() {
    assert!(matches!(
        load_chain("name = \"x\"\ndof = ", "broken"),
        Err(Error::Parse { .. })
    ));
}

#[test]
fn dof_declaration_mismatch_is_rejected() {
    let doc = r#"
        name = "bad_dof"
        dof = 2
        [[joints]]
        name = "j0"
        kind = "revolute"
        axis = [0.0, 0.0, 1.0]
        limits = [-1.0, 1.0]
    "#;
    assert!(matches!(load_chain(doc, "bad_dof"), Err(Error::Validation(_))));
}

#[test]
fn one_link_fk_at_zero() {
    let pose = one_link_chain().forward_kinematics(&[0.0]).unwrap();
    assert_abs_diff_eq!(pose.position, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
}

#[test]
fn two_link_planar_at_right_angles() {
    // q = [pi/2, pi/2]: first link points along +y, second folds back along -x.
    let pose = two_link_planar()
        .forward_kinematics(&[std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2])
        .unwrap();
    assert_abs_diff_eq!(pose.position, Vector3::new(-0.5, 0.5, 0.0), epsilon = 1e-12);
}

#[test]
fn fk_matches_oracle_on_bundled_chains() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for doc in [bundled::SYNTHETIC_3DOF, bundled::NICOL_LEFT, bundled::NICOL_RIGHT] {
        let chain = load_chain(doc, "bundled").unwrap();
        for _ in 0..200 {
            let q = random_config(&chain, &mut rng);
            let fk = chain.forward_kinematics(&q).unwrap().position;
            let oracle = oracle_fk(&chain, &q);
            assert_abs_diff_eq!(fk, oracle, epsilon = 1e-6);
        }
    }
}

#[test]
fn fk_rejects_wrong_length_and_non_finite() {
    let chain = two_link_planar();
    assert!(matches!(
        chain.forward_kinematics(&[0.0]),
        Err(Error::Dimension { .. })
    ));
    assert!(matches!(
        chain.forward_kinematics(&[0.0, f64::NAN]),
        Err(Error::Numeric(_))
    ));
}

#[test]
fn one_link_jacobian_at_zero() {
    let jac = one_link_chain().jacobian(&[0.0]).unwrap();
    assert_abs_diff_eq!(jac[(0, 0)], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(jac[(1, 0)], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(jac[(2, 0)], 0.0, epsilon = 1e-12);
}

fn finite_difference_jacobian(chain: &KinematicChain, q: &[f64], h: f64) -> nalgebra::DMatrix<f64> {
    let mut jac = nalgebra::DMatrix::zeros(3, q.len());
    for j in 0..q.len() {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[j] += h;
        qm[j] -= h;
        let fp = chain.forward_kinematics(&qp).unwrap().position;
        let fm = chain.forward_kinematics(&qm).unwrap().position;
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

fn assert_jacobian_close(chain: &KinematicChain, q: &[f64]) {
    let analytic = chain.jacobian(q).unwrap();
    let numeric = finite_difference_jacobian(chain, q, 1e-5);
    let scale = analytic.amax().max(1.0);
    let max_err = (&analytic - &numeric).amax();
    assert!(
        max_err / scale < 1e-4,
        "jacobian mismatch: relative error {}",
        max_err / scale
    );
}

#[test]
fn two_link_jacobian_matches_finite_differences_at_right_angles() {
    let chain = two_link_planar();
    assert_jacobian_close(&chain, &[std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2]);
}

#[test]
fn jacobian_matches_finite_differences_at_random_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for doc in [bundled::SYNTHETIC_3DOF, bundled::NICOL_LEFT] {
        let chain = load_chain(doc, "bundled").unwrap();
        for _ in 0..20 {
            let q = random_config(&chain, &mut rng);
            assert_jacobian_close(&chain, &q);
        }
    }
}

#[test]
fn hand_joints_do_not_move_the_end_effector() {
    let chain = load_chain(bundled::NICOL_LEFT, "nicol").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut q = random_config(&chain, &mut rng);
    let before = chain.forward_kinematics(&q).unwrap().position;
    for v in q.iter_mut().skip(8) {
        *v += 0.3;
    }
    let after = chain.forward_kinematics(&q).unwrap().position;
    assert_abs_diff_eq!(before, after, epsilon = 1e-12);

    let jac = chain.jacobian(&q).unwrap();
    for col in 8..13 {
        assert_eq!(jac.column(col).amax(), 0.0);
        assert!(!chain.moves_eef(col));
    }
}

#[test]
fn fixed_joints_contribute_no_jacobian_columns() {
    let doc = r#"
        name = "with_fixed"
        dof = 1
        [[joints]]
        name = "mount"
        kind = "fixed"
        origin = { xyz = [0.1, 0.0, 0.2], rpy = [0.0, 0.0, 0.0] }
        [[joints]]
        name = "j0"
        kind = "revolute"
        axis = [0.0, 0.0, 1.0]
        origin = { xyz = [0.3, 0.0, 0.0], rpy = [0.0, 0.0, 0.0] }
        limits = [-1.0, 1.0]
    "#;
    let chain = load_chain(doc, "with_fixed").unwrap();
    assert_eq!(chain.dof(), 1);
    assert_eq!(chain.jacobian(&[0.4]).unwrap().ncols(), 1);
}

#[test]
fn rigid_motion_invariance_of_base_frame() {
    let mut chain = two_link_planar();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = random_config(&chain, &mut rng);
    let p = chain.forward_kinematics(&q).unwrap().position;

    let motion = Isometry3::from_parts(
        Translation3::new(0.3, -0.2, 0.7),
        UnitQuaternion::from_euler_angles(0.2, -0.4, 1.1),
    );
    chain.base_frame = motion * chain.base_frame;
    let moved = chain.forward_kinematics(&q).unwrap().position;
    let expected = motion.rotation * p + motion.translation.vector;
    assert_abs_diff_eq!(moved, expected, epsilon = 1e-9);
}

#[test]
fn robot_model_layout_checks() {
    let robot = RobotModel::diri();
    assert_eq!(robot.dof(), 26);
    assert_eq!(robot.limits().len(), 26);

    let q = JointConfiguration::new(vec![0.0; 26], "diri-26");
    let poses = robot.forward_kinematics(&q).unwrap();
    assert_eq!(poses.len(), 2);

    let bad = JointConfiguration::new(vec![0.0; 3], "diri-26");
    assert!(matches!(
        robot.forward_kinematics(&bad),
        Err(Error::Dimension { .. })
    ));
    let wrong_layout = JointConfiguration::new(vec![0.0; 26], "synthetic-3dof");
    assert!(robot.forward_kinematics(&wrong_layout).is_err());
}

#[test]
fn clamp_pulls_values_into_limits() {
    let robot = RobotModel::synthetic_3dof();
    let mut q = JointConfiguration::new(vec![5.0, -5.0, 0.3], "synthetic-3dof");
    robot.clamp(&mut q).unwrap();
    let limits = robot.limits();
    for (v, (lo, hi)) in q.values.iter().zip(limits) {
        assert!(*v >= lo && *v <= hi);
    }
    assert_eq!(q.values[2], 0.3);
}
