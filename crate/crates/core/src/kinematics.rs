//! Forward kinematics, fingertip Jacobians, KAL weights and 6D rotations.

use nalgebra::{DMatrix, Isometry3, Matrix3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::urdf::{HandModel, JointKind, JointSpec, LinkId, Pose};

/// Translational rows weighted 1, rotational rows 0.05.
pub const DEFAULT_LAMBDA: [f64; 6] = [1.0, 1.0, 1.0, 0.05, 0.05, 0.05];

const R6_EPS: f64 = 1e-8;

/// Wrist translation (meters) and the first two rotation-matrix columns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WristPose {
    pub t: [f64; 3],
    pub r6: [f64; 6],
}

impl Default for WristPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl WristPose {
    pub fn identity() -> Self {
        Self {
            t: [0.0; 3],
            r6: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        Self {
            t: [t.x, t.y, t.z],
            r6: r6_from_matrix(iso.rotation.to_rotation_matrix().matrix()),
        }
    }

    pub fn to_isometry(&self) -> Result<Isometry3<f64>> {
        let r = matrix_from_r6(&self.r6)?;
        let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        Ok(Isometry3::from_parts(Translation3::new(self.t[0], self.t[1], self.t[2]), rot))
    }
}

/// Gram-Schmidt on two columns; the third is their cross product.
pub fn matrix_from_r6(r6: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a1 = Vector3::new(r6[0], r6[1], r6[2]);
    let a2 = Vector3::new(r6[3], r6[4], r6[5]);
    let n1 = a1.norm();
    if !(n1 > R6_EPS) {
        return Err(Error::DegenerateInput(format!("first 6D column has norm {n1:e}")));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if !(n2 > R6_EPS) {
        return Err(Error::DegenerateInput("6D columns are parallel".into()));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

pub fn r6_from_matrix(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

pub fn pose_isometry(p: &Pose) -> Isometry3<f64> {
    let rot = UnitQuaternion::from_euler_angles(p.rpy[0], p.rpy[1], p.rpy[2]);
    Isometry3::from_parts(Translation3::new(p.xyz[0], p.xyz[1], p.xyz[2]), rot)
}

fn joint_transform(j: &JointSpec, angle: f64) -> Isometry3<f64> {
    let origin = pose_isometry(&j.origin);
    if j.kind != JointKind::Revolute || angle == 0.0 {
        return origin;
    }
    let axis = Unit::new_unchecked(Vector3::new(j.axis[0], j.axis[1], j.axis[2]));
    origin * UnitQuaternion::from_axis_angle(&axis, angle)
}

fn check_dof(h: &HandModel, q: &[f64]) -> Result<()> {
    if q.len() != h.dof() {
        return Err(Error::DimensionMismatch {
            what: "articulation length",
            expected: h.dof(),
            got: q.len(),
        });
    }
    Ok(())
}

/// World pose of every link, indexed by link id.
pub fn forward_kinematics(h: &HandModel, q: &[f64], wrist: &WristPose) -> Result<Vec<Isometry3<f64>>> {
    check_dof(h, q)?;
    let mut poses = vec![Isometry3::identity(); h.links.len()];
    poses[h.root.0] = wrist.to_isometry()?;
    for &jid in h.topological_joints() {
        let j = h.joint(jid);
        let angle = h.revolute_index(jid).map_or(0.0, |i| q[i]);
        poses[j.child.0] = poses[j.parent.0] * joint_transform(j, angle);
    }
    Ok(poses)
}

/// Leaf links whose path from the root crosses at least one revolute joint.
pub fn fingertip_links(h: &HandModel) -> Vec<LinkId> {
    (0..h.links.len())
        .map(LinkId)
        .filter(|&l| h.child_joints(l).is_empty())
        .filter(|&l| h.path_to(l).iter().any(|&j| h.revolute_index(j).is_some()))
        .collect()
}

/// Geometric Jacobian of one fingertip.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerJacobian {
    /// Articulation indices of the finger's revolute joints, root to tip.
    pub joints: Vec<usize>,
    /// 6 × d_f: translational rows then rotational rows.
    pub j: DMatrix<f64>,
}

/// Jacobian of the fingertip link-frame origin in the hand frame.
pub fn fingertip_jacobian(h: &HandModel, q: &[f64], tip: LinkId) -> Result<FingerJacobian> {
    check_dof(h, q)?;
    if tip.0 >= h.links.len() || !fingertip_links(h).contains(&tip) {
        let name = h.links.get(tip.0).map_or_else(|| format!("#{}", tip.0), |l| l.name.clone());
        return Err(Error::NotAFingertip(name));
    }
    let poses = forward_kinematics(h, q, &WristPose::identity())?;
    let p_tip = poses[tip.0].translation.vector;
    let chain: Vec<_> = h
        .path_to(tip)
        .into_iter()
        .filter_map(|j| h.revolute_index(j).map(|i| (j, i)))
        .collect();
    let mut jac = DMatrix::zeros(6, chain.len());
    for (c, &(jid, _)) in chain.iter().enumerate() {
        let spec = h.joint(jid);
        // The joint frame coincides with the child link frame.
        let frame = poses[spec.child.0];
        let axis = frame.rotation * Vector3::new(spec.axis[0], spec.axis[1], spec.axis[2]);
        let lin = axis.cross(&(p_tip - frame.translation.vector));
        for r in 0..3 {
            jac[(r, c)] = lin[r];
            jac[(r + 3, c)] = axis[r];
        }
    }
    Ok(FingerJacobian {
        joints: chain.into_iter().map(|(_, i)| i).collect(),
        j: jac,
    })
}

/// Per-joint KAL weights at `q_star`, normalized to mean one.
///
/// Contributions from several fingertips sharing a joint are summed. Joints
/// on no fingertip chain take the mean of the computed weights.
pub fn kal_weights(h: &HandModel, q_star: &[f64], lambda: &[f64; 6]) -> Result<Vec<f64>> {
    check_dof(h, q_star)?;
    let tips = fingertip_links(h);
    if tips.is_empty() {
        return Err(Error::NoFingertips(h.name.clone()));
    }
    let d = h.dof();
    let mut w = vec![0.0; d];
    let mut covered = vec![false; d];
    for &tip in &tips {
        let fj = fingertip_jacobian(h, q_star, tip)?;
        for (c, &i) in fj.joints.iter().enumerate() {
            w[i] += (0..6).map(|r| lambda[r] * fj.j[(r, c)].powi(2)).sum::<f64>();
            covered[i] = true;
        }
    }
    let n_cov = covered.iter().filter(|&&c| c).count();
    let mean_cov = (0..d).filter(|&i| covered[i]).map(|i| w[i]).sum::<f64>() / n_cov as f64;
    for i in 0..d {
        if !covered[i] {
            w[i] = mean_cov;
        }
    }
    let mean = w.iter().sum::<f64>() / d as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::DegenerateInput(format!("KAL weights have mean {mean}")));
    }
    Ok(w.into_iter().map(|x| x / mean).collect())
}

/// Per-joint clamp of an articulation to its limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClampReport {
    pub q: Vec<f64>,
    /// `|q_clamped - q_raw|` per joint.
    pub clamp: Vec<f64>,
}

pub fn clamp_to_limits(h: &HandModel, q: &[f64]) -> Result<ClampReport> {
    check_dof(h, q)?;
    let limits = h.revolute_limits();
    let clamped: Vec<f64> = q.iter().zip(&limits).map(|(&x, &(lo, hi))| x.clamp(lo, hi)).collect();
    let clamp = clamped.iter().zip(q).map(|(c, x)| (c - x).abs()).collect();
    Ok(ClampReport { q: clamped, clamp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::urdf::parse_urdf;

    fn planar_two_link() -> HandModel {
        parse_urdf(
            r#"<robot name="planar"><link name="base"/><link name="l1"/><link name="l2"/><link name="tip"/>
            <joint name="j1" type="revolute"><parent link="base"/><child link="l1"/><axis xyz="0 0 1"/><limit lower="-3" upper="3"/></joint>
            <joint name="j2" type="revolute"><parent link="l1"/><child link="l2"/><origin xyz="0.1 0 0"/><axis xyz="0 0 1"/><limit lower="-3" upper="3"/></joint>
            <joint name="jt" type="fixed"><parent link="l2"/><child link="tip"/><origin xyz="0.1 0 0"/></joint>
            </robot>"#,
        )
        .unwrap()
    }

    #[test]
    fn identity_r6() {
        assert_eq!(matrix_from_r6(&[1., 0., 0., 0., 1., 0.]).unwrap(), Matrix3::identity());
    }

    #[test]
    fn rotation_is_fixed_point() {
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let m = matrix_from_r6(&r6_from_matrix(rz.matrix())).unwrap();
        assert!((m - rz.matrix()).abs().max() < 1e-15);
    }

    #[test]
    fn gram_schmidt_by_hand() {
        let m = matrix_from_r6(&[2., 0., 0., 0.1, 1., 0.]).unwrap();
        assert_eq!(m.column(0).into_owned(), Vector3::new(1.0, 0.0, 0.0));
        assert!((m.column(1).into_owned() - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert!((m.column(2).into_owned() - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn degenerate_r6() {
        assert!(matches!(matrix_from_r6(&[0.0; 6]), Err(Error::DegenerateInput(_))));
        assert!(matches!(matrix_from_r6(&[1., 2., 3., 2., 4., 6.]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn revolute_quarter_turn() {
        let h = parse_urdf(
            r#"<robot name="r"><link name="a"/><link name="b"/><link name="c"/>
            <joint name="j" type="revolute"><parent link="a"/><child link="b"/><origin xyz="0 0 0.2"/><axis xyz="0 0 1"/><limit lower="-2" upper="2"/></joint>
            <joint name="f" type="fixed"><parent link="b"/><child link="c"/><origin xyz="0.1 0 0"/></joint></robot>"#,
        )
        .unwrap();
        let poses = forward_kinematics(&h, &[std::f64::consts::FRAC_PI_2], &WristPose::identity()).unwrap();
        let p = poses[2].translation.vector;
        assert!((p - Vector3::new(0.0, 0.1, 0.2)).norm() < 1e-15);
    }

    #[test]
    fn planar_jacobian_is_analytic() {
        let h = planar_two_link();
        let tip = h.link_id("tip").unwrap();
        let fj = fingertip_jacobian(&h, &[0.0, 0.0], tip).unwrap();
        assert_eq!(fj.joints, vec![0, 1]);
        let expect = DMatrix::from_row_slice(6, 2, &[0., 0., 0.2, 0.1, 0., 0., 0., 0., 0., 0., 1., 1.]);
        assert!((fj.j - expect).abs().max() < 1e-15);
    }

    #[test]
    fn planar_kal_weights() {
        let h = planar_two_link();
        let w = kal_weights(&h, &[0.0, 0.0], &DEFAULT_LAMBDA).unwrap();
        // Pre-normalization (0.09, 0.06) with mean 0.075.
        assert!((w[0] - 1.2).abs() < 1e-12 && (w[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn single_joint_weight_normalizes_to_one() {
        let h = parse_urdf(
            r#"<robot name="r"><link name="a"/><link name="b"/><link name="t"/>
            <joint name="j" type="revolute"><parent link="a"/><child link="b"/><axis xyz="0 0 1"/><limit lower="-1" upper="1"/></joint>
            <joint name="f" type="fixed"><parent link="b"/><child link="t"/><origin xyz="0.1 0 0"/></joint></robot>"#,
        )
        .unwrap();
        assert_eq!(kal_weights(&h, &[0.3], &DEFAULT_LAMBDA).unwrap(), vec![1.0]);
    }

    #[test]
    fn fixed_only_branch_is_not_a_fingertip() {
        let h = parse_urdf(
            r#"<robot name="r"><link name="palm"/><link name="f1"/><link name="f2"/><link name="cam"/>
            <joint name="j1" type="revolute"><parent link="palm"/><child link="f1"/><axis xyz="0 1 0"/><limit lower="0" upper="1"/></joint>
            <joint name="j2" type="revolute"><parent link="f1"/><child link="f2"/><origin xyz="0 0 0.05"/><axis xyz="0 1 0"/><limit lower="0" upper="1"/></joint>
            <joint name="mount" type="fixed"><parent link="palm"/><child link="cam"/><origin xyz="0.1 0 0"/></joint></robot>"#,
        )
        .unwrap();
        assert_eq!(fingertip_links(&h), vec![h.link_id("f2").unwrap()]);
        assert!(matches!(
            fingertip_jacobian(&h, &[0.0, 0.0], h.link_id("cam").unwrap()),
            Err(Error::NotAFingertip(n)) if n == "cam"
        ));
    }

    #[test]
    fn no_fingertips() {
        let h = parse_urdf(r#"<robot name="solo"><link name="a"/></robot>"#).unwrap();
        assert!(matches!(kal_weights(&h, &[], &DEFAULT_LAMBDA), Err(Error::NoFingertips(_))));
    }

    #[test]
    fn wrong_articulation_length() {
        let h = planar_two_link();
        assert!(matches!(
            forward_kinematics(&h, &[0.0], &WristPose::identity()),
            Err(Error::DimensionMismatch { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn clamp_reports_magnitude() {
        let h = planar_two_link();
        let r = clamp_to_limits(&h, &[3.5, -0.2]).unwrap();
        assert_eq!(r.q, vec![3.0, -0.2]);
        assert!((r.clamp[0] - 0.5).abs() < 1e-15 && r.clamp[1] == 0.0);
    }
}
