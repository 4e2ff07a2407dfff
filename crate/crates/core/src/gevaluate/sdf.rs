use nalgebra::{Isometry3, Point3, Vector3};

use crate::error::Result;
use crate::kinematics::{forward_kinematics, pose_isometry, WristPose};
use crate::urdf::{HandModel, LinkId, LinkPrimitive, PrimitiveKind};

/// Signed distance to a primitive expressed in its own frame.
/// Cylinders run along local z. Dummies have no surface.
pub fn primitive_sdf(prim: &LinkPrimitive, p: &Point3<f64>) -> f64 {
    let d = prim.dims;
    match prim.kind {
        PrimitiveKind::Sphere => p.coords.norm() - d[0],
        PrimitiveKind::Box => {
            let q = Vector3::new(p.x.abs() - d[0] / 2.0, p.y.abs() - d[1] / 2.0, p.z.abs() - d[2] / 2.0);
            q.map(|x| x.max(0.0)).norm() + q.max().min(0.0)
        }
        PrimitiveKind::Cylinder => {
            let dr = (p.x * p.x + p.y * p.y).sqrt() - d[1];
            let dz = p.z.abs() - d[0] / 2.0;
            dr.max(dz).min(0.0) + (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
        }
        PrimitiveKind::Dummy => f64::INFINITY,
    }
}

/// A link primitive placed in the world.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedPrimitive {
    pub link: LinkId,
    pub prim: LinkPrimitive,
    /// Primitive frame to world.
    pub pose: Isometry3<f64>,
}

impl PosedPrimitive {
    pub fn sdf(&self, p: &Point3<f64>) -> f64 {
        primitive_sdf(&self.prim, &self.pose.inverse_transform_point(p))
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }
}

/// Every non-dummy primitive of the hand at `(q, wrist)`.
pub fn posed_primitives(hand: &HandModel, q: &[f64], wrist: &WristPose) -> Result<Vec<PosedPrimitive>> {
    let poses = forward_kinematics(hand, q, wrist)?;
    Ok(hand
        .links
        .iter()
        .enumerate()
        .filter(|(_, l)| l.primitive.kind != PrimitiveKind::Dummy)
        .map(|(i, l)| PosedPrimitive {
            link: LinkId(i),
            prim: l.primitive,
            pose: poses[i] * pose_isometry(&l.primitive.pose),
        })
        .collect())
}
