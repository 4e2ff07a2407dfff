//! Joint encodings and padded morphology tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::urdf::{HandModel, JointKind, LinkPrimitive};

/// Width of one joint encoding: limits(2) + origin(6) + axis(3) + two primitives(10 each).
pub const ENCODING_DIM: usize = 31;
pub const PRIMITIVE_DIM: usize = 10;
pub const DEFAULT_M_MAX: usize = 32;
pub const DEFAULT_D_MAX: usize = 24;

pub type JointEncoding = [f64; ENCODING_DIM];

/// `(kind, roll, pitch, yaw, x, y, z, s1, s2, s3)`.
pub fn encode_link_primitive(p: &LinkPrimitive) -> [f64; PRIMITIVE_DIM] {
    let mut out = [0.0; PRIMITIVE_DIM];
    out[0] = p.kind as u8 as f64;
    out[1..4].copy_from_slice(&p.pose.rpy);
    out[4..7].copy_from_slice(&p.pose.xyz);
    out[7..10].copy_from_slice(&p.dims);
    out
}

/// One encoding per joint, in document order.
pub fn build_joint_encodings(h: &HandModel) -> Vec<JointEncoding> {
    h.joints
        .iter()
        .map(|j| {
            let mut e = [0.0; ENCODING_DIM];
            if j.kind == JointKind::Revolute {
                e[0] = j.limits.0;
                e[1] = j.limits.1;
            }
            e[2..5].copy_from_slice(&j.origin.rpy);
            e[5..8].copy_from_slice(&j.origin.xyz);
            e[8..11].copy_from_slice(&j.axis);
            e[11..21].copy_from_slice(&encode_link_primitive(&h.link(j.parent).primitive));
            e[21..31].copy_from_slice(&encode_link_primitive(&h.link(j.child).primitive));
            e
        })
        .collect()
}

/// Padded token matrix with key-padding and revolute masks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorphologyTokens {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "D_max")]
    pub d_max: usize,
    /// `M_max` rows of [`ENCODING_DIM`] values.
    pub raw: Vec<Vec<f64>>,
    /// True at padded rows.
    pub pad_mask: Vec<bool>,
    pub rho: Vec<bool>,
}

impl MorphologyTokens {
    pub fn m_max(&self) -> usize {
        self.raw.len()
    }

    /// Revolute count `d`.
    pub fn dof(&self) -> usize {
        self.rho.iter().filter(|&&r| r).count()
    }

    /// Row indices of revolute joints, in order.
    pub fn revolute_rows(&self) -> Vec<usize> {
        (0..self.rho.len()).filter(|&i| self.rho[i]).collect()
    }
}

/// Pads `encodings` with zero rows to `m_max` and records the masks.
pub fn pad_and_mask(
    encodings: &[JointEncoding],
    revolute: &[bool],
    m_max: usize,
    d_max: usize,
) -> Result<MorphologyTokens> {
    if revolute.len() != encodings.len() {
        return Err(Error::DimensionMismatch {
            what: "revolute flags",
            expected: encodings.len(),
            got: revolute.len(),
        });
    }
    if encodings.len() > m_max {
        return Err(Error::CapacityExceeded {
            what: "joint count",
            got: encodings.len(),
            max: m_max,
        });
    }
    let d = revolute.iter().filter(|&&r| r).count();
    if d > d_max {
        return Err(Error::CapacityExceeded {
            what: "revolute joint count",
            got: d,
            max: d_max,
        });
    }
    let mut raw = vec![vec![0.0; ENCODING_DIM]; m_max];
    for (row, e) in raw.iter_mut().zip(encodings) {
        row.copy_from_slice(e);
    }
    let mut rho = vec![false; m_max];
    rho[..revolute.len()].copy_from_slice(revolute);
    Ok(MorphologyTokens {
        m: encodings.len(),
        d_max,
        raw,
        pad_mask: (0..m_max).map(|i| i >= encodings.len()).collect(),
        rho,
    })
}

/// Encodes every joint of `h` and pads to the given capacities.
pub fn tokenize(h: &HandModel, m_max: usize, d_max: usize) -> Result<MorphologyTokens> {
    let revolute: Vec<bool> = h.joints.iter().map(|j| j.kind == JointKind::Revolute).collect();
    pad_and_mask(&build_joint_encodings(h), &revolute, m_max, d_max)
}
