//! URDF subset parser producing a [`HandModel`] kinematic tree.
//!
//! Recognised elements: `robot`, `link`, `joint`, `origin`, `axis`, `limit`,
//! `collision` and `geometry` with `box`, `cylinder`, `sphere` or `mesh`.
//! Everything else (visuals, inertia, transmissions, mimic) is ignored.
//! Only the first `collision` of a link is read.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointId(pub usize);

/// URDF `origin`: roll, pitch, yaw (radians) and translation (meters).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rpy: [f64; 3],
    pub xyz: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrimitiveKind {
    Box = 0,
    Cylinder = 1,
    Sphere = 2,
    Dummy = 3,
}

/// Geometric stand-in for a link.
///
/// `dims` holds (length, width, height) for boxes, (length, radius, 0) for
/// cylinders, (radius, 0, 0) for spheres and zeros for dummies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkPrimitive {
    pub kind: PrimitiveKind,
    pub pose: Pose,
    pub dims: [f64; 3],
}

impl LinkPrimitive {
    pub fn dummy() -> Self {
        Self {
            kind: PrimitiveKind::Dummy,
            pose: Pose::default(),
            dims: [0.0; 3],
        }
    }

    pub fn sphere(radius: f64, pose: Pose) -> Self {
        Self {
            kind: PrimitiveKind::Sphere,
            pose,
            dims: [radius, 0.0, 0.0],
        }
    }

    pub fn cylinder(length: f64, radius: f64, pose: Pose) -> Self {
        Self {
            kind: PrimitiveKind::Cylinder,
            pose,
            dims: [length, radius, 0.0],
        }
    }

    pub fn cuboid(size: [f64; 3], pose: Pose) -> Self {
        Self {
            kind: PrimitiveKind::Box,
            pose,
            dims: size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointKind {
    Revolute,
    Fixed,
    /// Continuous, prismatic, floating and planar joints. Never articulated.
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    /// (lower, upper) in radians; (0, 0) when the document gives no limit.
    pub limits: (f64, f64),
    pub origin: Pose,
    pub axis: [f64; 3],
    pub parent: LinkId,
    pub child: LinkId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub name: String,
    pub primitive: LinkPrimitive,
}

/// Parsed kinematic tree. Links and joints keep document order.
#[derive(Clone, Debug, PartialEq)]
pub struct HandModel {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<JointSpec>,
    pub root: LinkId,
    parent_joint: Vec<Option<JointId>>,
    child_joints: Vec<Vec<JointId>>,
    topo: Vec<JointId>,
    revolute_index: Vec<Option<usize>>,
}

impl HandModel {
    /// Revolute joint count `d`.
    pub fn dof(&self) -> usize {
        self.revolute_index.iter().flatten().count()
    }

    /// Total joint count `M`.
    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn joint(&self, id: JointId) -> &JointSpec {
        &self.joints[id.0]
    }

    pub fn link_id(&self, name: &str) -> Option<LinkId> {
        self.links.iter().position(|l| l.name == name).map(LinkId)
    }

    pub fn parent_joint(&self, link: LinkId) -> Option<JointId> {
        self.parent_joint[link.0]
    }

    pub fn child_joints(&self, link: LinkId) -> &[JointId] {
        &self.child_joints[link.0]
    }

    /// Joints ordered so that every parent frame precedes its children.
    pub fn topological_joints(&self) -> &[JointId] {
        &self.topo
    }

    /// Position of a joint within the articulation vector, if revolute.
    pub fn revolute_index(&self, joint: JointId) -> Option<usize> {
        self.revolute_index[joint.0]
    }

    /// Revolute joints in articulation order.
    pub fn revolute_joints(&self) -> Vec<JointId> {
        (0..self.joints.len())
            .map(JointId)
            .filter(|&j| self.revolute_index[j.0].is_some())
            .collect()
    }

    /// Joint limits of the revolute joints in articulation order.
    pub fn revolute_limits(&self) -> Vec<(f64, f64)> {
        self.revolute_joints().iter().map(|&j| self.joint(j).limits).collect()
    }

    /// Joints from the root down to (and including) the parent joint of `link`.
    pub fn path_to(&self, link: LinkId) -> Vec<JointId> {
        let mut path = Vec::new();
        let mut cur = link;
        while let Some(j) = self.parent_joint[cur.0] {
            path.push(j);
            cur = self.joints[j.0].parent;
        }
        path.reverse();
        path
    }
}

/// Source of axis-aligned bounds for mesh-only links.
pub trait MeshBounds {
    /// `(min, max)` corners of the mesh in its own frame, before scaling.
    fn bounds(&self, filename: &str) -> Option<([f64; 3], [f64; 3])>;
}

/// Resolves nothing: mesh-only links become dummies.
pub struct NoMeshBounds;

impl MeshBounds for NoMeshBounds {
    fn bounds(&self, _filename: &str) -> Option<([f64; 3], [f64; 3])> {
        None
    }
}

/// Reads OBJ and STL (ASCII or binary) vertices relative to a base directory.
pub struct MeshFileBounds {
    pub base: PathBuf,
}

impl MeshFileBounds {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self { base: base.into() }
    }

    fn resolve(&self, filename: &str) -> Option<PathBuf> {
        let stripped = filename
            .strip_prefix("package://")
            .or_else(|| filename.strip_prefix("file://"))
            .unwrap_or(filename);
        let direct = Path::new(stripped);
        let candidates = [
            direct.is_absolute().then(|| direct.to_path_buf()),
            Some(self.base.join(stripped)),
            direct.file_name().map(|f| self.base.join(f)),
        ];
        candidates.into_iter().flatten().find(|p| p.is_file())
    }
}

fn extend_bounds(bounds: &mut Option<([f64; 3], [f64; 3])>, v: [f64; 3]) {
    let (lo, hi) = bounds.get_or_insert((v, v));
    for k in 0..3 {
        lo[k] = lo[k].min(v[k]);
        hi[k] = hi[k].max(v[k]);
    }
}

fn obj_bounds(text: &str) -> Option<([f64; 3], [f64; 3])> {
    let mut b = None;
    for line in text.lines() {
        let mut it = line.split_whitespace();
        if it.next() != Some("v") {
            continue;
        }
        let v: Vec<f64> = it.take(3).filter_map(|t| t.parse().ok()).collect();
        if v.len() == 3 {
            extend_bounds(&mut b, [v[0], v[1], v[2]]);
        }
    }
    b
}

fn stl_bounds(bytes: &[u8]) -> Option<([f64; 3], [f64; 3])> {
    let mut b = None;
    if bytes.len() >= 84 {
        let n = u32::from_le_bytes(bytes[80..84].try_into().ok()?) as usize;
        if bytes.len() == 84 + n * 50 {
            for t in 0..n {
                let base = 84 + t * 50 + 12;
                for v in 0..3 {
                    let mut p = [0.0; 3];
                    for (k, slot) in p.iter_mut().enumerate() {
                        let o = base + v * 12 + k * 4;
                        *slot = f32::from_le_bytes(bytes[o..o + 4].try_into().ok()?) as f64;
                    }
                    extend_bounds(&mut b, p);
                }
            }
            return b;
        }
    }
    let text = std::str::from_utf8(bytes).ok()?;
    for line in text.lines() {
        let mut it = line.split_whitespace();
        if it.next() != Some("vertex") {
            continue;
        }
        let v: Vec<f64> = it.take(3).filter_map(|t| t.parse().ok()).collect();
        if v.len() == 3 {
            extend_bounds(&mut b, [v[0], v[1], v[2]]);
        }
    }
    b
}

impl MeshBounds for MeshFileBounds {
    fn bounds(&self, filename: &str) -> Option<([f64; 3], [f64; 3])> {
        let path = self.resolve(filename)?;
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "obj" => obj_bounds(&fs::read_to_string(&path).ok()?),
            "stl" => stl_bounds(&fs::read(&path).ok()?),
            _ => None,
        }
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedDocument(msg.into())
}

fn parse_vec<const N: usize>(node: roxmltree::Node, attr: &str, default: [f64; N]) -> Result<[f64; N]> {
    let Some(text) = node.attribute(attr) else {
        return Ok(default);
    };
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| malformed(format!("<{}> attribute {attr}=\"{text}\" is not numeric", node.tag_name().name())))?;
    vals.try_into()
        .map_err(|_| malformed(format!("<{}> attribute {attr} needs {N} numbers", node.tag_name().name())))
}

fn parse_scalar(node: roxmltree::Node, attr: &str) -> Result<Option<f64>> {
    node.attribute(attr)
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| malformed(format!("<{}> attribute {attr}=\"{t}\" is not numeric", node.tag_name().name())))
        })
        .transpose()
}

fn required_scalar(node: roxmltree::Node, attr: &str) -> Result<f64> {
    parse_scalar(node, attr)?
        .ok_or_else(|| malformed(format!("<{}> is missing {attr}", node.tag_name().name())))
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.is_element() && c.has_tag_name(name))
}

fn parse_origin(parent: roxmltree::Node) -> Result<Pose> {
    match child(parent, "origin") {
        Some(o) => Ok(Pose {
            rpy: parse_vec(o, "rpy", [0.0; 3])?,
            xyz: parse_vec(o, "xyz", [0.0; 3])?,
        }),
        None => Ok(Pose::default()),
    }
}

fn check_dims(dims: [f64; 3], what: &str) -> Result<[f64; 3]> {
    if dims.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(malformed(format!("{what} has negative or non-finite size")));
    }
    Ok(dims)
}

fn parse_primitive(link: roxmltree::Node, meshes: &dyn MeshBounds) -> Result<LinkPrimitive> {
    let Some(collision) = child(link, "collision") else {
        return Ok(LinkPrimitive::dummy());
    };
    let pose = parse_origin(collision)?;
    let Some(geometry) = child(collision, "geometry") else {
        return Ok(LinkPrimitive::dummy());
    };
    let Some(shape) = geometry.children().find(|c| c.is_element()) else {
        return Ok(LinkPrimitive::dummy());
    };
    let name = link.attribute("name").unwrap_or("?");
    let prim = match shape.tag_name().name() {
        "box" => {
            let size = parse_vec(shape, "size", [f64::NAN; 3])?;
            LinkPrimitive::cuboid(check_dims(size, name)?, pose)
        }
        "cylinder" => {
            let length = required_scalar(shape, "length")?;
            let radius = required_scalar(shape, "radius")?;
            let dims = check_dims([length, radius, 0.0], name)?;
            LinkPrimitive::cylinder(dims[0], dims[1], pose)
        }
        "sphere" => {
            let radius = required_scalar(shape, "radius")?;
            let dims = check_dims([radius, 0.0, 0.0], name)?;
            LinkPrimitive::sphere(dims[0], pose)
        }
        "mesh" => {
            let file = shape.attribute("filename").unwrap_or("");
            let scale = parse_vec(shape, "scale", [1.0; 3])?;
            match meshes.bounds(file) {
                Some((lo, hi)) => {
                    let mut size = [0.0; 3];
                    let mut center = [0.0; 3];
                    for k in 0..3 {
                        size[k] = (hi[k] - lo[k]) * scale[k].abs();
                        center[k] = 0.5 * (hi[k] + lo[k]) * scale[k];
                    }
                    // Offset the box to the mesh centre, expressed in the link frame.
                    let rot = nalgebra::Rotation3::from_euler_angles(pose.rpy[0], pose.rpy[1], pose.rpy[2]);
                    let c = rot * nalgebra::Vector3::from(center);
                    let xyz = [pose.xyz[0] + c.x, pose.xyz[1] + c.y, pose.xyz[2] + c.z];
                    LinkPrimitive::cuboid(size, Pose { rpy: pose.rpy, xyz })
                }
                None => LinkPrimitive::dummy(),
            }
        }
        _ => LinkPrimitive::dummy(),
    };
    Ok(prim)
}

fn joint_kind(name: &str, kind: &str) -> Result<JointKind> {
    match kind {
        "revolute" => Ok(JointKind::Revolute),
        "fixed" => Ok(JointKind::Fixed),
        "continuous" | "prismatic" | "floating" | "planar" => Ok(JointKind::Other),
        other => Err(Error::UnsupportedJoint {
            joint: name.to_string(),
            kind: other.to_string(),
        }),
    }
}

/// Parses a URDF document; mesh-only links become dummies.
pub fn parse_urdf(text: &str) -> Result<HandModel> {
    parse_urdf_with(text, &NoMeshBounds)
}

/// Parses a URDF document, using `meshes` to box mesh-only collision links.
pub fn parse_urdf_with(text: &str, meshes: &dyn MeshBounds) -> Result<HandModel> {
    let doc = roxmltree::Document::parse(text).map_err(|e| malformed(e.to_string()))?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(malformed(format!("root element is <{}>, expected <robot>", robot.tag_name().name())));
    }
    let mut links = Vec::new();
    let mut link_index = HashMap::new();
    for node in robot.children().filter(|c| c.is_element() && c.has_tag_name("link")) {
        let name = node
            .attribute("name")
            .ok_or_else(|| malformed("<link> without name"))?
            .to_string();
        if link_index.insert(name.clone(), LinkId(links.len())).is_some() {
            return Err(malformed(format!("duplicate link {name}")));
        }
        links.push(Link {
            primitive: parse_primitive(node, meshes)?,
            name,
        });
    }
    if links.is_empty() {
        return Err(malformed("robot declares no links"));
    }

    let mut joints = Vec::new();
    for node in robot.children().filter(|c| c.is_element() && c.has_tag_name("joint")) {
        let name = node
            .attribute("name")
            .ok_or_else(|| malformed("<joint> without name"))?
            .to_string();
        let kind = joint_kind(&name, node.attribute("type").unwrap_or(""))?;
        let link_ref = |tag: &str| -> Result<LinkId> {
            let n = child(node, tag)
                .and_then(|c| c.attribute("link"))
                .ok_or_else(|| malformed(format!("joint {name} has no <{tag} link=…>")))?;
            link_index.get(n).copied().ok_or_else(|| Error::UnknownLinkRef {
                joint: name.clone(),
                link: n.to_string(),
            })
        };
        let parent = link_ref("parent")?;
        let child_link = link_ref("child")?;
        let origin = parse_origin(node)?;
        let mut axis = match child(node, "axis") {
            Some(a) => parse_vec(a, "xyz", [1.0, 0.0, 0.0])?,
            None => [1.0, 0.0, 0.0],
        };
        let mut limits = match child(node, "limit") {
            Some(l) => (
                parse_scalar(l, "lower")?.unwrap_or(0.0),
                parse_scalar(l, "upper")?.unwrap_or(0.0),
            ),
            None => (0.0, 0.0),
        };
        match kind {
            JointKind::Revolute => {
                let norm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(norm > 1e-12) {
                    return Err(malformed(format!("joint {name} has a zero axis")));
                }
                if (norm - 1.0).abs() > 1e-12 {
                    axis.iter_mut().for_each(|x| *x /= norm);
                }
                if limits.0 > limits.1 {
                    return Err(malformed(format!("joint {name} has lower limit above upper")));
                }
            }
            JointKind::Fixed => {
                axis = [0.0; 3];
                limits = (0.0, 0.0);
            }
            JointKind::Other => limits = (0.0, 0.0),
        }
        joints.push(JointSpec {
            name,
            kind,
            limits,
            origin,
            axis,
            parent,
            child: child_link,
        });
    }

    let mut parent_joint = vec![None; links.len()];
    let mut child_joints = vec![Vec::new(); links.len()];
    for (j, spec) in joints.iter().enumerate() {
        if parent_joint[spec.child.0].replace(JointId(j)).is_some() {
            return Err(Error::CyclicKinematics(format!(
                "link {} has more than one parent joint",
                links[spec.child.0].name
            )));
        }
        child_joints[spec.parent.0].push(JointId(j));
    }
    let roots: Vec<usize> = (0..links.len()).filter(|&l| parent_joint[l].is_none()).collect();
    let root = match roots.as_slice() {
        [r] => LinkId(*r),
        [] => return Err(Error::CyclicKinematics("every link has a parent joint".into())),
        _ => {
            return Err(malformed(format!(
                "{} disconnected root links ({})",
                roots.len(),
                roots.iter().map(|&r| links[r].name.as_str()).collect::<Vec<_>>().join(", ")
            )))
        }
    };
    let mut topo = Vec::with_capacity(joints.len());
    let mut queue = VecDeque::from([root]);
    while let Some(l) = queue.pop_front() {
        for &j in &child_joints[l.0] {
            topo.push(j);
            queue.push_back(joints[j.0].child);
        }
    }
    if topo.len() != joints.len() {
        return Err(Error::CyclicKinematics("joint graph contains a cycle unreachable from the root".into()));
    }
    let mut next = 0;
    let revolute_index = joints
        .iter()
        .map(|j| {
            (j.kind == JointKind::Revolute).then(|| {
                next += 1;
                next - 1
            })
        })
        .collect();

    Ok(HandModel {
        name: robot.attribute("name").unwrap_or("").to_string(),
        links,
        joints,
        root,
        parent_joint,
        child_joints,
        topo,
        revolute_index,
    })
}
