//! Synthetic hands and grasps.
//!
//! Hands are a palm box with serial fingers on a circle. Grasps place the
//! wrist on a sphere around a primitive object facing its centre, then close
//! each finger joint by joint, proximal to distal, until it nearly touches.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schema::{normalize_cloud, GraspSample, Label};
use crate::error::{Error, Result};
use crate::gevaluate::{evaluate_grasp, primitive_sdf, EvalConfig};
use crate::kinematics::{fingertip_links, forward_kinematics, pose_isometry, WristPose};
use crate::urdf::{HandModel, JointId, LinkId, LinkPrimitive, Pose, PrimitiveKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandSpec {
    pub name: String,
    pub fingers: usize,
    pub joints_per_finger: usize,
    /// One length per joint, or a single length used for all.
    pub segment_lengths: Vec<f64>,
    /// Radius of the circle the finger bases sit on.
    pub base_radius: f64,
    pub finger_radius: f64,
    pub tip_radius: f64,
    pub palm_size: [f64; 3],
    pub limits: (f64, f64),
}

impl Default for HandSpec {
    fn default() -> Self {
        Self {
            name: "synth_hand".into(),
            fingers: 3,
            joints_per_finger: 3,
            segment_lengths: vec![0.035],
            base_radius: 0.045,
            finger_radius: 0.009,
            tip_radius: 0.009,
            palm_size: [0.11, 0.11, 0.02],
            limits: (-0.3, 1.57),
        }
    }
}

impl HandSpec {
    pub fn new(fingers: usize, joints_per_finger: usize) -> Self {
        Self {
            name: format!("synth_{fingers}x{joints_per_finger}"),
            fingers,
            joints_per_finger,
            ..Self::default()
        }
    }

    fn segment(&self, j: usize) -> f64 {
        if self.segment_lengths.len() == 1 {
            self.segment_lengths[0]
        } else {
            self.segment_lengths[j]
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.fingers == 0 || self.joints_per_finger == 0 {
            return bad("fingers and joints per finger must be at least 1");
        }
        let n = self.segment_lengths.len();
        if n != 1 && n != self.joints_per_finger {
            return bad("segment_lengths needs one entry or one per joint");
        }
        let positive = self
            .segment_lengths
            .iter()
            .chain(&[self.finger_radius, self.tip_radius])
            .chain(&self.palm_size)
            .all(|x| x.is_finite() && *x > 0.0);
        if !positive || !(self.base_radius >= 0.0) {
            return bad("lengths and radii must be positive");
        }
        if !(self.limits.0 <= self.limits.1) {
            return bad("lower limit above upper limit");
        }
        if self.name.is_empty() || self.name.contains(['"', '<', '>', '&']) {
            return bad("name must be non-empty plain text");
        }
        Ok(())
    }
}

/// URDF text for a palm with `fingers` serial chains of revolute joints,
/// each ending in a fixed fingertip sphere.
pub fn synth_hand(spec: &HandSpec) -> Result<String> {
    spec.validate()?;
    let [px, py, pz] = spec.palm_size;
    let top = pz / 2.0;
    let mut s = format!("<robot name=\"{}\">\n", spec.name);
    s += &format!(
        "  <link name=\"palm\"><collision><geometry><box size=\"{px} {py} {pz}\"/></geometry></collision></link>\n"
    );
    let (lo, hi) = spec.limits;
    for f in 0..spec.fingers {
        let phi = PI / 2.0 + 2.0 * PI * f as f64 / spec.fingers as f64;
        let (bx, by) = (spec.base_radius * phi.cos(), spec.base_radius * phi.sin());
        let mut parent = "palm".to_string();
        for j in 0..spec.joints_per_finger {
            let len = spec.segment(j);
            let link = format!("f{f}_l{j}");
            s += &format!(
                "  <link name=\"{link}\"><collision><origin xyz=\"0 0 {}\"/><geometry><cylinder length=\"{len}\" radius=\"{}\"/></geometry></collision></link>\n",
                len / 2.0,
                spec.finger_radius
            );
            let origin = if j == 0 {
                format!("<origin xyz=\"{bx} {by} {top}\" rpy=\"0 0 {phi}\"/>")
            } else {
                format!("<origin xyz=\"0 0 {}\"/>", spec.segment(j - 1))
            };
            s += &format!(
                "  <joint name=\"f{f}_j{j}\" type=\"revolute\"><parent link=\"{parent}\"/><child link=\"{link}\"/>{origin}<axis xyz=\"0 -1 0\"/><limit lower=\"{lo}\" upper=\"{hi}\" effort=\"1\" velocity=\"1\"/></joint>\n"
            );
            parent = link;
        }
        let tip = format!("f{f}_tip");
        s += &format!(
            "  <link name=\"{tip}\"><collision><geometry><sphere radius=\"{}\"/></geometry></collision></link>\n",
            spec.tip_radius
        );
        s += &format!(
            "  <joint name=\"f{f}_tip_joint\" type=\"fixed\"><parent link=\"{parent}\"/><child link=\"{tip}\"/><origin xyz=\"0 0 {}\"/></joint>\n",
            spec.segment(spec.joints_per_finger - 1)
        );
    }
    s += "</robot>\n";
    Ok(s)
}

/// Primitive object shapes centred at their own origin. Cylinders run along z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ObjectShape {
    Sphere { radius: f64 },
    Box { size: [f64; 3] },
    Cylinder { radius: f64, length: f64 },
}

impl ObjectShape {
    pub fn primitive(&self) -> LinkPrimitive {
        match *self {
            ObjectShape::Sphere { radius } => LinkPrimitive::sphere(radius, Pose::default()),
            ObjectShape::Box { size } => LinkPrimitive::cuboid(size, Pose::default()),
            ObjectShape::Cylinder { radius, length } => LinkPrimitive::cylinder(length, radius, Pose::default()),
        }
    }

    pub fn sdf(&self, p: &Point3<f64>) -> f64 {
        primitive_sdf(&self.primitive(), p)
    }

    /// Support function `max_{x ∈ shape} ⟨x, u⟩` for unit `u`.
    pub fn support(&self, u: &Vector3<f64>) -> f64 {
        match *self {
            ObjectShape::Sphere { radius } => radius,
            ObjectShape::Box { size } => (0..3).map(|k| u[k].abs() * size[k] / 2.0).sum(),
            ObjectShape::Cylinder { radius, length } => {
                u.z.abs() * length / 2.0 + radius * (u.x * u.x + u.y * u.y).sqrt()
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ObjectShape::Sphere { radius } => format!("sphere_r{radius:.4}"),
            ObjectShape::Box { size } => format!("box_{:.4}x{:.4}x{:.4}", size[0], size[1], size[2]),
            ObjectShape::Cylinder { radius, length } => format!("cylinder_r{radius:.4}_l{length:.4}"),
        }
    }

    /// Area-uniform surface samples.
    pub fn sample_surface(&self, n: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(n);
        match *self {
            ObjectShape::Sphere { radius } => {
                while out.len() < n {
                    let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
                    if v.norm() > 1e-9 {
                        let p = v.normalize() * radius;
                        out.push([p.x, p.y, p.z]);
                    }
                }
            }
            ObjectShape::Box { size } => {
                let [a, b, c] = size;
                let areas = [b * c, b * c, a * c, a * c, a * b, a * b];
                let total: f64 = areas.iter().sum();
                for _ in 0..n {
                    let mut r = rng.random::<f64>() * total;
                    let mut face = 5;
                    for (i, ar) in areas.iter().enumerate() {
                        if r < *ar {
                            face = i;
                            break;
                        }
                        r -= ar;
                    }
                    let mut p = [0.0; 3];
                    for k in 0..3 {
                        p[k] = (rng.random::<f64>() - 0.5) * size[k];
                    }
                    let axis = face / 2;
                    p[axis] = if face % 2 == 0 { size[axis] / 2.0 } else { -size[axis] / 2.0 };
                    out.push(p);
                }
            }
            ObjectShape::Cylinder { radius, length } => {
                let side = 2.0 * PI * radius * length;
                let cap = PI * radius * radius;
                for _ in 0..n {
                    let th = rng.random::<f64>() * 2.0 * PI;
                    let r = rng.random::<f64>() * (side + 2.0 * cap);
                    if r < side {
                        let z = (rng.random::<f64>() - 0.5) * length;
                        out.push([radius * th.cos(), radius * th.sin(), z]);
                    } else {
                        let rr = radius * rng.random::<f64>().sqrt();
                        let z = if r < side + cap { length / 2.0 } else { -length / 2.0 };
                        out.push([rr * th.cos(), rr * th.sin(), z]);
                    }
                }
            }
        }
        out
    }
}

/// Deterministic surface points of a hand primitive in its own frame.
pub fn primitive_surface_points(p: &LinkPrimitive) -> Vec<Point3<f64>> {
    let d = p.dims;
    let mut out = Vec::new();
    match p.kind {
        PrimitiveKind::Sphere => {
            let n = 64;
            let golden = PI * (3.0 - 5f64.sqrt());
            for i in 0..n {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let th = golden * i as f64;
                out.push(Point3::new(r * th.cos(), r * th.sin(), z) * d[0]);
            }
        }
        PrimitiveKind::Cylinder => {
            let (len, rad) = (d[0], d[1]);
            let along = ((len / 0.004).ceil() as usize).max(2);
            let around = 24;
            for i in 0..=along {
                let z = -len / 2.0 + len * i as f64 / along as f64;
                for k in 0..around {
                    let th = 2.0 * PI * k as f64 / around as f64;
                    out.push(Point3::new(rad * th.cos(), rad * th.sin(), z));
                }
            }
            for z in [-len / 2.0, len / 2.0] {
                out.push(Point3::new(0.0, 0.0, z));
                for k in 0..12 {
                    let th = 2.0 * PI * k as f64 / 12.0;
                    out.push(Point3::new(0.5 * rad * th.cos(), 0.5 * rad * th.sin(), z));
                }
            }
        }
        PrimitiveKind::Box => {
            let steps = d.map(|x| ((x / 0.005).ceil() as usize).max(1));
            for axis in 0..3 {
                let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                for sign in [-1.0, 1.0] {
                    for i in 0..=steps[u] {
                        for j in 0..=steps[v] {
                            let mut p = [0.0; 3];
                            p[axis] = sign * d[axis] / 2.0;
                            p[u] = -d[u] / 2.0 + d[u] * i as f64 / steps[u] as f64;
                            p[v] = -d[v] / 2.0 + d[v] * j as f64 / steps[v] as f64;
                            out.push(Point3::from(p));
                        }
                    }
                }
            }
        }
        PrimitiveKind::Dummy => {}
    }
    let pose = pose_isometry(&p.pose);
    out.into_iter().map(|x| pose * x).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub cloud_points: usize,
    /// Fingers stop this far from the object surface (m).
    pub gap: f64,
    /// Distance between palm top and the object (m).
    pub clearance: f64,
    /// Uniform lateral offset of the object from the palm axis (m).
    pub lateral_jitter: f64,
    /// Uniform variation of the palm-object distance (m).
    pub standoff_jitter: f64,
    /// Fixed approach direction (object to wrist), or random when absent.
    pub approach: Option<[f64; 3]>,
    pub eval: EvalConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            cloud_points: 512,
            gap: 0.001,
            clearance: 0.008,
            lateral_jitter: 0.004,
            standoff_jitter: 0.003,
            approach: None,
            eval: EvalConfig::default(),
        }
    }
}

/// Hand-frame surface points per link.
struct HandSurface {
    points: Vec<Vec<Point3<f64>>>,
}

impl HandSurface {
    fn new(hand: &HandModel) -> Self {
        Self {
            points: hand.links.iter().map(|l| primitive_surface_points(&l.primitive)).collect(),
        }
    }
}

fn descendants(hand: &HandModel, link: LinkId) -> Vec<LinkId> {
    let mut out = vec![link];
    let mut i = 0;
    while i < out.len() {
        for &j in hand.child_joints(out[i]) {
            out.push(hand.joint(j).child);
        }
        i += 1;
    }
    out
}

/// Smallest object distance over the surface points of `links`.
fn clearance(
    hand: &HandModel,
    surf: &HandSurface,
    links: &[LinkId],
    q: &[f64],
    wrist: &Isometry3<f64>,
    shape: &ObjectShape,
    object: &Isometry3<f64>,
) -> Result<f64> {
    let poses = forward_kinematics(hand, q, &WristPose::identity())?;
    let to_object = object.inverse() * wrist;
    let mut best = f64::INFINITY;
    for &l in links {
        let m = to_object * poses[l.0];
        for p in &surf.points[l.0] {
            best = best.min(shape.sdf(&(m * p)));
        }
    }
    Ok(best)
}

/// Closes every finger joint by joint, proximal to distal: each joint moves
/// from its open angle to the largest angle keeping its distal links at
/// least `gap` from the object, or to its upper limit.
pub fn close_fingers(
    hand: &HandModel,
    wrist: &WristPose,
    shape: &ObjectShape,
    object: &Isometry3<f64>,
    gap: f64,
) -> Result<Vec<f64>> {
    let tips = fingertip_links(hand);
    if tips.is_empty() {
        return Err(Error::NoFingertips(hand.name.clone()));
    }
    let w = wrist.to_isometry()?;
    let surf = HandSurface::new(hand);
    let limits = hand.revolute_limits();
    let mut q: Vec<f64> = limits.iter().map(|&(lo, hi)| 0f64.clamp(lo, hi)).collect();
    let order: Vec<JointId> = hand
        .topological_joints()
        .iter()
        .copied()
        .filter(|&j| hand.revolute_index(j).is_some())
        .collect();
    for jid in order {
        let i = hand.revolute_index(jid).expect("revolute");
        let moving = descendants(hand, hand.joint(jid).child);
        let (lo, hi) = limits[i];
        let f = |x: f64, q: &mut Vec<f64>| -> Result<f64> {
            q[i] = x;
            clearance(hand, &surf, &moving, q, &w, shape, object)
        };
        let start = q[i];
        let steps = 48;
        let mut free = None;
        if f(start, &mut q)? >= gap {
            free = Some(start);
        } else {
            for s in 1..=steps {
                let x = start + (lo - start) * s as f64 / steps as f64;
                if f(x, &mut q)? >= gap {
                    free = Some(x);
                    break;
                }
            }
        }
        let Some(mut a) = free else {
            q[i] = start;
            continue;
        };
        let mut blocked = None;
        for s in 1..=steps {
            let x = a + (hi - a) * s as f64 / steps as f64;
            if f(x, &mut q)? < gap {
                blocked = Some(x);
                break;
            }
            a = x;
        }
        q[i] = match blocked {
            None => hi,
            Some(mut b) => {
                for _ in 0..40 {
                    let mid = 0.5 * (a + b);
                    if f(mid, &mut q)? >= gap {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                a
            }
        };
    }
    Ok(q)
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        if v.norm() > 1e-9 {
            return v.normalize();
        }
    }
}

/// Hand orientation whose z-axis points along `-approach`, rolled by `roll`.
fn facing(approach: &Vector3<f64>, roll: f64) -> Rotation3<f64> {
    let z = -approach.normalize();
    let helper = if z.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let x0 = (helper - z * z.dot(&helper)).normalize();
    let y0 = z.cross(&x0);
    let x = x0 * roll.cos() + y0 * roll.sin();
    let y = z.cross(&x);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
}

/// Highest point of the root link's primitive along the hand z-axis.
fn palm_top(hand: &HandModel) -> f64 {
    primitive_surface_points(&hand.link(hand.root).primitive)
        .iter()
        .map(|p| p.z)
        .fold(0.0, f64::max)
}

/// One synthetic grasp of `shape`, labelled by the evaluator.
pub fn synth_grasp(
    hand: &HandModel,
    hand_id: &str,
    shape: &ObjectShape,
    object_id: &str,
    cfg: &SynthConfig,
    rng: &mut impl Rng,
) -> Result<GraspSample> {
    let raw = shape.sample_surface(cfg.cloud_points.max(1), rng);
    let n = raw.len() as f64;
    let c0 = raw.iter().fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p)) / n;
    let cloud = normalize_cloud(&raw)?;
    let object = Isometry3::from_parts(Translation3::from(-c0), UnitQuaternion::identity());
    let u = match cfg.approach {
        Some(a) => Vector3::from(a).normalize(),
        None => random_unit(rng),
    };
    let roll = rng.random::<f64>() * 2.0 * PI;
    let rot = facing(&u, roll);
    let jitter = |r: &mut dyn rand::RngCore, s: f64| if s > 0.0 { r.random_range(-s..=s) } else { 0.0 };
    let (jx, jy, js) = (jitter(rng, cfg.lateral_jitter), jitter(rng, cfg.lateral_jitter), jitter(rng, cfg.standoff_jitter));
    let p_h = Vector3::new(jx, jy, palm_top(hand) + cfg.clearance + shape.support(&u) + js);
    let t = -c0 - rot * p_h;
    let iso = Isometry3::from_parts(Translation3::from(t), UnitQuaternion::from_rotation_matrix(&rot));
    let wrist = WristPose::from_isometry(&iso);
    let q = close_fingers(hand, &wrist, shape, &object, cfg.gap)?;
    let verdict = evaluate_grasp(hand, &q, &wrist, &cloud, &cfg.eval)?;
    Ok(GraspSample {
        hand_id: hand_id.to_string(),
        object_id: object_id.to_string(),
        cloud,
        cloud_ref: None,
        wrist,
        q,
        label: Some(Label {
            stable: verdict.stable,
        }),
    })
}

/// `count` grasps cycling through `objects`.
pub fn synth_grasps(
    hand: &HandModel,
    hand_id: &str,
    objects: &[ObjectShape],
    count: usize,
    cfg: &SynthConfig,
    rng: &mut impl Rng,
) -> Result<Vec<GraspSample>> {
    if fingertip_links(hand).is_empty() {
        return Err(Error::NoFingertips(hand.name.clone()));
    }
    if count > 0 && objects.is_empty() {
        return Err(Error::InvalidSpec("no objects to grasp".into()));
    }
    (0..count)
        .map(|i| {
            let shape = &objects[i % objects.len()];
            let id = format!("{}#{}", shape.label(), i % objects.len());
            synth_grasp(hand, hand_id, shape, &id, cfg, rng)
        })
        .collect()
}

/// Random primitive objects at the desk scale: spheres, boxes and cylinders.
pub fn random_objects(n: usize, rng: &mut impl Rng) -> Vec<ObjectShape> {
    (0..n)
        .map(|i| match i % 3 {
            0 => ObjectShape::Sphere {
                radius: rng.random_range(0.025..0.035),
            },
            1 => ObjectShape::Box {
                size: [0, 1, 2].map(|_| rng.random_range(0.035..0.055)),
            },
            _ => ObjectShape::Cylinder {
                radius: rng.random_range(0.02..0.028),
                length: rng.random_range(0.05..0.07),
            },
        })
        .collect()
}
