//! Quasi-static grasp stability proxy: contacts from primitive distance
//! fields, normals from local plane fits, and a sampled force-closure margin.
//!
//! Labels produced here are proxy labels. No dynamics are simulated.

mod sdf;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Point3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use sdf::{posed_primitives, primitive_sdf, PosedPrimitive};

use crate::error::{Error, Result};
use crate::kinematics::WristPose;
use crate::urdf::{HandModel, LinkId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Contact distance threshold (m).
    pub eps_contact: f64,
    /// Largest tolerated penetration (m).
    pub penetration_tol: f64,
    /// Friction coefficient.
    pub mu: f64,
    pub n_edges: usize,
    pub n_dirs: usize,
    /// Neighbors per normal plane fit.
    pub knn: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eps_contact: 0.005,
            penetration_tol: 0.003,
            mu: 0.5,
            n_edges: 8,
            n_dirs: 256,
            knn: 12,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub point: [f64; 3],
    /// Unit normal pointing out of the object.
    pub normal: [f64; 3],
    pub source_link: LinkId,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspVerdict {
    pub stable: bool,
    pub fc_margin: f64,
    pub penetration: f64,
    pub contact_count: usize,
}

fn v3(p: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

fn centroid(cloud: &[[f64; 3]]) -> Vector3<f64> {
    cloud.iter().map(v3).sum::<Vector3<f64>>() / cloud.len() as f64
}

fn k_nearest(cloud: &[[f64; 3]], i: usize, k: usize) -> Vec<usize> {
    let p = v3(&cloud[i]);
    let mut d: Vec<(f64, usize)> = cloud.iter().enumerate().map(|(j, q)| ((v3(q) - p).norm_squared(), j)).collect();
    let k = k.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(k);
    }
    d.into_iter().map(|(_, j)| j).collect()
}

/// Normals from k-nearest-neighbor plane fits, oriented away from the centroid.
pub fn estimate_normals(cloud: &[[f64; 3]], k: usize) -> Result<Vec<[f64; 3]>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let c = centroid(cloud);
    Ok((0..cloud.len())
        .map(|i| {
            let nb = k_nearest(cloud, i, k.max(3));
            let mean = nb.iter().map(|&j| v3(&cloud[j])).sum::<Vector3<f64>>() / nb.len() as f64;
            let mut cov = Matrix3::zeros();
            for &j in &nb {
                let d = v3(&cloud[j]) - mean;
                cov += d * d.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let imin = eig.eigenvalues.imin();
            let mut n = eig.eigenvectors.column(imin).into_owned();
            let out = v3(&cloud[i]) - c;
            if n.norm() < 1e-12 || !n.iter().all(|x| x.is_finite()) {
                n = if out.norm() > 0.0 { out } else { Vector3::z() };
            }
            n.normalize_mut();
            if n.dot(&out) < 0.0 {
                n = -n;
            }
            [n.x, n.y, n.z]
        })
        .collect())
}

/// Object points within `eps` of a hand primitive surface, with their normals.
pub fn contact_points(
    hand: &HandModel,
    q: &[f64],
    wrist: &WristPose,
    cloud: &[[f64; 3]],
    normals: &[[f64; 3]],
    eps: f64,
) -> Result<Vec<Contact>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if normals.len() != cloud.len() {
        return Err(Error::DimensionMismatch {
            what: "normals",
            expected: cloud.len(),
            got: normals.len(),
        });
    }
    let prims = posed_primitives(hand, q, wrist)?;
    let mut out = Vec::new();
    for (p, n) in cloud.iter().zip(normals) {
        let pt = Point3::new(p[0], p[1], p[2]);
        let nearest = prims
            .iter()
            .map(|pp| (pp.sdf(&pt), pp.link))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((d, link)) = nearest {
            if d < eps {
                out.push(Contact {
                    point: *p,
                    normal: *n,
                    source_link: link,
                });
            }
        }
    }
    Ok(out)
}

fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Contact wrenches from linearized friction cones. Torques are taken about
/// `center` and divided by the mean contact radius.
pub fn contact_wrenches(contacts: &[Contact], center: &[f64; 3], mu: f64, n_edges: usize) -> Vec<[f64; 6]> {
    let c = v3(center);
    let rho = contacts.iter().map(|k| (v3(&k.point) - c).norm()).sum::<f64>() / contacts.len().max(1) as f64;
    let rho = if rho > 1e-12 { rho } else { 1.0 };
    let mut out = Vec::with_capacity(contacts.len() * n_edges);
    for k in contacts {
        let n = v3(&k.normal);
        let r = v3(&k.point) - c;
        let (t1, t2) = tangent_basis(&n);
        for e in 0..n_edges.max(1) {
            let th = 2.0 * std::f64::consts::PI * e as f64 / n_edges.max(1) as f64;
            let f = -n + mu * (th.cos() * t1 + th.sin() * t2);
            let tau = r.cross(&f) / rho;
            out.push([f.x, f.y, f.z, tau.x, tau.y, tau.z]);
        }
    }
    out
}

/// Seeded unit directions in wrench space.
pub fn wrench_directions(n: usize, seed: u64) -> Vec<[f64; 6]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            let mut u = [0.0; 6];
            for x in &mut u {
                *x = StandardNormal.sample(&mut rng);
            }
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                break u.map(|x| x / norm);
            }
        })
        .collect()
}

/// `min_u max_w ⟨w, u⟩` over sampled directions `u` and contact wrenches `w`.
/// Positive values indicate approximate force closure.
pub fn force_closure_margin(
    contacts: &[Contact],
    center: &[f64; 3],
    mu: f64,
    n_edges: usize,
    n_dirs: usize,
    seed: u64,
) -> Result<f64> {
    if contacts.is_empty() {
        return Err(Error::NoContacts);
    }
    let ws = contact_wrenches(contacts, center, mu, n_edges);
    let dirs = wrench_directions(n_dirs, seed);
    Ok(dirs
        .iter()
        .map(|u| {
            ws.iter()
                .map(|w| w.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .fold(f64::INFINITY, f64::min))
}

/// Deepest intrusion of the object into the hand: cloud points inside
/// primitives, and primitive centres lying under the object surface.
pub fn penetration_depth(prims: &[PosedPrimitive], cloud: &[[f64; 3]], normals: &[[f64; 3]]) -> f64 {
    let mut worst = 0.0f64;
    for p in cloud {
        let pt = Point3::new(p[0], p[1], p[2]);
        for pp in prims {
            worst = worst.max(-pp.sdf(&pt));
        }
    }
    for pp in prims {
        let c = pp.center();
        let (j, d) = cloud
            .iter()
            .enumerate()
            .map(|(j, p)| (j, (v3(p) - c).norm()))
            .fold((0, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
        if (c - v3(&cloud[j])).dot(&v3(&normals[j])) < 0.0 {
            worst = worst.max(d);
        }
    }
    worst
}

/// Stability verdict, computed in the hand frame.
pub fn evaluate_grasp(
    hand: &HandModel,
    q: &[f64],
    wrist: &WristPose,
    cloud: &[[f64; 3]],
    cfg: &EvalConfig,
) -> Result<GraspVerdict> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let inv: Isometry3<f64> = wrist.to_isometry()?.inverse();
    let local: Vec<[f64; 3]> = cloud
        .iter()
        .map(|p| {
            let x = inv * Point3::new(p[0], p[1], p[2]);
            [x.x, x.y, x.z]
        })
        .collect();
    let normals = estimate_normals(&local, cfg.knn)?;
    let id = WristPose::identity();
    let contacts = contact_points(hand, q, &id, &local, &normals, cfg.eps_contact)?;
    let contact_count = contacts.iter().map(|c| c.source_link).collect::<BTreeSet<_>>().len();
    let prims = posed_primitives(hand, q, &id)?;
    let penetration = penetration_depth(&prims, &local, &normals);
    let c = centroid(&local);
    let fc_margin = if contacts.is_empty() {
        f64::NEG_INFINITY
    } else {
        force_closure_margin(&contacts, &[c.x, c.y, c.z], cfg.mu, cfg.n_edges, cfg.n_dirs, cfg.seed)?
    };
    Ok(GraspVerdict {
        stable: contact_count >= 2 && fc_margin > 0.0 && penetration <= cfg.penetration_tol,
        fc_margin,
        penetration,
        contact_count,
    })
}

/// Writes `sample_id,stable,fc_margin,contact_count,penetration` rows.
pub fn write_verdicts_csv(path: &Path, rows: &[(String, GraspVerdict)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("sample_id,stable,fc_margin,contact_count,penetration\n");
    for (id, v) in rows {
        text.push_str(&format!("{id},{},{},{},{}\n", v.stable, v.fc_margin, v.contact_count, v.penetration));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contact(p: [f64; 3], n: [f64; 3]) -> Contact {
        Contact {
            point: p,
            normal: n,
            source_link: LinkId(0),
        }
    }

    #[test]
    fn frictionless_single_contact_cannot_close() {
        let c = [contact([0.0, 0.0, 0.03], [0.0, 0.0, 1.0])];
        let m = force_closure_margin(&c, &[0.0; 3], 0.0, 1, 256, 0).unwrap();
        assert!(m <= 0.0, "{m}");
    }

    #[test]
    fn no_contacts_is_an_error() {
        assert!(matches!(force_closure_margin(&[], &[0.0; 3], 0.5, 8, 16, 0), Err(Error::NoContacts)));
    }

    #[test]
    fn plane_normals_point_outward() {
        let mut cloud = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                cloud.push([i as f64 * 0.01, j as f64 * 0.01, 0.05]);
                cloud.push([i as f64 * 0.01, j as f64 * 0.01, -0.05]);
            }
        }
        let n = estimate_normals(&cloud, 12).unwrap();
        for (p, n) in cloud.iter().zip(&n) {
            assert!((n[2] - p[2].signum()).abs() < 1e-9, "{p:?} {n:?}");
        }
    }

    #[test]
    fn directions_are_unit_and_seeded() {
        let a = wrench_directions(10, 3);
        assert_eq!(a, wrench_directions(10, 3));
        for u in a {
            assert!((u.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
