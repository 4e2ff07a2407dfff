//! Domain randomization: a joint world rotation of cloud and wrist, then
//! zero-mean Gaussian noise on every input.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::schema::GraspSample;
use crate::error::{Error, Result};
use crate::kinematics::{matrix_from_r6, r6_from_matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub rot_range_deg: f64,
    pub sigma_pcl: f64,
    pub sigma_trans: f64,
    pub sigma_rot: f64,
    pub sigma_art: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rot_range_deg: 20.0,
            sigma_pcl: 0.002,
            sigma_trans: 0.001,
            sigma_rot: 0.01,
            sigma_art: 0.002,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let s = [self.rot_range_deg, self.sigma_pcl, self.sigma_trans, self.sigma_rot, self.sigma_art];
        if s.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidSpec("augmentation ranges must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Independent stream for one sample in one epoch.
pub fn sample_rng(seed: u64, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
    rng
}

/// Three angles, each uniform in `±range_deg`, in radians.
pub fn sample_rotation_angles(rng: &mut impl Rng, range_deg: f64) -> [f64; 3] {
    let r = range_deg.to_radians();
    if r == 0.0 {
        return [0.0; 3];
    }
    [0, 1, 2].map(|_| rng.random_range(-r..=r))
}

/// Intrinsic X, then Y, then Z: `Rx(a) · Ry(b) · Rz(c)`.
pub fn rotation_intrinsic_xyz(angles: [f64; 3]) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), angles[0])
        * Rotation3::from_axis_angle(&Vector3::y_axis(), angles[1])
        * Rotation3::from_axis_angle(&Vector3::z_axis(), angles[2])
}

/// Rotates cloud points and the wrist pose about the world origin.
pub fn rotate_sample(sample: &GraspSample, rot: &Rotation3<f64>) -> Result<GraspSample> {
    let mut out = sample.clone();
    for p in &mut out.cloud {
        let v = rot * Vector3::from(*p);
        *p = [v.x, v.y, v.z];
    }
    let t = rot * Vector3::from(sample.wrist.t);
    out.wrist.t = [t.x, t.y, t.z];
    let r = rot.matrix() * matrix_from_r6(&sample.wrist.r6)?;
    out.wrist.r6 = r6_from_matrix(&r);
    Ok(out)
}

/// One random joint rotation of cloud and wrist; articulation unchanged.
pub fn augment_geometric(sample: &GraspSample, range_deg: f64, rng: &mut impl Rng) -> Result<GraspSample> {
    let angles = sample_rotation_angles(rng, range_deg);
    if angles == [0.0; 3] {
        return Ok(sample.clone());
    }
    rotate_sample(sample, &rotation_intrinsic_xyz(angles))
}

fn gaussian(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

/// Adds noise to the 6D components, then re-orthonormalizes.
pub fn perturb_r6(r6: &[f64; 6], sigma: f64, rng: &mut impl Rng) -> Result<[f64; 6]> {
    let Some(n) = gaussian(sigma) else {
        return Ok(*r6);
    };
    let noisy = r6.map(|x| x + n.sample(rng));
    let m: Matrix3<f64> = matrix_from_r6(&noisy)?;
    Ok(r6_from_matrix(&m))
}

/// Gaussian noise on cloud points, wrist translation, wrist rotation and articulation.
pub fn augment_noise(sample: &GraspSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<GraspSample> {
    let mut out = sample.clone();
    if let Some(n) = gaussian(cfg.sigma_pcl) {
        for p in &mut out.cloud {
            for x in p.iter_mut() {
                *x += n.sample(rng);
            }
        }
    }
    if let Some(n) = gaussian(cfg.sigma_trans) {
        for x in &mut out.wrist.t {
            *x += n.sample(rng);
        }
    }
    out.wrist.r6 = perturb_r6(&sample.wrist.r6, cfg.sigma_rot, rng)?;
    if let Some(n) = gaussian(cfg.sigma_art) {
        for x in &mut out.q {
            *x += n.sample(rng);
        }
    }
    Ok(out)
}

/// Geometric randomization followed by noise.
pub fn augment(sample: &GraspSample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<GraspSample> {
    let s = augment_geometric(sample, cfg.rot_range_deg, rng)?;
    augment_noise(&s, cfg, rng)
}
