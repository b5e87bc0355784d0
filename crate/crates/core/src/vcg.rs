//! 12-lead ECG <-> vectorcardiogram conversion and the VCG-space augmentation.
//!
//! A view is produced as `M⁺ · s·R(θ, a) · (M · X) + ε`, where `M` is the Kors
//! regression matrix, `M⁺` its Moore–Penrose pseudo-inverse, `R` a rotation of
//! `θ` degrees about a random unit axis `a`, `s` a scalar gain and `ε` i.i.d.
//! Gaussian noise added in the ECG domain.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Signal, N_LEADS};
use crate::error::{Error, Result};

/// Kors et al. (1990) ECG-to-VCG regression coefficients, rows X, Y, Z.
/// Column order follows [`crate::data::LEAD_NAMES`]; the derived limb leads
/// (III, aVR, aVL, aVF) carry no weight.
#[rustfmt::skip]
pub const KORS_MATRIX: [[f64; N_LEADS]; 3] = [
    //  I      II    III  aVR  aVL  aVF   V1     V2     V3     V4     V5     V6
    [ 0.38, -0.07, 0.0, 0.0, 0.0, 0.0, -0.13,  0.05, -0.01,  0.14,  0.06,  0.54],
    [-0.07,  0.93, 0.0, 0.0, 0.0, 0.0,  0.06, -0.02, -0.05,  0.06, -0.17,  0.13],
    [ 0.11, -0.23, 0.0, 0.0, 0.0, 0.0, -0.43, -0.06, -0.14, -0.20, -0.11,  0.31],
];

/// Singular values below this are treated as zero when forming `M⁺`.
pub const PINV_CUTOFF: f64 = 1e-12;

/// The forward Kors matrix and its cached pseudo-inverse.
#[derive(Debug, Clone)]
pub struct KorsTransform {
    forward: [[f64; N_LEADS]; 3],
    inverse: [[f64; 3]; N_LEADS],
}

impl Default for KorsTransform {
    fn default() -> Self {
        Self::new()
    }
}

impl KorsTransform {
    pub fn new() -> Self {
        Self::from_matrix(KORS_MATRIX).expect("Kors matrix has full row rank")
    }

    /// Builds the transform for an arbitrary 3×12 matrix; fails if its rank is below 3.
    pub fn from_matrix(forward: [[f64; N_LEADS]; 3]) -> Result<Self> {
        let m = DMatrix::from_fn(3, N_LEADS, |r, c| forward[r][c]);
        let svd = m.clone().svd(true, true);
        let rank = svd.singular_values.iter().filter(|&&s| s > PINV_CUTOFF).count();
        if rank < 3 {
            return Err(Error::Validation(format!("VCG matrix has rank {rank} < 3")));
        }
        let pinv = svd
            .pseudo_inverse(PINV_CUTOFF)
            .map_err(|e| Error::Validation(format!("pseudo-inverse failed: {e}")))?;
        let mut inverse = [[0.0; 3]; N_LEADS];
        for (r, row) in inverse.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = pinv[(r, c)];
            }
        }
        Ok(Self { forward, inverse })
    }

    pub fn forward(&self) -> &[[f64; N_LEADS]; 3] {
        &self.forward
    }

    pub fn inverse(&self) -> &[[f64; 3]; N_LEADS] {
        &self.inverse
    }

    /// Largest absolute deviation of `M · M⁺` from the 3×3 identity.
    pub fn identity_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                let v: f64 = (0..N_LEADS).map(|k| self.forward[r][k] * self.inverse[k][c]).sum();
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// `M · ecg`.
    pub fn ecg_to_vcg(&self, ecg: &Signal) -> Result<Signal> {
        ecg.expect_rows(N_LEADS)?;
        let d = ecg.samples();
        let mut out = Signal::zeros(3, d);
        for (axis, coeffs) in self.forward.iter().enumerate() {
            let dst = out.row_mut(axis);
            for (lead, &w) in coeffs.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (o, &x) in dst.iter_mut().zip(ecg.row(lead)) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }

    /// `M⁺ · vcg`.
    pub fn vcg_to_ecg(&self, vcg: &Signal) -> Result<Signal> {
        vcg.expect_rows(3)?;
        let d = vcg.samples();
        let mut out = Signal::zeros(N_LEADS, d);
        for (lead, coeffs) in self.inverse.iter().enumerate() {
            let dst = out.row_mut(lead);
            for (axis, &w) in coeffs.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (o, &x) in dst.iter_mut().zip(vcg.row(axis)) {
                    *o += w * x;
                }
            }
        }
        Ok(out)
    }

    /// `M⁺ · M · ecg`, the orthogonal projection onto the Kors row space.
    pub fn project(&self, ecg: &Signal) -> Result<Signal> {
        self.vcg_to_ecg(&self.ecg_to_vcg(ecg)?)
    }

    /// One stochastic view of `ecg`. Deterministic for a given `rng` state.
    pub fn augment<R: Rng + ?Sized>(&self, ecg: &Signal, params: &AugmentParams, rng: &mut R) -> Result<Signal> {
        let draw = AugmentDraw::sample(params, rng)?;
        let mut out = self.apply_draw(ecg, &draw)?;
        if params.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, params.noise_sigma)
                .map_err(|e| Error::Validation(format!("noise sigma: {e}")))?;
            for v in out.as_mut_slice() {
                *v += noise.sample(rng);
            }
        }
        Ok(out)
    }

    /// Noise-free part of the augmentation for a fixed draw.
    pub fn apply_draw(&self, ecg: &Signal, draw: &AugmentDraw) -> Result<Signal> {
        let vcg = self.ecg_to_vcg(ecg)?;
        let mut vcg = rotate_vcg(&vcg, draw.theta_deg, draw.axis)?;
        for v in vcg.as_mut_slice() {
            *v *= draw.scale;
        }
        self.vcg_to_ecg(&vcg)
    }
}

/// Ranges the random augmentation draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentParams {
    /// Rotation angle range in degrees.
    pub theta_range: (f64, f64),
    pub scale_range: (f64, f64),
    /// Std of the additive ECG-domain noise, in mV.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self { theta_range: (-15.0, 15.0), scale_range: (1.0, 1.2), noise_sigma: 0.05, seed: 0 }
    }
}

impl AugmentParams {
    /// Parameters that leave the Kors-space component untouched.
    pub fn identity() -> Self {
        Self { theta_range: (0.0, 0.0), scale_range: (1.0, 1.0), noise_sigma: 0.0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.theta_range;
        if !(t0 <= t1 && t0 >= -180.0 && t1 <= 180.0) {
            return Err(Error::Config(format!("theta_range {:?} must lie inside [-180, 180]", self.theta_range)));
        }
        let (s0, s1) = self.scale_range;
        if !(s0 > 0.0 && s0 <= s1) {
            return Err(Error::Config(format!("scale_range {:?} must be positive and ordered", self.scale_range)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma {} must be >= 0", self.noise_sigma)));
        }
        Ok(())
    }
}

/// The rotation and scaling drawn for one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub theta_deg: f64,
    pub axis: [f64; 3],
    pub scale: f64,
}

impl AugmentDraw {
    pub fn sample<R: Rng + ?Sized>(params: &AugmentParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let theta_deg = rng.random_range(params.theta_range.0..=params.theta_range.1);
        // Normalised isotropic Gaussian: uniform on the sphere.
        let axis = loop {
            let v: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if n > 1e-9 {
                break [v[0] / n, v[1] / n, v[2] / n];
            }
        };
        let scale = rng.random_range(params.scale_range.0..=params.scale_range.1);
        Ok(Self { theta_deg, axis, scale })
    }
}

/// Rodrigues rotation matrix for `theta_deg` about the unit vector `axis`.
pub fn rotation_matrix(theta_deg: f64, axis: [f64; 3]) -> Result<[[f64; 3]; 3]> {
    let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("rotation axis must be unit length, |axis| = {norm}")));
    }
    let (s, c) = theta_deg.to_radians().sin_cos();
    let [x, y, z] = axis;
    let t = 1.0 - c;
    Ok([
        [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
        [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
        [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
    ])
}

/// Rotates every column of a 3×D VCG.
pub fn rotate_vcg(vcg: &Signal, theta_deg: f64, axis: [f64; 3]) -> Result<Signal> {
    vcg.expect_rows(3)?;
    let r = rotation_matrix(theta_deg, axis)?;
    let d = vcg.samples();
    let (x, y, z) = (vcg.row(0), vcg.row(1), vcg.row(2));
    let mut out = Signal::zeros(3, d);
    for (i, ri) in r.iter().enumerate() {
        let dst = out.row_mut(i);
        for t in 0..d {
            dst[t] = ri[0] * x[t] + ri[1] * y[t] + ri[2] * z[t];
        }
    }
    Ok(out)
}
