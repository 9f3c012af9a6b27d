//! Ellipsoid Fit baseline: magnetometer-only calibration by algebraic
//! quadric fitting.
//!
//! The quadric `xᵀQx + 2qᵀx + k = 0` is fitted by taking the right singular
//! vector of the design matrix with the smallest singular value. Points are
//! centered and scaled by their RMS radius first, so the fit is translation
//! invariant and well conditioned at milligauss magnitudes.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::calmodel::{is_positive_definite, CalibrationState, Mat3, Vec3};
use crate::error::{Error, Result};

/// Minimum number of points: a quadric has 9 degrees of freedom.
pub const MIN_POINTS: usize = 9;

const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidFitResult {
    pub soft_iron: Mat3,
    /// Ellipsoid center (mG).
    pub hard_iron: Vec3,
    /// Smallest over largest singular value of the normalized design matrix.
    pub algebraic_residual: f64,
}

impl EllipsoidFitResult {
    /// Equivalent calibration state (`w_b = 0`; the baseline is magnetometer-only).
    pub fn to_state(&self) -> Result<CalibrationState> {
        let c = self
            .soft_iron
            .try_inverse()
            .ok_or_else(|| Error::InvalidSoftIron("soft-iron matrix is singular".into()))?;
        CalibrationState::from_forward_model(&self.soft_iron, c * self.hard_iron, Vec3::zeros())
    }
}

fn symmetric_power(m: &Mat3, p: f64) -> Mat3 {
    let eig = SymmetricEigen::new(*m);
    let d = eig.eigenvalues.map(|v| v.powf(p));
    eig.eigenvectors * Mat3::from_diagonal(&d) * eig.eigenvectors.transpose()
}

pub fn ellipsoid_fit(mags: &[Vec3]) -> Result<EllipsoidFitResult> {
    if mags.len() < MIN_POINTS {
        return Err(Error::TooShort {
            got: mags.len(),
            need: MIN_POINTS,
        });
    }
    if mags.iter().any(|m| !m.iter().all(|v| v.is_finite())) {
        return Err(Error::InvalidConfig("non-finite magnetometer sample".into()));
    }
    let n = mags.len() as f64;
    let mean = mags.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    for m in mags {
        let d = m - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let scale = cov.trace().sqrt();
    if !(scale > 0.0) {
        return Err(Error::InsufficientExcitation("all samples are identical".into()));
    }

    // Spread along each principal axis; a vanishing axis means coplanar points.
    let mut spread: Vec<f64> = SymmetricEigen::new(cov / (scale * scale)).eigenvalues.iter().copied().collect();
    spread.sort_by(f64::total_cmp);
    if spread[1] < RANK_TOL {
        return Err(Error::InsufficientExcitation("samples are collinear".into()));
    }
    if spread[0] < RANK_TOL {
        return Err(Error::NonEllipsoid("samples are coplanar".into()));
    }

    let design = DMatrix::from_fn(mags.len(), 10, |i, j| {
        let u = (mags[i] - mean) / scale;
        match j {
            0 => u.x * u.x,
            1 => u.y * u.y,
            2 => u.z * u.z,
            3 => 2.0 * u.x * u.y,
            4 => 2.0 * u.x * u.z,
            5 => 2.0 * u.y * u.z,
            6 => 2.0 * u.x,
            7 => 2.0 * u.y,
            8 => 2.0 * u.z,
            _ => 1.0,
        }
    });
    let svd = design.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let s_max = svd.singular_values[order[order.len() - 1]];
    let (smallest, second) = (svd.singular_values[order[0]], svd.singular_values[order[1]]);
    if second <= RANK_TOL * s_max {
        return Err(Error::InsufficientExcitation(
            "design matrix has more than one null direction".into(),
        ));
    }
    let v = v_t.row(order[0]);

    let mut q_mat = Mat3::new(v[0], v[3], v[4], v[3], v[1], v[5], v[4], v[5], v[2]);
    let mut q_vec = Vec3::new(v[6], v[7], v[8]);
    let mut k = v[9];
    if q_mat.trace() < 0.0 {
        q_mat = -q_mat;
        q_vec = -q_vec;
        k = -k;
    }
    if !is_positive_definite(&q_mat) {
        return Err(Error::NonEllipsoid("fitted quadric is not an ellipsoid".into()));
    }
    let q_inv = q_mat
        .try_inverse()
        .ok_or_else(|| Error::NonEllipsoid("fitted quadric is degenerate".into()))?;
    let center_u = -q_inv * q_vec;
    let r = center_u.dot(&(q_mat * center_u)) - k;
    if !(r > 0.0) {
        return Err(Error::NonEllipsoid("fitted quadric is imaginary".into()));
    }

    // (x − b)ᵀ M (x − b) = 1 with M = Q / (s² r), and M = A⁻².
    let hard_iron = mean + center_u * scale;
    let m = q_mat / (scale * scale * r);
    let mut soft_iron = symmetric_power(&m, -0.5);

    let raw_mean = mags.iter().map(|m| m.norm()).sum::<f64>() / n;
    let c = symmetric_power(&m, 0.5);
    let cal_mean = mags.iter().map(|x| (c * (x - hard_iron)).norm()).sum::<f64>() / n;
    soft_iron *= cal_mean / raw_mean;
    soft_iron = (soft_iron + soft_iron.transpose()) * 0.5;

    Ok(EllipsoidFitResult {
        soft_iron,
        hard_iron,
        algebraic_residual: smallest / s_max,
    })
}
