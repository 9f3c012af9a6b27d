//! Calibration state and the attitude-free system model.
//!
//! The magnetometer reading is modeled as `m = A (m_t + m_b)` with `A` the
//! symmetric positive-definite soft-iron matrix and `m_b` the pseudo-hard-iron,
//! and the gyroscope as `w = w_t + w_b`. Differentiating the world-frame field
//! and substituting `Ṙ = R [w]×` removes the attitude, leaving
//!
//! ```text
//! h(x) = [w - w_b]× (C m - m_b) + C ṁ = 0,      C = A⁻¹
//! ```
//!
//! The state is parameterized by the six upper-triangular terms `c` of `C`
//! rather than of `A`, so the Jacobians are polynomial in the state and no
//! inversion happens inside a factor. `A` is recovered once, at extraction.
//!
//! Units everywhere: milligauss, rad/s, seconds.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type StateVector = SVector<f64, 12>;
pub type ResidualJacobian = SMatrix<f64, 3, 12>;
pub type NormJacobian = SMatrix<f64, 1, 12>;
pub type DuplicationMap = SMatrix<f64, 9, 6>;

/// Largest condition number accepted for `to_matrix(c)` at result extraction.
pub const MAX_CONDITION: f64 = 1e8;

/// Row/column of each upper-triangular term, in storage order
/// `(c00, c01, c02, c11, c12, c22)`.
const TERM_INDEX: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

pub fn is_symmetric(m: &Mat3, tol: f64) -> bool {
    (m - m.transpose()).abs().max() <= tol * m.abs().max().max(1.0)
}

/// Cholesky succeeds only for symmetric positive-definite input.
pub fn is_positive_definite(m: &Mat3) -> bool {
    is_symmetric(m, 1e-12) && m.cholesky().is_some()
}

/// Ratio of extreme singular values; infinite for singular matrices.
pub fn condition_number(m: &Mat3) -> f64 {
    let sv = m.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Unique upper-triangular terms of a symmetric 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftIronTerms(pub [f64; 6]);

impl SoftIronTerms {
    pub const IDENTITY: SoftIronTerms = SoftIronTerms([1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);

    pub fn to_matrix(&self) -> Mat3 {
        let mut m = Mat3::zeros();
        for (k, &(i, j)) in TERM_INDEX.iter().enumerate() {
            m[(i, j)] = self.0[k];
            m[(j, i)] = self.0[k];
        }
        m
    }

    /// Reads the upper triangle; the lower triangle is ignored.
    pub fn from_matrix(m: &Mat3) -> Self {
        let mut c = [0.0; 6];
        for (k, &(i, j)) in TERM_INDEX.iter().enumerate() {
            c[k] = m[(i, j)];
        }
        SoftIronTerms(c)
    }

    pub fn as_vector(&self) -> SVector<f64, 6> {
        SVector::from_column_slice(&self.0)
    }

    /// Euclidean norm of the six terms.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Self {
        SoftIronTerms(self.0.map(|v| k * v))
    }
}

/// The 12-parameter calibration estimate: inverse soft-iron terms `c`,
/// pseudo-hard-iron `m_b` (mG) and gyroscope bias `w_b` (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub c: SoftIronTerms,
    pub m_b: Vec3,
    pub w_b: Vec3,
}

impl Default for CalibrationState {
    /// Both sensors assumed calibrated.
    fn default() -> Self {
        CalibrationState::identity()
    }
}

impl CalibrationState {
    pub const DIM: usize = 12;

    pub fn identity() -> Self {
        CalibrationState {
            c: SoftIronTerms::IDENTITY,
            m_b: Vec3::zeros(),
            w_b: Vec3::zeros(),
        }
    }

    /// State equivalent to a forward model with soft-iron `a`, pseudo-hard-iron
    /// `m_b` and gyro bias `w_b`.
    pub fn from_forward_model(a: &Mat3, m_b: Vec3, w_b: Vec3) -> Result<Self> {
        let c = a
            .try_inverse()
            .ok_or_else(|| Error::InvalidSoftIron("soft-iron matrix is singular".into()))?;
        Ok(CalibrationState {
            c: SoftIronTerms::from_matrix(&c),
            m_b,
            w_b,
        })
    }

    /// Packs as `[c (6), m_b (3), w_b (3)]`.
    pub fn to_vector(&self) -> StateVector {
        let mut v = StateVector::zeros();
        v.fixed_rows_mut::<6>(0).copy_from(&self.c.as_vector());
        v.fixed_rows_mut::<3>(6).copy_from(&self.m_b);
        v.fixed_rows_mut::<3>(9).copy_from(&self.w_b);
        v
    }

    pub fn from_vector(v: &StateVector) -> Self {
        let mut c = [0.0; 6];
        c.copy_from_slice(&v.as_slice()[..6]);
        CalibrationState {
            c: SoftIronTerms(c),
            m_b: v.fixed_rows::<3>(6).into_owned(),
            w_b: v.fixed_rows::<3>(9).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    /// `C = to_matrix(c)`, the inverse soft-iron.
    pub fn inverse_soft_iron(&self) -> Mat3 {
        self.c.to_matrix()
    }

    /// Soft-iron `A = C⁻¹`. Rejects `C` that is not positive definite or whose
    /// condition number exceeds [`MAX_CONDITION`].
    pub fn soft_iron(&self) -> Result<Mat3> {
        let c = self.inverse_soft_iron();
        if !c.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidSoftIron("non-finite soft-iron terms".into()));
        }
        if !is_positive_definite(&c) {
            return Err(Error::InvalidSoftIron(
                "inverse soft-iron is not positive definite".into(),
            ));
        }
        let cond = condition_number(&c);
        if cond > MAX_CONDITION {
            return Err(Error::InvalidSoftIron(format!(
                "inverse soft-iron condition number {cond:.3e} exceeds {MAX_CONDITION:e}"
            )));
        }
        c.try_inverse()
            .ok_or_else(|| Error::InvalidSoftIron("inverse soft-iron is singular".into()))
    }

    /// Physical hard-iron `A m_b` (mG).
    pub fn hard_iron(&self) -> Result<Vec3> {
        Ok(self.soft_iron()? * self.m_b)
    }

    /// Flips the sign gauge so that `C` has positive trace. `(c, m_b)` and
    /// `(-c, -m_b)` have identical residual and norm costs.
    pub fn canonical(&self) -> Self {
        if self.inverse_soft_iron().trace() < 0.0 {
            self.rescaled(-1.0)
        } else {
            *self
        }
    }

    /// `(k c, k m_b, w_b)`: the same calibration in a different scale gauge.
    pub fn rescaled(&self, k: f64) -> Self {
        CalibrationState {
            c: self.c.scaled(k),
            m_b: self.m_b * k,
            w_b: self.w_b,
        }
    }
}

/// A raw magnetometer + gyroscope reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub t: f64,
    pub m: Vec3,
    pub w: Vec3,
}

/// A window-averaged reading with the numerically differentiated field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessedSample {
    pub t: f64,
    pub m: Vec3,
    pub m_dot: Vec3,
    pub w: Vec3,
}

/// Skew-symmetric matrix with `skew(v) * u == v × u`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Column-major stacking of a matrix.
pub fn vec_op(m: &Mat3) -> SVector<f64, 9> {
    SVector::from_column_slice(m.as_slice())
}

/// `∂vec(C)/∂c`: the constant 9×6 map with `vec(to_matrix(c)) = D c`.
pub fn duplication_map() -> DuplicationMap {
    let mut d = DuplicationMap::zeros();
    for (k, &(i, j)) in TERM_INDEX.iter().enumerate() {
        d[(i + 3 * j, k)] = 1.0;
        d[(j + 3 * i, k)] = 1.0;
    }
    d
}

/// System-model residual `[w - w_b]× (C m - m_b) + C ṁ` in mG/s.
pub fn residual(x: &CalibrationState, s: &ProcessedSample) -> Vec3 {
    let c = x.inverse_soft_iron();
    skew(&(s.w - x.w_b)) * (c * s.m - x.m_b) + c * s.m_dot
}

/// Analytic 3×12 Jacobian of [`residual`], columns ordered as
/// [`CalibrationState::to_vector`].
pub fn residual_jacobian(x: &CalibrationState, s: &ProcessedSample) -> ResidualJacobian {
    let c = x.inverse_soft_iron();
    let rot = skew(&(s.w - x.w_b));
    let d_vec_c = s.m.transpose().kronecker(&rot) + s.m_dot.transpose().kronecker(&Mat3::identity());
    let d_c = d_vec_c * duplication_map();
    // d/dw_b of -[w_b]× v is [v]×, with v = C m - m_b.
    let d_wb = skew(&(c * s.m - x.m_b));

    let mut j = ResidualJacobian::zeros();
    j.fixed_view_mut::<3, 6>(0, 0).copy_from(&d_c);
    j.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-rot));
    j.fixed_view_mut::<3, 3>(0, 9).copy_from(&d_wb);
    j
}

/// `‖c‖ - 1`.
pub fn norm_error(x: &CalibrationState) -> f64 {
    norm_error_with_target(x, 1.0)
}

/// `‖c‖ - target`.
pub fn norm_error_with_target(x: &CalibrationState, target: f64) -> f64 {
    x.c.norm() - target
}

/// `[cᵀ/‖c‖, 0, 0]`; undefined at `c = 0`.
pub fn norm_jacobian(x: &CalibrationState) -> Result<NormJacobian> {
    let n = x.c.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::SingularPoint);
    }
    let mut j = NormJacobian::zeros();
    for k in 0..6 {
        j[(0, k)] = x.c.0[k] / n;
    }
    Ok(j)
}

/// Calibrated field `C m_raw - m_b`, known up to the scale gauge of `x`.
pub fn correct_measurement(x: &CalibrationState, m_raw: &Vec3) -> Vec3 {
    x.inverse_soft_iron() * m_raw - x.m_b
}
