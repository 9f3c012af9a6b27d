//! Heading and field-magnitude metrics for calibration results.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::calmodel::{correct_measurement, CalibrationState, Mat3, Vec3};
use crate::error::{Error, Result};
use crate::sim::{Dataset, SimulationTruth};

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// True heading from a calibrated body-frame field, given roll and pitch.
///
/// The field is leveled with `Ry(pitch) Rx(roll)`; the heading is the
/// declination (east of north) minus the direction of the leveled field.
pub fn heading_from_mag(m_cal: &Vec3, roll: f64, pitch: f64, declination: f64) -> Result<f64> {
    let (sp, cp) = pitch.sin_cos();
    if cp.abs() < 1e-12 {
        return Err(Error::GimbalLock { pitch });
    }
    let (sr, cr) = roll.sin_cos();
    // Ry(pitch) * Rx(roll) * m
    let y = cr * m_cal.y - sr * m_cal.z;
    let z = sr * m_cal.y + cr * m_cal.z;
    let x = cp * m_cal.x + sp * z;
    Ok(wrap_angle(declination - y.atan2(x)))
}

/// Per-sample heading error statistics, degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadingErrors {
    pub rmse_deg: f64,
    /// Standard deviation of the error; insensitive to a constant offset.
    pub std_deg: f64,
    pub mean_deg: f64,
    /// `(t, true heading, estimated heading, wrapped error)`, angles in degrees.
    pub samples: Vec<HeadingSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadingSample {
    pub t: f64,
    pub true_deg: f64,
    pub estimated_deg: f64,
    pub error_deg: f64,
}

/// Declination implied by the truth field, if any.
pub fn truth_declination(dataset: &Dataset) -> Option<f64> {
    dataset.truth.as_ref().map(SimulationTruth::declination)
}

pub fn heading_errors(dataset: &Dataset, x: &CalibrationState, declination: f64) -> Result<HeadingErrors> {
    let attitude = dataset.attitude.as_ref().ok_or(Error::MissingGroundTruth)?;
    if attitude.len() != dataset.samples.len() {
        return Err(Error::InvalidConfig("attitude is not aligned with samples".into()));
    }
    if attitude.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut samples = Vec::with_capacity(attitude.len());
    for (s, att) in dataset.samples.iter().zip(attitude) {
        let est = heading_from_mag(&correct_measurement(x, &s.m), att.roll, att.pitch, declination)?;
        let err = wrap_angle(est - att.heading);
        samples.push(HeadingSample {
            t: s.t,
            true_deg: att.heading.to_degrees(),
            estimated_deg: est.to_degrees(),
            error_deg: err.to_degrees(),
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.error_deg).sum::<f64>() / n;
    let mse = samples.iter().map(|s| s.error_deg.powi(2)).sum::<f64>() / n;
    let var = samples.iter().map(|s| (s.error_deg - mean).powi(2)).sum::<f64>() / n;
    Ok(HeadingErrors {
        rmse_deg: mse.sqrt(),
        std_deg: var.sqrt(),
        mean_deg: mean,
        samples,
    })
}

/// Heading RMSE in degrees, using the truth field's declination.
pub fn heading_rmse(dataset: &Dataset, x: &CalibrationState) -> Result<f64> {
    let decl = truth_declination(dataset).ok_or(Error::MissingGroundTruth)?;
    Ok(heading_errors(dataset, x, decl)?.rmse_deg)
}

/// Standard deviation of calibrated field magnitudes (mG), after rescaling so
/// their mean equals the mean raw magnitude.
pub fn mag_field_std(dataset: &Dataset, x: &CalibrationState) -> Result<f64> {
    if dataset.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.samples.len() as f64;
    let raw_mean = dataset.samples.iter().map(|s| s.m.norm()).sum::<f64>() / n;
    let norms: Vec<f64> = dataset
        .samples
        .iter()
        .map(|s| correct_measurement(x, &s.m).norm())
        .collect();
    let cal_mean = norms.iter().sum::<f64>() / n;
    if !(cal_mean > 0.0) {
        return Err(Error::NumericalFailure("calibrated field has zero magnitude".into()));
    }
    let scale = raw_mean / cal_mean;
    let var = norms.iter().map(|v| (v * scale - raw_mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterErrors {
    /// `|A m_b − A* m_b*|` (mG).
    pub hard_iron: Vec3,
    /// `|k A − A*|` entrywise, with `k` the least-squares scale.
    pub soft_iron: Mat3,
    pub soft_iron_scale: f64,
    /// `|w_b − w_b*|` (rad/s).
    pub gyro_bias: Vec3,
}

/// Least-squares scalar `k` minimizing `‖k a − target‖`.
pub fn scale_alignment(a: &Mat3, target: &Mat3) -> f64 {
    a.dot(target) / a.norm_squared()
}

pub fn parameter_errors(x: &CalibrationState, truth: &SimulationTruth) -> Result<ParameterErrors> {
    let a = x.soft_iron()?;
    let a_true = truth.soft_iron();
    let k = scale_alignment(&a, &a_true);
    Ok(ParameterErrors {
        hard_iron: (a * x.m_b - truth.hard_iron()).abs(),
        soft_iron: (a * k - a_true).abs(),
        soft_iron_scale: k,
        gyro_bias: (x.w_b - truth.w_b).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub dataset: String,
    pub heading_rmse: f64,
    pub heading_error_std: f64,
    pub mag_field_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_iron_error: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_iron_error: Option<Mat3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_iron_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gyro_bias_error: Option<Vec3>,
}

/// Full report; parameter errors only when `truth` is given.
pub fn evaluate(
    dataset: &Dataset,
    x: &CalibrationState,
    declination: f64,
    truth: Option<&SimulationTruth>,
    method: &str,
    label: &str,
) -> Result<(EvaluationReport, HeadingErrors)> {
    let heading = heading_errors(dataset, x, declination)?;
    let params = truth.map(|t| parameter_errors(x, t)).transpose()?;
    let report = EvaluationReport {
        method: method.to_string(),
        dataset: label.to_string(),
        heading_rmse: heading.rmse_deg,
        heading_error_std: heading.std_deg,
        mag_field_std: mag_field_std(dataset, x)?,
        hard_iron_error: params.map(|p| p.hard_iron),
        soft_iron_error: params.map(|p| p.soft_iron),
        soft_iron_scale: params.map(|p| p.soft_iron_scale),
        gyro_bias_error: params.map(|p| p.gyro_bias),
    };
    Ok((report, heading))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{profile_for, synthesize, MotionKind};
    use nalgebra::Rotation3;

    #[test]
    fn level_heading_round_trip() {
        let m0 = Vec3::new(227.0, 52.0, 412.0);
        let decl = m0.y.atan2(m0.x);
        for deg in [-179.0, -90.0, -12.5, 0.0, 33.0, 90.0, 179.9] {
            let psi = f64::to_radians(deg);
            let body = Rotation3::from_euler_angles(0.0, 0.0, psi).transpose() * m0;
            let h = heading_from_mag(&body, 0.0, 0.0, decl).unwrap();
            assert!(wrap_angle(h - psi).abs() < 1e-9, "{deg}: {}", h.to_degrees());
        }
    }

    #[test]
    fn tilted_heading_round_trip() {
        let m0 = Vec3::new(227.0, 52.0, 412.0);
        let decl = m0.y.atan2(m0.x);
        let (roll, pitch, psi) = (0.7, -1.2, 2.5);
        let body = Rotation3::from_euler_angles(roll, pitch, psi).transpose() * m0;
        let h = heading_from_mag(&body, roll, pitch, decl).unwrap();
        assert!((h - psi).abs() < 1e-9);
    }

    #[test]
    fn north_field_reads_zero() {
        let h = heading_from_mag(&Vec3::new(200.0, 0.0, 400.0), 0.0, 0.0, 0.0).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn heading_is_periodic() {
        let m = Vec3::new(100.0, -50.0, 300.0);
        let a = heading_from_mag(&m, 0.1, 0.2, 0.3).unwrap();
        let b = heading_from_mag(&m, 0.1 + 2.0 * PI, 0.2, 0.3 + 2.0 * PI).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(
            heading_from_mag(&m, 0.0, PI / 2.0, 0.0),
            Err(Error::GimbalLock { .. })
        ));
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn truth_state_is_perfect_on_clean_data() {
        let truth = SimulationTruth::default().noise_free();
        let d = synthesize(&profile_for(MotionKind::Wam, 4), &truth, 0).unwrap();
        let x = truth.state().unwrap();
        assert!(heading_rmse(&d, &x).unwrap() < 0.01);
        assert!(mag_field_std(&d, &x).unwrap() < 1e-9);
        let p = parameter_errors(&x, &truth).unwrap();
        assert!(p.hard_iron.max() < 1e-12);
        assert!(p.soft_iron.max() < 1e-12);
        assert_eq!(p.gyro_bias, Vec3::zeros());
    }

    #[test]
    fn gyro_error_is_additive() {
        let truth = SimulationTruth::default();
        let mut x = truth.state().unwrap();
        x.w_b.x += 1e-3;
        let p = parameter_errors(&x, &truth).unwrap();
        assert!((p.gyro_bias - Vec3::new(1e-3, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn missing_attitude_is_reported() {
        let truth = SimulationTruth::default();
        let mut d = synthesize(&profile_for(MotionKind::Lam, 1), &truth, 0).unwrap();
        d.attitude = None;
        assert_eq!(
            heading_rmse(&d, &CalibrationState::identity()),
            Err(Error::MissingGroundTruth)
        );
    }

    #[test]
    fn metrics_are_gauge_invariant() {
        let truth = SimulationTruth::default();
        let d = synthesize(&profile_for(MotionKind::Wam, 8), &truth, 3).unwrap();
        let mut x = truth.state().unwrap();
        x.m_b += Vec3::new(3.0, -2.0, 1.0);
        let h = heading_rmse(&d, &x).unwrap();
        let s = mag_field_std(&d, &x).unwrap();
        for k in [0.5, 2.0] {
            let y = x.rescaled(k);
            assert!((heading_rmse(&d, &y).unwrap() - h).abs() < 1e-10);
            assert!((mag_field_std(&d, &y).unwrap() - s).abs() < 1e-10);
        }
    }
}
