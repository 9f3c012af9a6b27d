//! Sinusoidal attitude trajectories and corrupted sensor streams.
//!
//! Attitude uses Z-Y-X Euler angles (heading, pitch, roll) for a world-from-body
//! rotation `R = Rz(heading) Ry(pitch) Rx(roll)`. The world frame is
//! north-east-down, so the field vector `m0` has a positive down component in
//! the northern hemisphere.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calmodel::{MeasurementSample, Mat3, SoftIronTerms, Vec3};
use crate::error::{Error, Result};

/// Largest pitch amplitude used by generated profiles. Euler pitch of ±90° is
/// singular, so wider requests are clamped here.
pub const MAX_PITCH_AMPLITUDE_DEG: f64 = 89.0;

/// Roll, pitch and heading oscillation frequencies. Incommensurate so the
/// trajectory keeps sweeping new attitudes; slow enough (peak body rate well
/// under 1 rad/s) that one-second averaging windows stay faithful to the motion.
pub const DEFAULT_FREQUENCIES_HZ: [f64; 3] = [0.0125, 0.02, 0.0275];

/// Amplitudes of the shared evaluation dataset.
pub const EVALUATION_KIND: MotionKind = MotionKind::Mam;

pub const DEFAULT_DURATION_S: f64 = 400.0;
pub const DEFAULT_RATE_HZ: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    /// Wide angular movement.
    Wam,
    /// Moderate angular movement.
    Mam,
    /// Low angular movement.
    Lam,
}

impl MotionKind {
    pub const ALL: [MotionKind; 3] = [MotionKind::Wam, MotionKind::Mam, MotionKind::Lam];

    /// Nominal (roll, pitch, heading) amplitudes in degrees.
    pub fn amplitudes_deg(self) -> [f64; 3] {
        match self {
            MotionKind::Wam => [180.0, 180.0, 180.0],
            MotionKind::Mam => [5.0, 45.0, 180.0],
            MotionKind::Lam => [5.0, 15.0, 90.0],
        }
    }
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionKind::Wam => "WAM",
            MotionKind::Mam => "MAM",
            MotionKind::Lam => "LAM",
        })
    }
}

impl FromStr for MotionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wam" => Ok(MotionKind::Wam),
            "mam" => Ok(MotionKind::Mam),
            "lam" => Ok(MotionKind::Lam),
            other => Err(Error::InvalidConfig(format!("unknown motion kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisMotion {
    pub amplitude_deg: f64,
    pub frequency_hz: f64,
    pub phase_rad: f64,
}

impl AxisMotion {
    fn angle(&self, t: f64) -> f64 {
        self.amplitude_deg.to_radians() * (2.0 * PI * self.frequency_hz * t + self.phase_rad).sin()
    }

    fn rate(&self, t: f64) -> f64 {
        let omega = 2.0 * PI * self.frequency_hz;
        self.amplitude_deg.to_radians() * omega * (omega * t + self.phase_rad).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    pub roll: AxisMotion,
    pub pitch: AxisMotion,
    pub heading: AxisMotion,
    pub duration_s: f64,
    pub rate_hz: f64,
    /// Requested pitch amplitude when it had to be clamped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_clamped_from_deg: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attitude {
    pub t: f64,
    pub roll: f64,
    pub pitch: f64,
    pub heading: f64,
}

impl Attitude {
    /// World-from-body rotation.
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.heading)
    }
}

impl MotionProfile {
    /// Builds a profile with the given (roll, pitch, heading) amplitudes,
    /// clamping pitch to [`MAX_PITCH_AMPLITUDE_DEG`].
    pub fn new(amplitudes_deg: [f64; 3], frequencies_hz: [f64; 3], phases_rad: [f64; 3]) -> Self {
        let requested_pitch = amplitudes_deg[1];
        let pitch_amp = requested_pitch.min(MAX_PITCH_AMPLITUDE_DEG);
        let axis = |i: usize, amp: f64| AxisMotion {
            amplitude_deg: amp.max(0.0),
            frequency_hz: frequencies_hz[i],
            phase_rad: phases_rad[i],
        };
        MotionProfile {
            roll: axis(0, amplitudes_deg[0]),
            pitch: axis(1, pitch_amp),
            heading: axis(2, amplitudes_deg[2]),
            duration_s: DEFAULT_DURATION_S,
            rate_hz: DEFAULT_RATE_HZ,
            pitch_clamped_from_deg: (requested_pitch > MAX_PITCH_AMPLITUDE_DEG).then_some(requested_pitch),
        }
    }

    /// A motionless profile.
    pub fn stationary() -> Self {
        MotionProfile::new([0.0; 3], DEFAULT_FREQUENCIES_HZ, [0.0; 3])
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if (0.0..=self.duration_s).contains(&t) {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange {
                t,
                duration: self.duration_s,
            })
        }
    }
}

/// Profile for one of the standard datasets; phases drawn uniformly from `seed`.
pub fn profile_for(kind: MotionKind, seed: u64) -> MotionProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases = [0; 3].map(|_| rng.random_range(0.0..2.0 * PI));
    MotionProfile::new(kind.amplitudes_deg(), DEFAULT_FREQUENCIES_HZ, phases)
}

/// Roll, pitch and heading in radians.
pub fn attitude_at(p: &MotionProfile, t: f64) -> Result<Attitude> {
    p.check_time(t)?;
    Ok(Attitude {
        t,
        roll: p.roll.angle(t),
        pitch: p.pitch.angle(t),
        heading: p.heading.angle(t),
    })
}

/// Body-frame angular rate `vee(Rᵀ Ṙ)` from the closed-form Euler rates.
pub fn angular_rate_at(p: &MotionProfile, t: f64) -> Result<Vec3> {
    let att = attitude_at(p, t)?;
    let cos_pitch = att.pitch.cos();
    if cos_pitch.abs() < 1e-12 {
        return Err(Error::GimbalLock { pitch: att.pitch });
    }
    let (droll, dpitch, dheading) = (p.roll.rate(t), p.pitch.rate(t), p.heading.rate(t));
    let (sr, cr) = att.roll.sin_cos();
    let sp = att.pitch.sin();
    Ok(Vec3::new(
        droll - sp * dheading,
        cr * dpitch + sr * cos_pitch * dheading,
        -sr * dpitch + cr * cos_pitch * dheading,
    ))
}

/// Ground truth for a simulated sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    /// World-frame field (mG).
    pub m0: Vec3,
    /// Upper-triangular terms of the soft-iron matrix `A`.
    pub soft_iron_terms: SoftIronTerms,
    /// Pseudo-hard-iron (mG).
    pub m_b: Vec3,
    /// Gyroscope bias (rad/s).
    pub w_b: Vec3,
    pub sigma_mag: f64,
    pub sigma_gyro: f64,
}

impl Default for SimulationTruth {
    /// The reference desk-scale sensor.
    fn default() -> Self {
        SimulationTruth {
            m0: Vec3::new(227.0, 52.0, 412.0),
            soft_iron_terms: SoftIronTerms([1.10, 0.10, 0.04, 0.88, 0.02, 1.22]),
            m_b: Vec3::new(20.0, 120.0, 90.0),
            w_b: Vec3::new(4e-3, -5e-3, 2e-3),
            sigma_mag: 1.0,
            sigma_gyro: 5e-3,
        }
    }
}

impl SimulationTruth {
    pub fn noise_free(self) -> Self {
        SimulationTruth {
            sigma_mag: 0.0,
            sigma_gyro: 0.0,
            ..self
        }
    }

    pub fn soft_iron(&self) -> Mat3 {
        self.soft_iron_terms.to_matrix()
    }

    /// `A m_b` (mG).
    pub fn hard_iron(&self) -> Vec3 {
        self.soft_iron() * self.m_b
    }

    /// Direction of the horizontal field, east of north (rad).
    pub fn declination(&self) -> f64 {
        self.m0.y.atan2(self.m0.x)
    }

    pub fn state(&self) -> Result<crate::calmodel::CalibrationState> {
        crate::calmodel::CalibrationState::from_forward_model(&self.soft_iron(), self.m_b, self.w_b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<MeasurementSample>,
    pub truth: Option<SimulationTruth>,
    /// Ground-truth attitude, one entry per sample.
    pub attitude: Option<Vec<Attitude>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample rate implied by the median time step.
    pub fn nominal_rate_hz(&self) -> Option<f64> {
        let mut dts: Vec<f64> = self.samples.windows(2).map(|p| p[1].t - p[0].t).collect();
        if dts.is_empty() {
            return None;
        }
        dts.sort_by(f64::total_cmp);
        let mid = dts[dts.len() / 2];
        (mid > 0.0).then(|| 1.0 / mid)
    }
}

fn gaussian(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite positive sigma"))
}

/// Samples the profile at `rate_hz` and applies the forward sensor models.
pub fn synthesize(p: &MotionProfile, truth: &SimulationTruth, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mag_noise = gaussian(truth.sigma_mag);
    let gyro_noise = gaussian(truth.sigma_gyro);
    let mut draw = |dist: &Option<Normal<f64>>| match dist {
        Some(d) => Vec3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng)),
        None => Vec3::zeros(),
    };

    let a = truth.soft_iron();
    let n = p.sample_count();
    let mut samples = Vec::with_capacity(n);
    let mut attitude = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / p.rate_hz;
        let att = attitude_at(p, t)?;
        let m_t = att.rotation().transpose() * truth.m0;
        let w_t = angular_rate_at(p, t)?;
        let m = a * (m_t + truth.m_b) + draw(&mag_noise);
        let w = w_t + truth.w_b + draw(&gyro_noise);
        samples.push(MeasurementSample { t, m, w });
        attitude.push(att);
    }
    Ok(Dataset {
        samples,
        truth: Some(*truth),
        attitude: Some(attitude),
    })
}

/// One Monte Carlo replicate: a calibration dataset per requested kind and a
/// shared evaluation dataset with its own phases and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    pub run: usize,
    pub calibration: Vec<(MotionKind, Dataset)>,
    pub evaluation: Dataset,
}

/// Seeds for one run: `(profile, noise)` per kind, then the evaluation pair.
/// Each run reads its own ChaCha stream of the master seed.
pub fn run_seeds(master: u64, run: usize) -> Vec<(u64, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(run as u64);
    (0..=MotionKind::ALL.len()).map(|_| (rng.random(), rng.random())).collect()
}

pub fn monte_carlo_run(kinds: &[MotionKind], truth: &SimulationTruth, run: usize, seed: u64) -> Result<MonteCarloRun> {
    let seeds = run_seeds(seed, run);
    let calibration = kinds
        .iter()
        .map(|&kind| {
            let idx = MotionKind::ALL.iter().position(|k| *k == kind).unwrap();
            let (ps, ns) = seeds[idx];
            synthesize(&profile_for(kind, ps), truth, ns).map(|d| (kind, d))
        })
        .collect::<Result<Vec<_>>>()?;
    let (ps, ns) = seeds[MotionKind::ALL.len()];
    let evaluation = synthesize(&profile_for(EVALUATION_KIND, ps), truth, ns)?;
    Ok(MonteCarloRun {
        run,
        calibration,
        evaluation,
    })
}

/// Generates `runs` independent replicates in parallel.
pub fn monte_carlo(kinds: &[MotionKind], truth: &SimulationTruth, runs: usize, seed: u64) -> Result<Vec<MonteCarloRun>> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be >= 1".into()));
    }
    (0..runs)
        .into_par_iter()
        .map(|run| monte_carlo_run(kinds, truth, run, seed))
        .collect()
}
