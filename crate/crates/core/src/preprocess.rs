//! Window averaging and numerical differentiation of raw streams.
//!
//! Raw samples are averaged over disjoint blocks of `window` samples (the
//! trailing partial block is dropped), and the field derivative is then taken
//! on the averaged sequence.

use serde::{Deserialize, Serialize};

use crate::calmodel::{MeasurementSample, ProcessedSample, Vec3};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DerivativeScheme {
    /// Central differences inside, one-sided first-order at the ends.
    #[default]
    Central,
    /// Forward differences, backward at the last point.
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub window: usize,
    pub derivative_scheme: DerivativeScheme,
}

impl PreprocessConfig {
    pub fn new(window: usize) -> Self {
        PreprocessConfig {
            window,
            derivative_scheme: DerivativeScheme::Central,
        }
    }

    /// Window equal to the nominal sample rate, i.e. one factor pair per second.
    pub fn for_rate(rate_hz: f64) -> Self {
        PreprocessConfig::new((rate_hz.round() as usize).max(1))
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidConfig("averaging window must be >= 1".into()));
        }
        if len == 0 {
            return Err(Error::EmptyDataset);
        }
        let need = 3 * self.window;
        if len < need {
            return Err(Error::TooShort { got: len, need });
        }
        Ok(())
    }
}

/// A window-averaged point before differentiation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedSample {
    pub t: f64,
    pub m: Vec3,
    pub w: Vec3,
}

pub fn average_windows(samples: &[MeasurementSample], cfg: &PreprocessConfig) -> Result<Vec<AveragedSample>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.window == 0 {
        return Err(Error::InvalidConfig("averaging window must be >= 1".into()));
    }
    if samples.len() < cfg.window {
        return Err(Error::TooShort {
            got: samples.len(),
            need: cfg.window,
        });
    }
    let inv = 1.0 / cfg.window as f64;
    Ok(samples
        .chunks_exact(cfg.window)
        .map(|block| {
            let (mut t, mut m, mut w) = (0.0, Vec3::zeros(), Vec3::zeros());
            for s in block {
                t += s.t;
                m += s.m;
                w += s.w;
            }
            AveragedSample {
                t: t * inv,
                m: m * inv,
                w: w * inv,
            }
        })
        .collect())
}

pub fn differentiate(avgs: &[AveragedSample], scheme: DerivativeScheme) -> Result<Vec<ProcessedSample>> {
    if avgs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if avgs.len() < 3 {
        return Err(Error::TooShort {
            got: avgs.len(),
            need: 3,
        });
    }
    if let Some(i) = avgs.windows(2).position(|p| !(p[1].t > p[0].t)) {
        return Err(Error::DegenerateTiming { index: i + 1 });
    }

    let slope = |a: &AveragedSample, b: &AveragedSample| (b.m - a.m) / (b.t - a.t);
    let n = avgs.len();
    Ok((0..n)
        .map(|i| {
            let m_dot = match scheme {
                _ if i == 0 => slope(&avgs[0], &avgs[1]),
                _ if i == n - 1 => slope(&avgs[n - 2], &avgs[n - 1]),
                DerivativeScheme::Central => slope(&avgs[i - 1], &avgs[i + 1]),
                DerivativeScheme::Forward => slope(&avgs[i], &avgs[i + 1]),
            };
            ProcessedSample {
                t: avgs[i].t,
                m: avgs[i].m,
                m_dot,
                w: avgs[i].w,
            }
        })
        .collect())
}

/// Averaging followed by differentiation, with the `len >= 3 * window` check.
pub fn preprocess(samples: &[MeasurementSample], cfg: &PreprocessConfig) -> Result<Vec<ProcessedSample>> {
    cfg.validate(samples.len())?;
    let avgs = average_windows(samples, cfg)?;
    differentiate(&avgs, cfg.derivative_scheme)
}
