//! Single-node factor graph and its damped least-squares optimizer.
//!
//! Every processed sample contributes one residual factor (3 rows) and one
//! norm factor (1 row) to a graph with a single 12-parameter variable. With
//! one node there is no sparsity to exploit, so the normal equations are
//! assembled densely (12×12) and solved with Cholesky under Levenberg-Marquardt
//! damping `H + λ diag(H)`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::calmodel::{
    self, residual, residual_jacobian, CalibrationState, Mat3, ProcessedSample, ResidualJacobian, Vec3,
};
use crate::error::{Error, Result};

type Hessian = SMatrix<f64, 12, 12>;
type Gradient = SVector<f64, 12>;

const MIN_DAMPING: f64 = 1e-12;
const MAX_DAMPING: f64 = 1e6;
const DAMPING_UP: f64 = 10.0;
const DAMPING_DOWN: f64 = 3.0;
/// Jacobi-scaled eigenvalue ratio below which the problem is rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;
/// Relative step length treated as no motion.
const STEP_TOLERANCE: f64 = 1e-12;

/// Gaussian noise covariances for the two factor types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Residual covariance, (mG/s)².
    pub sigma_residual: Mat3,
    /// Norm-constraint variance.
    pub sigma_norm: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            sigma_residual: Mat3::identity() * 0.001,
            sigma_norm: 0.01,
        }
    }
}

impl NoiseModel {
    /// `L⁻¹` for `Σ = L Lᵀ`, so `‖L⁻¹ e‖² = eᵀ Σ⁻¹ e`.
    pub fn residual_sqrt_information(&self) -> Result<Mat3> {
        let sym = calmodel::is_symmetric(&self.sigma_residual, 1e-12);
        let chol = self
            .sigma_residual
            .cholesky()
            .filter(|_| sym)
            .ok_or_else(|| Error::InvalidConfig("residual covariance must be symmetric positive definite".into()))?;
        chol.l()
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("residual covariance is singular".into()))
    }

    pub fn norm_sqrt_information(&self) -> Result<f64> {
        if self.sigma_norm > 0.0 && self.sigma_norm.is_finite() {
            Ok(1.0 / self.sigma_norm.sqrt())
        } else {
            Err(Error::InvalidConfig("norm variance must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iters: usize,
    pub initial_damping: f64,
    /// Target of `‖c‖` in the norm factor.
    pub norm_target: f64,
    /// Iteration cap per update in incremental mode.
    pub incremental_max_iters: usize,
    /// Reject results whose information matrix is rank deficient.
    pub check_observability: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: 1e-7,
            abs_tol: 1e-7,
            max_iters: 200,
            initial_damping: 1e-4,
            norm_target: 1.0,
            incremental_max_iters: 5,
            check_observability: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_iters == 0 || self.incremental_max_iters == 0 {
            return bad("iteration caps must be positive");
        }
        if !(self.initial_damping > 0.0 && self.initial_damping.is_finite()) {
            return bad("initial damping must be positive");
        }
        if !self.norm_target.is_finite() {
            return bad("norm target must be finite");
        }
        Ok(())
    }
}

/// A unary factor on the calibration node, already whitened.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    Residual { sample: ProcessedSample, sqrt_info: Mat3 },
    Norm { target: f64, sqrt_info: f64 },
}

/// Whitened error and Jacobian of one factor; norm factors fill row 0 only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub error: Vec3,
    pub jacobian: ResidualJacobian,
    pub rows: usize,
}

impl Factor {
    pub fn dim(&self) -> usize {
        match self {
            Factor::Residual { .. } => 3,
            Factor::Norm { .. } => 1,
        }
    }

    pub fn whitened_error(&self, x: &CalibrationState) -> Vec3 {
        match self {
            Factor::Residual { sample, sqrt_info } => sqrt_info * residual(x, sample),
            Factor::Norm { target, sqrt_info } => {
                Vec3::new(sqrt_info * calmodel::norm_error_with_target(x, *target), 0.0, 0.0)
            }
        }
    }

    pub fn linearize(&self, x: &CalibrationState) -> Result<Linearization> {
        match self {
            Factor::Residual { sample, sqrt_info } => Ok(Linearization {
                error: sqrt_info * residual(x, sample),
                jacobian: sqrt_info * residual_jacobian(x, sample),
                rows: 3,
            }),
            Factor::Norm { target, sqrt_info } => {
                let mut jacobian = ResidualJacobian::zeros();
                jacobian
                    .row_mut(0)
                    .copy_from(&(calmodel::norm_jacobian(x)? * *sqrt_info));
                Ok(Linearization {
                    error: Vec3::new(sqrt_info * calmodel::norm_error_with_target(x, *target), 0.0, 0.0),
                    jacobian,
                    rows: 1,
                })
            }
        }
    }

    /// Squared whitened error.
    pub fn squared_error(&self, x: &CalibrationState) -> f64 {
        self.whitened_error(x).norm_squared()
    }
}

/// One variable node and its unary factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    pub node: CalibrationState,
    pub factors: Vec<Factor>,
    residual_sqrt_info: Mat3,
    norm_sqrt_info: f64,
    norm_target: f64,
}

impl FactorGraph {
    pub fn new(noise: &NoiseModel, cfg: &SolverConfig) -> Result<Self> {
        Ok(FactorGraph {
            node: CalibrationState::identity(),
            factors: Vec::new(),
            residual_sqrt_info: noise.residual_sqrt_information()?,
            norm_sqrt_info: noise.norm_sqrt_information()?,
            norm_target: cfg.norm_target,
        })
    }

    /// Adds the residual factor for `sample` and one norm factor.
    pub fn add_sample(&mut self, sample: ProcessedSample) {
        self.factors.push(Factor::Residual {
            sample,
            sqrt_info: self.residual_sqrt_info,
        });
        self.factors.push(Factor::Norm {
            target: self.norm_target,
            sqrt_info: self.norm_sqrt_info,
        });
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Assembles `JᵀJ`, `Jᵀe` and the cost at `x`.
    fn normal_equations(&self, x: &CalibrationState) -> Result<(Hessian, Gradient, f64)> {
        let mut h = Hessian::zeros();
        let mut g = Gradient::zeros();
        let mut cost = 0.0;
        for f in &self.factors {
            let lin = f.linearize(x)?;
            let j = lin.jacobian.rows(0, lin.rows);
            let e = lin.error.rows(0, lin.rows);
            h += j.transpose() * j;
            g += j.transpose() * e;
            cost += e.norm_squared();
        }
        Ok((h, g, 0.5 * cost))
    }
}

pub fn build_graph(samples: &[ProcessedSample], noise: &NoiseModel, cfg: &SolverConfig) -> Result<FactorGraph> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut graph = FactorGraph::new(noise, cfg)?;
    for s in samples {
        graph.add_sample(*s);
    }
    Ok(graph)
}

/// `½ Σ ‖whitened error‖²` over all factors.
pub fn total_cost(graph: &FactorGraph, x: &CalibrationState) -> f64 {
    0.5 * graph.factors.iter().map(|f| f.squared_error(x)).sum::<f64>()
}

/// One incremental update as recorded in the history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub state: CalibrationState,
    /// The update failed and the previous estimate was kept.
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Soft-iron `A`.
    pub soft_iron: Mat3,
    /// Hard-iron `A m_b` (mG).
    pub hard_iron: Vec3,
    /// Gyroscope bias (rad/s).
    pub gyro_bias: Vec3,
    pub state: CalibrationState,
    pub state_history: Vec<HistoryEntry>,
    pub final_cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl CalibrationResult {
    fn extract(state: CalibrationState, history: Vec<HistoryEntry>, final_cost: f64, converged: bool, iterations: usize) -> Result<Self> {
        let state = state.canonical();
        let soft_iron = state.soft_iron()?;
        Ok(CalibrationResult {
            soft_iron,
            hard_iron: soft_iron * state.m_b,
            gyro_bias: state.w_b,
            state,
            state_history: history,
            final_cost,
            converged,
            iterations,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    state: CalibrationState,
    cost: f64,
    iterations: usize,
    converged: bool,
}

/// Levenberg-Marquardt from `x0`. Accepted steps never increase the cost.
fn levenberg_marquardt(graph: &FactorGraph, x0: CalibrationState, cfg: &SolverConfig, max_iters: usize) -> Result<Outcome> {
    if !x0.is_finite() {
        return Err(Error::NumericalFailure("initial state is not finite".into()));
    }
    let mut x = x0;
    let (mut h, mut g, mut cost) = graph.normal_equations(&x)?;
    if !cost.is_finite() {
        return Err(Error::NumericalFailure("initial cost is not finite".into()));
    }
    let mut lambda = cfg.initial_damping.clamp(MIN_DAMPING, MAX_DAMPING);
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        // Inner loop: raise damping until a step does not increase the cost.
        let accepted = loop {
            let mut damped = h;
            for i in 0..12 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let step = damped.cholesky().map(|c| -c.solve(&g));
            if let Some(dx) = step.filter(|dx| dx.iter().all(|v| v.is_finite())) {
                let candidate = CalibrationState::from_vector(&(x.to_vector() + dx));
                let new_cost = total_cost(graph, &candidate);
                if new_cost.is_finite() && new_cost <= cost {
                    lambda = (lambda / DAMPING_DOWN).max(MIN_DAMPING);
                    break Some((candidate, new_cost, dx));
                }
            }
            if lambda >= MAX_DAMPING {
                break None;
            }
            lambda = (lambda * DAMPING_UP).min(MAX_DAMPING);
        };

        let Some((candidate, new_cost, dx)) = accepted else {
            // No descent even at maximum damping.
            if let Err(reason) = observability(&h) {
                return Err(Error::DegenerateMotion(reason));
            }
            return Ok(Outcome {
                state: x,
                cost,
                iterations,
                converged: true,
            });
        };

        let decrease = cost - new_cost;
        let relative = if cost > 0.0 { decrease / cost } else { 0.0 };
        let tiny_step = dx.norm() <= STEP_TOLERANCE * (x.to_vector().norm() + STEP_TOLERANCE);
        x = candidate;
        cost = new_cost;
        if (relative < cfg.rel_tol && decrease < cfg.abs_tol) || tiny_step {
            return Ok(Outcome {
                state: x,
                cost,
                iterations,
                converged: true,
            });
        }
        (h, g, cost) = graph.normal_equations(&x)?;
        if !cost.is_finite() {
            return Err(Error::NumericalFailure("cost became non-finite".into()));
        }
    }
    Ok(Outcome {
        state: x,
        cost,
        iterations,
        converged: false,
    })
}

/// Rank test on the Jacobi-scaled information matrix.
fn observability(h: &Hessian) -> std::result::Result<(), String> {
    let diag: Vec<f64> = (0..12).map(|i| h[(i, i)]).collect();
    if let Some(i) = diag.iter().position(|d| !(*d > 0.0)) {
        return Err(format!("no information on parameter {i}"));
    }
    let mut scaled = *h;
    for i in 0..12 {
        for j in 0..12 {
            scaled[(i, j)] /= (diag[i] * diag[j]).sqrt();
        }
    }
    let eig = scaled.symmetric_eigenvalues();
    let (min, max) = (eig.min(), eig.max());
    if !(min > RANK_TOLERANCE * max) {
        return Err(format!("information matrix eigenvalue ratio {:.3e}", min / max));
    }
    Ok(())
}

/// Checks that every parameter is observable from the graph at `x`.
pub fn check_observability(graph: &FactorGraph, x: &CalibrationState) -> Result<()> {
    let (h, _, _) = graph.normal_equations(x)?;
    observability(&h).map_err(Error::DegenerateMotion)
}

/// Optimizes all factors of `graph` at once, starting from `x0`.
pub fn optimize_batch(graph: &FactorGraph, x0: CalibrationState, cfg: &SolverConfig) -> Result<CalibrationResult> {
    cfg.validate()?;
    if graph.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let out = levenberg_marquardt(graph, x0, cfg, cfg.max_iters)?;
    if cfg.check_observability {
        check_observability(graph, &out.state)?;
    }
    CalibrationResult::extract(out.state, Vec::new(), out.cost, out.converged, out.iterations)
}

/// Number of trailing history entries averaged into the reported estimate.
pub fn tail_len(history_len: usize) -> usize {
    ((history_len as f64 * 0.2).ceil() as usize).clamp(1, history_len.max(1))
}

/// Componentwise mean of the last 20% of `history`.
pub fn tail_average(history: &[HistoryEntry]) -> Option<CalibrationState> {
    if history.is_empty() {
        return None;
    }
    let tail = &history[history.len() - tail_len(history.len())..];
    let sum = tail.iter().fold(SVector::<f64, 12>::zeros(), |acc, e| acc + e.state.to_vector());
    Some(CalibrationState::from_vector(&(sum / tail.len() as f64)))
}

/// Adds one (residual, norm) factor pair per sample and re-optimizes after
/// each, warm-started from the previous estimate for at most
/// `cfg.incremental_max_iters` iterations. Reports the average of the last 20%
/// of the estimates.
pub fn optimize_incremental(stream: &[ProcessedSample], noise: &NoiseModel, cfg: &SolverConfig) -> Result<CalibrationResult> {
    optimize_incremental_from(stream, noise, cfg, CalibrationState::identity())
}

pub fn optimize_incremental_from(
    stream: &[ProcessedSample],
    noise: &NoiseModel,
    cfg: &SolverConfig,
    x0: CalibrationState,
) -> Result<CalibrationResult> {
    cfg.validate()?;
    if stream.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut graph = FactorGraph::new(noise, cfg)?;
    let mut x = x0;
    let mut history = Vec::with_capacity(stream.len());
    let mut iterations = 0;
    let mut last_converged = false;
    for s in stream {
        graph.add_sample(*s);
        match levenberg_marquardt(&graph, x, cfg, cfg.incremental_max_iters) {
            Ok(out) => {
                x = out.state.canonical();
                iterations += out.iterations;
                last_converged = out.converged;
                history.push(HistoryEntry { state: x, held: false });
            }
            Err(_) => {
                last_converged = false;
                history.push(HistoryEntry { state: x, held: true });
            }
        }
    }
    graph.node = x;

    let estimate = tail_average(&history).expect("history is nonempty");
    if !estimate.is_finite() {
        return Err(Error::NumericalFailure("averaged estimate is not finite".into()));
    }
    if cfg.check_observability {
        check_observability(&graph, &estimate)?;
    }
    let cost = total_cost(&graph, &estimate);
    CalibrationResult::extract(estimate, history, cost, last_converged, iterations)
}
