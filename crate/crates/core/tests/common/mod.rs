#![allow(dead_code)]

use magyc::calmodel::{
    norm_error, norm_jacobian, residual, residual_jacobian, CalibrationState, ProcessedSample, SoftIronTerms, StateVector,
    Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform3(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

/// A random state near identity and a random processed sample, from `seed`.
pub fn random_pair(seed: u64) -> (CalibrationState, ProcessedSample) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = SoftIronTerms::IDENTITY.0;
    for v in &mut c {
        *v += rng.random_range(-0.3..0.3);
    }
    let x = CalibrationState {
        c: SoftIronTerms(c),
        m_b: uniform3(&mut rng, 200.0),
        w_b: uniform3(&mut rng, 0.05),
    };
    let s = ProcessedSample {
        t: 0.0,
        m: uniform3(&mut rng, 500.0),
        m_dot: uniform3(&mut rng, 100.0),
        w: uniform3(&mut rng, 2.0),
    };
    (x, s)
}

fn step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

/// Relative Frobenius errors of the analytic residual and norm Jacobians
/// against central differences.
pub fn jacobian_errors(x: &CalibrationState, s: &ProcessedSample) -> (f64, f64) {
    let v = x.to_vector();
    let mut res_fd = nalgebra::SMatrix::<f64, 3, 12>::zeros();
    let mut norm_fd = nalgebra::SMatrix::<f64, 1, 12>::zeros();
    for j in 0..12 {
        let h = step(v[j]);
        let mut plus: StateVector = v;
        let mut minus: StateVector = v;
        plus[j] += h;
        minus[j] -= h;
        let (xp, xm) = (CalibrationState::from_vector(&plus), CalibrationState::from_vector(&minus));
        res_fd.set_column(j, &((residual(&xp, s) - residual(&xm, s)) / (2.0 * h)));
        norm_fd[j] = (norm_error(&xp) - norm_error(&xm)) / (2.0 * h);
    }
    let ja = residual_jacobian(x, s);
    let na = norm_jacobian(x).expect("nonzero soft-iron terms");
    ((ja - res_fd).norm() / ja.norm(), (na - norm_fd).norm() / na.norm())
}
