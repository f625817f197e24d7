//! Randomized linear algebra for large covariance matrices: PCG, Nyström
//! preconditioning and stochastic Lanczos quadrature, combined into an
//! approximate NLML backend.

mod nystrom;
mod operator;
mod pcg;
mod slq;

pub use nystrom::{default_rank, nystrom_precond, NystromPreconditioner};
pub use operator::{IdentityPreconditioner, LinearOperator, Preconditioner, ShiftedDense};
pub use pcg::{lanczos_tridiagonal, pcg, PcgOptions, PcgResult};
pub use slq::{lanczos_log_quadrature, rademacher, run_probe, slq_logdet, ProbeRun};

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{assemble_kff_parts, Gradient, Hyperparameters, Problem, INITIAL_JITTER, MAX_JITTER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccelConfig {
    /// Nyström rank; the logarithmic rank rule when `None`.
    pub rank: Option<usize>,
    pub n_probes: usize,
    /// Lanczos steps per probe; `min(50, n − 1)` when `None`.
    pub m_coeffs: Option<usize>,
    pub pcg_tol: f64,
    pub pcg_max_iter: usize,
    pub seed: u64,
}

impl Default for AccelConfig {
    fn default() -> Self {
        Self { rank: None, n_probes: 10, m_coeffs: None, pcg_tol: 1e-6, pcg_max_iter: 500, seed: 0 }
    }
}

/// Diagnostics of one accelerated evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccelReport {
    pub rank: usize,
    pub jitter: f64,
    pub solve_iterations: usize,
    pub probe_iterations: Vec<usize>,
    pub logdet: f64,
}

/// NLML and gradient with the log-determinant from SLQ and the trace terms
/// from Hutchinson estimates that reuse the SLQ probes.
pub fn accelerated_nlml(p: &Problem, h: &Hyperparameters, cfg: &AccelConfig) -> Result<(f64, Gradient)> {
    accelerated_nlml_report(p, h, cfg).map(|(v, g, _)| (v, g))
}

pub fn accelerated_nlml_report(
    p: &Problem,
    h: &Hyperparameters,
    cfg: &AccelConfig,
) -> Result<(f64, Gradient, AccelReport)> {
    h.validate()?;
    let mask = h.train_mask;
    let use_e = !h.theta_e.is_off() || mask.theta_e;
    let use_a = !h.theta_a.is_off() || mask.theta_a;
    let grad_theta = mask.theta_e || mask.theta_a;
    let parts = assemble_kff_parts(p, &h.theta_e, &h.theta_a, use_e, use_a, grad_theta)?;
    let n = p.n_rows();
    let k = parts.kff(&h.theta_e, &h.theta_a, n);
    let sigma2 = h.sigma * h.sigma;
    let mut jitter = if sigma2 > 0.0 { 0.0 } else { INITIAL_JITTER };
    loop {
        match evaluate(p, h, cfg, &parts, &k, sigma2 + jitter) {
            Ok((v, g, mut rep)) => {
                rep.jitter = jitter;
                return Ok((v, g, rep));
            }
            Err(Error::NotPositiveDefinite { .. }) | Err(Error::NystromFailure) => {
                jitter = if jitter == 0.0 { INITIAL_JITTER } else { jitter * 10.0 };
                if jitter > MAX_JITTER * (1.0 + 1e-9) {
                    return Err(Error::IllConditioned { jitter: MAX_JITTER });
                }
            }
            Err(e) => return Err(e),
        }
    }
}

fn evaluate(
    p: &Problem,
    h: &Hyperparameters,
    cfg: &AccelConfig,
    parts: &crate::gp::KffParts,
    k: &DMatrix<f64>,
    shift: f64,
) -> Result<(f64, Gradient, AccelReport)> {
    let n = k.nrows();
    let mask = h.train_mask;
    let op = ShiftedDense { k, shift };
    let rank = cfg.rank.unwrap_or_else(|| default_rank(n)).clamp(1, n);
    let pre = nystrom_precond(k, shift, rank, cfg.seed)?;
    let opts = PcgOptions { tol: cfg.pcg_tol, max_iter: cfg.pcg_max_iter, reorthogonalize: true };
    let m_coeffs = cfg.m_coeffs.unwrap_or(50.min(n.saturating_sub(1).max(1)));

    let r = p.residual(h)?;
    let sol = pcg(&op, &pre, &r, None, &opts)?;
    let gamma = sol.x;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let n_probes = cfg.n_probes.max(1);
    let mut probes = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let v = rademacher(n, &mut rng);
        probes.push(run_probe(&op, &pre, &v, m_coeffs, &opts)?);
    }
    let quad = probes.iter().map(|pr| pr.quadrature).sum::<f64>() / n_probes as f64;
    let logdet = pre.log_det() + n as f64 * quad;
    let value = 0.5 * r.dot(&gamma) + 0.5 * logdet + 0.5 * n as f64 * (2.0 * PI).ln();

    // Hutchinson: Tr(K̂⁻¹ ∂K) ≈ mean (P⁻¹b)ᵀ ∂K (K̂⁻¹b)
    let hutch = |dk: &DMatrix<f64>| -> f64 {
        probes.iter().map(|pr| pr.pinv_b.dot(&(dk * &pr.result.x))).sum::<f64>() / n_probes as f64
    };
    let term = |dk: &DMatrix<f64>| 0.5 * (hutch(dk) - gamma.dot(&(dk * &gamma)));
    let mut g = Gradient::default();
    if mask.theta_e {
        let (ce, de) = (parts.ce.as_ref().expect("energy part"), parts.de.as_ref().expect("energy derivative"));
        g.theta_e = Some([term(ce), h.theta_e.s2 * term(de)]);
    }
    if mask.theta_a {
        let (ca, da) = (parts.ca.as_ref().expect("alignment part"), parts.da.as_ref().expect("alignment derivative"));
        g.theta_a = Some([term(ca), h.theta_a.s2 * term(da)]);
    }
    if mask.sigma {
        let tr = probes.iter().map(|pr| pr.pinv_b.dot(&pr.result.x)).sum::<f64>() / n_probes as f64;
        g.sigma = Some(h.sigma * (tr - gamma.dot(&gamma)));
    }
    if mask.alpha {
        let jac = p.mean_jacobian(&h.alpha)?;
        g.alpha = Some(jac.iter().map(|j| -gamma.dot(j)).collect::<Vec<f64>>());
    }
    if mask.mass {
        g.mass = Some(if h.mass < 0.0 { 0.0 } else { gamma.dot(&p.z) });
    }
    let report = AccelReport {
        rank,
        jitter: 0.0,
        solve_iterations: sol.iterations,
        probe_iterations: probes.iter().map(|pr| pr.result.iterations).collect(),
        logdet,
    };
    Ok((value, g, report))
}

#[cfg(test)]
pub(crate) mod test_util {
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng)).qr().q()
    }

    /// SPD matrix with log-uniform spectrum in `[floor, 10]`.
    pub fn random_spd(n: usize, seed: u64, floor: f64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_orthogonal(n, &mut rng);
        let (lo, hi) = (floor.ln(), 10f64.ln());
        let d = DVector::from_fn(n, |_, _| rng.random_range(lo..hi).exp());
        let m = &q * DMatrix::from_diagonal(&d) * q.transpose();
        (&m + m.transpose()) * 0.5
    }

    /// PSD matrix with eigenvalues `e^{-rate·i}`.
    pub fn decaying_spd(n: usize, rate: f64, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_orthogonal(n, &mut rng);
        let d = DVector::from_fn(n, |i, _| (-rate * i as f64).exp());
        let m = &q * DMatrix::from_diagonal(&d) * q.transpose();
        (&m + m.transpose()) * 0.5
    }
}
