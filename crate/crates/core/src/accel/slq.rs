use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pcg::{lanczos_tridiagonal, pcg, PcgOptions, PcgResult};
use super::{LinearOperator, Preconditioner};
use crate::error::Result;

/// Rademacher probe vector.
pub fn rademacher(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 })
}

/// Gauss quadrature `e₁ᵀ log(T) e₁` from PCG coefficients, truncated at the
/// first `m` steps (or earlier on breakdown).
pub fn lanczos_log_quadrature(res: &PcgResult, m: usize) -> f64 {
    let t = lanczos_tridiagonal(&res.alphas, &res.betas, m);
    if t.nrows() == 0 {
        return 0.0;
    }
    let eig = t.symmetric_eigen();
    eig.eigenvalues.iter().zip(eig.eigenvectors.row(0).iter()).map(|(l, w)| w * w * l.max(f64::MIN_POSITIVE).ln()).sum()
}

/// One probe run: `b = P^{1/2} v`, PCG on `A x = b` with preconditioner `P`.
pub struct ProbeRun {
    pub b: DVector<f64>,
    pub pinv_b: DVector<f64>,
    pub result: PcgResult,
    pub quadrature: f64,
}

pub fn run_probe(
    op: &dyn LinearOperator,
    precond: &dyn Preconditioner,
    v: &DVector<f64>,
    m_coeffs: usize,
    opts: &PcgOptions,
) -> Result<ProbeRun> {
    let n = op.dim();
    let mut b = DVector::zeros(n);
    precond.apply_sqrt(v, &mut b);
    let mut pinv_b = DVector::zeros(n);
    precond.apply_inverse(&b, &mut pinv_b);
    // enough iterations for the quadrature even if the solve converges early
    let mut o = *opts;
    o.max_iter = o.max_iter.max(m_coeffs);
    let result = pcg(op, precond, &b, None, &o)?;
    let quadrature = lanczos_log_quadrature(&result, m_coeffs);
    Ok(ProbeRun { b, pinv_b, result, quadrature })
}

/// Stochastic Lanczos quadrature estimate of `log det A`.
pub fn slq_logdet(
    op: &dyn LinearOperator,
    precond: &dyn Preconditioner,
    n_probes: usize,
    m_coeffs: usize,
    seed: u64,
) -> Result<f64> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = PcgOptions { tol: 0.0, max_iter: m_coeffs, reorthogonalize: true };
    let mut acc = 0.0;
    for _ in 0..n_probes.max(1) {
        let v = rademacher(n, &mut rng);
        acc += run_probe(op, precond, &v, m_coeffs, &opts)?.quadrature;
    }
    Ok(precond.log_det() + n as f64 * acc / n_probes.max(1) as f64)
}
