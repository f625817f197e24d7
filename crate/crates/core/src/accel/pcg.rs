use nalgebra::{DMatrix, DVector};

use super::{LinearOperator, Preconditioner};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct PcgResult {
    pub x: DVector<f64>,
    /// Step lengths `α_j`.
    pub alphas: Vec<f64>,
    /// Direction updates `β_j`.
    pub betas: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative residual `‖b − Ax‖ / ‖b‖` tracked by the recursion.
    pub rel_residual: f64,
    /// Norm of the tracked residual after every iteration (index 0 is the start).
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PcgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Re-orthogonalize each new residual against all previous ones in the
    /// `P⁻¹` inner product.
    pub reorthogonalize: bool,
}

impl Default for PcgOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500, reorthogonalize: true }
    }
}

/// Preconditioned conjugate gradients for `A x = b`.
pub fn pcg(
    op: &dyn LinearOperator,
    precond: &dyn Preconditioner,
    b: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    opts: &PcgOptions,
) -> Result<PcgResult> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::Shape(format!("rhs length {} for operator of size {n}", b.len())));
    }
    if !(opts.tol >= 0.0) {
        return Err(Error::InvalidArgument("tolerance must be >= 0".into()));
    }
    let b_norm = b.norm();
    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut ap = DVector::zeros(n);
    let mut r = if x0.is_some() {
        op.apply(&x, &mut ap);
        b - &ap
    } else {
        b.clone()
    };
    let mut z = DVector::zeros(n);
    precond.apply_inverse(&r, &mut z);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut history = vec![r.norm()];
    let mut basis: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::new();
    if opts.reorthogonalize && rz > 0.0 {
        basis.push((r.clone(), z.clone(), rz));
    }

    if b_norm == 0.0 {
        return Ok(PcgResult {
            x: DVector::zeros(n),
            alphas,
            betas,
            iterations: 0,
            converged: true,
            rel_residual: 0.0,
            residual_history: history,
        });
    }
    let target = opts.tol * b_norm;
    let mut converged = r.norm() <= target;
    let mut it = 0;
    while !converged && it < opts.max_iter {
        op.apply(&p, &mut ap);
        let curv = p.dot(&ap);
        if !(curv > 0.0) {
            return Err(Error::NotPositiveDefinite { iteration: it, curvature: curv });
        }
        let alpha = rz / curv;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        precond.apply_inverse(&r, &mut z);
        if opts.reorthogonalize {
            for (ri, zi, rzi) in &basis {
                let c = z.dot(ri) / rzi;
                r.axpy(-c, ri, 1.0);
                z.axpy(-c, zi, 1.0);
            }
        }
        let rz_new = r.dot(&z);
        alphas.push(alpha);
        it += 1;
        let rn = r.norm();
        history.push(rn);
        converged = rn <= target;
        // exact breakdown: Krylov space exhausted
        if rz_new <= 0.0 || rn == 0.0 {
            converged = true;
            break;
        }
        let beta = rz_new / rz;
        betas.push(beta);
        rz = rz_new;
        p *= beta;
        p += &z;
        if opts.reorthogonalize {
            basis.push((r.clone(), z.clone(), rz));
        }
    }
    let rel = history.last().copied().unwrap_or(0.0) / b_norm;
    Ok(PcgResult { x, alphas, betas, iterations: it, converged, rel_residual: rel, residual_history: history })
}

/// Lanczos tridiagonal matrix built from the first `m` PCG coefficients.
pub fn lanczos_tridiagonal(alphas: &[f64], betas: &[f64], m: usize) -> DMatrix<f64> {
    let k = m.min(alphas.len());
    let mut t = DMatrix::zeros(k, k);
    for j in 0..k {
        t[(j, j)] = 1.0 / alphas[j];
        if j > 0 {
            t[(j, j)] += betas[j - 1] / alphas[j - 1];
        }
        if j + 1 < k {
            let off = betas[j].sqrt() / alphas[j];
            t[(j, j + 1)] = off;
            t[(j + 1, j)] = off;
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::super::IdentityPreconditioner;
    use super::*;
    use crate::accel::test_util::random_spd;

    #[test]
    fn identity_converges_in_one_step() {
        let a = DMatrix::<f64>::identity(5, 5);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 0.0]);
        let res = pcg(&a, &IdentityPreconditioner, &b, None, &PcgOptions::default()).unwrap();
        assert_eq!(res.iterations, 1);
        assert!((res.x - b).norm() < 1e-15);
    }

    #[test]
    fn diagonal_two_by_two() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let opts = PcgOptions { tol: 1e-14, ..Default::default() };
        let res = pcg(&a, &IdentityPreconditioner, &b, None, &opts).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-10 && (res.x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn matches_direct_solve() {
        let a = random_spd(50, 3, 1e-3);
        let b = DVector::from_fn(50, |i, _| (i as f64).sin());
        let opts = PcgOptions { tol: 1e-12, max_iter: 500, ..Default::default() };
        let res = pcg(&a, &IdentityPreconditioner, &b, None, &opts).unwrap();
        let direct = a.clone().cholesky().unwrap().solve(&b);
        assert!((&res.x - &direct).norm() <= 1e-8 * direct.norm());
    }

    #[test]
    fn detects_indefinite() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            pcg(&a, &IdentityPreconditioner, &b, None, &PcgOptions::default()),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn lanczos_eigenvalues_lie_in_spectrum() {
        let a = random_spd(60, 9, 1e-2);
        let eig = a.clone().symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let b = DVector::from_fn(60, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let opts = PcgOptions { tol: 0.0, max_iter: 40, reorthogonalize: true };
        let res = pcg(&a, &IdentityPreconditioner, &b, None, &opts).unwrap();
        let t = lanczos_tridiagonal(&res.alphas, &res.betas, 40);
        for th in t.symmetric_eigenvalues().iter() {
            assert!(*th >= lo * (1.0 - 1e-8) && *th <= hi * (1.0 + 1e-8), "{th} not in [{lo}, {hi}]");
        }
    }
}
