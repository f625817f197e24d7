use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{LinearOperator, Preconditioner};
use crate::error::{Error, Result};

/// Randomized Nyström preconditioner for `A + σ²I` built from a rank-`r`
/// sketch of the PSD matrix `A`:
/// `P = U (Λ + σ²I) Uᵀ / (λ_r + σ²) + (I − UUᵀ)`.
#[derive(Debug, Clone)]
pub struct NystromPreconditioner {
    pub u: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub sigma2: f64,
    pub lambda_r: f64,
    pub logdet_p: f64,
    /// Stabilizing shift used in the sketch.
    pub shift: f64,
}

/// Rank heuristic `⌊30/ln 12 · ln(n/10)⌋`, clamped to `[1, n]`.
pub fn default_rank(n: usize) -> usize {
    let r = (30.0 / 12f64.ln() * (n as f64 / 10.0).ln()).floor();
    if r.is_finite() && r >= 1.0 {
        (r as usize).min(n)
    } else {
        1
    }
}

pub fn nystrom_precond(op: &dyn LinearOperator, sigma2: f64, rank: usize, seed: u64) -> Result<NystromPreconditioner> {
    let n = op.dim();
    if rank == 0 || rank > n {
        return Err(Error::InvalidArgument(format!("rank {rank} outside [1, {n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(n, rank, |_, _| StandardNormal.sample(&mut rng));
    let q = omega.qr().q();
    let mut y = DMatrix::zeros(n, rank);
    let mut buf = DVector::zeros(n);
    for j in 0..rank {
        op.apply(&q.column(j).into_owned(), &mut buf);
        y.set_column(j, &buf);
    }
    let mut shift = f64::EPSILON * y.norm();
    if shift == 0.0 {
        shift = f64::EPSILON;
    }
    for _ in 0..4 {
        let y_nu = &y + &q * shift;
        let mut small = q.tr_mul(&y_nu);
        small = (&small + small.transpose()) * 0.5;
        let Some(chol) = small.cholesky() else {
            shift *= 10.0;
            continue;
        };
        // B = Y_ν L⁻ᵀ, i.e. solve L Bᵀ = Y_νᵀ
        let bt = chol.l_dirty().solve_lower_triangular(&y_nu.transpose()).expect("nonsingular");
        let svd = bt.transpose().svd(true, false);
        let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u_full = svd.u.expect("requested U");
        let u = DMatrix::from_fn(n, idx.len(), |i, j| u_full[(i, idx[j])]);
        let lambda =
            DVector::from_iterator(idx.len(), idx.iter().map(|&k| (svd.singular_values[k].powi(2) - shift).max(0.0)));
        let lambda_r = lambda[lambda.len() - 1];
        let logdet_p = lambda.iter().map(|l| ((l + sigma2) / (lambda_r + sigma2)).ln()).sum();
        return Ok(NystromPreconditioner { u, lambda, sigma2, lambda_r, logdet_p, shift });
    }
    Err(Error::NystromFailure)
}

impl NystromPreconditioner {
    fn apply_spectral(&self, x: &DVector<f64>, y: &mut DVector<f64>, f: impl Fn(f64) -> f64) {
        let c = self.u.tr_mul(x);
        let scaled =
            DVector::from_iterator(c.len(), c.iter().zip(self.lambda.iter()).map(|(ci, l)| ci * (f(*l) - 1.0)));
        y.copy_from(x);
        y.gemv(1.0, &self.u, &scaled, 1.0);
    }

    /// Dense `P` (testing aid).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.u.nrows();
        let mut p = DMatrix::identity(n, n);
        let mut col = DVector::zeros(n);
        for j in 0..n {
            let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
            let denom = self.lambda_r + self.sigma2;
            self.apply_spectral(&e, &mut col, |l| (l + self.sigma2) / denom);
            p.set_column(j, &col);
        }
        p
    }
}

impl Preconditioner for NystromPreconditioner {
    fn apply_inverse(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        let num = self.lambda_r + self.sigma2;
        self.apply_spectral(x, y, |l| num / (l + self.sigma2));
    }

    fn apply_sqrt(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        let denom = self.lambda_r + self.sigma2;
        self.apply_spectral(x, y, |l| ((l + self.sigma2) / denom).sqrt());
    }

    fn log_det(&self) -> f64 {
        self.logdet_p
    }
}
