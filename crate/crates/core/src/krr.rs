//! Kernel ridge regression view of the kernel estimator, built directly from
//! the trajectory data so that it can cross-check the GP posterior mean.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covfunc::{gram, gram_sym, MaternParams};
use crate::error::{Error, Result};
use crate::gp::{assemble_kff, posterior_kernel, Hyperparameters, ModelSpec, Problem};
use crate::systems::TrajectoryDataset;

/// Pairwise geometry of a dataset over all ordered pairs `(i, j)`, including
/// `i = j`, snapshot by snapshot.
#[derive(Debug, Clone)]
pub struct PairDesign {
    pub n: usize,
    pub d: usize,
    /// `MLN²` position radii `|x_j − x_i|`.
    pub radii: Vec<f64>,
    /// `dNML × MLN²` block-diagonal matrix of position differences.
    pub r_x: DMatrix<f64>,
    /// Same layout with velocity differences.
    pub r_v: DMatrix<f64>,
}

impl PairDesign {
    pub fn new(ds: &TrajectoryDataset) -> Result<Self> {
        ds.validate()?;
        let (n, d) = (ds.n, ds.d);
        let snaps = ds.n_snapshots();
        let rows = snaps * n * d;
        let cols = snaps * n * n;
        let mut radii = Vec::with_capacity(cols);
        let mut r_x = DMatrix::zeros(rows, cols);
        let mut r_v = DMatrix::zeros(rows, cols);
        for (s, (y, _)) in ds.snapshots().enumerate() {
            let (x, v) = y.split_at(n * d);
            for i in 0..n {
                for j in 0..n {
                    let col = s * n * n + i * n + j;
                    let mut r2 = 0.0;
                    for a in 0..d {
                        let dx = x[j * d + a] - x[i * d + a];
                        let row = s * n * d + i * d + a;
                        r_x[(row, col)] = dx;
                        r_v[(row, col)] = v[j * d + a] - v[i * d + a];
                        r2 += dx * dx;
                    }
                    radii.push(r2.sqrt());
                }
            }
        }
        Ok(Self { n, d, radii, r_x, r_v })
    }

    /// Number of snapshots times agents, the `NML` of the regularization.
    pub fn nml(&self) -> usize {
        self.radii.len() / self.n
    }

    /// `N²·K_ff = 𝐫_X K^E 𝐫_Xᵀ + 𝐫_V K^A 𝐫_Vᵀ`, evaluated from the pair design.
    pub fn scaled_kff(&self, te: &MaternParams, ta: &MaternParams) -> Result<DMatrix<f64>> {
        let rows = self.r_x.nrows();
        let mut out = DMatrix::zeros(rows, rows);
        if !te.is_off() {
            let ke = gram_sym(te, &self.radii)?;
            out += &self.r_x * ke * self.r_x.transpose();
        }
        if !ta.is_off() {
            let ka = gram_sym(ta, &self.radii)?;
            out += &self.r_v * ka * self.r_v.transpose();
        }
        Ok(out)
    }

    pub fn kff(&self, te: &MaternParams, ta: &MaternParams) -> Result<DMatrix<f64>> {
        let n2 = (self.n * self.n) as f64;
        Ok(self.scaled_kff(te, ta)? / n2)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepresenterCoefficients {
    /// Coefficients on the position radii for the energy kernel.
    pub c_rx: Vec<f64>,
    /// Coefficients for the alignment kernel, also sited at position radii.
    pub c_rv: Vec<f64>,
    pub radii: Vec<f64>,
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    a.cholesky().map(|c| c.solve(b)).ok_or(Error::IllConditioned { jitter: 0.0 }).and_then(|x| {
        if x.len() == n && x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::IllConditioned { jitter: 0.0 })
        }
    })
}

/// Representer coefficients of the regularized least-squares estimator with
/// a common penalty `λ` for both kernels:
/// `ĉ = (1/N)·𝐫ᵀ (K_ff + λ·NML·I)⁻¹ ℤ`.
pub fn representer_coefficients(
    design: &PairDesign,
    target: &DVector<f64>,
    te: &MaternParams,
    ta: &MaternParams,
    lambda: f64,
) -> Result<RepresenterCoefficients> {
    coupled_coefficients(design, target, te, ta, lambda, lambda)
}

/// Coefficients for separate penalties `λ_E`, `λ_A`. The stationarity
/// conditions of the regularized risk reduce to the dual system
/// `(K_E'/λ_E + K_A'/λ_A + NML·I) u = ℤ` with `K'= 𝐫K𝐫ᵀ/N²`, and then
/// `ĉ_E = 𝐫_Xᵀ u/(N λ_E)`, `ĉ_A = 𝐫_Vᵀ u/(N λ_A)`.
pub fn coupled_coefficients(
    design: &PairDesign,
    target: &DVector<f64>,
    te: &MaternParams,
    ta: &MaternParams,
    lambda_e: f64,
    lambda_a: f64,
) -> Result<RepresenterCoefficients> {
    if !(lambda_e > 0.0 && lambda_a > 0.0) {
        return Err(Error::InvalidArgument("regularization must be positive".into()));
    }
    let rows = design.r_x.nrows();
    if target.len() != rows {
        return Err(Error::Shape(format!("target of length {} for {rows} rows", target.len())));
    }
    let n = design.n as f64;
    let n2 = n * n;
    let nml = design.nml() as f64;
    let mut a = DMatrix::identity(rows, rows) * nml;
    if !te.is_off() {
        a += &design.r_x * gram_sym(te, &design.radii)? * design.r_x.transpose() / (n2 * lambda_e);
    }
    if !ta.is_off() {
        a += &design.r_v * gram_sym(ta, &design.radii)? * design.r_v.transpose() / (n2 * lambda_a);
    }
    let a = (&a + a.transpose()) * 0.5;
    let u = solve_spd(a, target)?;
    let zero = || vec![0.0; design.radii.len()];
    let c_rx = if te.is_off() { zero() } else { (design.r_x.tr_mul(&u) / (n * lambda_e)).as_slice().to_vec() };
    let c_rv = if ta.is_off() { zero() } else { (design.r_v.tr_mul(&u) / (n * lambda_a)).as_slice().to_vec() };
    Ok(RepresenterCoefficients { c_rx, c_rv, radii: design.radii.clone() })
}

/// `(φ̂^E(r*), φ̂^A(r*))` from the basis expansion.
pub fn krr_estimate(
    coeffs: &RepresenterCoefficients,
    te: &MaternParams,
    ta: &MaternParams,
    r_star: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let expand = |theta: &MaternParams, c: &[f64]| -> Result<Vec<f64>> {
        if theta.is_off() {
            return Ok(vec![0.0; r_star.len()]);
        }
        let k = gram(theta, r_star, &coeffs.radii)?;
        Ok((k * DVector::from_column_slice(c)).as_slice().to_vec())
    };
    Ok((expand(te, &coeffs.c_rx)?, expand(ta, &coeffs.c_rv)?))
}

/// Relative Frobenius residual of `𝐫_X K^E 𝐫_Xᵀ + 𝐫_V K^A 𝐫_Vᵀ = N² K_ff`,
/// with `K_ff` from the GP assembly.
pub fn covariance_identity_residual(ds: &TrajectoryDataset, te: &MaternParams, ta: &MaternParams) -> Result<f64> {
    let design = PairDesign::new(ds)?;
    let lhs = design.scaled_kff(te, ta)?;
    let model = ModelSpec { force: crate::systems::ForceFamily::None, velocity_damping: false, agents: None };
    let p = Problem::new(ds, &model)?;
    let rhs = assemble_kff(&p, te, ta)? * (ds.n * ds.n) as f64;
    let denom = rhs.norm();
    Ok(if denom == 0.0 { lhs.norm() } else { (lhs - &rhs).norm() / denom })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equivalence {
    pub max_dev_e: f64,
    pub max_dev_a: f64,
    pub lambda: f64,
}

impl Equivalence {
    pub fn max_dev(&self) -> f64 {
        self.max_dev_e.max(self.max_dev_a)
    }
}

/// Largest deviation on `grid` between the GP posterior mean and the kernel
/// ridge estimate at `λ = σ²/(MNL)`.
pub fn check_equivalence(
    ds: &TrajectoryDataset,
    model: &ModelSpec,
    h: &Hyperparameters,
    grid: &[f64],
) -> Result<Equivalence> {
    if !(h.sigma > 0.0) {
        return Err(Error::InvalidArgument("equivalence check needs sigma > 0".into()));
    }
    if model.agents.is_some() {
        return Err(Error::InvalidArgument("equivalence check uses every agent".into()));
    }
    let p = Problem::new(ds, model)?;
    let gp = posterior_kernel(&p, h, grid)?;
    let design = PairDesign::new(ds)?;
    let lambda = h.sigma * h.sigma / design.nml() as f64;
    let target = p.residual(h)?;
    let coeffs = representer_coefficients(&design, &target, &h.theta_e, &h.theta_a, lambda)?;
    let (ke, ka) = krr_estimate(&coeffs, &h.theta_e, &h.theta_a, grid)?;
    let dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(Equivalence { max_dev_e: dev(&gp.mean_e, &ke), max_dev_a: dev(&gp.mean_a, &ka), lambda })
}
