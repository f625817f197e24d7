use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::{assemble_cross_cov, assemble_kff_parts, Hyperparameters, KernelType, Problem};
use crate::covfunc::MaternParams;
use crate::error::{Error, Result};

/// Initial jitter for noise-free data; escalated ×10 up to [`MAX_JITTER`].
pub const INITIAL_JITTER: f64 = 1e-6;
pub const MAX_JITTER: f64 = 1e-2;

pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    /// Diagonal jitter that was added on top of `σ²`.
    pub jitter: f64,
}

impl Factor {
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Cholesky of `K + (σ² + jitter)·I`. Jitter starts at zero when `σ² > 0`
/// and at [`INITIAL_JITTER`] otherwise.
pub fn factor_with_jitter(k: &DMatrix<f64>, sigma2: f64) -> Result<Factor> {
    let n = k.nrows();
    let mut jitter = if sigma2 > 0.0 { 0.0 } else { INITIAL_JITTER };
    loop {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += sigma2 + jitter;
        }
        if let Some(chol) = a.cholesky() {
            return Ok(Factor { chol, jitter });
        }
        jitter = if jitter == 0.0 { INITIAL_JITTER } else { jitter * 10.0 };
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::IllConditioned { jitter: MAX_JITTER });
        }
    }
}

/// Partial derivatives of the NLML with respect to the unmasked fields, on
/// the natural scale. Matérn entries are `(∂/∂s², ∂/∂ω)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Gradient {
    pub theta_e: Option<[f64; 2]>,
    pub theta_a: Option<[f64; 2]>,
    pub sigma: Option<f64>,
    pub alpha: Option<Vec<f64>>,
    pub mass: Option<f64>,
}

fn uses(theta: &MaternParams, trainable: bool) -> bool {
    !theta.is_off() || trainable
}

/// Negative log marginal likelihood of the observations.
pub fn nlml(p: &Problem, h: &Hyperparameters) -> Result<f64> {
    h.validate()?;
    let parts = assemble_kff_parts(p, &h.theta_e, &h.theta_a, !h.theta_e.is_off(), !h.theta_a.is_off(), false)?;
    let k = parts.kff(&h.theta_e, &h.theta_a, p.n_rows());
    let f = factor_with_jitter(&k, h.sigma * h.sigma)?;
    let r = p.residual(h)?;
    let gamma = f.chol.solve(&r);
    Ok(0.5 * r.dot(&gamma) + 0.5 * f.log_det() + 0.5 * r.len() as f64 * (2.0 * PI).ln())
}

/// NLML and its gradient, with every trace term evaluated exactly.
pub fn nlml_and_grad(p: &Problem, h: &Hyperparameters) -> Result<(f64, Gradient)> {
    h.validate()?;
    let mask = h.train_mask;
    let use_e = uses(&h.theta_e, mask.theta_e);
    let use_a = uses(&h.theta_a, mask.theta_a);
    let grad_theta = mask.theta_e || mask.theta_a;
    let parts = assemble_kff_parts(p, &h.theta_e, &h.theta_a, use_e, use_a, grad_theta)?;
    let n = p.n_rows();
    let k = parts.kff(&h.theta_e, &h.theta_a, n);
    let f = factor_with_jitter(&k, h.sigma * h.sigma)?;
    let r = p.residual(h)?;
    let gamma = f.chol.solve(&r);
    let value = 0.5 * r.dot(&gamma) + 0.5 * f.log_det() + 0.5 * n as f64 * (2.0 * PI).ln();

    let mut g = Gradient::default();
    let kinv = if grad_theta || mask.sigma { Some(f.chol.inverse()) } else { None };
    // ½(Tr(K̂⁻¹ ∂K) − γᵀ ∂K γ)
    let trace_term = |dk: &DMatrix<f64>| -> f64 {
        let kinv = kinv.as_ref().expect("inverse computed");
        0.5 * (kinv.dot(dk) - gamma.dot(&(dk * &gamma)))
    };
    if mask.theta_e {
        let ce = parts.ce.as_ref().expect("energy part");
        let de = parts.de.as_ref().expect("energy derivative");
        g.theta_e = Some([trace_term(ce), h.theta_e.s2 * trace_term(de)]);
    }
    if mask.theta_a {
        let ca = parts.ca.as_ref().expect("alignment part");
        let da = parts.da.as_ref().expect("alignment derivative");
        g.theta_a = Some([trace_term(ca), h.theta_a.s2 * trace_term(da)]);
    }
    if mask.sigma {
        let kinv = kinv.as_ref().expect("inverse computed");
        g.sigma = Some(h.sigma * (kinv.trace() - gamma.dot(&gamma)));
    }
    if mask.alpha {
        let jac = p.mean_jacobian(&h.alpha)?;
        g.alpha = Some(jac.iter().map(|j| -gamma.dot(j)).collect());
    }
    if mask.mass {
        g.mass = Some(if h.mass < 0.0 { 0.0 } else { gamma.dot(&p.z) });
    }
    Ok((value, g))
}

/// Posterior mean and pointwise variance of both kernels on a radius grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub grid: Vec<f64>,
    pub mean_e: Vec<f64>,
    pub var_e: Vec<f64>,
    pub mean_a: Vec<f64>,
    pub var_a: Vec<f64>,
    pub theta_e: MaternParams,
    pub theta_a: MaternParams,
    pub jitter: f64,
}

impl KernelEstimate {
    pub fn mean(&self, t: KernelType) -> &[f64] {
        match t {
            KernelType::E => &self.mean_e,
            KernelType::A => &self.mean_a,
        }
    }

    pub fn var(&self, t: KernelType) -> &[f64] {
        match t {
            KernelType::E => &self.var_e,
            KernelType::A => &self.var_a,
        }
    }
}

struct Posterior {
    factor: Factor,
    gamma: DVector<f64>,
}

fn fit(p: &Problem, h: &Hyperparameters) -> Result<Posterior> {
    h.validate()?;
    let parts = assemble_kff_parts(p, &h.theta_e, &h.theta_a, !h.theta_e.is_off(), !h.theta_a.is_off(), false)?;
    let k = parts.kff(&h.theta_e, &h.theta_a, p.n_rows());
    let factor = factor_with_jitter(&k, h.sigma * h.sigma)?;
    let gamma = factor.chol.solve(&p.residual(h)?);
    Ok(Posterior { factor, gamma })
}

fn cross_terms(
    p: &Problem,
    post: &Posterior,
    theta: &MaternParams,
    ty: KernelType,
    grid: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let c = assemble_cross_cov(p, grid, ty, theta)?;
    let mean = c.tr_mul(&post.gamma);
    let v = post.factor.chol.l_dirty().solve_lower_triangular(&c).expect("nonsingular factor");
    Ok((mean, v))
}

pub fn posterior_kernel(p: &Problem, h: &Hyperparameters, grid: &[f64]) -> Result<KernelEstimate> {
    let post = fit(p, h)?;
    let mut out = KernelEstimate {
        grid: grid.to_vec(),
        mean_e: vec![0.0; grid.len()],
        var_e: vec![0.0; grid.len()],
        mean_a: vec![0.0; grid.len()],
        var_a: vec![0.0; grid.len()],
        theta_e: h.theta_e,
        theta_a: h.theta_a,
        jitter: post.factor.jitter,
    };
    for ty in [KernelType::E, KernelType::A] {
        let theta = h.theta(ty);
        if theta.is_off() {
            continue;
        }
        let (mean, v) = cross_terms(p, &post, theta, ty, grid)?;
        let var: Vec<f64> = v.column_iter().map(|col| theta.s2 - col.norm_squared()).collect();
        match ty {
            KernelType::E => {
                out.mean_e = mean.as_slice().to_vec();
                out.var_e = var;
            }
            KernelType::A => {
                out.mean_a = mean.as_slice().to_vec();
                out.var_a = var;
            }
        }
    }
    Ok(out)
}

/// Posterior mean and full grid covariance of one kernel.
pub fn posterior_covariance(
    p: &Problem,
    h: &Hyperparameters,
    ty: KernelType,
    grid: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let theta = h.theta(ty);
    let g = grid.len();
    if theta.is_off() {
        return Ok((DVector::zeros(g), DMatrix::zeros(g, g)));
    }
    let post = fit(p, h)?;
    let (mean, v) = cross_terms(p, &post, theta, ty, grid)?;
    let prior = DMatrix::from_fn(g, g, |i, j| theta.eval(grid[i], grid[j]));
    let mut cov = prior - v.tr_mul(&v);
    cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

/// Joint posterior of `(φ^E, φ^A)` on a grid: mean of length `2G` (energy
/// first) and the `2G × 2G` covariance including the cross-kernel block.
pub fn posterior_joint(p: &Problem, h: &Hyperparameters, grid: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let g = grid.len();
    let mut mean = DVector::zeros(2 * g);
    let mut cov = DMatrix::zeros(2 * g, 2 * g);
    let post = fit(p, h)?;
    let mut vs: Vec<Option<DMatrix<f64>>> = Vec::with_capacity(2);
    for (k, ty) in [KernelType::E, KernelType::A].into_iter().enumerate() {
        let theta = h.theta(ty);
        if theta.is_off() {
            vs.push(None);
            continue;
        }
        let (m, v) = cross_terms(p, &post, theta, ty, grid)?;
        mean.rows_mut(k * g, g).copy_from(&m);
        let prior = DMatrix::from_fn(g, g, |i, j| theta.eval(grid[i], grid[j]));
        cov.view_mut((k * g, k * g), (g, g)).copy_from(&(prior - v.tr_mul(&v)));
        vs.push(Some(v));
    }
    if let (Some(ve), Some(va)) = (&vs[0], &vs[1]) {
        let cross = -ve.tr_mul(va);
        cov.view_mut((0, g), (g, g)).copy_from(&cross);
        cov.view_mut((g, 0), (g, g)).copy_from(&cross.transpose());
    }
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}
