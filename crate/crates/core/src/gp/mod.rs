//! Gaussian-process model for the collective force: covariance assembly,
//! marginal likelihood and kernel posterior.
//!
//! Observation rows are ordered snapshot-major (trajectory outer, time inner),
//! then observed agent, then spatial dimension.

mod assemble;
mod exact;

pub use assemble::{assemble_cross_cov, assemble_kff, assemble_kff_parts, KffParts};
pub use exact::{
    factor_with_jitter, nlml, nlml_and_grad, posterior_covariance, posterior_joint, posterior_kernel, Factor, Gradient,
    KernelEstimate, INITIAL_JITTER, MAX_JITTER,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::covfunc::{MaternParams, Smoothness};
use crate::error::{Error, Result};
use crate::systems::{ForceFamily, SystemSpec, TrajectoryDataset};

/// Which interaction kernel a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelType {
    E,
    A,
}

/// Per-field training switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainMask {
    pub theta_e: bool,
    pub theta_a: bool,
    pub sigma: bool,
    pub alpha: bool,
    pub mass: bool,
}

impl Default for TrainMask {
    fn default() -> Self {
        Self { theta_e: true, theta_a: true, sigma: true, alpha: true, mass: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub theta_e: MaternParams,
    pub theta_a: MaternParams,
    pub sigma: f64,
    pub alpha: Vec<f64>,
    pub mass: f64,
    pub train_mask: TrainMask,
}

impl Hyperparameters {
    /// Unit Matérn priors for both kernels, zero noise.
    pub fn unit(nu: Smoothness, alpha: Vec<f64>, mass: f64) -> Self {
        let unit = MaternParams { s2: 1.0, omega: 1.0, nu };
        Self { theta_e: unit, theta_a: unit, sigma: 0.0, alpha, mass, train_mask: TrainMask::default() }
    }

    pub fn theta(&self, t: KernelType) -> &MaternParams {
        match t {
            KernelType::E => &self.theta_e,
            KernelType::A => &self.theta_a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        MaternParams::new(self.theta_e.s2, self.theta_e.omega, self.theta_e.nu)?;
        MaternParams::new(self.theta_a.s2, self.theta_a.omega, self.theta_a.nu)?;
        if !self.mass.is_finite() || self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("non-finite mass or force parameter".into()));
        }
        Ok(())
    }
}

/// Structural choices of the regression model that are not hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Parametric family of the non-collective force (its values are taken
    /// from `Hyperparameters::alpha`).
    pub force: ForceFamily,
    /// Regress `m·ẍ + ẋ = F + f` instead of `m·ẍ = F + f`, so that `m = 0`
    /// recovers first-order dynamics `ẋ = F + f`.
    pub velocity_damping: bool,
    /// Agents whose equations are observed; all agents when `None`. The
    /// interaction sums always run over every agent.
    pub agents: Option<Vec<usize>>,
}

impl ModelSpec {
    pub fn for_system(spec: &SystemSpec) -> Self {
        Self { force: spec.force.clone(), velocity_damping: spec.is_first_order(), agents: None }
    }
}

/// Pairwise geometry of one snapshot for the observed agents.
#[derive(Debug, Clone)]
pub(crate) struct SnapPairs {
    /// Local index (into the observed-agent list) of the row agent of each pair.
    pub row: Vec<usize>,
    pub rho: Vec<f64>,
    /// Position differences `x_k - x_i`, `d` per pair.
    pub rx: Vec<f64>,
    /// Velocity differences `v_k - v_i`, `d` per pair.
    pub rv: Vec<f64>,
}

/// Dataset and model preprocessed into regression form.
#[derive(Debug, Clone)]
pub struct Problem {
    pub d: usize,
    pub n: usize,
    pub agents: Vec<usize>,
    pub model: ModelSpec,
    pub(crate) snaps: Vec<SnapPairs>,
    /// Full states per snapshot (length `2dN`).
    pub(crate) states: Vec<Vec<f64>>,
    /// Observed accelerations on the regression rows.
    pub z: DVector<f64>,
    /// Observed velocities on the regression rows.
    pub v: DVector<f64>,
    /// Number of trajectories and snapshots per trajectory.
    pub m: usize,
    pub l: usize,
}

impl Problem {
    pub fn new(ds: &TrajectoryDataset, model: &ModelSpec) -> Result<Self> {
        ds.validate()?;
        if ds.is_empty() {
            return Err(Error::Empty("dataset has no observations"));
        }
        let (d, n) = (ds.d, ds.n);
        let dn = d * n;
        let agents: Vec<usize> = match &model.agents {
            Some(a) => {
                if a.is_empty() || a.iter().any(|&i| i >= n) {
                    return Err(Error::InvalidArgument(format!("agent subset {a:?} out of range")));
                }
                a.clone()
            }
            None => (0..n).collect(),
        };
        let mut snaps = Vec::with_capacity(ds.n_snapshots());
        let mut states = Vec::with_capacity(ds.n_snapshots());
        let mut z = Vec::with_capacity(ds.n_snapshots() * agents.len() * d);
        let mut v = Vec::with_capacity(z.capacity());
        for (y, zs) in ds.snapshots() {
            let (x, vel) = y.split_at(dn);
            let mut sp = SnapPairs { row: vec![], rho: vec![], rx: vec![], rv: vec![] };
            for (li, &i) in agents.iter().enumerate() {
                for k in 0..n {
                    if k == i {
                        continue;
                    }
                    let mut r2 = 0.0;
                    for a in 0..d {
                        let dx = x[k * d + a] - x[i * d + a];
                        r2 += dx * dx;
                        sp.rx.push(dx);
                        sp.rv.push(vel[k * d + a] - vel[i * d + a]);
                    }
                    sp.row.push(li);
                    sp.rho.push(r2.sqrt());
                }
                z.extend_from_slice(&zs[i * d..(i + 1) * d]);
                v.extend_from_slice(&vel[i * d..(i + 1) * d]);
            }
            snaps.push(sp);
            states.push(y.to_vec());
        }
        if model.force.n_params() > 0 && model.force.with_params(&model.force.params()).is_err() {
            return Err(Error::InvalidArgument("inconsistent force family".into()));
        }
        Ok(Self {
            d,
            n,
            agents,
            model: model.clone(),
            snaps,
            states,
            z: DVector::from_vec(z),
            v: DVector::from_vec(v),
            m: ds.m,
            l: ds.l,
        })
    }

    /// Number of regression rows `d·|agents|·ML`.
    pub fn n_rows(&self) -> usize {
        self.z.len()
    }

    pub(crate) fn rows_per_snap(&self) -> usize {
        self.agents.len() * self.d
    }

    fn restrict(&self, full: &[f64], out: &mut Vec<f64>) {
        for &i in &self.agents {
            out.extend_from_slice(&full[i * self.d..(i + 1) * self.d]);
        }
    }

    /// Non-collective force `F_α(Y)` on the regression rows.
    pub fn mean(&self, alpha: &[f64]) -> Result<DVector<f64>> {
        let force = self.model.force.with_params(alpha)?;
        let dn = self.d * self.n;
        let mut out = Vec::with_capacity(self.n_rows());
        let mut buf = vec![0.0; dn];
        for y in &self.states {
            buf.iter_mut().for_each(|b| *b = 0.0);
            force.add_force(self.d, &y[..dn], &y[dn..], &mut buf);
            self.restrict(&buf, &mut out);
        }
        Ok(DVector::from_vec(out))
    }

    /// `∂F_α(Y)/∂α_j` on the regression rows.
    pub fn mean_jacobian(&self, alpha: &[f64]) -> Result<Vec<DVector<f64>>> {
        let force = self.model.force.with_params(alpha)?;
        let dn = self.d * self.n;
        let mut cols = vec![Vec::with_capacity(self.n_rows()); alpha.len()];
        for y in &self.states {
            let jac = force.param_jacobian(self.d, &y[..dn], &y[dn..]);
            for (c, j) in cols.iter_mut().zip(&jac) {
                self.restrict(j, c);
            }
        }
        Ok(cols.into_iter().map(DVector::from_vec).collect())
    }

    /// Regression target `m·Z (+ V) − F_α(Y)`, which has covariance `K_ff + σ²I`.
    pub fn residual(&self, h: &Hyperparameters) -> Result<DVector<f64>> {
        let mut r = &self.z * h.mass.max(0.0) - self.mean(&h.alpha)?;
        if self.model.velocity_damping {
            r += &self.v;
        }
        Ok(r)
    }

    /// Largest pairwise distance in the data.
    pub fn max_radius(&self) -> f64 {
        self.snaps.iter().flat_map(|s| s.rho.iter().copied()).fold(0.0, f64::max)
    }
}
