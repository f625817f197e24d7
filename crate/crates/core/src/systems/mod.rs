//! Interacting-particle systems: specification, right-hand side, simulation
//! and data generation.
//!
//! State vectors are laid out as `[x_1 .. x_N | v_1 .. v_N]`, agent-major with
//! the spatial dimension innermost. Acceleration vectors use the same agent
//! ordering without the velocity half.

mod data;
mod kernels;
pub mod ode;

pub use data::{generate_dataset, preprocess_frames, read_frames_csv, TrajectoryDataset};
pub use kernels::{interpolate, InteractionKernel, MORSE_R0};
pub use ode::OdeOptions;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-collective force `F_i(x_i, v_i; α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceFamily {
    None,
    /// `κ v (1 - |v|^p)`
    Rayleigh {
        kappa: f64,
        p: f64,
    },
    /// `(γ - β|v|²) v`
    Drag {
        gamma: f64,
        beta: f64,
    },
    /// `-κ (x_i - P_i)` for the listed (0-based) agents, zero otherwise.
    Stubborn {
        agents: Vec<usize>,
        bias: Vec<f64>,
        kappa: f64,
    },
}

impl ForceFamily {
    /// Parameter vector α.
    pub fn params(&self) -> Vec<f64> {
        match self {
            ForceFamily::None => vec![],
            ForceFamily::Rayleigh { kappa, p } => vec![*kappa, *p],
            ForceFamily::Drag { gamma, beta } => vec![*gamma, *beta],
            ForceFamily::Stubborn { bias, kappa, .. } => {
                let mut a = bias.clone();
                a.push(*kappa);
                a
            }
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            ForceFamily::None => 0,
            ForceFamily::Rayleigh { .. } | ForceFamily::Drag { .. } => 2,
            ForceFamily::Stubborn { bias, .. } => bias.len() + 1,
        }
    }

    /// Same family with a new parameter vector.
    pub fn with_params(&self, alpha: &[f64]) -> Result<Self> {
        if alpha.len() != self.n_params() {
            return Err(Error::Shape(format!("force expects {} parameters, got {}", self.n_params(), alpha.len())));
        }
        Ok(match self {
            ForceFamily::None => ForceFamily::None,
            ForceFamily::Rayleigh { .. } => ForceFamily::Rayleigh { kappa: alpha[0], p: alpha[1] },
            ForceFamily::Drag { .. } => ForceFamily::Drag { gamma: alpha[0], beta: alpha[1] },
            ForceFamily::Stubborn { agents, .. } => ForceFamily::Stubborn {
                agents: agents.clone(),
                bias: alpha[..agents.len()].to_vec(),
                kappa: alpha[agents.len()],
            },
        })
    }

    fn depends_on_velocity(&self) -> bool {
        matches!(self, ForceFamily::Rayleigh { .. } | ForceFamily::Drag { .. })
    }

    /// Adds `F(x, v)` into `out` (length dN).
    pub fn add_force(&self, d: usize, x: &[f64], v: &[f64], out: &mut [f64]) {
        match self {
            ForceFamily::None => {}
            ForceFamily::Rayleigh { kappa, p } => {
                for (vi, oi) in v.chunks(d).zip(out.chunks_mut(d)) {
                    let s = norm(vi);
                    let g = kappa * (1.0 - s.powf(*p));
                    for (o, w) in oi.iter_mut().zip(vi) {
                        *o += g * w;
                    }
                }
            }
            ForceFamily::Drag { gamma, beta } => {
                for (vi, oi) in v.chunks(d).zip(out.chunks_mut(d)) {
                    let s2: f64 = vi.iter().map(|w| w * w).sum();
                    let g = gamma - beta * s2;
                    for (o, w) in oi.iter_mut().zip(vi) {
                        *o += g * w;
                    }
                }
            }
            ForceFamily::Stubborn { agents, bias, kappa } => {
                for (&a, &p) in agents.iter().zip(bias) {
                    for k in 0..d {
                        out[a * d + k] -= kappa * (x[a * d + k] - p);
                    }
                }
            }
        }
    }

    /// `∂F/∂α_j` for each parameter, each a length-dN vector.
    pub fn param_jacobian(&self, d: usize, x: &[f64], v: &[f64]) -> Vec<Vec<f64>> {
        let dn = x.len();
        match self {
            ForceFamily::None => vec![],
            ForceFamily::Rayleigh { kappa, p } => {
                let mut dk = vec![0.0; dn];
                let mut dp = vec![0.0; dn];
                for (i, vi) in v.chunks(d).enumerate() {
                    let s = norm(vi);
                    let sp = s.powf(*p);
                    let ln = if s > 0.0 { s.ln() } else { 0.0 };
                    for k in 0..d {
                        dk[i * d + k] = vi[k] * (1.0 - sp);
                        dp[i * d + k] = -kappa * vi[k] * sp * ln;
                    }
                }
                vec![dk, dp]
            }
            ForceFamily::Drag { .. } => {
                let mut dg = vec![0.0; dn];
                let mut db = vec![0.0; dn];
                for (i, vi) in v.chunks(d).enumerate() {
                    let s2: f64 = vi.iter().map(|w| w * w).sum();
                    for k in 0..d {
                        dg[i * d + k] = vi[k];
                        db[i * d + k] = -s2 * vi[k];
                    }
                }
                vec![dg, db]
            }
            ForceFamily::Stubborn { agents, bias, kappa } => {
                let mut jac = Vec::with_capacity(agents.len() + 1);
                for &a in agents {
                    let mut col = vec![0.0; dn];
                    for k in 0..d {
                        col[a * d + k] = *kappa;
                    }
                    jac.push(col);
                }
                let mut dk = vec![0.0; dn];
                for (&a, &p) in agents.iter().zip(bias) {
                    for k in 0..d {
                        dk[a * d + k] = -(x[a * d + k] - p);
                    }
                }
                jac.push(dk);
                jac
            }
        }
    }

    /// Time derivative of a position-only force along velocity `v`.
    fn add_force_rate(&self, d: usize, v: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ForceFamily::None => Ok(()),
            ForceFamily::Stubborn { agents, kappa, .. } => {
                for &a in agents {
                    for k in 0..d {
                        out[a * d + k] -= kappa * v[a * d + k];
                    }
                }
                Ok(())
            }
            _ => Err(Error::InvalidArgument("velocity-dependent force in a first-order system".into())),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|w| w * w).sum::<f64>().sqrt()
}

/// Product of per-coordinate uniform intervals, applied i.i.d. per agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformBox {
    pub low: f64,
    pub high: f64,
}

impl UniformBox {
    pub fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.high > self.low {
            rng.random_range(self.low..self.high)
        } else {
            self.low
        }
    }
}

/// `[0, T, T_f]`: training horizon `T` and prediction horizon `T_f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub t0: f64,
    pub t: f64,
    pub tf: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    pub d: usize,
    pub n: usize,
    pub mass: f64,
    pub force: ForceFamily,
    pub phi_e: InteractionKernel,
    pub phi_a: InteractionKernel,
    pub ic_position: UniformBox,
    /// `None` for first-order systems.
    pub ic_velocity: Option<UniformBox>,
    pub horizon: Horizon,
}

/// Names accepted by [`builtin_system`].
pub const BUILTIN_SYSTEMS: [&str; 5] = ["CS", "FM", "AD", "OD", "ODS"];

pub fn builtin_system(name: &str) -> Result<SystemSpec> {
    let spec = match name.to_ascii_uppercase().as_str() {
        "CS" => SystemSpec {
            name: "CS".into(),
            d: 2,
            n: 10,
            mass: 1.0,
            force: ForceFamily::Rayleigh { kappa: 1.0, p: 2.0 },
            phi_e: InteractionKernel::Zero,
            phi_a: InteractionKernel::CuckerSmale,
            ic_position: UniformBox::new(-2.0, 2.0),
            ic_velocity: Some(UniformBox::new(-1.0, 1.0)),
            horizon: Horizon { t0: 0.0, t: 10.0, tf: 20.0 },
        },
        "FM" => SystemSpec {
            name: "FM".into(),
            d: 2,
            n: 10,
            mass: 1.0,
            force: ForceFamily::Drag { gamma: 1.5, beta: 0.5 },
            phi_e: InteractionKernel::morse_truncated(MORSE_R0),
            phi_a: InteractionKernel::Zero,
            ic_position: UniformBox::new(-0.5, 0.5),
            ic_velocity: Some(UniformBox::new(0.0, 0.0)),
            horizon: Horizon { t0: 0.0, t: 5.0, tf: 10.0 },
        },
        "AD" => SystemSpec {
            name: "AD".into(),
            d: 2,
            n: 10,
            mass: 1.0,
            force: ForceFamily::None,
            phi_e: InteractionKernel::AnticipationEnergy,
            phi_a: InteractionKernel::AnticipationAlignment,
            ic_position: UniformBox::new(0.0, 5.0),
            ic_velocity: Some(UniformBox::new(0.0, 5.0)),
            horizon: Horizon { t0: 0.0, t: 10.0, tf: 20.0 },
        },
        "OD" => SystemSpec {
            name: "OD".into(),
            d: 1,
            n: 5,
            mass: 0.0,
            force: ForceFamily::None,
            phi_e: InteractionKernel::OpinionPiecewise,
            phi_a: InteractionKernel::Zero,
            ic_position: UniformBox::new(-1.0, 1.0),
            ic_velocity: None,
            horizon: Horizon { t0: 0.0, t: 2.0, tf: 20.0 },
        },
        "ODS" => SystemSpec {
            name: "ODS".into(),
            d: 1,
            n: 10,
            mass: 0.0,
            force: ForceFamily::Stubborn { agents: vec![0], bias: vec![1.0], kappa: 10.0 },
            phi_e: InteractionKernel::OpinionPiecewise,
            phi_a: InteractionKernel::Zero,
            ic_position: UniformBox::new(-1.0, 1.0),
            ic_velocity: None,
            horizon: Horizon { t0: 0.0, t: 2.0, tf: 20.0 },
        },
        _ => return Err(Error::UnknownSystem(name.to_string())),
    };
    Ok(spec)
}

impl SystemSpec {
    pub fn is_first_order(&self) -> bool {
        self.mass == 0.0
    }

    /// Length of the integrated state (`dN` for first order, `2dN` otherwise).
    pub fn state_len(&self) -> usize {
        if self.is_first_order() {
            self.d * self.n
        } else {
            2 * self.d * self.n
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(Error::InvalidArgument("d and N must be positive".into()));
        }
        if !(self.mass >= 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidArgument(format!("mass must be >= 0, got {}", self.mass)));
        }
        if self.is_first_order() && self.force.depends_on_velocity() {
            return Err(Error::InvalidArgument("first-order system with velocity force".into()));
        }
        if let ForceFamily::Stubborn { agents, bias, .. } = &self.force {
            if agents.len() != bias.len() || agents.iter().any(|&a| a >= self.n) {
                return Err(Error::InvalidArgument("bad stubborn agent list".into()));
            }
        }
        Ok(())
    }

    /// Draws an initial state from the i.i.d. per-agent box distributions.
    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let dn = self.d * self.n;
        let mut s = Vec::with_capacity(self.state_len());
        for _ in 0..dn {
            s.push(self.ic_position.sample(rng));
        }
        if !self.is_first_order() {
            let b = self.ic_velocity.unwrap_or(UniformBox::new(0.0, 0.0));
            for _ in 0..dn {
                s.push(b.sample(rng));
            }
        }
        s
    }

    /// Equidistant observation times on `[t0, T]`.
    pub fn observation_times(&self, l: usize) -> Vec<f64> {
        equidistant(self.horizon.t0, self.horizon.t, l)
    }
}

pub fn equidistant(a: f64, b: f64, l: usize) -> Vec<f64> {
    match l {
        0 => vec![],
        1 => vec![a],
        _ => (0..l).map(|k| a + (b - a) * k as f64 / (l - 1) as f64).collect(),
    }
}

/// Adds the collective term `(1/N) Σ_j [φE(r_ij)(x_j - x_i) + φA(r_ij)(v_j - v_i)]`
/// into `out`. `v` may be empty when `phi_a` is not needed.
pub fn add_collective(
    d: usize,
    phi_e: &InteractionKernel,
    phi_a: &InteractionKernel,
    x: &[f64],
    v: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = x.len() / d;
    let inv_n = 1.0 / n as f64;
    let use_e = !phi_e.is_zero();
    let use_a = !phi_a.is_zero() && !v.is_empty();
    if !use_e && !use_a {
        return Ok(());
    }
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = &x[j * d..(j + 1) * d];
            let r = xi.iter().zip(xj).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
            if use_e {
                let w = phi_e.eval(r);
                if !w.is_finite() {
                    return Err(Error::NonFiniteKernel { i, j, r });
                }
                for k in 0..d {
                    out[i * d + k] += inv_n * w * (xj[k] - xi[k]);
                }
            }
            if use_a {
                let w = phi_a.eval(r);
                if !w.is_finite() {
                    return Err(Error::NonFiniteKernel { i, j, r });
                }
                for k in 0..d {
                    out[i * d + k] += inv_n * w * (v[j * d + k] - v[i * d + k]);
                }
            }
        }
    }
    Ok(())
}

/// Right-hand side: the acceleration for `m > 0`, or `ẋ` for `m = 0`.
///
/// For first-order systems `state` may hold positions only (`dN`) or the full
/// `2dN` vector, in which case the velocity half is ignored.
pub fn rhs(spec: &SystemSpec, phi_e: &InteractionKernel, phi_a: &InteractionKernel, state: &[f64]) -> Result<Vec<f64>> {
    let dn = spec.d * spec.n;
    let mut out = vec![0.0; dn];
    rhs_into(spec, phi_e, phi_a, state, &mut out)?;
    Ok(out)
}

fn rhs_into(
    spec: &SystemSpec,
    phi_e: &InteractionKernel,
    phi_a: &InteractionKernel,
    state: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let dn = spec.d * spec.n;
    if state.len() != dn && state.len() != 2 * dn {
        return Err(Error::Shape(format!("state length {} (expected {} or {})", state.len(), dn, 2 * dn)));
    }
    if spec.is_first_order() && !phi_a.is_zero() {
        return Err(Error::InvalidArgument("first-order system requires phi_A = 0".into()));
    }
    let x = &state[..dn];
    let v: &[f64] = if spec.is_first_order() || state.len() == dn { &[] } else { &state[dn..] };
    out.iter_mut().for_each(|o| *o = 0.0);
    if v.is_empty() && spec.force.depends_on_velocity() {
        return Err(Error::Shape("velocity-dependent force needs a full state".into()));
    }
    spec.force.add_force(spec.d, x, v, out);
    add_collective(spec.d, phi_e, phi_a, x, v, out)?;
    if !spec.is_first_order() {
        for o in out.iter_mut() {
            *o /= spec.mass;
        }
    }
    Ok(())
}

/// Time derivative of `ẋ = F(x) + f_E(x)` along `v = ẋ` (first-order only).
pub fn first_order_acceleration(
    spec: &SystemSpec,
    phi_e: &InteractionKernel,
    x: &[f64],
    v: &[f64],
) -> Result<Vec<f64>> {
    let d = spec.d;
    let n = spec.n;
    let inv_n = 1.0 / n as f64;
    let mut out = vec![0.0; d * n];
    spec.force.add_force_rate(d, v, &mut out)?;
    if phi_e.is_zero() {
        return Ok(out);
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut r2 = 0.0;
            let mut dot = 0.0;
            for k in 0..d {
                let dx = x[j * d + k] - x[i * d + k];
                let dv = v[j * d + k] - v[i * d + k];
                r2 += dx * dx;
                dot += dx * dv;
            }
            let r = r2.sqrt();
            let w = phi_e.eval(r);
            let rdot = if r > 0.0 { dot / r } else { 0.0 };
            let dw = phi_e.derivative(r) * rdot;
            if !(w.is_finite() && dw.is_finite()) {
                return Err(Error::NonFiniteKernel { i, j, r });
            }
            for k in 0..d {
                let dx = x[j * d + k] - x[i * d + k];
                let dv = v[j * d + k] - v[i * d + k];
                out[i * d + k] += inv_n * (dw * dx + w * dv);
            }
        }
    }
    Ok(out)
}

/// States at the requested times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

pub fn simulate(
    spec: &SystemSpec,
    phi_e: &InteractionKernel,
    phi_a: &InteractionKernel,
    initial_state: &[f64],
    times: &[f64],
    opts: &OdeOptions,
) -> Result<Trajectory> {
    spec.validate()?;
    let dn = spec.d * spec.n;
    if initial_state.len() != spec.state_len() {
        return Err(Error::Shape(format!(
            "initial state length {} (expected {})",
            initial_state.len(),
            spec.state_len()
        )));
    }
    let t0 = times.first().copied().unwrap_or(spec.horizon.t0).min(spec.horizon.t0);
    let states = if spec.is_first_order() {
        ode::integrate(|_, y, dy| rhs_into(spec, phi_e, phi_a, y, dy), t0, initial_state, times, opts)?
    } else {
        ode::integrate(
            |_, y, dy| {
                dy[..dn].copy_from_slice(&y[dn..]);
                rhs_into(spec, phi_e, phi_a, y, &mut dy[dn..])
            },
            t0,
            initial_state,
            times,
            opts,
        )?
    };
    Ok(Trajectory { times: times.to_vec(), states })
}
