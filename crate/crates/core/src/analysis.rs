//! Evaluation: empirical pairwise-distance measures, kernel and trajectory
//! errors, the coercivity check, polarisation statistics and posterior
//! trajectory ensembles.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{posterior_joint, Hyperparameters, KernelType, ModelSpec, Problem};
use crate::systems::{simulate, InteractionKernel, OdeOptions, SystemSpec, Trajectory};

/// Bin count of the empirical measures.
pub const DEFAULT_BINS: usize = 1000;

/// Histogram approximations of `ρ̃^E` and `ρ̃^A` on `[0, R]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub edges: Vec<f64>,
    pub weights_e: Vec<f64>,
    pub weights_a: Vec<f64>,
    /// Largest pairwise position distance observed.
    pub r_max: f64,
    /// Number of snapshots that contributed.
    pub samples: usize,
}

impl EmpiricalMeasure {
    /// Builds the measures from full states `[x | v]` (or `x` only, in which
    /// case velocity differences count as zero).
    pub fn from_states(d: usize, n: usize, states: &[Vec<f64>], n_bins: usize) -> Result<Self> {
        if n < 2 || states.is_empty() || n_bins == 0 {
            return Err(Error::InvalidArgument("need N >= 2, a snapshot and a bin".into()));
        }
        let dn = d * n;
        let mut pairs = Vec::with_capacity(states.len() * n * (n - 1));
        for s in states {
            if s.len() != dn && s.len() != 2 * dn {
                return Err(Error::Shape(format!("state of length {} for dN = {dn}", s.len())));
            }
            let v = (s.len() == 2 * dn).then(|| &s[dn..]);
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let (mut rx, mut rv) = (0.0, 0.0);
                    for a in 0..d {
                        rx += (s[j * d + a] - s[i * d + a]).powi(2);
                        if let Some(v) = v {
                            rv += (v[j * d + a] - v[i * d + a]).powi(2);
                        }
                    }
                    pairs.push((rx.sqrt(), rx, rv));
                }
            }
        }
        let r_max = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
        let width = if r_max > 0.0 { r_max / n_bins as f64 } else { 1.0 / n_bins as f64 };
        let edges: Vec<f64> = (0..=n_bins).map(|k| k as f64 * width).collect();
        let mut weights_e = vec![0.0; n_bins];
        let mut weights_a = vec![0.0; n_bins];
        let norm = 1.0 / ((n * (n - 1)) as f64 * states.len() as f64);
        for (r, rx2, rv2) in pairs {
            let k = ((r / width) as usize).min(n_bins - 1);
            weights_e[k] += rx2 * norm;
            weights_a[k] += rv2 * norm;
        }
        Ok(Self { edges, weights_e, weights_a, r_max, samples: states.len() })
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn weights(&self, ty: KernelType) -> &[f64] {
        match ty {
            KernelType::E => &self.weights_e,
            KernelType::A => &self.weights_a,
        }
    }

    pub fn mass(&self, ty: KernelType) -> f64 {
        self.weights(ty).iter().sum()
    }

    /// `‖φ‖²` in `L²(ρ̃)` by midpoint quadrature.
    pub fn norm_sq(&self, ty: KernelType, phi: impl Fn(f64) -> f64) -> f64 {
        self.midpoints().iter().zip(self.weights(ty)).map(|(r, w)| w * phi(*r).powi(2)).sum()
    }
}

/// Simulates `n_traj` trajectories of the true system, observed at `times`,
/// and bins all ordered pairs.
pub fn empirical_rho(
    spec: &SystemSpec,
    n_traj: usize,
    times: &[f64],
    n_bins: usize,
    seed: u64,
) -> Result<EmpiricalMeasure> {
    if n_traj == 0 {
        return Err(Error::InvalidArgument("n_traj must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = OdeOptions::default();
    let mut states = Vec::with_capacity(n_traj * times.len());
    for _ in 0..n_traj {
        let y0 = spec.sample_initial_state(&mut rng);
        let traj = simulate(spec, &spec.phi_e, &spec.phi_a, &y0, times, &opts)?;
        states.extend(traj.states);
    }
    EmpiricalMeasure::from_states(spec.d, spec.n, &states, n_bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelErrors {
    /// Sup-norm error on grid points inside `[0, R]`; relative unless the
    /// truth vanishes there.
    pub linf: f64,
    pub linf_relative: bool,
    /// `L²(ρ̃)` error, relative unless the truth has zero norm.
    pub l2rho: f64,
    pub l2rho_relative: bool,
}

/// Errors of a gridded estimate against the true kernel.
pub fn kernel_errors(
    grid: &[f64],
    estimate: &[f64],
    truth: &dyn Fn(f64) -> f64,
    measure: &EmpiricalMeasure,
    ty: KernelType,
) -> Result<KernelErrors> {
    if grid.len() != estimate.len() || grid.is_empty() {
        return Err(Error::Shape("grid and estimate lengths differ".into()));
    }
    let r_max = measure.r_max * (1.0 + 1e-12);
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for (r, e) in grid.iter().zip(estimate) {
        if *r > r_max {
            continue;
        }
        let t = truth(*r);
        err = err.max((e - t).abs());
        scale = scale.max(t.abs());
    }
    let interp = |r: f64| crate::systems::interpolate(grid, estimate, r);
    let diff = measure.norm_sq(ty, |r| interp(r) - truth(r)).sqrt();
    let tn = measure.norm_sq(ty, truth).sqrt();
    Ok(KernelErrors {
        linf: if scale > 0.0 { err / scale } else { err },
        linf_relative: scale > 0.0,
        l2rho: if tn > 0.0 { diff / tn } else { diff },
        l2rho_relative: tn > 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coercivity {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Delta-method standard error of `ratio`.
    pub ratio_se: f64,
    pub samples: usize,
}

/// Number of configurations giving about 10⁶ ordered pair samples.
pub fn default_coercivity_samples(n: usize) -> usize {
    let pairs = (n * n.saturating_sub(1)).max(1);
    1_000_000usize.div_ceil(pairs)
}

/// Monte-Carlo estimates of `‖f_φ‖²_{L²(ρ_Y)}` and
/// `(N−1)/N²·(‖φ^E‖²_{ρ̃^E} + ‖φ^A‖²_{ρ̃^A})` under the initial distribution
/// of `spec`, both from the same samples.
pub fn coercivity_check(
    phi_e: &dyn Fn(f64) -> f64,
    phi_a: &dyn Fn(f64) -> f64,
    spec: &SystemSpec,
    n_mc: usize,
    seed: u64,
) -> Result<Coercivity> {
    spec.validate()?;
    let (d, n) = (spec.d, spec.n);
    if n < 2 || n_mc < 2 {
        return Err(Error::InvalidArgument("need N >= 2 and at least two samples".into()));
    }
    let dn = d * n;
    let nf = n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sl, mut sr, mut sll, mut srr, mut slr) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut f = vec![0.0; dn];
    for _ in 0..n_mc {
        let y = spec.sample_initial_state(&mut rng);
        let (x, v) = y.split_at(dn);
        f.iter_mut().for_each(|z| *z = 0.0);
        let mut pair_sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut r2 = 0.0;
                let mut v2 = 0.0;
                for a in 0..d {
                    r2 += (x[j * d + a] - x[i * d + a]).powi(2);
                    if !v.is_empty() {
                        v2 += (v[j * d + a] - v[i * d + a]).powi(2);
                    }
                }
                let r = r2.sqrt();
                let (pe, pa) = (phi_e(r), phi_a(r));
                for a in 0..d {
                    let dv = if v.is_empty() { 0.0 } else { v[j * d + a] - v[i * d + a] };
                    f[i * d + a] += (pe * (x[j * d + a] - x[i * d + a]) + pa * dv) / nf;
                }
                pair_sum += pe * pe * r2 + pa * pa * v2;
            }
        }
        let l = f.iter().map(|z| z * z).sum::<f64>() / nf;
        let r = (nf - 1.0) / (nf * nf) * pair_sum / (nf * (nf - 1.0));
        sl += l;
        sr += r;
        sll += l * l;
        srr += r * r;
        slr += l * r;
    }
    let k = n_mc as f64;
    let (ml, mr) = (sl / k, sr / k);
    let vl = (sll / k - ml * ml) * k / (k - 1.0);
    let vr = (srr / k - mr * mr) * k / (k - 1.0);
    let c = (slr / k - ml * mr) * k / (k - 1.0);
    let (ratio, se) = if mr > 0.0 {
        let q = ml / mr;
        (q, ((vl - 2.0 * q * c + q * q * vr).max(0.0) / k).sqrt() / mr)
    } else {
        (if ml > 0.0 { f64::INFINITY } else { f64::NAN }, 0.0)
    };
    Ok(Coercivity { lhs: ml, rhs: mr, ratio, ratio_se: se, samples: n_mc })
}

/// Relative L² discrepancy `‖true − pred‖ / ‖true‖` over the snapshots whose
/// times lie in `[t0, t1]`.
pub fn trajectory_error(truth: &Trajectory, pred: &Trajectory, interval: (f64, f64)) -> Result<f64> {
    if truth.times.len() != pred.times.len()
        || truth.states.len() != pred.states.len()
        || truth.times.iter().zip(&pred.times).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs().max(1.0))
    {
        return Err(Error::Shape("trajectories have different time grids".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for ((t, a), b) in truth.times.iter().zip(&truth.states).zip(&pred.states) {
        if a.len() != b.len() {
            return Err(Error::Shape("trajectory states differ in length".into()));
        }
        if *t < interval.0 || *t > interval.1 {
            continue;
        }
        num += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        den += a.iter().map(|x| x * x).sum::<f64>();
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Polarisation {
    /// `M(t)` per time, `d` components each.
    pub m: Vec<Vec<f64>>,
    pub magnitude: Vec<f64>,
    /// Agents skipped per time for near-zero speed.
    pub skipped: Vec<usize>,
}

const SPEED_FLOOR: f64 = 1e-12;

/// Mean unit velocity `M(t) = (1/N) Σ v_i/|v_i|` of a second-order trajectory.
pub fn group_polarisation(traj: &Trajectory, d: usize, n: usize) -> Result<Polarisation> {
    let dn = d * n;
    let mut out = Polarisation { m: vec![], magnitude: vec![], skipped: vec![] };
    for s in &traj.states {
        if s.len() != 2 * dn {
            return Err(Error::Shape("polarisation needs velocities in the state".into()));
        }
        let v = &s[dn..];
        let mut m = vec![0.0; d];
        let mut used = 0;
        for i in 0..n {
            let vi = &v[i * d..(i + 1) * d];
            let speed = vi.iter().map(|x| x * x).sum::<f64>().sqrt();
            if speed < SPEED_FLOOR {
                continue;
            }
            used += 1;
            for a in 0..d {
                m[a] += vi[a] / speed;
            }
        }
        if used == 0 {
            return Err(Error::DegenerateVelocities(out.m.len()));
        }
        m.iter_mut().for_each(|x| *x /= used as f64);
        out.magnitude.push(m.iter().map(|x| x * x).sum::<f64>().sqrt());
        out.m.push(m);
        out.skipped.push(n - used);
    }
    Ok(out)
}

/// Order-1 Wasserstein distance between two empirical distributions on ℝ.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("wasserstein1 needs nonempty samples"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite sample".into()));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    // ∫ |F_a − F_b| over the merged breakpoints
    let (mut i, mut j) = (0, 0);
    let mut x = xa[0].min(xb[0]);
    let mut w = 0.0;
    while i < xa.len() || j < xb.len() {
        let next = match (xa.get(i), xb.get(j)) {
            (Some(p), Some(q)) => p.min(*q),
            (Some(p), None) => *p,
            (None, Some(q)) => *q,
            (None, None) => unreachable!(),
        };
        w += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
    }
    Ok(w)
}

/// Gaussian posterior of both kernels on a grid, used to draw kernel samples.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub grid: Vec<f64>,
    /// Energy values then alignment values.
    pub mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GridPosterior {
    pub fn new(p: &Problem, h: &Hyperparameters, grid: &[f64]) -> Result<Self> {
        let (mean, cov) = posterior_joint(p, h, grid)?;
        Ok(Self::from_moments(grid, mean, cov))
    }

    /// Square-root factor from the eigendecomposition with negative
    /// round-off eigenvalues clamped to zero.
    pub fn from_moments(grid: &[f64], mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let eig = cov.symmetric_eigen();
        let sqrt_l = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = eig.eigenvectors * DMatrix::from_diagonal(&sqrt_l);
        Self { grid: grid.to_vec(), mean, factor }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (InteractionKernel, InteractionKernel) {
        let xi = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
        let s = &self.mean + &self.factor * xi;
        self.split(&s)
    }

    pub fn mean_kernels(&self) -> (InteractionKernel, InteractionKernel) {
        self.split(&self.mean)
    }

    fn split(&self, v: &DVector<f64>) -> (InteractionKernel, InteractionKernel) {
        let g = self.grid.len();
        let tab = |off: usize| InteractionKernel::Tabulated {
            grid: self.grid.clone(),
            values: v.rows(off, g).iter().copied().collect(),
        };
        (tab(0), tab(g))
    }
}

/// System with learned force parameters and mass; first-order when the
/// regression model has velocity damping.
pub fn learned_system(spec: &SystemSpec, model: &ModelSpec, h: &Hyperparameters) -> Result<SystemSpec> {
    let mut s = spec.clone();
    s.force = model.force.with_params(&h.alpha)?;
    s.mass = if model.velocity_damping { 0.0 } else { h.mass.max(0.0) };
    if s.mass == 0.0 && !spec.is_first_order() {
        return Err(Error::InvalidArgument("learned mass vanished for a second-order model".into()));
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UqEnsemble {
    pub times: Vec<f64>,
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub n_samples: usize,
    pub failed: usize,
    pub seed: u64,
}

/// Simulates `n_samples` systems with kernels drawn from the grid posterior
/// and aggregates the per-coordinate mean and standard deviation.
pub fn uq_ensemble(
    system: &SystemSpec,
    posterior: &GridPosterior,
    ic: &[f64],
    times: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<UqEnsemble> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = OdeOptions::default();
    let mut runs = Vec::with_capacity(n_samples);
    let mut failed = 0;
    for _ in 0..n_samples {
        let (pe, pa) = posterior.sample(&mut rng);
        match simulate(system, &pe, &pa, ic, times, &opts) {
            Ok(t) => runs.push(t.states),
            Err(_) => failed += 1,
        }
    }
    if runs.is_empty() {
        return Err(Error::Empty("every ensemble member failed"));
    }
    let k = runs.len() as f64;
    let len = ic.len();
    let mut mean = vec![vec![0.0; len]; times.len()];
    let mut std = vec![vec![0.0; len]; times.len()];
    for r in &runs {
        for (t, s) in r.iter().enumerate() {
            for (m, x) in mean[t].iter_mut().zip(s) {
                *m += x / k;
            }
        }
    }
    for r in &runs {
        for (t, s) in r.iter().enumerate() {
            for ((sd, x), m) in std[t].iter_mut().zip(s).zip(&mean[t]) {
                *sd += (x - m).powi(2) / k;
            }
        }
    }
    std.iter_mut().flatten().for_each(|v| *v = v.sqrt());
    Ok(UqEnsemble { times: times.to_vec(), mean, std, n_samples: runs.len(), failed, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::builtin_system;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn two_stationary_agents() {
        let m = EmpiricalMeasure::from_states(1, 2, &[vec![0.0, 1.0, 0.0, 0.0]], 10).unwrap();
        assert_eq!(m.r_max, 1.0);
        assert!((m.mass(KernelType::E) - 1.0).abs() < 1e-15);
        assert_eq!(m.weights_e[9], m.mass(KernelType::E));
        assert_eq!(m.mass(KernelType::A), 0.0);
    }

    #[test]
    fn empirical_measure_of_a_real_system() {
        let spec = builtin_system("CS").unwrap();
        let times = spec.observation_times(5);
        let m = empirical_rho(&spec, 20, &times, DEFAULT_BINS, 3).unwrap();
        assert!(m.weights_e.iter().chain(&m.weights_a).all(|w| *w >= 0.0));
        assert!(m.mass(KernelType::E) > 0.0);
        assert_eq!(m.edges.len(), DEFAULT_BINS + 1);
        assert!((m.edges[DEFAULT_BINS] - m.r_max).abs() < 1e-12);
        let again = empirical_rho(&spec, 20, &times, DEFAULT_BINS, 3).unwrap();
        assert_eq!(m.weights_e, again.weights_e);
    }

    #[test]
    fn kernel_error_conventions() {
        let m = EmpiricalMeasure::from_states(1, 3, &[vec![0.0, 1.0, 3.0]], 50).unwrap();
        let grid: Vec<f64> = (0..31).map(|i| i as f64 * 0.1).collect();
        let truth = |r: f64| 2.0 * r;
        let exact: Vec<f64> = grid.iter().map(|r| truth(*r)).collect();
        let e = kernel_errors(&grid, &exact, &truth, &m, KernelType::E).unwrap();
        assert_eq!((e.linf, e.l2rho), (0.0, 0.0));
        let c = vec![0.25; grid.len()];
        let z = kernel_errors(&grid, &c, &|_| 0.0, &m, KernelType::E).unwrap();
        assert!(!z.linf_relative && (z.linf - 0.25).abs() < 1e-15);
    }

    #[test]
    fn kernel_errors_match_dense_grid_oracle() {
        let m = EmpiricalMeasure::from_states(1, 3, &[vec![0.0, 0.7, 2.0], vec![0.1, 0.5, 1.2]], 200).unwrap();
        let truth = |r: f64| if r < 1.0 { r } else { 2.0 - r };
        let shifted = |r: f64| truth(r) + 0.1;
        let grid: Vec<f64> = (0..=2000).map(|i| i as f64 * 1e-3).collect();
        let est: Vec<f64> = grid.iter().map(|r| shifted(*r)).collect();
        let e = kernel_errors(&grid, &est, &truth, &m, KernelType::E).unwrap();
        // oracle: the difference is the constant 0.1
        let sup = grid.iter().filter(|r| **r <= m.r_max).map(|r| truth(*r).abs()).fold(0.0, f64::max);
        assert!((e.linf - 0.1 / sup).abs() < 1e-10);
        let mass = m.mass(KernelType::E);
        let tn: f64 = m.midpoints().iter().zip(&m.weights_e).map(|(r, w)| w * truth(*r).powi(2)).sum();
        assert!((e.l2rho - (0.01 * mass / tn).sqrt()).abs() < 1e-10);
    }

    fn pair_spec(n: usize) -> SystemSpec {
        let mut s = builtin_system("CS").unwrap();
        s.d = 1;
        s.n = n;
        s
    }

    #[test]
    fn coercivity_zero_kernels() {
        let c = coercivity_check(&|_| 0.0, &|_| 0.0, &pair_spec(3), 100, 1).unwrap();
        assert_eq!((c.lhs, c.rhs), (0.0, 0.0));
    }

    #[test]
    fn coercivity_two_agents_constant_kernel() {
        let c = coercivity_check(&|_| 1.0, &|_| 0.0, &pair_spec(2), 20_000, 2).unwrap();
        // both sides equal E|x₂ − x₁|²/4 for two agents
        assert!(c.ratio >= 1.0 - 3.0 * c.ratio_se - 1e-12, "{c:?}");
        assert!((c.ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_error_values() {
        let t = Trajectory { times: vec![0.0, 1.0], states: vec![vec![1.0, 2.0], vec![3.0, -1.0]] };
        assert_eq!(trajectory_error(&t, &t, (0.0, 1.0)).unwrap(), 0.0);
        let double = Trajectory {
            times: t.times.clone(),
            states: t.states.iter().map(|s| s.iter().map(|x| 2.0 * x).collect()).collect(),
        };
        assert!((trajectory_error(&t, &double, (0.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<Vec<f64>> = (0..2).map(|_| (0..2).map(|_| rng.random_range(-0.1..0.1)).collect()).collect();
        let pert = Trajectory {
            times: t.times.clone(),
            states: t.states.iter().zip(&noise).map(|(s, e)| s.iter().zip(e).map(|(a, b)| a + b).collect()).collect(),
        };
        let num: f64 = noise.iter().flatten().map(|x| x * x).sum();
        let den: f64 = t.states.iter().flatten().map(|x| x * x).sum();
        assert!((trajectory_error(&t, &pert, (0.0, 1.0)).unwrap() - (num / den).sqrt()).abs() < 1e-12);
        let short = Trajectory { times: vec![0.0], states: vec![vec![1.0, 2.0]] };
        assert!(trajectory_error(&t, &short, (0.0, 1.0)).is_err());
    }

    #[test]
    fn polarisation_cases() {
        let aligned = Trajectory { times: vec![0.0], states: vec![vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]] };
        let p = group_polarisation(&aligned, 2, 2).unwrap();
        assert!((p.magnitude[0] - 1.0).abs() < 1e-15);
        let opposite = Trajectory { times: vec![0.0], states: vec![vec![0.0, 1.0, 1.0, -1.0]] };
        assert_eq!(group_polarisation(&opposite, 1, 2).unwrap().magnitude[0], 0.0);
        let still = Trajectory { times: vec![0.0], states: vec![vec![0.0, 1.0, 0.0, 0.0]] };
        assert!(group_polarisation(&still, 1, 2).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200;
        let mut s = vec![0.0; 4 * n];
        for i in 0..n {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            s[2 * n + 2 * i] = a.cos();
            s[2 * n + 2 * i + 1] = a.sin();
        }
        let random = Trajectory { times: vec![0.0], states: vec![s] };
        assert!(group_polarisation(&random, 2, n).unwrap().magnitude[0] < 0.2);
    }

    #[test]
    fn wasserstein_values() {
        assert_eq!(wasserstein1(&[0.3, 1.0], &[1.0, 0.3]).unwrap(), 0.0);
        assert_eq!(wasserstein1(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!((wasserstein1(&[0.0, 1.0], &[0.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(wasserstein1(&[], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn wasserstein_triangle(
            a in prop::collection::vec(-10.0f64..10.0, 1..20),
            b in prop::collection::vec(-10.0f64..10.0, 1..20),
            c in prop::collection::vec(-10.0f64..10.0, 1..20),
        ) {
            let ab = wasserstein1(&a, &b).unwrap();
            let bc = wasserstein1(&b, &c).unwrap();
            let ac = wasserstein1(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!((ab - wasserstein1(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn polarisation_bounded(v in prop::collection::vec(-5.0f64..5.0, 8)) {
            let mut s = vec![0.0; 8];
            s.extend(v);
            let t = Trajectory { times: vec![0.0], states: vec![s] };
            if let Ok(p) = group_polarisation(&t, 2, 4) {
                prop_assert!(p.magnitude[0] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn ensemble_without_variance_is_deterministic() {
        let spec = builtin_system("CS").unwrap();
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let truth: Vec<f64> = grid.iter().map(|r| spec.phi_a.eval(*r)).collect();
        let mut mean = DVector::zeros(100);
        mean.rows_mut(50, 50).copy_from_slice(&truth);
        let post = GridPosterior::from_moments(&grid, mean, DMatrix::zeros(100, 100));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ic = spec.sample_initial_state(&mut rng);
        let times = spec.observation_times(5);
        let ens = uq_ensemble(&spec, &post, &ic, &times, 3, 2).unwrap();
        assert!(ens.std.iter().flatten().all(|s| *s < 1e-12));
        let one = uq_ensemble(&spec, &post, &ic, &times, 1, 2).unwrap();
        let (pe, pa) = post.mean_kernels();
        let direct = simulate(&spec, &pe, &pa, &ic, &times, &OdeOptions::default()).unwrap();
        assert_eq!(one.mean, direct.states);
    }
}
