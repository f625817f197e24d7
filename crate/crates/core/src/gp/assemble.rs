use nalgebra::DMatrix;

use super::{KernelType, Problem};
use crate::covfunc::MaternParams;
use crate::error::{Error, Result};

/// Unit-amplitude pieces of `K_ff`, so that
/// `K_ff = s²_E·ce + s²_A·ca`, `∂K_ff/∂ω_E = s²_E·de`, `∂K_ff/∂ω_A = s²_A·da`.
#[derive(Debug, Clone, Default)]
pub struct KffParts {
    pub ce: Option<DMatrix<f64>>,
    pub ca: Option<DMatrix<f64>>,
    pub de: Option<DMatrix<f64>>,
    pub da: Option<DMatrix<f64>>,
}

impl KffParts {
    pub fn kff(&self, te: &MaternParams, ta: &MaternParams, n: usize) -> DMatrix<f64> {
        let mut k = DMatrix::zeros(n, n);
        if let Some(ce) = &self.ce {
            k += ce * te.s2;
        }
        if let Some(ca) = &self.ca {
            k += ca * ta.s2;
        }
        k
    }
}

/// Prior covariance of the collective force on the regression rows.
pub fn assemble_kff(p: &Problem, te: &MaternParams, ta: &MaternParams) -> Result<DMatrix<f64>> {
    let parts = assemble_kff_parts(p, te, ta, !te.is_off(), !ta.is_off(), false)?;
    Ok(parts.kff(te, ta, p.n_rows()))
}

/// Assembles the requested unit-amplitude parts of `K_ff` (and their
/// ω-derivatives when `grad` is set) in one pass over pair–pair radii.
pub fn assemble_kff_parts(
    p: &Problem,
    te: &MaternParams,
    ta: &MaternParams,
    use_e: bool,
    use_a: bool,
    grad: bool,
) -> Result<KffParts> {
    let n_rows = p.n_rows();
    let rps = p.rows_per_snap();
    let d = p.d;
    let n_snaps = p.snaps.len();
    let scale = 1.0 / (p.n as f64 * p.n as f64);

    let zeros = || Some(DMatrix::<f64>::zeros(n_rows, n_rows));
    let mut parts = KffParts {
        ce: if use_e { zeros() } else { None },
        ca: if use_a { zeros() } else { None },
        de: if use_e && grad { zeros() } else { None },
        da: if use_a && grad { zeros() } else { None },
    };
    if !use_e && !use_a {
        return Ok(parts);
    }

    // w[t] accumulates Σ_{q'} k(ρ_q, ρ_q') diff_q' per column row of snapshot s2
    let mut w = vec![vec![0.0; rps]; 4];
    // local blocks, row-major rps × rps
    let mut blk = vec![vec![0.0; rps * rps]; 4];

    for s in 0..n_snaps {
        let sp = &p.snaps[s];
        for s2 in s..n_snaps {
            let sq = &p.snaps[s2];
            blk.iter_mut().for_each(|b| b.iter_mut().for_each(|x| *x = 0.0));
            for q in 0..sp.rho.len() {
                w.iter_mut().for_each(|b| b.iter_mut().for_each(|x| *x = 0.0));
                let rq = sp.rho[q];
                for q2 in 0..sq.rho.len() {
                    let u = (rq - sq.rho[q2]).abs();
                    let base = sq.row[q2] * d;
                    if use_e {
                        let rx = &sq.rx[q2 * d..(q2 + 1) * d];
                        if grad {
                            let (c, dc) = te.correlation_and_domega(u);
                            for b in 0..d {
                                w[0][base + b] += c * rx[b];
                                w[2][base + b] += dc * rx[b];
                            }
                        } else {
                            let c = te.correlation(u);
                            for b in 0..d {
                                w[0][base + b] += c * rx[b];
                            }
                        }
                    }
                    if use_a {
                        let rv = &sq.rv[q2 * d..(q2 + 1) * d];
                        if grad {
                            let (c, dc) = ta.correlation_and_domega(u);
                            for b in 0..d {
                                w[1][base + b] += c * rv[b];
                                w[3][base + b] += dc * rv[b];
                            }
                        } else {
                            let c = ta.correlation(u);
                            for b in 0..d {
                                w[1][base + b] += c * rv[b];
                            }
                        }
                    }
                }
                let li = sp.row[q];
                for a in 0..d {
                    let row = li * d + a;
                    let coef = [sp.rx[q * d + a] * scale, sp.rv[q * d + a] * scale];
                    for t in 0..4 {
                        let active = if t % 2 == 0 { use_e } else { use_a } && (t < 2 || grad);
                        if !active {
                            continue;
                        }
                        let c = coef[t % 2];
                        if c == 0.0 {
                            continue;
                        }
                        let dst = &mut blk[t][row * rps..(row + 1) * rps];
                        for (x, wv) in dst.iter_mut().zip(&w[t]) {
                            *x += c * wv;
                        }
                    }
                }
            }
            let targets = [&mut parts.ce, &mut parts.ca, &mut parts.de, &mut parts.da];
            for (t, target) in targets.into_iter().enumerate() {
                let Some(mat) = target.as_mut() else { continue };
                let b = &blk[t];
                let (r0, c0) = (s * rps, s2 * rps);
                for i in 0..rps {
                    for j in 0..rps {
                        let v = b[i * rps + j];
                        if s == s2 {
                            // symmetrize diagonal blocks
                            let vt = b[j * rps + i];
                            mat[(r0 + i, c0 + j)] = 0.5 * (v + vt);
                        } else {
                            mat[(r0 + i, c0 + j)] = v;
                            mat[(c0 + j, r0 + i)] = v;
                        }
                    }
                }
            }
        }
    }
    for mat in [&parts.ce, &parts.ca, &parts.de, &parts.da].into_iter().flatten() {
        check_finite(mat, rps)?;
    }
    Ok(parts)
}

fn check_finite(m: &DMatrix<f64>, rps: usize) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFiniteCovariance { row: i / rps.max(1), col: j / rps.max(1) });
            }
        }
    }
    Ok(())
}

/// Covariance between the collective force on the regression rows and the
/// kernel of type `ty` at radii `r_star`.
pub fn assemble_cross_cov(p: &Problem, r_star: &[f64], ty: KernelType, theta: &MaternParams) -> Result<DMatrix<f64>> {
    if r_star.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
        return Err(Error::InvalidArgument("grid radii must be finite and >= 0".into()));
    }
    let rps = p.rows_per_snap();
    let d = p.d;
    let inv_n = 1.0 / p.n as f64;
    let mut out = DMatrix::zeros(p.n_rows(), r_star.len());
    for (c, &rs) in r_star.iter().enumerate() {
        for (s, sp) in p.snaps.iter().enumerate() {
            let diffs = match ty {
                KernelType::E => &sp.rx,
                KernelType::A => &sp.rv,
            };
            for q in 0..sp.rho.len() {
                let k = theta.eval(sp.rho[q], rs) * inv_n;
                let row = s * rps + sp.row[q] * d;
                for a in 0..d {
                    out[(row + a, c)] += k * diffs[q * d + a];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::super::{ModelSpec, Problem};
    use super::*;
    use crate::covfunc::Smoothness;
    use crate::systems::{ForceFamily, TrajectoryDataset};

    fn unit() -> MaternParams {
        MaternParams::new(1.0, 1.0, Smoothness::Half).unwrap()
    }

    #[test]
    fn toy_kff() {
        let p = toy_problem([0.0, 0.0]);
        let k = assemble_kff(&p, &unit(), &unit()).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!((k - expect).amax() < 1e-15);
    }

    #[test]
    fn toy_cross_cov() {
        let p = toy_problem([0.0, 0.0]);
        let c = assemble_cross_cov(&p, &[1.0], KernelType::E, &unit()).unwrap();
        assert_eq!(c.as_slice(), &[0.5, -0.5]);
        let mut t2 = unit();
        t2.s2 = 2.0;
        let c2 = assemble_cross_cov(&p, &[1.0], KernelType::E, &t2).unwrap();
        assert_eq!(c2, c * 2.0);
    }

    #[test]
    fn single_agent_gives_zero() {
        let ds = TrajectoryDataset {
            d: 2,
            n: 1,
            m: 1,
            l: 2,
            times: vec![0.0, 1.0],
            noise_sigma: 0.0,
            y: vec![vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.5, 0.6, 0.7, 0.8]]],
            z: vec![vec![vec![0.0, 0.0], vec![0.0, 0.0]]],
        };
        let model = ModelSpec { force: ForceFamily::None, velocity_damping: false, agents: None };
        let p = Problem::new(&ds, &model).unwrap();
        let k = assemble_kff(&p, &unit(), &unit()).unwrap();
        assert_eq!(k, DMatrix::zeros(4, 4));
        let c = assemble_cross_cov(&p, &[0.5, 1.0], KernelType::A, &unit()).unwrap();
        assert_eq!(c, DMatrix::zeros(4, 2));
    }

    #[test]
    fn amplitude_off_gives_energy_only() {
        let (p, _) = small_problem("AD", 1, 2, 4);
        let te = MaternParams::new(1.3, 0.7, Smoothness::ThreeHalves).unwrap();
        let ta_off = MaternParams::off(Smoothness::ThreeHalves);
        let k = assemble_kff(&p, &te, &ta_off).unwrap();
        let parts = assemble_kff_parts(&p, &te, &ta_off, true, false, false).unwrap();
        assert!((k - parts.ce.unwrap() * 1.3).amax() < 1e-14);
    }

    #[test]
    fn kff_symmetric_and_psd() {
        let (p, _) = small_problem("CS", 2, 2, 8);
        let t = MaternParams::new(1.0, 0.5, Smoothness::ThreeHalves).unwrap();
        let k = assemble_kff(&p, &t, &t).unwrap();
        assert_eq!(k, k.transpose());
        let n = k.nrows();
        assert!((k + DMatrix::identity(n, n) * 1e-8).cholesky().is_some());
    }

    #[test]
    fn kff_matches_direct_sum() {
        // brute-force evaluation of the double pair sum, entry by entry
        let (p, _) = small_problem("AD", 1, 2, 2);
        let te = MaternParams::new(0.8, 0.6, Smoothness::Half).unwrap();
        let ta = MaternParams::new(1.7, 1.1, Smoothness::ThreeHalves).unwrap();
        let k = assemble_kff(&p, &te, &ta).unwrap();
        let (d, n) = (p.d, p.n);
        let dn = d * n;
        let nn = (n * n) as f64;
        let rows: Vec<(usize, usize, usize)> =
            (0..p.states.len()).flat_map(|s| (0..n).flat_map(move |i| (0..d).map(move |a| (s, i, a)))).collect();
        let diff = |y: &[f64], i: usize, k: usize, off: usize| -> Vec<f64> {
            (0..d).map(|a| y[off + k * d + a] - y[off + i * d + a]).collect()
        };
        let dist = |y: &[f64], i: usize, k: usize| diff(y, i, k, 0).iter().map(|v| v * v).sum::<f64>().sqrt();
        for (r, &(s, i, a)) in rows.iter().enumerate() {
            for (c, &(s2, j, b)) in rows.iter().enumerate() {
                let (y, y2) = (&p.states[s], &p.states[s2]);
                let mut acc = 0.0;
                for kk in (0..n).filter(|&kk| kk != i) {
                    for k2 in (0..n).filter(|&k2| k2 != j) {
                        let (r1, r2) = (dist(y, i, kk), dist(y2, j, k2));
                        acc += te.eval(r1, r2) * diff(y, i, kk, 0)[a] * diff(y2, j, k2, 0)[b];
                        acc += ta.eval(r1, r2) * diff(y, i, kk, dn)[a] * diff(y2, j, k2, dn)[b];
                    }
                }
                assert!((k[(r, c)] - acc / nn).abs() < 1e-12, "({r},{c})");
            }
        }
    }
}
