//! Adaptive Dormand–Prince 5(4) integrator with step landing on output times.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-5, atol: 1e-6, max_steps: 1_000_000 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// difference between 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn err_norm(y: &[f64], y_new: &[f64], err: &[f64], opts: &OdeOptions) -> f64 {
    let n = y.len().max(1) as f64;
    let s: f64 = y
        .iter()
        .zip(y_new)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Integrates `y' = f(t, y)` from `t0` and returns the state at every entry of
/// `times` (which must be nondecreasing and `>= t0`).
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], times: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidArgument("rtol and atol must be positive".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < t0) {
        return Err(Error::InvalidArgument("output times must be nondecreasing and >= t0".into()));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut out = Vec::with_capacity(times.len());

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];

    f(t, &y, &mut k1)?;
    let t_end = times.last().copied().unwrap_or(t0);
    let mut h = initial_step(&mut f, t, &y, &k1, opts, t_end - t0)?;
    let mut steps = 0usize;

    for &t_out in times {
        while t < t_out {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::StepSizeUnderflow { t });
            }
            let remaining = t_out - t;
            let landing = h >= remaining * (1.0 - 1e-12) || h * 1.01 >= remaining;
            let h_step = if landing { remaining } else { h };
            if h_step <= 16.0 * f64::EPSILON * t.abs().max(1.0) && !landing {
                return Err(Error::StepSizeUnderflow { t });
            }

            for i in 0..n {
                tmp[i] = y[i] + h_step * A21 * k1[i];
            }
            f(t + C2 * h_step, &tmp, &mut k2)?;
            for i in 0..n {
                tmp[i] = y[i] + h_step * (A31 * k1[i] + A32 * k2[i]);
            }
            f(t + C3 * h_step, &tmp, &mut k3)?;
            for i in 0..n {
                tmp[i] = y[i] + h_step * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            f(t + C4 * h_step, &tmp, &mut k4)?;
            for i in 0..n {
                tmp[i] = y[i] + h_step * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            f(t + C5 * h_step, &tmp, &mut k5)?;
            for i in 0..n {
                tmp[i] = y[i] + h_step * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            f(t + h_step, &tmp, &mut k6)?;
            for i in 0..n {
                y_new[i] = y[i] + h_step * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            f(t + h_step, &y_new, &mut k7)?;
            for i in 0..n {
                err[i] = h_step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            let e = err_norm(&y, &y_new, &err, opts);
            if !e.is_finite() {
                h = 0.1 * h_step;
                if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t });
                }
                continue;
            }
            let factor = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
            if e <= 1.0 {
                t = if landing { t_out } else { t + h_step };
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut k1, &mut k7);
                // a short landing step should not shrink the proposal
                h = if landing { h.max(h_step * factor) } else { h_step * factor };
            } else {
                h = h_step * factor.min(1.0);
                if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t });
                }
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn initial_step<F>(f: &mut F, t: f64, y: &[f64], f0: &[f64], opts: &OdeOptions, span: f64) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len().max(1) as f64;
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let d0 = (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(v, d)| v + h0 * d).collect();
    let mut f1 = vec![0.0; y.len()];
    f(t + h0, &y1, &mut f1)?;
    let d2 = (f1.iter().zip(f0).zip(&sc).map(|((a, b), s)| ((a - b) / s).powi(2)).sum::<f64>() / n).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
    let mut h = (100.0 * h0).min(h1);
    if span > 0.0 {
        h = h.min(span);
    }
    Ok(h.max(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.5).collect();
        let opts = OdeOptions { rtol: 1e-9, atol: 1e-12, ..Default::default() };
        let ys = integrate(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            &times,
            &opts,
        )
        .unwrap();
        for (t, y) in times.iter().zip(&ys) {
            assert!((y[0] - (-t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_motion_is_exact() {
        let ys = integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = 0.0;
                Ok(())
            },
            0.0,
            &[0.3, -1.5],
            &[0.0, 1.0, 7.25],
            &OdeOptions::default(),
        )
        .unwrap();
        assert_eq!(ys[0], vec![0.3, -1.5]);
        assert!((ys[2][0] - (0.3 - 1.5 * 7.25)).abs() < 1e-12);
    }

    #[test]
    fn blow_up_reports_time() {
        let r = integrate(
            |_, y, dy| {
                dy[0] = y[0] * y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            &[2.0],
            &OdeOptions::default(),
        );
        match r {
            Err(Error::StepSizeUnderflow { t }) => assert!(t > 0.9 && t < 1.01, "{t}"),
            other => panic!("expected underflow, got {other:?}"),
        }
    }
}
