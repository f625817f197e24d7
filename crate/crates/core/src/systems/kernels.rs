//! Radial interaction kernels φ: ℝ⁺ → ℝ.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Truncation radius of the fish-milling Morse kernel.
pub const MORSE_R0: f64 = 0.05;

/// A scalar interaction kernel of the pairwise distance.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionKernel {
    Zero,
    Constant {
        value: f64,
    },
    /// `1 / (1 + r²)^{1/4}`
    CuckerSmale,
    /// `(e^{-r/4} - e^{-2r}) / r` for `r >= r0`, `a·e^{-b r}` below.
    MorseTruncated {
        r0: f64,
        a: f64,
        b: f64,
    },
    /// `0.1 / (1 + r)^{2.5} + 1 / (1 + r)^{0.5}`
    AnticipationEnergy,
    /// `0.1 / (1 + r²)^{0.5}`
    AnticipationAlignment,
    /// Piecewise-linear opinion kernel: `25r`, `10`, `25 - 25r`, `0` on
    /// `[0,0.4)`, `[0.4,0.6)`, `[0.6,1)`, `[1,∞)`.
    OpinionPiecewise,
    /// Linear interpolation of tabulated values on an increasing grid,
    /// constant beyond either end.
    Tabulated {
        grid: Vec<f64>,
        values: Vec<f64>,
    },
    #[serde(skip)]
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for InteractionKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InteractionKernel::Zero => write!(f, "Zero"),
            InteractionKernel::Constant { value } => write!(f, "Constant({value})"),
            InteractionKernel::CuckerSmale => write!(f, "CuckerSmale"),
            InteractionKernel::MorseTruncated { r0, a, b } => {
                write!(f, "MorseTruncated {{ r0: {r0}, a: {a}, b: {b} }}")
            }
            InteractionKernel::AnticipationEnergy => write!(f, "AnticipationEnergy"),
            InteractionKernel::AnticipationAlignment => write!(f, "AnticipationAlignment"),
            InteractionKernel::OpinionPiecewise => write!(f, "OpinionPiecewise"),
            InteractionKernel::Tabulated { grid, .. } => write!(f, "Tabulated({} pts)", grid.len()),
            InteractionKernel::Custom(_) => write!(f, "Custom"),
        }
    }
}

fn morse(r: f64) -> f64 {
    ((-r / 4.0).exp() - (-2.0 * r).exp()) / r
}

fn morse_derivative(r: f64) -> f64 {
    let num = (-r / 4.0).exp() - (-2.0 * r).exp();
    let dnum = -0.25 * (-r / 4.0).exp() + 2.0 * (-2.0 * r).exp();
    (dnum * r - num) / (r * r)
}

impl InteractionKernel {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        InteractionKernel::Custom(Arc::new(f))
    }

    /// Morse kernel with the exponential cap on `[0, r0)` chosen so that
    /// value and first derivative are continuous at `r0`.
    pub fn morse_truncated(r0: f64) -> Self {
        let f0 = morse(r0);
        let df0 = morse_derivative(r0);
        let b = -df0 / f0;
        let a = f0 * (b * r0).exp();
        InteractionKernel::MorseTruncated { r0, a, b }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            InteractionKernel::Zero => true,
            InteractionKernel::Constant { value } => *value == 0.0,
            InteractionKernel::Tabulated { values, .. } => values.iter().all(|&v| v == 0.0),
            _ => false,
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        match self {
            InteractionKernel::Zero => 0.0,
            InteractionKernel::Constant { value } => *value,
            InteractionKernel::CuckerSmale => (1.0 + r * r).powf(-0.25),
            InteractionKernel::MorseTruncated { r0, a, b } => {
                if r < *r0 {
                    a * (-b * r).exp()
                } else {
                    morse(r)
                }
            }
            InteractionKernel::AnticipationEnergy => 0.1 * (1.0 + r).powf(-2.5) + (1.0 + r).powf(-0.5),
            InteractionKernel::AnticipationAlignment => 0.1 / (1.0 + r * r).sqrt(),
            InteractionKernel::OpinionPiecewise => {
                if r < 0.4 {
                    25.0 * r
                } else if r < 0.6 {
                    10.0
                } else if r < 1.0 {
                    25.0 - 25.0 * r
                } else {
                    0.0
                }
            }
            InteractionKernel::Tabulated { grid, values } => interpolate(grid, values, r),
            InteractionKernel::Custom(f) => f(r),
        }
    }

    /// First derivative; analytic where the closed form is simple, central
    /// differences otherwise.
    pub fn derivative(&self, r: f64) -> f64 {
        match self {
            InteractionKernel::Zero | InteractionKernel::Constant { .. } => 0.0,
            InteractionKernel::CuckerSmale => -0.5 * r * (1.0 + r * r).powf(-1.25),
            InteractionKernel::MorseTruncated { r0, a, b } => {
                if r < *r0 {
                    -b * a * (-b * r).exp()
                } else {
                    morse_derivative(r)
                }
            }
            InteractionKernel::OpinionPiecewise => {
                if r < 0.4 {
                    25.0
                } else if r < 0.6 {
                    0.0
                } else if r < 1.0 {
                    -25.0
                } else {
                    0.0
                }
            }
            _ => {
                let h = 1e-6 * (1.0 + r.abs());
                let lo = (r - h).max(0.0);
                (self.eval(r + h) - self.eval(lo)) / (r + h - lo)
            }
        }
    }

    /// Sup of |φ| sampled on a grid (used for relative error normalization).
    pub fn sup_on(&self, grid: &[f64]) -> f64 {
        grid.iter().map(|&r| self.eval(r).abs()).fold(0.0, f64::max)
    }
}

/// Piecewise-linear interpolation, clamped at the ends.
pub fn interpolate(grid: &[f64], values: &[f64], r: f64) -> f64 {
    let n = grid.len();
    if n == 0 {
        return 0.0;
    }
    if r <= grid[0] {
        return values[0];
    }
    if r >= grid[n - 1] {
        return values[n - 1];
    }
    // first index with grid[idx] > r
    let idx = grid.partition_point(|&g| g <= r);
    let (g0, g1) = (grid[idx - 1], grid[idx]);
    let w = (r - g0) / (g1 - g0);
    values[idx - 1] * (1.0 - w) + values[idx] * w
}
