//! Matérn covariance functions on radii.
//!
//! Only the half-integer smoothness values ν = 1/2 and ν = 3/2 are supported,
//! which admit closed forms without Bessel functions:
//!
//! * ν = 1/2: `s² · exp(-u/ω)`
//! * ν = 3/2: `s² · (1 + √3 u/ω) · exp(-√3 u/ω)`
//!
//! where `u = |r - r'|`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Smoothness of the Matérn family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/2")]
    ThreeHalves,
}

impl Smoothness {
    /// Parses ν given as a float. Anything other than 0.5 or 1.5 is rejected.
    pub fn from_nu(nu: f64) -> Result<Self> {
        if (nu - 0.5).abs() < 1e-12 {
            Ok(Smoothness::Half)
        } else if (nu - 1.5).abs() < 1e-12 {
            Ok(Smoothness::ThreeHalves)
        } else {
            Err(Error::InvalidArgument(format!("unsupported Matérn smoothness nu = {nu} (supported: 0.5, 1.5)")))
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            Smoothness::Half => 0.5,
            Smoothness::ThreeHalves => 1.5,
        }
    }
}

/// Hyperparameters of one Matérn prior.
///
/// `s2 = 0` is allowed and denotes a switched-off prior (the corresponding
/// interaction type is excluded from the model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub s2: f64,
    pub omega: f64,
    pub nu: Smoothness,
}

impl MaternParams {
    pub fn new(s2: f64, omega: f64, nu: Smoothness) -> Result<Self> {
        if !(s2 >= 0.0 && s2.is_finite()) {
            return Err(Error::InvalidArgument(format!("amplitude s2 must be >= 0, got {s2}")));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::InvalidArgument(format!("length scale must be > 0, got {omega}")));
        }
        Ok(Self { s2, omega, nu })
    }

    /// Switched-off prior: zero amplitude, unit length scale.
    pub fn off(nu: Smoothness) -> Self {
        Self { s2: 0.0, omega: 1.0, nu }
    }

    pub fn is_off(&self) -> bool {
        self.s2 == 0.0
    }

    /// Correlation (unit-amplitude kernel) at lag `u >= 0`.
    #[inline]
    pub fn correlation(&self, u: f64) -> f64 {
        match self.nu {
            Smoothness::Half => (-u / self.omega).exp(),
            Smoothness::ThreeHalves => {
                let a = SQRT3 * u / self.omega;
                (1.0 + a) * (-a).exp()
            }
        }
    }

    /// Unit-amplitude correlation and its derivative with respect to ω.
    #[inline]
    pub fn correlation_and_domega(&self, u: f64) -> (f64, f64) {
        match self.nu {
            Smoothness::Half => {
                let e = (-u / self.omega).exp();
                (e, e * u / (self.omega * self.omega))
            }
            Smoothness::ThreeHalves => {
                let a = SQRT3 * u / self.omega;
                let e = (-a).exp();
                ((1.0 + a) * e, a * a * e / self.omega)
            }
        }
    }

    #[inline]
    pub fn eval(&self, r: f64, rp: f64) -> f64 {
        self.s2 * self.correlation((r - rp).abs())
    }
}

/// Matérn covariance between radii `r` and `rp`.
pub fn matern(params: &MaternParams, r: f64, rp: f64) -> Result<f64> {
    check_radius(r)?;
    check_radius(rp)?;
    Ok(params.eval(r, rp))
}

/// Partial derivatives `(∂K/∂s², ∂K/∂ω)` of the Matérn covariance.
pub fn matern_grad(params: &MaternParams, r: f64, rp: f64) -> Result<(f64, f64)> {
    check_radius(r)?;
    check_radius(rp)?;
    let (c, dc) = params.correlation_and_domega((r - rp).abs());
    Ok((c, params.s2 * dc))
}

/// Gram matrix with entries `K(a_i, b_j)`.
pub fn gram(params: &MaternParams, radii_a: &[f64], radii_b: &[f64]) -> Result<DMatrix<f64>> {
    for &r in radii_a.iter().chain(radii_b) {
        check_radius(r)?;
    }
    Ok(DMatrix::from_fn(radii_a.len(), radii_b.len(), |i, j| params.eval(radii_a[i], radii_b[j])))
}

/// Symmetric Gram matrix of a single radius set; each off-diagonal entry is
/// evaluated once and mirrored, so the result is bitwise symmetric.
pub fn gram_sym(params: &MaternParams, radii: &[f64]) -> Result<DMatrix<f64>> {
    for &r in radii {
        check_radius(r)?;
    }
    let n = radii.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = params.eval(radii[i], radii[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

fn check_radius(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("radius must be finite and >= 0, got {r}")))
    }
}
