use nalgebra::{DMatrix, DVector};

/// Matrix-free view of a symmetric linear map.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    /// `y ← A x`
    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>);
}

/// `K + shift·I` for a dense symmetric `K`.
pub struct ShiftedDense<'a> {
    pub k: &'a DMatrix<f64>,
    pub shift: f64,
}

impl LinearOperator for ShiftedDense<'_> {
    fn dim(&self) -> usize {
        self.k.nrows()
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        y.gemv(1.0, self.k, x, 0.0);
        if self.shift != 0.0 {
            y.axpy(self.shift, x, 1.0);
        }
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        y.gemv(1.0, self, x, 0.0);
    }
}

/// Applies the inverse of a preconditioner `P`.
pub trait Preconditioner {
    fn apply_inverse(&self, x: &DVector<f64>, y: &mut DVector<f64>);
    /// `y ← P^{1/2} x`
    fn apply_sqrt(&self, x: &DVector<f64>, y: &mut DVector<f64>);
    fn log_det(&self) -> f64;
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply_inverse(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        y.copy_from(x);
    }

    fn apply_sqrt(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        y.copy_from(x);
    }

    fn log_det(&self) -> f64 {
        0.0
    }
}
