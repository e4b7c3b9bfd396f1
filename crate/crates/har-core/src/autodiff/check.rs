//! Central finite-difference gradient checking.
//!
//! Shared by the unit tests and the acceptance suite: every layer and loss
//! in the crate is validated against these numerical gradients.

use ndarray::Array2;

/// Numerical gradient of `f` w.r.t. `inputs[which]` by central differences.
pub fn numerical_grad<F>(
    inputs: &[Array2<f64>],
    which: usize,
    eps: f64,
    f: F,
) -> Array2<f64>
where
    F: Fn(&[Array2<f64>]) -> f64,
{
    let mut grad = Array2::zeros(inputs[which].dim());
    let mut work: Vec<Array2<f64>> = inputs.to_vec();
    for r in 0..grad.nrows() {
        for c in 0..grad.ncols() {
            let orig = work[which][(r, c)];
            work[which][(r, c)] = orig + eps;
            let plus = f(&work);
            work[which][(r, c)] = orig - eps;
            let minus = f(&work);
            work[which][(r, c)] = orig;
            grad[(r, c)] = (plus - minus) / (2.0 * eps);
        }
    }
    grad
}

/// Scale-aware relative error between two gradients:
/// `||a - b|| / max(||a||, ||b||, 1e-8)`.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let na = a.mapv(|v| v * v).sum().sqrt();
    let nb = b.mapv(|v| v * v).sum().sqrt();
    diff / na.max(nb).max(1e-8)
}
