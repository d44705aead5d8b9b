//! Matrix-free linear operators and conjugate gradient.

/// A symmetric positive-definite linear map applied matrix-free.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
}

/// The identity map; stands in for the Euclidean projection metric.
pub struct IdentityOp(pub usize);

impl LinearOperator for IdentityOp {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.to_vec()
    }
}

/// An explicit dense symmetric matrix, mainly for tests and tiny problems.
pub struct DenseOp {
    pub mat: Vec<Vec<f64>>,
}

impl LinearOperator for DenseOp {
    fn dim(&self) -> usize {
        self.mat.len()
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.mat
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Solves `A x = b` by conjugate gradient starting from zero. Stops after
/// `max_iters` iterations or once the squared residual norm drops below
/// `tol`. For a positive-definite `A` of dimension `d`, `max_iters >= d`
/// yields the exact solution up to round-off. A non-finite iterate (overflow
/// or NaN from a degenerate operator) is reported as an error.
pub fn conjugate_gradient(
    op: &dyn LinearOperator,
    b: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<Vec<f64>, super::OptimError> {
    let d = b.len();
    debug_assert_eq!(op.dim(), d);
    let mut x = vec![0.0; d];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    if !rs.is_finite() {
        return Err(super::OptimError::NonFiniteIterate);
    }
    if rs < tol {
        return Ok(x);
    }
    for _ in 0..max_iters {
        let ap = op.apply(&p);
        let denom: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !denom.is_finite() {
            return Err(super::OptimError::NonFiniteIterate);
        }
        if denom <= 0.0 {
            break;
        }
        let alpha = rs / denom;
        for i in 0..d {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        if !rs_new.is_finite() {
            return Err(super::OptimError::NonFiniteIterate);
        }
        if rs_new < tol {
            break;
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..d {
            p[i] = r[i] + beta * p[i];
        }
    }
    Ok(x)
}
