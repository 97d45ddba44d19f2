//! Batch kernel ridge regression.
//!
//! The estimator minimizes `(1/N) sum (f(x_i) - y_i)^2 + lambda |f|_K^2`, whose
//! dual coefficients solve `(K + lambda N I) alpha = y`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::kernels::{gram, gram_symmetric, KernelSpec};
use crate::{Error, Points, Result};

/// Inputs (one point per row) paired with scalar outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSet {
    inputs: Points,
    outputs: DVector<f64>,
}

impl DataSet {
    pub fn new(inputs: Points, outputs: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(Error::Shape(format!(
                "data set needs at least one sample and one feature, got {}x{}",
                inputs.nrows(),
                inputs.ncols()
            )));
        }
        if inputs.nrows() != outputs.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} outputs",
                inputs.nrows(),
                outputs.len()
            )));
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("data set contains non-finite entries".into()));
        }
        Ok(Self { inputs, outputs })
    }

    pub fn inputs(&self) -> &Points {
        &self.inputs
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows selected by `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.inputs.select_rows(indices),
            self.outputs.select_rows(indices),
        )
    }

    pub fn into_parts(self) -> (Points, DVector<f64>) {
        (self.inputs, self.outputs)
    }
}

/// A fitted kernel ridge regression model in dual form.
#[derive(Clone, Debug)]
pub struct DualEstimator {
    train_inputs: Points,
    kernel: KernelSpec,
    lambda: f64,
    alpha: DVector<f64>,
}

impl DualEstimator {
    pub fn from_parts(
        train_inputs: Points,
        kernel: KernelSpec,
        lambda: f64,
        alpha: DVector<f64>,
    ) -> Result<Self> {
        if train_inputs.nrows() != alpha.len() {
            return Err(Error::Shape(format!(
                "{} training points but {} dual coefficients",
                train_inputs.nrows(),
                alpha.len()
            )));
        }
        Ok(Self {
            train_inputs,
            kernel,
            lambda,
            alpha,
        })
    }

    pub fn train_inputs(&self) -> &Points {
        &self.train_inputs
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "regularization parameter must be positive and finite, got {lambda}"
        )))
    }
}

/// Solves `(gram + lambda n I) alpha = y` for a precomputed symmetric Gram matrix.
///
/// A Cholesky factorization is used. If rounding makes the shifted matrix
/// numerically indefinite (only possible for extremely small `lambda`), the
/// solve falls back to an eigendecomposition with the spectrum clipped at zero.
pub fn solve_regularized(gram: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    let n = gram.nrows();
    if gram.ncols() != n || y.len() != n {
        return Err(Error::Shape(format!(
            "gram is {}x{} but target has length {}",
            gram.nrows(),
            gram.ncols(),
            y.len()
        )));
    }
    if gram.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entries in regularized system".into()));
    }
    let shift = lambda * n as f64;
    let mut system = gram.clone();
    for i in 0..n {
        system[(i, i)] += shift;
    }
    if let Some(chol) = Cholesky::new(system) {
        return Ok(chol.solve(y));
    }
    log::debug!("cholesky failed for lambda={lambda:e}, n={n}; using clipped eigensolve");
    let eig = SymmetricEigen::new(gram.clone());
    let proj = eig.eigenvectors.transpose() * y;
    let scaled = DVector::from_iterator(
        n,
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(p, &ev)| p / (ev.max(0.0) + shift)),
    );
    let alpha = &eig.eigenvectors * scaled;
    if alpha.iter().all(|v| v.is_finite()) {
        Ok(alpha)
    } else {
        Err(Error::Numerical(format!("regularized solve failed for lambda={lambda:e}")))
    }
}

pub fn fit_krr(data: &DataSet, kernel: KernelSpec, lambda: f64) -> Result<DualEstimator> {
    check_lambda(lambda)?;
    kernel.validate()?;
    let k = gram_symmetric(&kernel, data.inputs());
    let alpha = solve_regularized(&k, data.outputs(), lambda)?;
    DualEstimator::from_parts(data.inputs().clone(), kernel, lambda, alpha)
}

pub fn predict(est: &DualEstimator, queries: &Points) -> Result<DVector<f64>> {
    let k = gram(&est.kernel, queries, &est.train_inputs)?;
    Ok(k * &est.alpha)
}

/// Clamps every entry to `[-bound, bound]`, i.e. `sign(v) min(|v|, bound)`.
pub fn truncate(values: &DVector<f64>, bound: f64) -> DVector<f64> {
    debug_assert!(bound > 0.0);
    values.map(|v| v.clamp(-bound, bound))
}
