//! Projection of local estimators onto the shared kernel basis
//! `span{K(xi_k, .)}` and weighted synthesis of basis coefficients.
//!
//! For anchor points `x*_1..x*_s` with target values `f`, the local
//! approximation minimizes `(1/s) sum (g(x*_i) - f_i)^2 + mu |g|_K^2` over the
//! basis, with closed form
//!
//! ```text
//! a = (K_sn^T K_sn + mu s K_nn)^+ K_sn^T f
//! ```
//!
//! The pseudo-inverse is realized through an eigendecomposition of the
//! symmetric system matrix with a relative spectral cutoff.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::kernels::{gram, gram_symmetric, KernelSpec};
use crate::krr::{predict, DualEstimator};
use crate::qmc::CenterSet;
use crate::{Error, Points, Result};

/// Eigenvalues below `SPECTRAL_CUTOFF * lambda_max` are treated as zero.
pub const SPECTRAL_CUTOFF: f64 = 1e-12;

pub const DEFAULT_MU: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct BasisExpansion {
    centers: Arc<CenterSet>,
    kernel: KernelSpec,
    coeffs: DVector<f64>,
}

impl BasisExpansion {
    pub fn new(centers: Arc<CenterSet>, kernel: KernelSpec, coeffs: DVector<f64>) -> Result<Self> {
        if centers.len() != coeffs.len() {
            return Err(Error::Shape(format!(
                "{} centers but {} coefficients",
                centers.len(),
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical("non-finite basis coefficients".into()));
        }
        Ok(Self {
            centers,
            kernel,
            coeffs,
        })
    }

    pub fn centers(&self) -> &Arc<CenterSet> {
        &self.centers
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }
}

pub fn eval_expansion(exp: &BasisExpansion, queries: &Points) -> Result<DVector<f64>> {
    let k = gram(&exp.kernel, queries, exp.centers.points())?;
    Ok(k * &exp.coeffs)
}

/// Precomputed pseudo-inverse of the local-approximation system for one
/// `(anchors, centers, kernel, mu)` combination.
///
/// The system matrix does not depend on the target values, so one
/// factorization serves every regularization candidate of a grid.
pub struct LocalApproximator {
    k_sn: DMatrix<f64>,
    eigenvectors: DMatrix<f64>,
    inv_eigenvalues: DVector<f64>,
}

impl LocalApproximator {
    pub fn new(anchors: &Points, centers: &Points, kernel: &KernelSpec, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
        }
        if anchors.nrows() == 0 || centers.nrows() == 0 {
            return Err(Error::InvalidParameter(
                "local approximation needs anchors and centers".into(),
            ));
        }
        kernel.validate()?;
        let s = anchors.nrows() as f64;
        let k_sn = gram(kernel, anchors, centers)?;
        let mut system = k_sn.tr_mul(&k_sn);
        let k_nn = gram_symmetric(kernel, centers);
        system += k_nn * (mu * s);
        // the product above is symmetric up to rounding; make it exact
        let system = (&system + system.transpose()) * 0.5;
        let eig = SymmetricEigen::new(system);
        let top = eig.eigenvalues.amax();
        let floor = SPECTRAL_CUTOFF * top;
        let inv_eigenvalues = eig
            .eigenvalues
            .map(|ev| if ev > floor && ev > 0.0 { 1.0 / ev } else { 0.0 });
        Ok(Self {
            k_sn,
            eigenvectors: eig.eigenvectors,
            inv_eigenvalues,
        })
    }

    pub fn anchors(&self) -> usize {
        self.k_sn.nrows()
    }

    pub fn centers(&self) -> usize {
        self.k_sn.ncols()
    }

    /// Anchor-by-center Gram matrix `K_sn`.
    pub fn anchor_gram(&self) -> &DMatrix<f64> {
        &self.k_sn
    }

    /// Coefficients for every column of `targets` (`s x L` in, `n x L` out).
    pub fn coefficients(&self, targets: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if targets.nrows() != self.anchors() {
            return Err(Error::Shape(format!(
                "{} anchor targets for {} anchors",
                targets.nrows(),
                self.anchors()
            )));
        }
        let rhs = self.k_sn.tr_mul(targets);
        let mut proj = self.eigenvectors.tr_mul(&rhs);
        for (mut row, &inv) in proj.row_iter_mut().zip(self.inv_eigenvalues.iter()) {
            row *= inv;
        }
        Ok(&self.eigenvectors * proj)
    }
}

/// Approximates a fitted local estimator by an expansion over `centers`,
/// matching it in the least-squares sense at `anchor_points`.
pub fn fit_local_approx(
    est: &DualEstimator,
    anchor_points: &Points,
    centers: Arc<CenterSet>,
    mu: f64,
) -> Result<BasisExpansion> {
    let targets = predict(est, anchor_points)?;
    let approximator = LocalApproximator::new(anchor_points, centers.points(), est.kernel(), mu)?;
    let coeffs = approximator.coefficients(&DMatrix::from_column_slice(
        targets.len(),
        1,
        targets.as_slice(),
    ))?;
    BasisExpansion::new(centers, *est.kernel(), coeffs.column(0).into_owned())
}

/// Where a local approximation is anchored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorChoice {
    /// The machine's own training inputs.
    #[default]
    TrainingInputs,
    /// The shared centers.
    Centers,
}

/// The machine-to-global payload: an `n x L` coefficient matrix (column `l`
/// belongs to grid candidate `l`) and the machine's weight as a fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffMatrix {
    coeffs: DMatrix<f64>,
    weight_numerator: u64,
    weight_denominator: u64,
}

const HEADER_WORDS: usize = 4;

impl CoeffMatrix {
    pub fn new(coeffs: DMatrix<f64>, weight_numerator: u64, weight_denominator: u64) -> Result<Self> {
        if weight_denominator == 0 || weight_numerator > weight_denominator {
            return Err(Error::InvalidParameter(format!(
                "machine weight {weight_numerator}/{weight_denominator} is not in [0, 1]"
            )));
        }
        Ok(Self {
            coeffs,
            weight_numerator,
            weight_denominator,
        })
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn weight(&self) -> f64 {
        self.weight_numerator as f64 / self.weight_denominator as f64
    }

    pub fn weight_fraction(&self) -> (u64, u64) {
        (self.weight_numerator, self.weight_denominator)
    }

    /// Number of scalars carried: the coefficients plus one weight.
    pub fn scalar_count(&self) -> usize {
        self.coeffs.len() + 1
    }

    /// Little-endian encoding: `n, L, numerator, denominator` as `u64`, then the
    /// coefficients as `f64` in column-major order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (HEADER_WORDS + self.coeffs.len()));
        for word in [
            self.coeffs.nrows() as u64,
            self.coeffs.ncols() as u64,
            self.weight_numerator,
            self.weight_denominator,
        ] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        for v in self.coeffs.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 * HEADER_WORDS || bytes.len() % 8 != 0 {
            return Err(Error::Payload(format!("{} bytes is not a coefficient payload", bytes.len())));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        let (n, l) = (word(0) as usize, word(1) as usize);
        let body = &bytes[8 * HEADER_WORDS..];
        if body.len() != 8 * n * l {
            return Err(Error::Payload(format!(
                "header announces {n}x{l} coefficients but {} bytes follow",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        Self::new(DMatrix::from_iterator(n, l, values), word(2), word(3))
    }
}

/// Weighted sum of local coefficient matrices, accumulated in list order.
pub fn synthesize(locals: &[CoeffMatrix]) -> Result<DMatrix<f64>> {
    let first = locals
        .first()
        .ok_or_else(|| Error::InvalidParameter("nothing to synthesize".into()))?;
    let shape = first.coeffs.shape();
    if let Some(bad) = locals.iter().find(|c| c.coeffs.shape() != shape) {
        return Err(Error::Shape(format!(
            "coefficient matrices disagree: {:?} vs {:?}",
            shape,
            bad.coeffs.shape()
        )));
    }
    let total: f64 = locals.iter().map(CoeffMatrix::weight).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("machine weights sum to {total}, not 1")));
    }
    let mut out = DMatrix::zeros(shape.0, shape.1);
    for local in locals {
        out += &local.coeffs * local.weight();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krr::{fit_krr, DataSet};
    use crate::qmc::{generate_centers, CenterKind};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_points(rows: usize, d: usize, rng: &mut impl Rng) -> Points {
        Points::from_fn(rows, d, |_, _| rng.random::<f64>())
    }

    fn objective(
        coeffs: &DVector<f64>,
        k_sn: &DMatrix<f64>,
        k_nn: &DMatrix<f64>,
        f: &DVector<f64>,
        mu: f64,
    ) -> f64 {
        let s = f.len() as f64;
        let r = k_sn * coeffs - f;
        r.norm_squared() / s + mu * coeffs.dot(&(k_nn * coeffs))
    }

    #[test]
    fn centers_equal_training_inputs_reproduce_estimator() {
        let mut rng = crate::seed::rng(4);
        let x = random_points(20, 3, &mut rng);
        let y = DVector::from_fn(20, |_, _| rng.random::<f64>());
        let data = DataSet::new(x.clone(), y).unwrap();
        let est = fit_krr(&data, KernelSpec::wendland(), 1e-3).unwrap();
        let centers = Arc::new(CenterSet::from_points(CenterKind::Random, x.clone()));
        let exp = fit_local_approx(&est, &x, centers, 1e-12).unwrap();
        let approx = eval_expansion(&exp, &x).unwrap();
        let target = predict(&est, &x).unwrap();
        assert!((approx - target).amax() < 1e-4);
    }

    #[test]
    fn zero_estimator_gives_zero_coefficients() {
        let mut rng = crate::seed::rng(5);
        let x = random_points(15, 3, &mut rng);
        let data = DataSet::new(x.clone(), DVector::zeros(15)).unwrap();
        let est = fit_krr(&data, KernelSpec::wendland(), 1e-2).unwrap();
        let centers = Arc::new(generate_centers(CenterKind::Sobol, 8, 3, None).unwrap());
        let exp = fit_local_approx(&est, &x, centers, 1e-4).unwrap();
        assert!(exp.coeffs().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn returned_coefficients_are_locally_minimal() {
        let mut rng = crate::seed::rng(6);
        let x = random_points(30, 3, &mut rng);
        let y = DVector::from_fn(30, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let data = DataSet::new(x.clone(), y).unwrap();
        let kernel = KernelSpec::wendland();
        let est = fit_krr(&data, kernel, 1e-3).unwrap();
        let centers = Arc::new(generate_centers(CenterKind::Sobol, 10, 3, None).unwrap());
        let mu = 1e-4;
        let exp = fit_local_approx(&est, &x, centers.clone(), mu).unwrap();

        let f = predict(&est, &x).unwrap();
        let k_sn = gram(&kernel, &x, centers.points()).unwrap();
        let k_nn = gram_symmetric(&kernel, centers.points());
        let best = objective(exp.coeffs(), &k_sn, &k_nn, &f, mu);
        for _ in 0..1000 {
            let delta = DVector::from_fn(10, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * 1e-3);
            let perturbed = exp.coeffs() + delta;
            assert!(objective(&perturbed, &k_sn, &k_nn, &f, mu) >= best);
        }
    }

    #[test]
    fn expansion_evaluation() {
        let centers = Arc::new(generate_centers(CenterKind::Halton, 6, 2, None).unwrap());
        let kernel = KernelSpec::gaussian(0.4).unwrap();
        let q = Points::from_row_slice(3, 2, &[0.1, 0.2, 0.9, 0.9, 0.5, 0.3]);

        let zero = BasisExpansion::new(centers.clone(), kernel, DVector::zeros(6)).unwrap();
        assert_eq!(eval_expansion(&zero, &q).unwrap(), DVector::zeros(3));

        let single = Arc::new(generate_centers(CenterKind::Halton, 1, 2, None).unwrap());
        let unit = BasisExpansion::new(single.clone(), kernel, DVector::from_element(1, 1.0)).unwrap();
        let v = eval_expansion(&unit, &q).unwrap();
        for i in 0..3 {
            let qi: Vec<f64> = q.row(i).iter().copied().collect();
            let ci: Vec<f64> = single.points().row(0).iter().copied().collect();
            assert_eq!(v[i], crate::kernels::eval_kernel(&kernel, &ci, &qi).unwrap());
        }

        assert!(BasisExpansion::new(centers, kernel, DVector::zeros(5)).is_err());
    }

    #[test]
    fn synthesize_examples() {
        let a = CoeffMatrix::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]), 1, 2).unwrap();
        let b = CoeffMatrix::new(DMatrix::from_column_slice(2, 1, &[3.0, 4.0]), 1, 2).unwrap();
        assert_eq!(synthesize(&[a.clone(), b]).unwrap().as_slice(), &[2.0, 3.0]);

        let solo = CoeffMatrix::new(DMatrix::from_column_slice(2, 1, &[1.0, 2.0]), 7, 7).unwrap();
        assert_eq!(synthesize(&[solo]).unwrap().as_slice(), &[1.0, 2.0]);

        let ones = |num| CoeffMatrix::new(DMatrix::from_element(3, 2, 1.0), num, 10).unwrap();
        let out = synthesize(&[ones(5), ones(3), ones(2)]).unwrap();
        assert!(out.iter().all(|&v| (v - 1.0).abs() < 1e-15));

        let wide = CoeffMatrix::new(DMatrix::zeros(2, 2), 1, 2).unwrap();
        assert!(matches!(synthesize(&[a.clone(), wide]), Err(Error::Shape(_))));
        assert!(synthesize(&[a]).is_err());
        assert!(synthesize(&[]).is_err());
    }

    #[test]
    fn payload_is_coefficients_plus_weight_only() {
        let m = CoeffMatrix::new(DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64), 3, 11).unwrap();
        assert_eq!(m.scalar_count(), 4 * 3 + 1);
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 8 * (4 + 12));
        assert!(CoeffMatrix::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(CoeffMatrix::from_bytes(&bytes[..12]).is_err());
    }

    proptest! {
        #[test]
        fn payload_round_trip(
            n in 1usize..6,
            l in 1usize..5,
            num in 0u64..50,
            extra in 1u64..50,
            seed in any::<u64>(),
        ) {
            let mut rng = crate::seed::rng(seed);
            let coeffs = DMatrix::from_fn(n, l, |_, _| rng.random::<f64>() * 1e3 - 5e2);
            let m = CoeffMatrix::new(coeffs, num, num + extra).unwrap();
            prop_assert_eq!(CoeffMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
        }

        #[test]
        fn expansion_is_linear(seed in any::<u64>()) {
            let mut rng = crate::seed::rng(seed);
            let centers = Arc::new(generate_centers(CenterKind::Sobol, 7, 3, None).unwrap());
            let kernel = KernelSpec::wendland();
            let a = DVector::from_fn(7, |_, _| rng.random::<f64>() - 0.5);
            let b = DVector::from_fn(7, |_, _| rng.random::<f64>() - 0.5);
            let q = random_points(20, 3, &mut rng);
            let ea = eval_expansion(&BasisExpansion::new(centers.clone(), kernel, a.clone()).unwrap(), &q).unwrap();
            let eb = eval_expansion(&BasisExpansion::new(centers.clone(), kernel, b.clone()).unwrap(), &q).unwrap();
            let eab = eval_expansion(&BasisExpansion::new(centers, kernel, a + b).unwrap(), &q).unwrap();
            prop_assert!((eab - ea - eb).amax() < 1e-12);
        }
    }
}
