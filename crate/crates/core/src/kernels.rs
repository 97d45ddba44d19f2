//! Kernel evaluation and Gram-matrix assembly.
//!
//! Two families are supported: the compactly supported Wendland function
//! `h(r) = (1 - r)^4 (4r + 1)` on `[0, 1]` (zero beyond), and the Gaussian
//! `exp(-|x - y|^2 / (2 sigma^2))`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Points, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Wendland,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Gaussian width; ignored by the Wendland kernel.
    pub sigma: f64,
}

impl KernelSpec {
    pub fn wendland() -> Self {
        Self {
            family: KernelFamily::Wendland,
            sigma: 1.0,
        }
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        let spec = Self {
            family: KernelFamily::Gaussian,
            sigma,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == KernelFamily::Gaussian && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gaussian width must be positive and finite, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Kernel value as a function of the squared distance.
    #[inline]
    pub fn profile(&self, sq_dist: f64) -> f64 {
        match self.family {
            KernelFamily::Wendland => wendland(sq_dist.sqrt()),
            KernelFamily::Gaussian => (-sq_dist / (2.0 * self.sigma * self.sigma)).exp(),
        }
    }
}

/// `h(r)` of the Wendland kernel.
#[inline]
pub fn wendland(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        let t = 1.0 - r;
        let t2 = t * t;
        t2 * t2 * (4.0 * r + 1.0)
    }
}

#[inline]
fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum()
}

pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(spec.profile(sq_dist(x, y)))
}

/// Transposes a point matrix so that every point becomes a contiguous column.
pub(crate) fn contiguous(points: &Points) -> DMatrix<f64> {
    points.transpose()
}

/// Gram matrix with entry `(i, k) = K(a_i, b_k)`.
pub fn gram(spec: &KernelSpec, a: &Points, b: &Points) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.ncols(),
            found: b.ncols(),
        });
    }
    let at = contiguous(a);
    let bt = contiguous(b);
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    for k in 0..b.nrows() {
        let bk = bt.column(k);
        let bk = bk.as_slice();
        for i in 0..a.nrows() {
            out[(i, k)] = spec.profile(sq_dist(at.column(i).as_slice(), bk));
        }
    }
    Ok(out)
}

/// Gram matrix of a point set against itself; exactly symmetric.
pub fn gram_symmetric(spec: &KernelSpec, a: &Points) -> DMatrix<f64> {
    let at = contiguous(a);
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let ak = at.column(k);
        let ak = ak.as_slice();
        out[(k, k)] = spec.profile(0.0);
        for i in (k + 1)..n {
            let v = spec.profile(sq_dist(at.column(i).as_slice(), ak));
            out[(i, k)] = v;
            out[(k, i)] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_points(rows: usize, d: usize, seed: u64) -> Points {
        let mut rng = crate::seed::rng(seed);
        Points::from_fn(rows, d, |_, _| rng.random::<f64>())
    }

    #[test]
    fn wendland_values() {
        let w = KernelSpec::wendland();
        assert_eq!(eval_kernel(&w, &[0.3, 0.2], &[0.3, 0.2]).unwrap(), 1.0);
        assert_relative_eq!(eval_kernel(&w, &[0.0], &[0.5]).unwrap(), 0.1875, epsilon = 1e-15);
        assert_eq!(eval_kernel(&w, &[0.0, 0.0], &[2.0, 0.0]).unwrap(), 0.0);
        assert!(wendland(1.0 - 1e-6) < 1e-20);
        assert_eq!(wendland(1.0), 0.0);
    }

    #[test]
    fn gaussian_values() {
        let g = KernelSpec::gaussian(1.0).unwrap();
        assert_eq!(eval_kernel(&g, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        let a = Points::from_row_slice(1, 3, &[0.0, 0.0, 0.0]);
        let b = Points::from_row_slice(2, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let k = gram(&g, &a, &b).unwrap();
        assert_eq!(k.shape(), (1, 2));
        assert_eq!(k[(0, 0)], 1.0);
        assert_relative_eq!(k[(0, 1)], (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn invalid_width_and_dimension() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(f64::NAN).is_err());
        let w = KernelSpec::wendland();
        assert!(matches!(
            eval_kernel(&w, &[0.0, 1.0], &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let a = random_points(3, 2, 1);
        let b = random_points(3, 3, 2);
        assert!(gram(&w, &a, &b).is_err());
    }

    #[test]
    fn small_grams() {
        let w = KernelSpec::wendland();
        let one = random_points(1, 3, 3);
        assert_eq!(gram(&w, &one, &one).unwrap(), DMatrix::from_element(1, 1, 1.0));
        let two = random_points(2, 3, 4);
        let k = gram_symmetric(&w, &two);
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
        assert_eq!(k, gram(&w, &two, &two).unwrap());
    }

    #[test]
    fn gram_is_psd_for_both_families() {
        for (i, spec) in [KernelSpec::wendland(), KernelSpec::gaussian(0.3).unwrap()]
            .iter()
            .enumerate()
        {
            for &size in &[5usize, 50, 200] {
                let pts = random_points(size, 3, 100 + size as u64 + i as u64);
                let k = gram_symmetric(spec, &pts);
                assert_eq!(k, k.transpose());
                let norm = k.norm();
                let eig = SymmetricEigen::new(k);
                let min = eig.eigenvalues.min();
                assert!(min >= -1e-10 * norm, "min eigenvalue {min} for size {size}");
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_supported(
            x in proptest::collection::vec(-2.0f64..2.0, 3),
            y in proptest::collection::vec(-2.0f64..2.0, 3),
            sigma in 0.05f64..10.0,
        ) {
            for spec in [KernelSpec::wendland(), KernelSpec::gaussian(sigma).unwrap()] {
                let kxy = eval_kernel(&spec, &x, &y).unwrap();
                let kyx = eval_kernel(&spec, &y, &x).unwrap();
                prop_assert_eq!(kxy, kyx);
                prop_assert!((0.0..=1.0).contains(&kxy));
            }
            let dist = sq_dist(&x, &y).sqrt();
            if dist > 1.0 {
                prop_assert_eq!(eval_kernel(&KernelSpec::wendland(), &x, &y).unwrap(), 0.0);
            }
        }
    }
}
