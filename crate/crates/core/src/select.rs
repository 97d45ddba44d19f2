//! Parameter grids, data splitting, and the parameter-selection rules:
//! validation of a synthesized global approximation (the adaptive scheme),
//! plain per-machine cross-validation, and the logarithmic transform used by
//! the DKRRLog baseline.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::kernels::{gram, gram_symmetric, KernelSpec};
use crate::krr::{solve_regularized, truncate, DataSet};
use crate::qmc::CenterSet;
use crate::{seed, Error, Result};

/// Smallest regularization parameter admitted by the preset grids.
pub const LAMBDA_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lambda: f64,
    pub kernel: KernelSpec,
}

/// Ordered candidate list; candidate `l` is column `l` of every coefficient matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrid {
    candidates: Vec<Candidate>,
}

impl ParamGrid {
    pub fn new(candidates: Vec<Candidate>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::InvalidParameter("parameter grid is empty".into()));
        }
        for (i, c) in candidates.iter().enumerate() {
            if !(c.lambda > 0.0 && c.lambda.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "candidate {i} has non-positive lambda {}",
                    c.lambda
                )));
            }
            c.kernel.validate()?;
            if candidates[..i]
                .iter()
                .any(|p| p.kernel == c.kernel && p.lambda == c.lambda)
            {
                return Err(Error::InvalidParameter(format!(
                    "candidate {i} repeats lambda {} for the same kernel",
                    c.lambda
                )));
            }
        }
        Ok(Self { candidates })
    }

    /// `{base^-q : base^-q >= 1e-10}` with one fixed kernel, descending in lambda.
    pub fn powers(base: f64, kernel: KernelSpec) -> Result<Self> {
        Self::new(
            lambda_powers(base)?
                .into_iter()
                .map(|lambda| Candidate { lambda, kernel })
                .collect(),
        )
    }

    /// Cartesian product of Gaussian widths (outer, ascending) with the lambda
    /// powers of `base` (inner, descending).
    pub fn gaussian_product(base: f64, sigmas: &[f64]) -> Result<Self> {
        let lambdas = lambda_powers(base)?;
        let mut candidates = Vec::with_capacity(sigmas.len() * lambdas.len());
        for &sigma in sigmas {
            let kernel = KernelSpec::gaussian(sigma)?;
            candidates.extend(lambdas.iter().map(|&lambda| Candidate { lambda, kernel }));
        }
        Self::new(candidates)
    }

    pub fn preset(preset: GridPreset) -> Self {
        let built = match preset {
            GridPreset::WendlandBase2 => Self::powers(2.0, KernelSpec::wendland()),
            GridPreset::GaussianBase3Narrow => Self::gaussian_product(3.0, &log_spaced(0.1, 10.0, 10)),
            GridPreset::GaussianBase3Wide => Self::gaussian_product(3.0, &log_spaced(1.0, 10.0, 10)),
            GridPreset::GaussianBase5 => Self::gaussian_product(5.0, &log_spaced(1.0, 100.0, 10)),
        };
        built.expect("preset grids are valid")
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Distinct kernels in first-appearance order, each with its candidate indices.
    pub fn kernel_groups(&self) -> Vec<(KernelSpec, Vec<usize>)> {
        let mut groups: Vec<(KernelSpec, Vec<usize>)> = Vec::new();
        for (i, c) in self.candidates.iter().enumerate() {
            match groups.iter_mut().find(|(k, _)| *k == c.kernel) {
                Some((_, idx)) => idx.push(i),
                None => groups.push((c.kernel, vec![i])),
            }
        }
        groups
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridPreset {
    /// Wendland kernel, lambda in powers of 1/2 (3-dimensional simulations).
    #[serde(rename = "wendland-base2")]
    WendlandBase2,
    /// Gaussian, lambda in powers of 1/3, sigma over [0.1, 10] (10-dimensional simulations).
    #[serde(rename = "gaussian-base3-sigma-0.1-10")]
    GaussianBase3Narrow,
    /// Gaussian, lambda in powers of 1/3, sigma over [1, 10] (used-car data).
    #[serde(rename = "gaussian-base3-sigma-1-10")]
    GaussianBase3Wide,
    /// Gaussian, lambda in powers of 1/5, sigma over [1, 100] (SGEMM data).
    #[serde(rename = "gaussian-base5-sigma-1-100")]
    GaussianBase5,
}

pub fn lambda_powers(base: f64) -> Result<Vec<f64>> {
    if !(base > 1.0 && base.is_finite()) {
        return Err(Error::InvalidParameter(format!("grid base must exceed 1, got {base}")));
    }
    let mut out = Vec::new();
    let mut q = 0;
    loop {
        let lambda = 1.0 / base.powi(q);
        if lambda < LAMBDA_FLOOR {
            return Ok(out);
        }
        out.push(lambda);
        q += 1;
    }
}

/// `count` values equally spaced in log scale over `[low, high]`, endpoints exact.
pub fn log_spaced(low: f64, high: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![low],
        _ => {
            let (a, b) = (low.log10(), high.log10());
            let step = (b - a) / (count - 1) as f64;
            (0..count)
                .map(|i| match i {
                    0 => low,
                    i if i == count - 1 => high,
                    i => 10f64.powf(a + step * i as f64),
                })
                .collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    HoldOut { train_fraction: f64 },
    KFold { folds: usize },
}

impl SplitKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SplitKind::HoldOut { train_fraction } if !(train_fraction > 0.0 && train_fraction < 1.0) => Err(
                Error::InvalidParameter(format!("hold-out fraction {train_fraction} not in (0, 1)")),
            ),
            SplitKind::KFold { folds } if folds < 2 => {
                Err(Error::InvalidParameter(format!("need at least 2 folds, got {folds}")))
            }
            _ => Ok(()),
        }
    }

    /// Training-part size of every split of an `n`-sample shard. Depends only on
    /// `n` and the split kind, never on the seed.
    pub fn train_sizes(&self, n: usize) -> Result<Vec<usize>> {
        self.validate()?;
        match *self {
            SplitKind::HoldOut { train_fraction } => {
                if n < 2 {
                    return Err(Error::Split(format!("hold-out needs 2 samples, shard has {n}")));
                }
                let train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
                Ok(vec![train])
            }
            SplitKind::KFold { folds } => {
                if n < folds {
                    return Err(Error::Split(format!("{folds}-fold split of {n} samples")));
                }
                Ok(fold_sizes(n, folds).into_iter().map(|v| n - v).collect())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
}

impl SplitPlan {
    pub fn hold_out(train_fraction: f64, seed: u64) -> Self {
        Self {
            kind: SplitKind::HoldOut { train_fraction },
            seed,
        }
    }

    pub fn k_fold(folds: usize, seed: u64) -> Self {
        Self {
            kind: SplitKind::KFold { folds },
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

fn fold_sizes(n: usize, folds: usize) -> Vec<usize> {
    (0..folds)
        .map(|l| n / folds + usize::from(l < n % folds))
        .collect()
}

pub fn split(n: usize, plan: &SplitPlan) -> Result<Vec<Fold>> {
    let train_sizes = plan.kind.train_sizes(n)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(plan.seed));
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    match plan.kind {
        SplitKind::HoldOut { .. } => {
            let (train, val) = perm.split_at(train_sizes[0]);
            Ok(vec![Fold {
                train: sorted(train),
                val: sorted(val),
            }])
        }
        SplitKind::KFold { folds } => {
            let mut start = 0;
            Ok(fold_sizes(n, folds)
                .into_iter()
                .map(|size| {
                    let val = sorted(&perm[start..start + size]);
                    let train = sorted(
                        &perm[..start]
                            .iter()
                            .chain(&perm[start + size..])
                            .copied()
                            .collect::<Vec<_>>(),
                    );
                    start += size;
                    Fold { train, val }
                })
                .collect())
        }
    }
}

/// Index of the smallest error; exact ties go to the larger lambda, then to the
/// earlier index. Non-finite errors never win against finite ones.
pub fn select_best(errors: &[f64], grid: &ParamGrid) -> usize {
    let key = |e: f64| if e.is_nan() { f64::INFINITY } else { e };
    let mut best = 0;
    for i in 1..errors.len() {
        let (e, b) = (key(errors[i]), key(errors[best]));
        if e < b || (e == b && grid.candidates[i].lambda > grid.candidates[best].lambda) {
            best = i;
        }
    }
    best
}

/// Validation errors of the truncated global approximation for every grid
/// candidate, and the selected index.
pub fn validate_global(
    global_coeffs: &DMatrix<f64>,
    grid: &ParamGrid,
    centers: &CenterSet,
    val_data: &DataSet,
    bound: f64,
) -> Result<(Vec<f64>, usize)> {
    let errors = validation_errors(global_coeffs, grid, centers, val_data, bound)?;
    let best = select_best(&errors, grid);
    Ok((errors, best))
}

pub(crate) fn validation_errors(
    global_coeffs: &DMatrix<f64>,
    grid: &ParamGrid,
    centers: &CenterSet,
    val_data: &DataSet,
    bound: f64,
) -> Result<Vec<f64>> {
    if global_coeffs.shape() != (centers.len(), grid.len()) {
        return Err(Error::Shape(format!(
            "global coefficients are {:?}, expected {}x{}",
            global_coeffs.shape(),
            centers.len(),
            grid.len()
        )));
    }
    if !(bound > 0.0) {
        return Err(Error::InvalidParameter(format!("truncation bound must be positive, got {bound}")));
    }
    let y = val_data.outputs();
    let mut errors = vec![0.0; grid.len()];
    for (kernel, idx) in grid.kernel_groups() {
        let k_vn = gram(&kernel, val_data.inputs(), centers.points())?;
        for &l in &idx {
            let pred = truncate(&(&k_vn * global_coeffs.column(l)), bound);
            errors[l] = (pred - y).norm_squared() / y.len() as f64;
        }
    }
    Ok(errors)
}

/// Mean validation error of every candidate under `plan`, using only the shard.
pub fn cv_errors(shard: &DataSet, grid: &ParamGrid, plan: &SplitPlan) -> Result<Vec<f64>> {
    let folds = split(shard.len(), plan)?;
    let y = shard.outputs();
    let mut errors = vec![0.0; grid.len()];
    for (kernel, idx) in grid.kernel_groups() {
        let full = gram_symmetric(&kernel, shard.inputs());
        for fold in &folds {
            let k_tt = full.select_rows(&fold.train).select_columns(&fold.train);
            let k_vt = full.select_rows(&fold.val).select_columns(&fold.train);
            let y_train: DVector<f64> = y.select_rows(&fold.train);
            let y_val: DVector<f64> = y.select_rows(&fold.val);
            for &l in &idx {
                let alpha = solve_regularized(&k_tt, &y_train, grid.candidates[l].lambda)?;
                let mse = (&k_vt * alpha - &y_val).norm_squared() / y_val.len() as f64;
                errors[l] += mse / folds.len() as f64;
            }
        }
    }
    Ok(errors)
}

pub fn local_cv_select(shard: &DataSet, grid: &ParamGrid, plan: &SplitPlan) -> Result<Candidate> {
    let errors = cv_errors(shard, grid, plan)?;
    Ok(grid.candidates[select_best(&errors, grid)])
}

/// Raises `lambda` (and the Gaussian width, if given) to the power
/// `ln(total_n) / ln(shard_n)`.
pub fn log_transform(
    lambda: f64,
    sigma: Option<f64>,
    total_n: usize,
    shard_n: usize,
) -> Result<(f64, Option<f64>)> {
    if shard_n < 2 || total_n < shard_n {
        return Err(Error::Domain(format!(
            "log transform needs total >= shard >= 2, got total={total_n}, shard={shard_n}"
        )));
    }
    // lambda = 1 (the top of every preset grid) is a fixed point of the transform
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Domain(format!("log transform needs lambda in (0, 1], got {lambda}")));
    }
    let exponent = (total_n as f64).ln() / (shard_n as f64).ln();
    let mut transformed = lambda.powf(exponent);
    if transformed < f64::MIN_POSITIVE {
        transformed = LAMBDA_FLOOR;
    }
    Ok((transformed, sigma.map(|s| s.powf(exponent))))
}
