//! A simulated data-holding machine. The shard never leaves this module: the
//! coordinator can only obtain encoded coefficient matrices and prediction
//! vectors from it.

use nalgebra::DMatrix;

use super::payload::{decode_matrix, encode_vector};
use crate::approx::{AnchorChoice, CoeffMatrix, LocalApproximator};
use crate::kernels::{gram, gram_symmetric, KernelFamily};
use crate::krr::{fit_krr, predict, solve_regularized, truncate, DataSet, DualEstimator};
use crate::qmc::CenterSet;
use crate::select::{local_cv_select, log_transform, select_best, split, validation_errors, Candidate, Fold, ParamGrid, SplitPlan};
use crate::{Error, Points, Result};

pub(super) struct Machine {
    index: usize,
    shard: DataSet,
    folds: Vec<Fold>,
    errors: Vec<f64>,
    selected: Option<Candidate>,
    estimator: Option<DualEstimator>,
}

impl Machine {
    pub(super) fn new(index: usize, shard: DataSet) -> Self {
        Self {
            index,
            shard,
            folds: Vec::new(),
            errors: Vec::new(),
            selected: None,
            estimator: None,
        }
    }

    pub(super) fn len(&self) -> usize {
        self.shard.len()
    }

    pub(super) fn selected(&self) -> Option<Candidate> {
        self.selected
    }

    fn tag<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| e.on_machine(self.index))
    }

    pub(super) fn prepare_folds(&mut self, plan: &SplitPlan, grid_len: usize) -> Result<()> {
        let folds = split(self.shard.len(), plan);
        self.folds = self.tag(folds)?;
        self.errors = vec![0.0; grid_len];
        Ok(())
    }

    /// Round I payload for split `fold`: one coefficient column per candidate.
    pub(super) fn local_coefficients(
        &self,
        fold: usize,
        grid: &ParamGrid,
        centers: &CenterSet,
        mu: f64,
        anchors: AnchorChoice,
        weight_denominator: u64,
    ) -> Result<Vec<u8>> {
        self.tag(self.local_coefficients_inner(fold, grid, centers, mu, anchors, weight_denominator))
    }

    fn local_coefficients_inner(
        &self,
        fold: usize,
        grid: &ParamGrid,
        centers: &CenterSet,
        mu: f64,
        anchors: AnchorChoice,
        weight_denominator: u64,
    ) -> Result<Vec<u8>> {
        let train = &self.folds[fold].train;
        let x_train: Points = self.shard.inputs().select_rows(train);
        let y_train = self.shard.outputs().select_rows(train);
        let mut coeffs = DMatrix::zeros(centers.len(), grid.len());
        for (kernel, idx) in grid.kernel_groups() {
            let k_tt = gram_symmetric(&kernel, &x_train);
            let (anchor_points, k_at) = match anchors {
                AnchorChoice::TrainingInputs => (x_train.clone(), None),
                AnchorChoice::Centers => (
                    centers.points().clone(),
                    Some(gram(&kernel, centers.points(), &x_train)?),
                ),
            };
            let mut targets = DMatrix::zeros(anchor_points.nrows(), idx.len());
            for (col, &l) in idx.iter().enumerate() {
                let alpha = solve_regularized(&k_tt, &y_train, grid.candidates()[l].lambda)?;
                let f = match &k_at {
                    None => &k_tt * alpha,
                    Some(k) => k * alpha,
                };
                targets.set_column(col, &f);
            }
            let approximator = LocalApproximator::new(&anchor_points, centers.points(), &kernel, mu)?;
            let local = approximator.coefficients(&targets)?;
            for (col, &l) in idx.iter().enumerate() {
                coeffs.set_column(l, &local.column(col));
            }
        }
        Ok(CoeffMatrix::new(coeffs, train.len() as u64, weight_denominator)?.to_bytes())
    }

    /// Consumes the round II broadcast for split `fold` and accumulates the
    /// validation errors of every candidate.
    pub(super) fn absorb_global(
        &mut self,
        fold: usize,
        global: &[u8],
        grid: &ParamGrid,
        centers: &CenterSet,
        bound: f64,
    ) -> Result<()> {
        let result = (|| {
            let coeffs = decode_matrix(global)?;
            let val = self.shard.subset(&self.folds[fold].val)?;
            validation_errors(&coeffs, grid, centers, &val, bound)
        })();
        let errors = self.tag(result)?;
        let folds = self.folds.len() as f64;
        for (acc, e) in self.errors.iter_mut().zip(errors) {
            *acc += e / folds;
        }
        Ok(())
    }

    /// Picks the candidate with the smallest averaged validation error.
    pub(super) fn select_from_validation(&mut self, grid: &ParamGrid) {
        self.selected = Some(grid.candidates()[select_best(&self.errors, grid)]);
    }

    /// Per-machine cross-validation on the shard alone, optionally followed by
    /// the logarithmic transform towards the global sample size.
    pub(super) fn select_locally(
        &mut self,
        grid: &ParamGrid,
        plan: &SplitPlan,
        log_total: Option<usize>,
    ) -> Result<()> {
        let result = (|| {
            let mut pick = local_cv_select(&self.shard, grid, plan)?;
            if let Some(total) = log_total {
                let sigma = (pick.kernel.family == KernelFamily::Gaussian).then_some(pick.kernel.sigma);
                let (lambda, sigma) = log_transform(pick.lambda, sigma, total, self.shard.len())?;
                pick.lambda = lambda;
                if let Some(s) = sigma {
                    pick.kernel.sigma = s;
                }
            }
            Ok(pick)
        })();
        self.selected = Some(self.tag(result)?);
        Ok(())
    }

    /// Refits on the whole shard with the selected candidate.
    pub(super) fn retrain(&mut self) -> Result<()> {
        let pick = self
            .selected
            .ok_or_else(|| Error::InvalidParameter("retrain before selection".into()));
        let pick = self.tag(pick)?;
        let est = fit_krr(&self.shard, pick.kernel, pick.lambda);
        self.estimator = Some(self.tag(est)?);
        Ok(())
    }

    /// Round III payload: predictions at the queries, truncated when a bound is given.
    pub(super) fn predictions(&self, queries: &Points, bound: Option<f64>) -> Result<Vec<u8>> {
        let result = (|| {
            let est = self
                .estimator
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("predict before retraining".into()))?;
            let p = predict(est, queries)?;
            Ok(encode_vector(&match bound {
                Some(b) => truncate(&p, b),
                None => p,
            }))
        })();
        self.tag(result)
    }
}
