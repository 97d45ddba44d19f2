//! Independent reference implementations used as test oracles. They share no
//! numerical code with the library: kernels are evaluated from their closed
//! forms and every linear system is solved by LU or SVD.
#![allow(dead_code)]

use adadkrr::krr::DataSet;
use adadkrr::select::{split, SplitPlan};
use adadkrr::silo::{machine_seed, Partition};
use adadkrr::Points;
use nalgebra::{DMatrix, DVector};

pub fn wendland_ref(x: &[f64], y: &[f64]) -> f64 {
    let r = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if r >= 1.0 {
        0.0
    } else {
        (1.0 - r).powi(4) * (4.0 * r + 1.0)
    }
}

pub fn row(p: &Points, i: usize) -> Vec<f64> {
    p.row(i).iter().copied().collect()
}

pub fn gram_ref(a: &Points, b: &Points) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, k| wendland_ref(&row(a, i), &row(b, k)))
}

/// Dual coefficients of `(K + lambda N I) alpha = y` by LU.
pub fn krr_ref(x: &Points, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = x.nrows();
    let k = gram_ref(x, x) + DMatrix::identity(n, n) * (lambda * n as f64);
    k.lu().solve(y).expect("singular KRR system")
}

pub fn krr_predict_ref(x: &Points, alpha: &DVector<f64>, q: &Points) -> DVector<f64> {
    gram_ref(q, x) * alpha
}

/// Minimizer of `|K_sn a - f|^2 + mu s a' K_nn a` as the minimum-norm solution
/// of the stacked least-squares problem `[K_sn; sqrt(mu s) R] a = [f; 0]`
/// where `R' R = K_nn` comes from a symmetric eigendecomposition.
pub fn coeffs_ref(k_sn: &DMatrix<f64>, k_nn: &DMatrix<f64>, f: &DVector<f64>, mu: f64) -> DVector<f64> {
    let (s, n) = k_sn.shape();
    let eig = k_nn.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let r = DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let mut a = DMatrix::zeros(s + n, n);
    a.view_mut((0, 0), (s, n)).copy_from(k_sn);
    a.view_mut((s, 0), (n, n)).copy_from(&(r * (mu * s as f64).sqrt()));
    let mut b = DVector::zeros(s + n);
    b.rows_mut(0, s).copy_from(f);
    a.svd(true, true).solve(&b, 1e-13).expect("svd solve")
}

/// Sequential hold-out AdaDKRR over the Wendland kernel with training inputs as
/// anchors. Returns the global prediction and the selected lambda per machine.
pub fn adadkrr_ref(
    train: &DataSet,
    queries: &Points,
    partition: &Partition,
    lambdas: &[f64],
    centers: &Points,
    plan: &SplitPlan,
    mu: f64,
    bound: f64,
) -> (DVector<f64>, Vec<f64>) {
    let shards: Vec<DataSet> = partition.assignments().iter().map(|a| train.subset(a).unwrap()).collect();
    let folds: Vec<_> = shards
        .iter()
        .enumerate()
        .map(|(j, s)| split(s.len(), &plan.with_seed(machine_seed(plan.seed, j))).unwrap().remove(0))
        .collect();
    let total_train: usize = folds.iter().map(|f| f.train.len()).sum();

    let mut global = vec![DVector::zeros(centers.nrows()); lambdas.len()];
    for (shard, fold) in shards.iter().zip(&folds) {
        let x = shard.inputs().select_rows(&fold.train);
        let y = shard.outputs().select_rows(&fold.train);
        let k_sn = gram_ref(&x, centers);
        let k_nn = gram_ref(centers, centers);
        let w = fold.train.len() as f64 / total_train as f64;
        for (l, &lambda) in lambdas.iter().enumerate() {
            let alpha = krr_ref(&x, &y, lambda);
            let f = krr_predict_ref(&x, &alpha, &x);
            global[l] += coeffs_ref(&k_sn, &k_nn, &f, mu) * w;
        }
    }

    let mut selected = Vec::new();
    let mut prediction = DVector::zeros(queries.nrows());
    for (shard, fold) in shards.iter().zip(&folds) {
        let xv = shard.inputs().select_rows(&fold.val);
        let yv = shard.outputs().select_rows(&fold.val);
        let k_vc = gram_ref(&xv, centers);
        let mut best = (f64::INFINITY, 0.0);
        for (l, &lambda) in lambdas.iter().enumerate() {
            let pred = (&k_vc * &global[l]).map(|v| v.clamp(-bound, bound));
            let err = (pred - &yv).norm_squared() / yv.len() as f64;
            if err < best.0 || (err == best.0 && lambda > best.1) {
                best = (err, lambda);
            }
        }
        selected.push(best.1);
        let alpha = krr_ref(shard.inputs(), shard.outputs(), best.1);
        let p = krr_predict_ref(shard.inputs(), &alpha, queries).map(|v| v.clamp(-bound, bound));
        prediction += p * (shard.len() as f64 / train.len() as f64);
    }
    (prediction, selected)
}
