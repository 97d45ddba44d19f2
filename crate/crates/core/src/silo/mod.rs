//! In-process simulation of `m` data silos.
//!
//! [`run_adadkrr`] runs the adaptive scheme end to end:
//!
//! 1. every machine splits its shard and fits KRR for each grid candidate,
//! 2. projects each fit onto the shared center basis and uploads the
//!    coefficient matrix (round I),
//! 3. the coordinator averages the matrices with weights `|D_j^tr| / |D^tr|`
//!    and broadcasts the result (round II),
//! 4. every machine scores the truncated global approximation on its own
//!    validation data, picks a candidate, refits on its whole shard and uploads
//!    truncated predictions for the queries (round III),
//! 5. the coordinator averages those predictions with weights `|D_j| / |D|`.
//!
//! With k-fold splitting, rounds I and II happen once per fold and the
//! validation errors are averaged over folds before the selection.
//!
//! [`run_baseline`] runs DKRR and DKRRLog, which select parameters on each
//! shard alone and only communicate predictions.

mod machine;
pub mod payload;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{synthesize, AnchorChoice, CoeffMatrix, DEFAULT_MU};
use crate::krr::DataSet;
use crate::qmc::{center_count, generate_centers, CenterKind, CenterPolicy, CenterSet};
use crate::select::{Candidate, ParamGrid, SplitPlan};
use crate::{seed, Error, Points, Result};
use machine::Machine;
use payload::{decode_vector, encode_matrix};

/// Disjoint, covering assignment of global sample indices to machines.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(assignments: Vec<Vec<usize>>, total: usize) -> Result<Self> {
        if assignments.is_empty() {
            return Err(Error::Partition("no machines".into()));
        }
        let mut seen = vec![false; total];
        for (j, a) in assignments.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::Partition(format!("machine {j} holds no samples")));
            }
            for &i in a {
                if i >= total || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Partition(format!(
                        "index {i} is out of range or assigned twice"
                    )));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Partition("some samples are not assigned".into()));
        }
        Ok(Self { assignments })
    }

    pub fn machines(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    perm
}

/// Seeded shuffle cut into `m` blocks; the first `n mod m` blocks get one extra sample.
pub fn partition_uniform(n: usize, m: usize, seed: u64) -> Result<Partition> {
    if m == 0 || n < m {
        return Err(Error::Partition(format!("cannot split {n} samples over {m} machines")));
    }
    let perm = permutation(n, seed);
    let mut start = 0;
    let assignments = (0..m)
        .map(|j| {
            let size = n / m + usize::from(j < n % m);
            let mut block = perm[start..start + size].to_vec();
            block.sort_unstable();
            start += size;
            block
        })
        .collect();
    Partition::new(assignments, n)
}

/// Every machine first receives `min_size` samples; each remaining sample then
/// goes to a machine drawn uniformly at random.
pub fn partition_random_min(n: usize, m: usize, min_size: usize, seed: u64) -> Result<Partition> {
    if m == 0 || min_size == 0 || n < m * min_size {
        return Err(Error::Partition(format!(
            "cannot give {m} machines at least {min_size} of {n} samples each"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut assignments: Vec<Vec<usize>> = perm[..m * min_size]
        .chunks(min_size)
        .map(<[usize]>::to_vec)
        .collect();
    for &i in &perm[m * min_size..] {
        assignments[rng.random_range(0..m)].push(i);
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Partition::new(assignments, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Round {
    /// Machines upload local coefficient matrices.
    LocalCoefficients,
    /// Coordinator broadcasts the synthesized coefficients.
    GlobalBroadcast,
    /// Machines upload predictions at the queries.
    Predictions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PayloadKind {
    Coefficients,
    Weights,
    Predictions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommRecord {
    pub round: Round,
    pub direction: Direction,
    pub kind: PayloadKind,
    pub fold: Option<usize>,
    pub scalars: usize,
}

/// Scalar counts of every message exchanged during a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    records: Vec<CommRecord>,
}

impl CommLedger {
    fn record(&mut self, round: Round, direction: Direction, kind: PayloadKind, fold: Option<usize>, scalars: usize) {
        self.records.push(CommRecord {
            round,
            direction,
            kind,
            fold,
            scalars,
        });
    }

    pub fn records(&self) -> &[CommRecord] {
        &self.records
    }

    pub fn scalars(&self, round: Round, kind: PayloadKind) -> usize {
        self.records
            .iter()
            .filter(|r| r.round == round && r.kind == kind)
            .map(|r| r.scalars)
            .sum()
    }

    pub fn round_total(&self, round: Round) -> usize {
        self.records
            .iter()
            .filter(|r| r.round == round)
            .map(|r| r.scalars)
            .sum()
    }

    pub fn total_scalars(&self) -> usize {
        self.records.iter().map(|r| r.scalars).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalPrediction {
    pub values: DVector<f64>,
    /// Row `j` holds machine `j`'s uploaded predictions.
    pub per_machine: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub prediction: GlobalPrediction,
    /// Final parameters of every machine, after any transform.
    pub selected: Vec<Candidate>,
    pub ledger: CommLedger,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterConfig {
    pub kind: CenterKind,
    pub policy: CenterPolicy,
    /// Only used for random centers.
    pub seed: u64,
}

impl CenterConfig {
    pub fn build(&self, total_n: usize, m: usize, d: usize) -> Result<CenterSet> {
        let n = center_count(self.policy, total_n, m);
        let seed = (self.kind == CenterKind::Random).then_some(self.seed);
        generate_centers(self.kind, n, d, seed)
    }
}

#[derive(Clone, Debug)]
pub struct AdaConfig {
    pub grid: ParamGrid,
    pub plan: SplitPlan,
    pub centers: CenterConfig,
    pub mu: f64,
    /// Truncation bound `M`.
    pub bound: f64,
    pub anchors: AnchorChoice,
}

impl AdaConfig {
    pub fn new(grid: ParamGrid, plan: SplitPlan, centers: CenterConfig, bound: f64) -> Self {
        Self {
            grid,
            plan,
            centers,
            mu: DEFAULT_MU,
            bound,
            anchors: AnchorChoice::default(),
        }
    }
}

/// Split seed of machine `j`, derived from the plan's master seed.
pub fn machine_seed(plan_seed: u64, machine: usize) -> u64 {
    seed::derive(plan_seed, &[machine as u64])
}

/// The largest absolute training output, the default truncation bound.
pub fn output_bound(train: &DataSet) -> f64 {
    train.outputs().amax()
}

fn build_machines(train: &DataSet, partition: &Partition) -> Result<Vec<Machine>> {
    if partition.total() != train.len() {
        return Err(Error::Partition(format!(
            "partition covers {} samples but the training set has {}",
            partition.total(),
            train.len()
        )));
    }
    partition
        .assignments()
        .iter()
        .enumerate()
        .map(|(j, idx)| Ok(Machine::new(j, train.subset(idx)?)))
        .collect()
}

fn check_queries(train: &DataSet, queries: &Points) -> Result<()> {
    if queries.ncols() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: queries.ncols(),
        });
    }
    Ok(())
}

/// Round III: collect every machine's prediction payload and average with
/// weights `|D_j| / |D|`, in machine order.
fn combine_predictions(
    machines: &[Machine],
    queries: &Points,
    bound: Option<f64>,
    ledger: &mut CommLedger,
) -> Result<GlobalPrediction> {
    let payloads: Vec<Vec<u8>> = machines
        .par_iter()
        .map(|m| m.predictions(queries, bound))
        .collect::<Result<_>>()?;
    let total: usize = machines.iter().map(Machine::len).sum();
    let q = queries.nrows();
    let mut per_machine = DMatrix::zeros(machines.len(), q);
    let mut values = DVector::zeros(q);
    for (j, (bytes, machine)) in payloads.iter().zip(machines).enumerate() {
        let p = decode_vector(bytes)?;
        ledger.record(Round::Predictions, Direction::Up, PayloadKind::Predictions, None, p.len());
        let w = machine.len() as f64 / total as f64;
        values.axpy(w, &p, 1.0);
        per_machine.set_row(j, &p.transpose());
    }
    Ok(GlobalPrediction { values, per_machine })
}

pub fn run_adadkrr(
    train: &DataSet,
    test_inputs: &Points,
    partition: &Partition,
    config: &AdaConfig,
) -> Result<RunOutcome> {
    check_queries(train, test_inputs)?;
    if !(config.bound > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation bound must be positive, got {}",
            config.bound
        )));
    }
    let grid = &config.grid;
    let mut machines = build_machines(train, partition)?;
    let m = machines.len();
    let centers = Arc::new(config.centers.build(train.len(), m, train.dim())?);

    machines
        .par_iter_mut()
        .enumerate()
        .try_for_each(|(j, machine)| {
            machine.prepare_folds(&config.plan.with_seed(machine_seed(config.plan.seed, j)), grid.len())
        })?;

    // Training-part sizes depend only on shard sizes, so the coordinator can
    // compute every fold's weight denominator without seeing any data.
    let train_sizes: Vec<Vec<usize>> = machines
        .iter()
        .enumerate()
        .map(|(j, mach)| config.plan.kind.train_sizes(mach.len()).map_err(|e| e.on_machine(j)))
        .collect::<Result<_>>()?;
    let folds = train_sizes[0].len();

    let mut ledger = CommLedger::default();
    for fold in 0..folds {
        let denominator: usize = train_sizes.iter().map(|s| s[fold]).sum();
        let uploads: Vec<Vec<u8>> = machines
            .par_iter()
            .map(|mach| {
                mach.local_coefficients(fold, grid, &centers, config.mu, config.anchors, denominator as u64)
            })
            .collect::<Result<_>>()?;
        let locals: Vec<CoeffMatrix> = uploads
            .iter()
            .map(|b| CoeffMatrix::from_bytes(b))
            .collect::<Result<_>>()?;
        for local in &locals {
            let dir = Direction::Up;
            ledger.record(Round::LocalCoefficients, dir, PayloadKind::Coefficients, Some(fold), local.coeffs().len());
            ledger.record(Round::LocalCoefficients, dir, PayloadKind::Weights, Some(fold), 1);
        }
        let global = synthesize(&locals)?;
        let broadcast = encode_matrix(&global);
        for _ in 0..m {
            ledger.record(
                Round::GlobalBroadcast,
                Direction::Down,
                PayloadKind::Coefficients,
                Some(fold),
                global.len(),
            );
        }
        machines
            .par_iter_mut()
            .try_for_each(|mach| mach.absorb_global(fold, &broadcast, grid, &centers, config.bound))?;
    }

    machines.par_iter_mut().try_for_each(|mach| {
        mach.select_from_validation(grid);
        mach.retrain()
    })?;

    let prediction = combine_predictions(&machines, test_inputs, Some(config.bound), &mut ledger)?;
    let selected = machines.iter().filter_map(Machine::selected).collect();
    Ok(RunOutcome {
        prediction,
        selected,
        ledger,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineStrategy {
    Dkrr,
    DkrrLog,
}

/// DKRR / DKRRLog: per-machine cross-validation, refit on the whole shard,
/// untruncated weighted average of the predictions.
pub fn run_baseline(
    strategy: BaselineStrategy,
    train: &DataSet,
    test_inputs: &Points,
    partition: &Partition,
    grid: &ParamGrid,
    plan: &SplitPlan,
) -> Result<RunOutcome> {
    check_queries(train, test_inputs)?;
    let mut machines = build_machines(train, partition)?;
    let log_total = (strategy == BaselineStrategy::DkrrLog).then_some(train.len());
    machines.par_iter_mut().enumerate().try_for_each(|(j, mach)| {
        mach.select_locally(grid, &plan.with_seed(machine_seed(plan.seed, j)), log_total)?;
        mach.retrain()
    })?;
    let mut ledger = CommLedger::default();
    let prediction = combine_predictions(&machines, test_inputs, None, &mut ledger)?;
    let selected = machines.iter().filter_map(Machine::selected).collect();
    Ok(RunOutcome {
        prediction,
        selected,
        ledger,
    })
}

pub fn test_mse(pred: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    Ok((pred - truth).norm_squared() / pred.len() as f64)
}
