//! Config-driven experiment runner: trials over (method, m) cells, trial
//! aggregation and CSV emission.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::{AnchorChoice, DEFAULT_MU};
use crate::data::{gen_synthetic, load_table, prepare_table, PreprocessSchema, RegressionTarget, Table};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::krr::{fit_krr, predict, DataSet};
use crate::qmc::{CenterKind, CenterPolicy, MAX_SOBOL_DIM};
use crate::select::{local_cv_select, Candidate, GridPreset, ParamGrid, SplitPlan};
use crate::silo::{
    machine_seed, output_bound, partition_random_min, partition_uniform, run_adadkrr, run_baseline, test_mse,
    AdaConfig, BaselineStrategy, CenterConfig, Partition, RunOutcome,
};
use crate::{seed, Error, Points, Result};

pub const DEFAULT_TRIALS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AdadkrrHoldout,
    AdadkrrCv,
    Dkrr,
    DkrrLog,
    KrrWholeData,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::AdadkrrHoldout => "adadkrr-holdout",
            Method::AdadkrrCv => "adadkrr-cv",
            Method::Dkrr => "dkrr",
            Method::DkrrLog => "dkrr-log",
            Method::KrrWholeData => "krr-whole-data",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Method::AdadkrrHoldout | Method::AdadkrrCv)
    }
}

fn default_noise_std() -> f64 {
    0.2f64.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        target: RegressionTarget,
        dim: usize,
        train_size: usize,
        test_size: usize,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
    Csv {
        path: PathBuf,
        schema: PreprocessSchema,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSpec {
    #[default]
    Uniform,
    /// Random sizes with at least `min_size` samples per machine.
    RandomMin { min_size: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterSpec {
    pub kind: CenterKind,
    pub count: CenterPolicy,
}

impl CenterSpec {
    fn label(&self) -> String {
        match self.count {
            CenterPolicy::Fixed(n) => format!("{}-{n}", self.kind.name()),
            CenterPolicy::Adaptive => format!("{}-adaptive", self.kind.name()),
        }
    }
}

fn default_centers() -> Vec<CenterSpec> {
    vec![CenterSpec {
        kind: CenterKind::Sobol,
        count: CenterPolicy::Adaptive,
    }]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Preset(GridPreset),
    /// Powers of `1 / lambda_base` down to the floor; Gaussian when `sigmas` is given.
    Custom {
        lambda_base: f64,
        #[serde(default)]
        sigmas: Option<Vec<f64>>,
    },
}

impl GridSpec {
    pub fn build(&self) -> Result<ParamGrid> {
        match self {
            GridSpec::Preset(p) => Ok(ParamGrid::preset(*p)),
            GridSpec::Custom { lambda_base, sigmas: None } => ParamGrid::powers(*lambda_base, KernelSpec::wendland()),
            GridSpec::Custom {
                lambda_base,
                sigmas: Some(s),
            } => ParamGrid::gaussian_product(*lambda_base, s),
        }
    }
}

fn default_mu() -> f64 {
    DEFAULT_MU
}
fn default_holdout() -> f64 {
    0.5
}
fn default_folds() -> usize {
    5
}
fn default_trials() -> usize {
    DEFAULT_TRIALS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub methods: Vec<Method>,
    pub machines: Vec<usize>,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default = "default_centers")]
    pub centers: Vec<CenterSpec>,
    pub grid: GridSpec,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    /// Truncation bound; defaults to the largest absolute training output.
    #[serde(default)]
    pub truncation_bound: Option<f64>,
    #[serde(default)]
    pub anchors: AnchorChoice,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Wall time is written as 0 unless set, keeping outputs reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; a relative CSV path is taken relative to the file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        if let DatasetSpec::Csv { path: csv, .. } = &mut config.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.trials == 0 {
            return fail("trials must be >= 1".into());
        }
        if self.methods.is_empty() {
            return fail("no methods listed".into());
        }
        if self.machines.is_empty() || self.machines.contains(&0) {
            return fail("machine counts must be a non-empty list of values >= 1".into());
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return fail(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return fail(format!("holdout_fraction must lie in (0, 1), got {}", self.holdout_fraction));
        }
        if self.cv_folds < 2 {
            return fail(format!("cv_folds must be >= 2, got {}", self.cv_folds));
        }
        if let Some(b) = self.truncation_bound {
            if !(b > 0.0 && b.is_finite()) {
                return fail(format!("truncation_bound must be positive, got {b}"));
            }
        }
        if let PartitionSpec::RandomMin { min_size: 0 } = self.partition {
            return fail("random_min.min_size must be >= 1".into());
        }
        if self.methods.iter().any(|m| m.is_adaptive()) && self.centers.is_empty() {
            return fail("adaptive methods need at least one center spec".into());
        }
        if self.centers.iter().any(|c| c.count == CenterPolicy::Fixed(0)) {
            return fail("fixed center counts must be >= 1".into());
        }
        if let DatasetSpec::Synthetic {
            dim,
            train_size,
            test_size,
            noise_std,
            ..
        } = &self.dataset
        {
            if *dim == 0 || *train_size == 0 || *test_size == 0 {
                return fail("synthetic dim, train_size and test_size must be >= 1".into());
            }
            if *dim > MAX_SOBOL_DIM && self.centers.iter().any(|c| c.kind == CenterKind::Sobol) {
                return fail(format!("Sobol centers support at most {MAX_SOBOL_DIM} dimensions"));
            }
            if !(*noise_std >= 0.0 && noise_std.is_finite()) {
                return fail(format!("noise_std must be >= 0, got {noise_std}"));
            }
        }
        self.grid.build().map_err(|e| Error::Config(format!("grid: {e}")))?;
        Ok(())
    }

    /// Column labels for every (method, center spec) combination, in order.
    pub fn labels(&self) -> Vec<String> {
        self.variants().into_iter().map(|v| v.label).collect()
    }

    fn variants(&self) -> Vec<Variant> {
        let mut out = Vec::new();
        for &method in &self.methods {
            if method.is_adaptive() {
                for spec in &self.centers {
                    let label = if self.centers.len() > 1 {
                        format!("{}/{}", method.name(), spec.label())
                    } else {
                        method.name().to_string()
                    };
                    out.push(Variant {
                        method,
                        centers: Some(*spec),
                        label,
                    });
                }
            } else {
                out.push(Variant {
                    method,
                    centers: None,
                    label: method.name().to_string(),
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
struct Variant {
    method: Method,
    centers: Option<CenterSpec>,
    label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub method: String,
    pub m: usize,
    pub trial: usize,
    pub test_mse: f64,
    pub comm_scalars: usize,
    pub wall_ms: u64,
    /// One entry per machine, in machine order.
    pub selected: Vec<Candidate>,
    pub max_abs_prediction: f64,
    /// The truncation bound applied, if any.
    pub bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbortedRow {
    pub method: String,
    pub m: usize,
    pub trial: usize,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub labels: Vec<String>,
    pub machines: Vec<usize>,
    pub trials: usize,
    pub rows: Vec<ExperimentRow>,
    pub aborted: Vec<AbortedRow>,
}

impl ExperimentResult {
    pub fn rows_for<'a>(&'a self, label: &'a str, m: usize) -> impl Iterator<Item = &'a ExperimentRow> + 'a {
        self.rows.iter().filter(move |r| r.method == label && r.m == m)
    }

    pub fn mean_mse(&self, label: &str, m: usize) -> Option<f64> {
        let v: Vec<f64> = self.rows_for(label, m).map(|r| r.test_mse).collect();
        (!v.is_empty()).then(|| mean_std(&v).0)
    }
}

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    seed::derive(master, &[trial as u64])
}

fn cell_seed(trial_seed: u64, what: &str, m: usize) -> u64 {
    seed::derive(trial_seed, &[seed::tag(what), m as u64])
}

struct TrialData {
    train: DataSet,
    test_inputs: Points,
    truth: DVector<f64>,
}

fn trial_data(config: &ExperimentConfig, table: Option<&Table>, trial_seed: u64) -> Result<TrialData> {
    match &config.dataset {
        DatasetSpec::Synthetic {
            target,
            dim,
            train_size,
            test_size,
            noise_std,
        } => {
            let (train, _) = gen_synthetic(*target, *train_size, *dim, *noise_std, seed::derive(trial_seed, &[seed::tag("train")]))?;
            let (test, truth) = gen_synthetic(*target, *test_size, *dim, 0.0, seed::derive(trial_seed, &[seed::tag("test")]))?;
            let (test_inputs, _) = test.into_parts();
            Ok(TrialData {
                train,
                test_inputs,
                truth,
            })
        }
        DatasetSpec::Csv { schema, .. } => {
            let table = table.ok_or_else(|| Error::Config("CSV table not loaded".into()))?;
            let prepared = prepare_table(table, schema, seed::derive(trial_seed, &[seed::tag("division")]))?;
            Ok(TrialData {
                train: prepared.train,
                test_inputs: prepared.test_inputs,
                truth: prepared.test_targets,
            })
        }
    }
}

/// Training data of the first trial, as `run_experiment` would generate it.
pub fn first_trial_data(config: &ExperimentConfig) -> Result<DataSet> {
    let table = load_dataset_table(config)?;
    Ok(trial_data(config, table.as_ref(), trial_seed(config.seed, 0))?.train)
}

fn load_dataset_table(config: &ExperimentConfig) -> Result<Option<Table>> {
    match &config.dataset {
        DatasetSpec::Csv { path, schema } => Ok(Some(load_table(path, &schema.csv)?)),
        DatasetSpec::Synthetic { .. } => Ok(None),
    }
}

struct CellOutcome {
    mse: f64,
    comm: usize,
    selected: Vec<Candidate>,
    max_abs: f64,
    bound: Option<f64>,
}

fn outcome(run: RunOutcome, truth: &DVector<f64>, bound: Option<f64>) -> Result<CellOutcome> {
    Ok(CellOutcome {
        mse: test_mse(&run.prediction.values, truth)?,
        comm: run.ledger.total_scalars(),
        max_abs: run.prediction.values.amax(),
        selected: run.selected,
        bound,
    })
}

fn build_partition(config: &ExperimentConfig, n: usize, m: usize, seed: u64) -> Result<Partition> {
    match config.partition {
        PartitionSpec::Uniform => partition_uniform(n, m, seed),
        PartitionSpec::RandomMin { min_size } => partition_random_min(n, m, min_size, seed),
    }
}

fn krr_whole_data(config: &ExperimentConfig, grid: &ParamGrid, data: &TrialData, split_seed: u64) -> Result<CellOutcome> {
    let plan = SplitPlan::k_fold(config.cv_folds, machine_seed(split_seed, 0));
    let pick = local_cv_select(&data.train, grid, &plan)?;
    let est = fit_krr(&data.train, pick.kernel, pick.lambda)?;
    let pred = predict(&est, &data.test_inputs)?;
    Ok(CellOutcome {
        mse: test_mse(&pred, &data.truth)?,
        comm: 0,
        max_abs: pred.amax(),
        selected: vec![pick],
        bound: None,
    })
}

fn run_cell(
    config: &ExperimentConfig,
    grid: &ParamGrid,
    variant: &Variant,
    m: usize,
    tseed: u64,
    data: &TrialData,
) -> Result<CellOutcome> {
    let n = data.train.len();
    let split_seed = cell_seed(tseed, "split", m);
    if variant.method == Method::KrrWholeData {
        // independent of m; the split seed is shared with the m = 1 baselines
        return krr_whole_data(config, grid, data, cell_seed(tseed, "split", 1));
    }
    let partition = build_partition(config, n, m, cell_seed(tseed, "partition", m))?;
    let cv = SplitPlan::k_fold(config.cv_folds, split_seed);
    match (variant.method, variant.centers) {
        (Method::Dkrr, _) => outcome(
            run_baseline(BaselineStrategy::Dkrr, &data.train, &data.test_inputs, &partition, grid, &cv)?,
            &data.truth,
            None,
        ),
        (Method::DkrrLog, _) => outcome(
            run_baseline(BaselineStrategy::DkrrLog, &data.train, &data.test_inputs, &partition, grid, &cv)?,
            &data.truth,
            None,
        ),
        (method, Some(spec)) => {
            let plan = if method == Method::AdadkrrHoldout {
                SplitPlan::hold_out(config.holdout_fraction, split_seed)
            } else {
                cv
            };
            let bound = config.truncation_bound.unwrap_or_else(|| output_bound(&data.train));
            let centers = CenterConfig {
                kind: spec.kind,
                policy: spec.count,
                seed: cell_seed(tseed, "centers", m),
            };
            let mut ada = AdaConfig::new(grid.clone(), plan, centers, bound);
            ada.mu = config.mu;
            ada.anchors = config.anchors;
            outcome(run_adadkrr(&data.train, &data.test_inputs, &partition, &ada)?, &data.truth, Some(bound))
        }
        (_, None) => Err(Error::Config("adaptive method without centers".into())),
    }
}

/// Runs every (method, m, trial) cell. Module errors abort only their row.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let grid = config.grid.build()?;
    let variants = config.variants();
    let table = load_dataset_table(config)?;

    let mut result = ExperimentResult {
        name: config.name.clone(),
        labels: variants.iter().map(|v| v.label.clone()).collect(),
        machines: config.machines.clone(),
        trials: config.trials,
        ..Default::default()
    };

    let trials: Vec<(u64, Result<TrialData>)> = (0..config.trials)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(config.seed, t);
            (s, trial_data(config, table.as_ref(), s))
        })
        .collect();

    let cells: Vec<(usize, usize, usize)> = (0..variants.len())
        .flat_map(|v| {
            config
                .machines
                .iter()
                .flat_map(move |&m| (0..config.trials).map(move |t| (v, m, t)))
        })
        .collect();

    let outcomes: Vec<(Result<CellOutcome>, u64)> = cells
        .par_iter()
        .map(|&(v, m, t)| {
            let variant = &variants[v];
            let start = Instant::now();
            let out = match &trials[t] {
                (tseed, Ok(data)) => run_cell(config, &grid, variant, m, *tseed, data),
                (_, Err(e)) => Err(Error::Config(format!("trial data: {e}"))),
            };
            let ms = if config.record_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            log::info!("{} m={m} trial={t} done", variant.label);
            (out, ms)
        })
        .collect();

    for (&(v, m, t), (out, wall_ms)) in cells.iter().zip(outcomes) {
        let method = variants[v].label.clone();
        match out {
            Ok(c) => result.rows.push(ExperimentRow {
                method,
                m,
                trial: t,
                test_mse: c.mse,
                comm_scalars: c.comm,
                wall_ms,
                selected: c.selected,
                max_abs_prediction: c.max_abs,
                bound: c.bound,
            }),
            Err(e) => {
                log::warn!("aborted {method} m={m} trial={t}: {e}");
                result.aborted.push(AbortedRow {
                    method,
                    m,
                    trial: t,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(result)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn writer(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<(csv::Writer<std::fs::File>, PathBuf)> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    written.push(path.clone());
    Ok((csv::Writer::from_writer(file), path))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn kernel_name(k: &KernelSpec) -> (&'static str, String) {
    match k.family {
        KernelFamily::Wendland => ("wendland", String::new()),
        KernelFamily::Gaussian => ("gaussian", k.sigma.to_string()),
    }
}

/// Writes results.csv, summary.csv, plot_mse_vs_m.csv, selections.csv and
/// aborted.csv into `dir`, returning the paths written.
pub fn emit_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let (mut w, path) = writer(dir, "results.csv", &mut written)?;
    w.write_record(["method", "m", "trial", "test_mse", "comm_scalars", "wall_ms"])?;
    for r in &result.rows {
        w.write_record([
            r.method.clone(),
            r.m.to_string(),
            r.trial.to_string(),
            r.test_mse.to_string(),
            r.comm_scalars.to_string(),
            r.wall_ms.to_string(),
        ])?;
    }
    finish(w, &path)?;

    // group rows by (method, m) in first-seen order
    let mut groups: Vec<((String, usize), Vec<&ExperimentRow>)> = Vec::new();
    for r in &result.rows {
        match groups.iter_mut().find(|((l, m), _)| *l == r.method && *m == r.m) {
            Some((_, g)) => g.push(r),
            None => groups.push(((r.method.clone(), r.m), vec![r])),
        }
    }

    let (mut w, path) = writer(dir, "summary.csv", &mut written)?;
    w.write_record([
        "method",
        "m",
        "trials",
        "mean_test_mse",
        "std_test_mse_population",
        "mean_comm_scalars",
    ])?;
    for ((label, m), rows) in &groups {
        let mse: Vec<f64> = rows.iter().map(|r| r.test_mse).collect();
        let comm: Vec<f64> = rows.iter().map(|r| r.comm_scalars as f64).collect();
        let (mean, std) = mean_std(&mse);
        w.write_record([
            label.clone(),
            m.to_string(),
            rows.len().to_string(),
            mean.to_string(),
            std.to_string(),
            mean_std(&comm).0.to_string(),
        ])?;
    }
    finish(w, &path)?;

    let (mut w, path) = writer(dir, "plot_mse_vs_m.csv", &mut written)?;
    let mut header = vec!["m".to_string()];
    header.extend(result.labels.iter().cloned());
    w.write_record(&header)?;
    for &m in &result.machines {
        let mut row = vec![m.to_string()];
        for label in &result.labels {
            row.push(result.mean_mse(label, m).map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    finish(w, &path)?;

    let (mut w, path) = writer(dir, "selections.csv", &mut written)?;
    w.write_record(["method", "m", "trial", "machine", "lambda", "kernel", "sigma"])?;
    for r in &result.rows {
        for (j, c) in r.selected.iter().enumerate() {
            let (kernel, sigma) = kernel_name(&c.kernel);
            w.write_record([
                r.method.clone(),
                r.m.to_string(),
                r.trial.to_string(),
                j.to_string(),
                c.lambda.to_string(),
                kernel.to_string(),
                sigma,
            ])?;
        }
    }
    finish(w, &path)?;

    let (mut w, path) = writer(dir, "aborted.csv", &mut written)?;
    w.write_record(["method", "m", "trial", "error"])?;
    for a in &result.aborted {
        w.write_record([a.method.clone(), a.m.to_string(), a.trial.to_string(), a.error.clone()])?;
    }
    finish(w, &path)?;
    Ok(written)
}

pub const PRESETS: &[(&str, &str)] = &[
    ("sim1", include_str!("../presets/sim1.json")),
    ("sim2", include_str!("../presets/sim2.json")),
    ("sim3", include_str!("../presets/sim3.json")),
    ("sim4", include_str!("../presets/sim4.json")),
    ("car-schema", include_str!("../presets/car-schema.json")),
    ("sgemm-schema", include_str!("../presets/sgemm-schema.json")),
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    ExperimentConfig::from_json(text)
}

/// Writes a data set as `x1..xd,y` with a header row.
pub fn write_dataset_csv(data: &DataSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.inputs().row(i).iter().map(f64::to_string).collect();
        row.push(data.outputs()[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, m: usize, trial: usize, mse: f64) -> ExperimentRow {
        ExperimentRow {
            method: method.into(),
            m,
            trial,
            test_mse: mse,
            comm_scalars: 10,
            wall_ms: 0,
            selected: vec![Candidate {
                lambda: 0.5,
                kernel: KernelSpec::wendland(),
            }],
            max_abs_prediction: 1.0,
            bound: None,
        }
    }

    fn small_config() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "name": "tiny",
                "dataset": {"synthetic": {"target": "g1", "dim": 3, "train_size": 120, "test_size": 30}},
                "methods": ["krr-whole-data", "dkrr", "adadkrr-holdout"],
                "machines": [1, 3],
                "centers": [{"kind": "sobol", "count": {"fixed": 16}}],
                "grid": {"lambda_base": 4.0},
                "trials": 2,
                "seed": 5
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn population_std() {
        let (mean, std) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(mean, 2.0);
        assert!((std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_result_gives_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_outputs(&ExperimentResult::default(), dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        for f in files {
            let text = std::fs::read_to_string(&f).unwrap();
            assert_eq!(text.lines().count(), 1, "{}", f.display());
        }
    }

    #[test]
    fn row_counting() {
        let mut result = ExperimentResult {
            labels: vec!["a".into(), "b".into()],
            machines: vec![2, 4],
            trials: 3,
            ..Default::default()
        };
        for label in ["a", "b"] {
            for m in [2, 4] {
                for t in 0..3 {
                    result.rows.push(row(label, m, t, 1.0 + t as f64));
                }
            }
        }
        let dir = tempfile::tempdir().unwrap();
        emit_outputs(&result, dir.path()).unwrap();
        let count = |name: &str| std::fs::read_to_string(dir.path().join(name)).unwrap().lines().count() - 1;
        assert_eq!(count("results.csv"), 12);
        assert_eq!(count("summary.csv"), 4);
        assert_eq!(count("plot_mse_vs_m.csv"), 2);
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let first: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(first[3], "2");
        assert_eq!(first[4].parse::<f64>().unwrap(), (2.0f64 / 3.0).sqrt());
    }

    #[test]
    fn config_validation() {
        let good = small_config();
        let mut bad = good.clone();
        bad.trials = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = good.clone();
        bad.machines = vec![0];
        assert!(bad.validate().is_err());
        let mut bad = good.clone();
        bad.holdout_fraction = 1.0;
        assert!(bad.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"name": "x"}"#).is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"name": "x", "dataset": {"synthetic": {"target": "g1", "dim": 3, "train_size": 10, "test_size": 5}},
                "methods": ["dkrr"], "machines": [1], "grid": "wendland-base2", "seed": 1, "bogus": 2}"#
        )
        .is_err());
    }

    #[test]
    fn presets_parse() {
        for (name, _) in PRESETS {
            let config = preset(name).unwrap();
            assert_eq!(config.trials, DEFAULT_TRIALS, "{name}");
        }
        assert!(preset("sim9").is_err());
    }

    #[test]
    fn whole_data_matches_dkrr_at_one_machine() {
        let result = run_experiment(&small_config()).unwrap();
        assert!(result.aborted.is_empty(), "{:?}", result.aborted);
        assert_eq!(result.rows.len(), 3 * 2 * 2);
        for t in 0..2 {
            let krr = result.rows.iter().find(|r| r.method == "krr-whole-data" && r.m == 1 && r.trial == t).unwrap();
            let dkrr = result.rows.iter().find(|r| r.method == "dkrr" && r.m == 1 && r.trial == t).unwrap();
            assert!((krr.test_mse - dkrr.test_mse).abs() <= 1e-10);
        }
        for r in result.rows.iter().filter(|r| r.method == "adadkrr-holdout") {
            assert!(r.max_abs_prediction <= r.bound.unwrap());
        }
    }

    #[test]
    fn oversized_machine_count_aborts_only_its_rows() {
        let mut config = small_config();
        config.machines = vec![2, 500];
        config.methods = vec![Method::Dkrr];
        let result = run_experiment(&config).unwrap();
        assert_eq!(result.rows.len(), 2);
        assert_eq!(result.aborted.len(), 2);
        assert!(result.aborted.iter().all(|a| a.m == 500));
    }
}
