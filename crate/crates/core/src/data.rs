//! Synthetic regression data and the tabular ingestion pipeline
//! (CSV loading, binning, min-max normalization, log-transformed targets).

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::krr::DataSet;
use crate::{seed, Error, Points, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionTarget {
    /// `(1 - r)^6 (35 r^2 + 18 r + 3)` on `r = |x| <= 1`, zero outside.
    G1,
    /// `(r - 1)(r - 2)(r - 3)` with `r = |x|`.
    G2,
}

pub fn eval_target(kind: RegressionTarget, x: &[f64]) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    match kind {
        RegressionTarget::G1 => {
            if r > 1.0 {
                0.0
            } else {
                let t = 1.0 - r;
                let t3 = t * t * t;
                t3 * t3 * (35.0 * r * r + 18.0 * r + 3.0)
            }
        }
        RegressionTarget::G2 => (r - 1.0) * (r - 2.0) * (r - 3.0),
    }
}

/// Uniform inputs on `[0, 1]^d` with `y = g(x) + N(0, noise_std^2)`.
/// Also returns the noise-free targets.
pub fn gen_synthetic(
    kind: RegressionTarget,
    n: usize,
    d: usize,
    noise_std: f64,
    seed: u64,
) -> Result<(DataSet, DVector<f64>)> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise std must be >= 0, got {noise_std}")));
    }
    let mut rng = seed::rng(seed);
    let mut inputs = Points::zeros(n, d);
    let mut clean = DVector::zeros(n);
    let mut row = vec![0.0; d];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = rng.random::<f64>();
            inputs[(i, j)] = *v;
        }
        clean[i] = eval_target(kind, &row);
    }
    let outputs = if noise_std == 0.0 {
        clean.clone()
    } else {
        let normal = Normal::new(0.0, noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        clean.map(|c| c + normal.sample(&mut rng))
    };
    Ok((DataSet::new(inputs, outputs)?, clean))
}

/// Column-wise min-max scaling fitted on training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    columns: Vec<usize>,
    extrema: Vec<(f64, f64)>,
}

impl MinMaxScaler {
    pub fn fit(train: &Points, columns: &[usize]) -> Result<Self> {
        let mut extrema = Vec::with_capacity(columns.len());
        for &c in columns {
            if c >= train.ncols() {
                return Err(Error::MissingColumn(format!("#{c}")));
            }
            let col = train.column(c);
            let (lo, hi) = (col.min(), col.max());
            if !(hi > lo) {
                return Err(Error::DegenerateColumn(c));
            }
            extrema.push((lo, hi));
        }
        Ok(Self {
            columns: columns.to_vec(),
            extrema,
        })
    }

    pub fn extrema(&self) -> &[(f64, f64)] {
        &self.extrema
    }

    /// Rescales the fitted columns; values outside the training range are
    /// clamped to `[0, 1]` when `clamp` is set.
    pub fn transform(&self, points: &Points, clamp: bool) -> Points {
        let mut out = points.clone();
        for (&c, &(lo, hi)) in self.columns.iter().zip(&self.extrema) {
            for v in out.column_mut(c).iter_mut() {
                let s = (*v - lo) / (hi - lo);
                *v = if clamp { s.clamp(0.0, 1.0) } else { s };
            }
        }
        out
    }
}

/// Fits min-max extrema on `train` and applies them to both matrices; the test
/// matrix is clamped to `[0, 1]`.
pub fn fit_apply_minmax(train: &Points, test: &Points, columns: &[usize]) -> Result<(Points, Points, MinMaxScaler)> {
    if train.ncols() != test.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train.ncols(),
            found: test.ncols(),
        });
    }
    let scaler = MinMaxScaler::fit(train, columns)?;
    Ok((scaler.transform(train, false), scaler.transform(test, true), scaler))
}

/// Maps values to bin labels. Bin `k` covers `(b_k, b_{k+1}]`, except the
/// first which is closed on the left: `[b_0, b_1]`. A last boundary of
/// `+inf` makes the final bin unbounded.
pub fn bin_column(values: &[f64], boundaries: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    if boundaries.len() < 2 || boundaries.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter(
            "bin boundaries must be strictly increasing with at least two entries".into(),
        ));
    }
    if labels.len() != boundaries.len() - 1 {
        return Err(Error::InvalidParameter(format!(
            "{} labels for {} bins",
            labels.len(),
            boundaries.len() - 1
        )));
    }
    let (low, high) = (boundaries[0], boundaries[boundaries.len() - 1]);
    values
        .iter()
        .map(|&v| {
            if !(v >= low && v <= high) {
                return Err(Error::OutOfRange { value: v, low, high });
            }
            // first upper edge that is >= v
            let k = boundaries[1..].partition_point(|&b| b < v);
            Ok(labels[k])
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinPreset {
    /// Used-car usage time in days.
    UsageTimeDays,
    /// Used-car engine power.
    Power,
}

impl BinPreset {
    pub fn boundaries(self) -> Vec<f64> {
        match self {
            BinPreset::UsageTimeDays => vec![
                0.0,
                90.0,
                180.0,
                365.0,
                730.0,
                1095.0,
                1460.0,
                2190.0,
                3650.0,
                5475.0,
                f64::INFINITY,
            ],
            BinPreset::Power => vec![
                -19.3, 1931.2, 3862.4, 5793.6, 7724.8, 9656.0, 11587.2, 13518.4, 15449.6, 17380.8, 19312.0,
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinEdges {
    Preset {
        preset: BinPreset,
    },
    Explicit {
        boundaries: Vec<f64>,
        /// The last bin extends to `+inf`.
        #[serde(default)]
        open_ended: bool,
        #[serde(default)]
        labels: Option<Vec<f64>>,
    },
}

impl BinEdges {
    pub fn boundaries_and_labels(&self) -> (Vec<f64>, Vec<f64>) {
        let (mut b, labels) = match self {
            BinEdges::Preset { preset } => (preset.boundaries(), None),
            BinEdges::Explicit {
                boundaries,
                open_ended,
                labels,
            } => {
                let mut b = boundaries.clone();
                if *open_ended {
                    b.push(f64::INFINITY);
                }
                (b, labels.clone())
            }
        };
        b.shrink_to_fit();
        let labels = labels.unwrap_or_else(|| (0..b.len().saturating_sub(1)).map(|k| k as f64).collect());
        (b, labels)
    }
}

pub fn log_target(values: &[f64]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|&v| {
            if v > 0.0 {
                Ok(v.ln())
            } else {
                Err(Error::Domain(format!("log transform of non-positive value {v}")))
            }
        })
        .collect()
}

/// A column addressed by header name or zero-based position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "#{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnSelection {
    /// Half-open positional range `[start, end)`.
    Range { range: (usize, usize) },
    List(Vec<ColumnRef>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRule {
    /// Mean of the target columns (e.g. repeated run times).
    #[default]
    Mean,
    First,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default = "default_true")]
    pub has_header: bool,
    pub inputs: ColumnSelection,
    pub targets: ColumnSelection,
    #[serde(default)]
    pub target_rule: TargetRule,
}

/// Parsed table: inputs in schema order, the combined target, and input names.
#[derive(Clone, Debug)]
pub struct Table {
    pub inputs: Points,
    pub target: DVector<f64>,
    pub input_names: Vec<String>,
}

fn resolve(selection: &ColumnSelection, header: Option<&[String]>, width: usize) -> Result<Vec<(usize, String)>> {
    let name_of = |i: usize| header.and_then(|h| h.get(i).cloned()).unwrap_or_else(|| format!("#{i}"));
    let refs: Vec<ColumnRef> = match selection {
        ColumnSelection::Range { range: (a, b) } => (*a..*b).map(ColumnRef::Index).collect(),
        ColumnSelection::List(list) => list.clone(),
    };
    refs.into_iter()
        .map(|r| match &r {
            ColumnRef::Index(i) if *i < width => Ok((*i, name_of(*i))),
            ColumnRef::Name(n) => header
                .and_then(|h| h.iter().position(|c| c.trim() == n))
                .map(|i| (i, n.clone()))
                .ok_or_else(|| Error::MissingColumn(n.clone())),
            _ => Err(Error::MissingColumn(r.to_string())),
        })
        .collect()
}

pub fn load_table(path: &Path, schema: &CsvSchema) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .from_reader(file);
    let header: Option<Vec<String>> = if schema.has_header {
        Some(reader.headers()?.iter().map(|h| h.trim().to_string()).collect())
    } else {
        None
    };
    let records: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>()?;
    let width = header
        .as_ref()
        .map(Vec::len)
        .or_else(|| records.first().map(csv::StringRecord::len))
        .unwrap_or(0);
    if records.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let inputs = resolve(&schema.inputs, header.as_deref(), width)?;
    let targets = resolve(&schema.targets, header.as_deref(), width)?;
    if inputs.is_empty() || targets.is_empty() {
        return Err(Error::Config("schema selects no input or no target columns".into()));
    }
    let first_row = usize::from(schema.has_header) + 1;
    let cell = |rec: &csv::StringRecord, row: usize, (col, name): &(usize, String)| -> Result<f64> {
        let raw = rec.get(*col).map(str::trim).unwrap_or("");
        if raw.is_empty() {
            return Err(Error::Parse {
                row,
                column: name.clone(),
                message: "missing value".into(),
            });
        }
        raw.parse::<f64>().map_err(|_| Error::Parse {
            row,
            column: name.clone(),
            message: format!("`{raw}` is not a number"),
        })
    };
    let mut x = Points::zeros(records.len(), inputs.len());
    let mut y = DVector::zeros(records.len());
    for (i, rec) in records.iter().enumerate() {
        let row = first_row + i;
        for (j, col) in inputs.iter().enumerate() {
            x[(i, j)] = cell(rec, row, col)?;
        }
        let values = targets
            .iter()
            .map(|c| cell(rec, row, c))
            .collect::<Result<Vec<f64>>>()?;
        y[i] = match schema.target_rule {
            TargetRule::Mean => values.iter().sum::<f64>() / values.len() as f64,
            TargetRule::First => values[0],
        };
    }
    Ok(Table {
        inputs: x,
        target: y,
        input_names: inputs.into_iter().map(|(_, n)| n).collect(),
    })
}

/// Reads inputs and the combined target; no transforms are applied.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<DataSet> {
    let t = load_table(path, schema)?;
    DataSet::new(t.inputs, t.target)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRule {
    /// Input column, by header name or by position among the selected inputs.
    pub column: ColumnRef,
    #[serde(flatten)]
    pub edges: BinEdges,
}

fn default_fraction() -> f64 {
    0.5
}

/// Declarative description of a tabular data set and its preprocessing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSchema {
    pub csv: CsvSchema,
    #[serde(default)]
    pub bins: Vec<BinRule>,
    /// Min-max normalize every input column except these.
    #[serde(default)]
    pub skip_normalization: Vec<ColumnRef>,
    #[serde(default)]
    pub log_target: bool,
    /// Fraction of rows drawn as training data in each random division.
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: DataSet,
    pub test_inputs: Points,
    pub test_targets: DVector<f64>,
}

fn input_position(column: &ColumnRef, names: &[String]) -> Result<usize> {
    match column {
        ColumnRef::Index(i) if *i < names.len() => Ok(*i),
        ColumnRef::Name(n) => names
            .iter()
            .position(|c| c == n)
            .ok_or_else(|| Error::MissingColumn(n.clone())),
        other => Err(Error::MissingColumn(other.to_string())),
    }
}

/// Applies a schema to an already loaded table: random train/test division,
/// binning, min-max normalization fitted on the training rows, and the
/// optional log transform of the target.
pub fn prepare_table(table: &Table, schema: &PreprocessSchema, seed: u64) -> Result<PreparedData> {
    let n = table.inputs.nrows();
    let n_train = (schema.train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Split(format!(
            "train fraction {} leaves an empty side for {n} rows",
            schema.train_fraction
        )));
    }
    let mut inputs = table.inputs.clone();
    for rule in &schema.bins {
        let c = input_position(&rule.column, &table.input_names)?;
        let (boundaries, labels) = rule.edges.boundaries_and_labels();
        let column: Vec<f64> = inputs.column(c).iter().copied().collect();
        let binned = bin_column(&column, &boundaries, &labels)?;
        inputs.set_column(c, &DVector::from_vec(binned));
    }
    let target = if schema.log_target {
        DVector::from_vec(log_target(table.target.as_slice())?)
    } else {
        table.target.clone()
    };

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let (train_idx, test_idx) = perm.split_at(n_train);
    let (mut train_idx, mut test_idx) = (train_idx.to_vec(), test_idx.to_vec());
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let skip: Vec<usize> = schema
        .skip_normalization
        .iter()
        .map(|c| input_position(c, &table.input_names))
        .collect::<Result<_>>()?;
    let columns: Vec<usize> = (0..inputs.ncols()).filter(|c| !skip.contains(c)).collect();
    let (x_train, x_test, _) = fit_apply_minmax(
        &inputs.select_rows(&train_idx),
        &inputs.select_rows(&test_idx),
        &columns,
    )?;
    Ok(PreparedData {
        train: DataSet::new(x_train, target.select_rows(&train_idx))?,
        test_inputs: x_test,
        test_targets: target.select_rows(&test_idx),
    })
}

/// Loads the file named by the schema and prepares one random division.
pub fn prepare_csv(path: &Path, schema: &PreprocessSchema, seed: u64) -> Result<PreparedData> {
    prepare_table(&load_table(path, &schema.csv)?, schema, seed)
}

/// Counts of each label, for reporting binned columns.
pub fn label_histogram(labels: &[f64]) -> HashMap<u64, usize> {
    let mut out = HashMap::new();
    for l in labels {
        *out.entry(l.to_bits()).or_insert(0) += 1;
    }
    out
}
