//! Built-in data sources: the simulated regression surface with
//! block-correlated Gaussian predictors, the UCI Bike Share loader, and
//! train/valid splitting.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("block correlation must be in [0, 1), got {0}")]
    BadCorrelation(f64),
    #[error("noise standard deviation must be nonnegative, got {0}")]
    BadNoiseSd(f64),
    #[error("split ratio must be in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("non-finite input to the simulation surface")]
    NonFiniteInput,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}` in input file")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    BadRow { line: usize, message: String },
    #[error("input file contains no data rows")]
    EmptyFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Continuous,
}

/// Immutable design matrix plus target. Row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub n_rows: usize,
    pub n_cols: usize,
    pub target: Vec<f64>,
    pub task: Task,
    pub column_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        n_cols: usize,
        target: Vec<f64>,
        task: Task,
        column_names: Vec<String>,
    ) -> Self {
        let n_rows = target.len();
        assert_eq!(features.len(), n_rows * n_cols);
        Self {
            features,
            n_rows,
            n_cols,
            target,
            task,
            column_names,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_rows).map(move |i| self.features[i * self.n_cols + j])
    }

    /// New dataset containing the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.n_cols);
        let mut target = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            target.push(self.target[r]);
        }
        Dataset::new(
            features,
            self.n_cols,
            target,
            self.task,
            self.column_names.clone(),
        )
    }
}

/// Parameters of the simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    /// Within-block correlation of the predictors. The source publication
    /// omits the value; 0.5 is our configurable default.
    pub rho: f64,
    pub noise_sd: f64,
    pub seed: u64,
    /// Train fraction for the deterministic sequential split.
    pub train_ratio: f64,
}

impl SimSpec {
    pub fn new(n: usize, rho: f64, seed: u64) -> Self {
        Self {
            n,
            rho,
            noise_sd: 1.0,
            seed,
            train_ratio: 0.75,
        }
    }
}

pub const SIM_DIM: usize = 15;

/// Alternating 2/3-sized blocks covering the 15 predictors.
const SIM_BLOCKS: [usize; 6] = [2, 3, 2, 3, 2, 3];

/// Shared ten-term template applied to each block of five predictors.
fn sim_g(a: f64, b: f64, c: f64, d: f64, e: f64) -> f64 {
    a.abs() + 0.5 * b - 2.0 * (c.abs() + 1.0).ln()
        + (0.5 * d).exp()
        + 1.0 / (0.5 * e.abs() + 1.0)
        + 1.5 * a * b
        + (a * b * c).abs()
        + 1.5 * ((c + d + e).abs() + 1.0).ln()
        + 0.75 * d.max(e)
        + (0.35 * (e - c)).exp()
}

/// The noiseless regression surface over 15 predictors: the block template
/// at weights 1, 0.7 and 0.4.
pub fn sim_f(x: &[f64; SIM_DIM]) -> Result<f64, DataError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFiniteInput);
    }
    Ok(sim_g(x[0], x[1], x[2], x[3], x[4])
        + 0.7 * sim_g(x[5], x[6], x[7], x[8], x[9])
        + 0.4 * sim_g(x[10], x[11], x[12], x[13], x[14]))
}

/// Generate the simulated dataset and split it train/valid.
pub fn gen_sim(spec: &SimSpec) -> Result<(Dataset, Dataset), DataError> {
    if spec.n < 2 {
        return Err(DataError::TooFewSamples(spec.n));
    }
    if !(0.0..1.0).contains(&spec.rho) {
        return Err(DataError::BadCorrelation(spec.rho));
    }
    if spec.noise_sd < 0.0 {
        return Err(DataError::BadNoiseSd(spec.noise_sd));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut features = Vec::with_capacity(spec.n * SIM_DIM);
    let mut target = Vec::with_capacity(spec.n);
    // Equicorrelated block draw: sqrt(rho) * shared + sqrt(1-rho) * own gives
    // exact pairwise correlation rho within a block.
    let w_shared = spec.rho.sqrt();
    let w_own = (1.0 - spec.rho).sqrt();
    for _ in 0..spec.n {
        let mut x = [0.0f64; SIM_DIM];
        let mut col = 0;
        for &block in &SIM_BLOCKS {
            let shared: f64 = rng.sample(StandardNormal);
            for _ in 0..block {
                let own: f64 = rng.sample(StandardNormal);
                x[col] = w_shared * shared + w_own * own;
                col += 1;
            }
        }
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise_sd;
        target.push(sim_f(&x)? + noise);
        features.extend_from_slice(&x);
    }
    let names = (0..SIM_DIM).map(|i| format!("x{i}")).collect();
    let data = Dataset::new(features, SIM_DIM, target, Task::Continuous, names);
    split(&data, spec.train_ratio, spec.seed, SplitMode::Sequential)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Sequential,
}

/// Disjoint, exhaustive train/valid partition. Train side gets
/// floor(ratio * n) rows.
pub fn split(
    data: &Dataset,
    ratio: f64,
    seed: u64,
    mode: SplitMode,
) -> Result<(Dataset, Dataset), DataError> {
    if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
        return Err(DataError::BadRatio(ratio));
    }
    let n_train = ((data.n_rows as f64) * ratio).floor() as usize;
    let mut order: Vec<usize> = (0..data.n_rows).collect();
    if mode == SplitMode::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    let (train_rows, valid_rows) = order.split_at(n_train);
    Ok((data.select_rows(train_rows), data.select_rows(valid_rows)))
}

/// Predictors retained from the UCI hourly file, in order. `atemp` is a
/// near-duplicate of `temp` and is dropped to reach 11 variables;
/// `instant`, `dteday`, `casual` and `registered` are bookkeeping/leakage.
pub const BIKESHARE_PREDICTORS: [&str; 11] = [
    "season",
    "yr",
    "mnth",
    "hr",
    "holiday",
    "weekday",
    "workingday",
    "weathersit",
    "temp",
    "hum",
    "windspeed",
];

/// Default subsample/split sizes mirroring the published study layout.
pub const BIKESHARE_TRAIN: usize = 9_384;
pub const BIKESHARE_VALID: usize = 3_997;

/// Load the UCI Bike Share `hour.csv` (comma-separated, header row).
///
/// Target is ln(cnt). A seeded random subsample of train+valid rows is taken
/// when the file has more records than the requested split, then numeric
/// features are min-max scaled using train-split statistics.
pub fn load_bikeshare(path: &Path, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    load_bikeshare_sized(path, BIKESHARE_TRAIN, BIKESHARE_VALID, seed)
}

pub fn load_bikeshare_sized(
    path: &Path,
    n_train: usize,
    n_valid: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), DataError> {
    let mut raw = String::new();
    std::fs::File::open(path)?.read_to_string(&mut raw)?;
    let mut reader = csv::Reader::from_reader(raw.as_bytes());
    let headers = reader.headers()?.clone();
    let mut col_idx = Vec::with_capacity(BIKESHARE_PREDICTORS.len());
    for name in BIKESHARE_PREDICTORS {
        let idx = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
        col_idx.push(idx);
    }
    let cnt_idx = headers
        .iter()
        .position(|h| h == "cnt")
        .ok_or_else(|| DataError::MissingColumn("cnt".to_string()))?;

    let mut features = Vec::new();
    let mut target = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let line = row_no + 2; // header is line 1
        let record = record?;
        for &idx in &col_idx {
            let field = record.get(idx).ok_or_else(|| DataError::BadRow {
                line,
                message: "short row".to_string(),
            })?;
            let v: f64 = field.parse().map_err(|_| DataError::BadRow {
                line,
                message: format!("unparseable value `{field}`"),
            })?;
            features.push(v);
        }
        let cnt: f64 = record
            .get(cnt_idx)
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| DataError::BadRow {
                line,
                message: "unparseable cnt".to_string(),
            })?;
        if cnt <= 0.0 {
            return Err(DataError::BadRow {
                line,
                message: format!("cnt must be positive, got {cnt}"),
            });
        }
        target.push(cnt.ln());
    }
    if target.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let names = BIKESHARE_PREDICTORS.iter().map(|s| s.to_string()).collect();
    let full = Dataset::new(
        features,
        BIKESHARE_PREDICTORS.len(),
        target,
        Task::Continuous,
        names,
    );

    let want = (n_train + n_valid).min(full.n_rows);
    let mut order: Vec<usize> = (0..full.n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.truncate(want);
    let subset = full.select_rows(&order);
    let n_train = n_train.min(subset.n_rows.saturating_sub(1));
    let (mut train, mut valid) = {
        let rows: Vec<usize> = (0..subset.n_rows).collect();
        let (tr, va) = rows.split_at(n_train);
        (subset.select_rows(tr), subset.select_rows(va))
    };
    min_max_scale(&mut train, &mut valid);
    Ok((train, valid))
}

/// Scale both splits to [0,1] per column using train statistics.
/// Constant columns are left unchanged.
pub fn min_max_scale(train: &mut Dataset, valid: &mut Dataset) {
    for j in 0..train.n_cols {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in train.column(j) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for i in 0..train.n_rows {
            let v = &mut train.features[i * train.n_cols + j];
            *v = (*v - lo) / range;
        }
        for i in 0..valid.n_rows {
            let v = &mut valid.features[i * valid.n_cols + j];
            *v = (*v - lo) / range;
        }
    }
}

/// Write a dataset as CSV with feature columns followed by `y`.
pub fn write_csv(data: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = data.column_names.clone();
    header.push("y".to_string());
    w.write_record(&header)?;
    for i in 0..data.n_rows {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(data.target[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
