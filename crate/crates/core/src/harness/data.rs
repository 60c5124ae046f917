//! Dataset handling: synthetic fixed-design generation, CSV ingestion, a
//! binary cache format, and train/test splitting.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::GroundTruth;
use crate::error::{ParkError, Result};
use crate::estimator::{derive_seed, gather_rows, gather_vals};
use crate::kernel::KernelSpec;
use crate::model_io::{
    read_count, read_f64, read_u8, write_f64, write_f64_seq, write_u64, write_u8,
};

/// Prediction task carried by a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    /// Labels are +-1; errors are reported as misclassification rates or
    /// ranking losses.
    Binary,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Regression => write!(f, "regression"),
            Task::Binary => write!(f, "binary"),
        }
    }
}

impl FromStr for Task {
    type Err = ParkError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "regression" => Ok(Task::Regression),
            "binary" | "classification" => Ok(Task::Binary),
            other => Err(ParkError::Input(format!(
                "unknown task '{other}' (expected regression|binary)"
            ))),
        }
    }
}

/// A dataset ready for training: features, targets, optional generative
/// ground truth (synthetic data only).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub truth: Option<GroundTruth>,
    pub task: Task,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() == 0 || self.x.ncols() == 0 {
            return Err(ParkError::Input("dataset has no points or no features".into()));
        }
        if self.y.len() != self.x.nrows() {
            return Err(ParkError::Input(format!(
                "{} rows but {} targets",
                self.x.nrows(),
                self.y.len()
            )));
        }
        if self.x.iter().any(|v| !v.is_finite()) || self.y.iter().any(|v| !v.is_finite()) {
            return Err(ParkError::Input("dataset contains non-finite entries".into()));
        }
        if let Some(truth) = &self.truth {
            if truth.values.len() != self.x.nrows() {
                return Err(ParkError::Input(format!(
                    "ground truth carries {} values for {} rows",
                    truth.values.len(),
                    self.x.nrows()
                )));
            }
        }
        if self.task == Task::Binary && self.y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(ParkError::Input("binary task labels must be +-1".into()));
        }
        Ok(())
    }

    /// Split off a random test fraction (rounded to the nearest count, at
    /// least one training point). `fraction = 0` returns the whole set as
    /// training data and an empty test set marker (`None`).
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(ParkError::Input(format!(
                "test fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let n = self.n();
        let test_n = ((n as f64) * test_fraction).round() as usize;
        let test_n = test_n.min(n - 1);
        if test_n == 0 {
            return Ok((self.clone(), None));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x53504c49)); // "SPLI"
        let mut test_idx = rand::seq::index::sample(&mut rng, n, test_n).into_vec();
        test_idx.sort_unstable();
        let mut is_test = vec![false; n];
        for &i in &test_idx {
            is_test[i] = true;
        }
        let train_idx: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
        let subset = |idx: &[usize], suffix: &str| -> Result<Dataset> {
            let truth = match &self.truth {
                Some(t) => Some(GroundTruth::from_parts(
                    t.support_points.clone(),
                    t.weights.clone(),
                    t.sigma,
                    idx.iter().map(|&i| t.values[i]).collect(),
                )?),
                None => None,
            };
            Ok(Dataset {
                name: format!("{}-{suffix}", self.name),
                x: gather_rows(&self.x, idx),
                y: gather_vals(&self.y, idx),
                truth,
                task: self.task,
            })
        };
        Ok((subset(&train_idx, "train")?, Some(subset(&test_idx, "test")?)))
    }
}

/// How blob points are scattered around their centers.
///
/// `Isotropic` blobs carry unit gaussian jitter in every coordinate, so
/// with a linear kernel every cell containing more than `d` points spans
/// all of `R^d` and cells share directions no matter how far apart they
/// sit. `Axis` blobs instead spread along their own coordinate axis only
/// (requires `clusters <= d`): each cell's span is the single axis
/// direction, so distinct cells are exactly orthogonal — the construction
/// to use when a test needs near-orthogonal cell subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BlobArrangement {
    #[default]
    Isotropic,
    Axis,
}

impl FromStr for BlobArrangement {
    type Err = ParkError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "isotropic" => Ok(BlobArrangement::Isotropic),
            "axis" => Ok(BlobArrangement::Axis),
            other => Err(ParkError::Input(format!(
                "unknown blob arrangement '{other}' (expected isotropic or axis)"
            ))),
        }
    }
}

/// Parameters of the synthetic fixed-design generator.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    /// Number of gaussian blobs.
    pub clusters: usize,
    /// Noise standard deviation.
    pub noise: f64,
    /// Distance of each blob center from the origin, in blob-deviation
    /// units (blobs have unit deviation). Small values overlap heavily;
    /// large values give well-separated cells.
    pub separation: f64,
    pub seed: u64,
    /// Fraction of points carrying a nonzero target coefficient.
    pub support_fraction: f64,
    pub task: Task,
    /// Blob scatter shape; `axis` yields exactly orthogonal cell spans.
    #[serde(default)]
    pub arrangement: BlobArrangement,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 1000,
            d: 4,
            clusters: 4,
            noise: 0.3,
            separation: 8.0,
            seed: 0,
            support_fraction: 0.05,
            task: Task::Regression,
            arrangement: BlobArrangement::Isotropic,
        }
    }
}

// Stream tags for the generator's independent random draws.
const STREAM_CENTERS: u64 = 0x424c4f42; // "BLOB"
const STREAM_COORDS: u64 = 0x434f4f52; // "COOR"
const STREAM_SUPPORT: u64 = 0x53555050; // "SUPP"
const STREAM_WEIGHTS: u64 = 0x57454948; // "WEIH"
const STREAM_NOISE: u64 = 0x4e4f4953; // "NOIS"

/// Generate a fixed design of gaussian blobs with a sparse kernel-expansion
/// target of unit norm, plus gaussian observation noise.
///
/// Draw order (fixed for reproducibility): blob centers (axis-aligned for
/// the first `d` blobs, random unit directions after), then point
/// coordinates in row order (round-robin blob membership `i mod clusters`),
/// then the support subset, then raw coefficients, then the noise vector.
pub fn synth_fixed_design(spec: &SynthSpec, kernel: &KernelSpec) -> Result<Dataset> {
    if spec.n == 0 || spec.d == 0 || spec.clusters == 0 {
        return Err(ParkError::Input(
            "synthetic data needs n, d, clusters >= 1".into(),
        ));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(ParkError::Input(format!(
            "noise deviation must be finite and >= 0, got {}",
            spec.noise
        )));
    }
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        return Err(ParkError::Input(format!(
            "separation must be finite and >= 0, got {}",
            spec.separation
        )));
    }
    if !(spec.support_fraction > 0.0 && spec.support_fraction <= 1.0) {
        return Err(ParkError::Input(format!(
            "support fraction must lie in (0, 1], got {}",
            spec.support_fraction
        )));
    }
    if spec.arrangement == BlobArrangement::Axis && spec.clusters > spec.d {
        return Err(ParkError::Input(format!(
            "axis arrangement needs clusters <= d, got {} blobs in {} dimensions",
            spec.clusters, spec.d
        )));
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    // blob centers: coordinate axes first, random directions beyond d
    let mut centers = Array2::zeros((spec.clusters, spec.d));
    let mut center_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_CENTERS));
    for q in 0..spec.clusters {
        if q < spec.d {
            centers[[q, q]] = spec.separation;
        } else {
            let mut dir: Vec<f64> = (0..spec.d).map(|_| unit.sample(&mut center_rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for (j, v) in dir.iter_mut().enumerate() {
                *v /= norm;
                centers[[q, j]] = *v * spec.separation;
            }
        }
    }

    // coordinates: isotropic jitter in every direction, or spread along
    // the blob's own axis only (one draw per point)
    let mut coord_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_COORDS));
    let mut x = Array2::zeros((spec.n, spec.d));
    for i in 0..spec.n {
        let blob = i % spec.clusters;
        match spec.arrangement {
            BlobArrangement::Isotropic => {
                for j in 0..spec.d {
                    x[[i, j]] = centers[[blob, j]] + unit.sample(&mut coord_rng);
                }
            }
            BlobArrangement::Axis => {
                x[[i, blob]] = spec.separation + unit.sample(&mut coord_rng);
            }
        }
    }

    // sparse unit-norm target
    let k = ((spec.n as f64 * spec.support_fraction).round() as usize).clamp(1, spec.n);
    let mut support_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_SUPPORT));
    let mut support = rand::seq::index::sample(&mut support_rng, spec.n, k).into_vec();
    support.sort_unstable();
    let mut weight_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_WEIGHTS));
    let raw: Vec<f64> = (0..k).map(|_| unit.sample(&mut weight_rng)).collect();
    let prelim = GroundTruth::from_support(&x, kernel, &support, &raw, spec.noise)?;
    let norm_sq = prelim.norm_sq(kernel)?;
    if norm_sq <= 1e-24 {
        return Err(ParkError::Numerical(
            "synthetic target collapsed to zero norm".into(),
        ));
    }
    let scale = norm_sq.sqrt().recip();
    let weights: Vec<f64> = raw.iter().map(|w| w * scale).collect();
    let truth = GroundTruth::from_support(&x, kernel, &support, &weights, spec.noise)?;

    // observations
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, STREAM_NOISE));
    let mut y = Array1::zeros(spec.n);
    for i in 0..spec.n {
        let eps = if spec.noise > 0.0 {
            spec.noise * unit.sample(&mut noise_rng)
        } else {
            0.0
        };
        let signal = truth.values[i] + eps;
        y[i] = match spec.task {
            Task::Regression => signal,
            Task::Binary => {
                if signal >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
    }

    let dataset = Dataset {
        name: format!("synth-n{}-d{}-c{}", spec.n, spec.d, spec.clusters),
        x,
        y,
        truth: Some(truth),
        task: spec.task,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Median pairwise euclidean distance over a subsample of at most 1000
/// points; a standard bandwidth heuristic.
pub fn median_heuristic_bandwidth(x: &Array2<f64>, seed: u64) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(ParkError::Input("bandwidth heuristic needs at least 2 points".into()));
    }
    let cap = n.min(1000);
    let idx: Vec<usize> = if cap == n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x42414e44)); // "BAND"
        let mut idx = rand::seq::index::sample(&mut rng, n, cap).into_vec();
        idx.sort_unstable();
        idx
    };
    let sub = gather_rows(x, &idx);
    let mut dists = Vec::with_capacity(cap * (cap - 1) / 2);
    for i in 0..cap {
        for j in (i + 1)..cap {
            let mut acc = 0.0;
            for t in 0..sub.ncols() {
                let diff = sub[[i, t]] - sub[[j, t]];
                acc += diff * diff;
            }
            dists.push(acc.sqrt());
        }
    }
    let mid = dists.len() / 2;
    let (_, median, _) =
        dists.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).expect("finite distances"));
    let median = *median;
    if median <= 0.0 {
        return Err(ParkError::Input(
            "median pairwise distance is zero; set the bandwidth explicitly".into(),
        ));
    }
    Ok(median)
}

// ===== Binary dataset cache =================================================

const DATASET_MAGIC: &[u8; 5] = b"PKDS1";
const FLAG_TRUTH: u8 = 1;

fn task_byte(task: Task) -> u8 {
    match task {
        Task::Regression => 0,
        Task::Binary => 1,
    }
}

fn task_from_byte(b: u8) -> Result<Task> {
    match b {
        0 => Ok(Task::Regression),
        1 => Ok(Task::Binary),
        other => Err(ParkError::Parse {
            line: None,
            message: format!("unknown task byte {other} in dataset cache"),
        }),
    }
}

/// Write a dataset to the binary cache format (magic "PKDS1",
/// little-endian, row-major 64-bit floats). Round-trips are bit-exact.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(DATASET_MAGIC)?;
    write_u8(&mut w, task_byte(dataset.task))?;
    write_u8(&mut w, if dataset.truth.is_some() { FLAG_TRUTH } else { 0 })?;
    write_u64(&mut w, dataset.n() as u64)?;
    write_u64(&mut w, dataset.d() as u64)?;
    let name_bytes = dataset.name.as_bytes();
    write_u64(&mut w, name_bytes.len() as u64)?;
    w.write_all(name_bytes)?;
    write_f64_seq(&mut w, dataset.x.iter())?;
    write_f64_seq(&mut w, dataset.y.iter())?;
    if let Some(truth) = &dataset.truth {
        write_f64(&mut w, truth.sigma)?;
        write_u64(&mut w, truth.support_points.nrows() as u64)?;
        write_f64_seq(&mut w, truth.support_points.iter())?;
        write_f64_seq(&mut w, truth.weights.iter())?;
        write_f64_seq(&mut w, truth.values.iter())?;
    }
    w.flush()?;
    Ok(())
}

fn read_f64_vec(r: &mut impl Read, len: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

/// Load a dataset previously written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(ParkError::Parse {
            line: None,
            message: format!("not a dataset cache: bad magic {magic:?}"),
        });
    }
    let task = task_from_byte(read_u8(&mut r)?)?;
    let flags = read_u8(&mut r)?;
    let n = read_count(&mut r, "point")?;
    let d = read_count(&mut r, "feature")?;
    let name_len = read_count(&mut r, "name byte")?;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let name = String::from_utf8(name_bytes).map_err(|e| ParkError::Parse {
        line: None,
        message: format!("dataset name is not valid utf-8: {e}"),
    })?;
    let x = Array2::from_shape_vec((n, d), read_f64_vec(&mut r, n * d)?)
        .map_err(|e| ParkError::Numerical(e.to_string()))?;
    let y = Array1::from_vec(read_f64_vec(&mut r, n)?);
    let truth = if flags & FLAG_TRUTH != 0 {
        let sigma = read_f64(&mut r)?;
        let k = read_count(&mut r, "support point")?;
        let support = Array2::from_shape_vec((k, d), read_f64_vec(&mut r, k * d)?)
            .map_err(|e| ParkError::Numerical(e.to_string()))?;
        let weights = read_f64_vec(&mut r, k)?;
        let values = read_f64_vec(&mut r, n)?;
        Some(GroundTruth::from_parts(support, weights, sigma, values)?)
    } else {
        None
    };
    let dataset = Dataset { name, x, y, truth, task };
    dataset.validate()?;
    Ok(dataset)
}

/// Sniff a data file: binary cache by magic, CSV otherwise.
pub fn is_dataset_cache(path: &Path) -> Result<bool> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 5];
    match file.read_exact(&mut magic) {
        Ok(()) => Ok(&magic == DATASET_MAGIC),
        Err(_) => Ok(false), // shorter than the magic: not a cache
    }
}

// ===== CSV ingestion ========================================================

/// Column layout of a CSV data file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CsvSchema {
    /// Zero-based index of the target column.
    pub label_column: usize,
    pub delimiter: u8,
    pub has_header: bool,
    pub task: Task,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            label_column: 0,
            delimiter: b',',
            has_header: false,
            task: Task::Regression,
        }
    }
}

/// Read a CSV file into a dataset. Every non-label cell becomes a 64-bit
/// feature; binary labels are mapped to +-1 (smaller value negative).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter)
        .has_headers(schema.has_header)
        .flexible(false)
        .from_reader(BufReader::new(file));
    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut width: Option<usize> = None;
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx as u64 + 1 + u64::from(schema.has_header);
        let record = record.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line())
                .unwrap_or(line);
            ParkError::Parse { line: Some(line), message: e.to_string() }
        })?;
        if schema.label_column >= record.len() {
            return Err(ParkError::Parse {
                line: Some(line),
                message: format!(
                    "label column {} out of range for {} fields",
                    schema.label_column,
                    record.len()
                ),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(ParkError::Parse {
                    line: Some(line),
                    message: format!("ragged row: {} fields, expected {w}", record.len()),
                });
            }
            _ => {}
        }
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| ParkError::Parse {
                line: Some(line),
                message: format!("non-numeric cell '{}' in column {col}", cell.trim()),
            })?;
            if col == schema.label_column {
                labels.push(value);
            } else {
                features.push(value);
            }
        }
    }
    let n = labels.len();
    let Some(width) = width else {
        return Err(ParkError::Parse { line: None, message: "empty data file".into() });
    };
    if width < 2 {
        return Err(ParkError::Parse {
            line: None,
            message: "need at least one feature column besides the label".into(),
        });
    }
    let d = width - 1;
    let x = Array2::from_shape_vec((n, d), features)
        .map_err(|e| ParkError::Numerical(e.to_string()))?;
    let mut y = Array1::from_vec(labels);
    if schema.task == Task::Binary {
        let mut distinct: Vec<f64> = Vec::new();
        for &v in y.iter() {
            if !distinct.iter().any(|&u| u == v) {
                distinct.push(v);
            }
            if distinct.len() > 2 {
                return Err(ParkError::Parse {
                    line: None,
                    message: "binary task needs exactly two distinct label values".into(),
                });
            }
        }
        if distinct.len() < 2 {
            return Err(ParkError::Parse {
                line: None,
                message: "binary task needs exactly two distinct label values".into(),
            });
        }
        distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite labels"));
        y.mapv_inplace(|v| if v == distinct[0] { -1.0 } else { 1.0 });
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    let dataset = Dataset { name, x, y, truth: None, task: schema.task };
    dataset.validate()?;
    Ok(dataset)
}
