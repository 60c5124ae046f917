//! Versioned binary model artifacts. One container serves both model kinds:
//! a mode byte distinguishes routed (partitioned) models from averaged
//! (split-baseline) models. All integers and floats are little-endian;
//! round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{ParkError, Result};
use crate::estimator::{DncModel, ParkModel};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::local_solver::{LocalModel, NystromSet};
use crate::partition::Partition;

const MAGIC: &[u8; 5] = b"PARK1";
const MODE_ROUTED: u8 = 0;
const MODE_AVERAGED: u8 = 1;
/// Upper bound on any stored count; guards allocation against corrupt files.
const MAX_COUNT: u64 = 1 << 40;

fn family_byte(family: KernelFamily) -> u8 {
    match family {
        KernelFamily::Gaussian => 0,
        KernelFamily::Laplacian => 1,
        KernelFamily::Linear => 2,
    }
}

fn family_from_byte(b: u8) -> Result<KernelFamily> {
    match b {
        0 => Ok(KernelFamily::Gaussian),
        1 => Ok(KernelFamily::Laplacian),
        2 => Ok(KernelFamily::Linear),
        other => Err(parse(format!("unknown kernel family byte {other}"))),
    }
}

fn parse(message: String) -> ParkError {
    ParkError::Parse { line: None, message }
}

pub(crate) fn write_u8(w: &mut impl Write, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_usize_seq(w: &mut impl Write, vals: &[usize]) -> Result<()> {
    for &v in vals {
        write_u64(w, v as u64)?;
    }
    Ok(())
}

pub(crate) fn write_f64_seq<'a>(w: &mut impl Write, vals: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for &v in vals {
        write_f64(w, v)?;
    }
    Ok(())
}

pub(crate) fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_count(r: &mut impl Read, what: &str) -> Result<usize> {
    let v = read_u64(r)?;
    if v > MAX_COUNT {
        return Err(parse(format!("implausible {what} count {v}")));
    }
    Ok(v as usize)
}

fn read_usize_seq(r: &mut impl Read, n: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_u64(r)? as usize);
    }
    Ok(out)
}

fn read_f64_seq(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_f64(r)?);
    }
    Ok(out)
}

fn write_cell(w: &mut impl Write, cell: &LocalModel, t_budget: usize, d: usize) -> Result<()> {
    let mc = cell.nystrom.size();
    if cell.nystrom.points.ncols() != d || cell.coefficients.len() != mc {
        return Err(ParkError::Input("cell model has inconsistent shapes".into()));
    }
    write_f64(w, cell.lambda)?;
    write_u64(w, t_budget as u64)?;
    write_u64(w, cell.iterations as u64)?;
    write_u8(w, u8::from(cell.nystrom.clamped))?;
    write_u64(w, mc as u64)?;
    write_usize_seq(w, &cell.nystrom.center_indices)?;
    write_f64_seq(w, cell.nystrom.points.iter())?;
    write_f64_seq(w, cell.coefficients.iter())?;
    Ok(())
}

fn read_cell(r: &mut impl Read, d: usize) -> Result<(LocalModel, usize)> {
    let lambda = read_f64(r)?;
    let t_budget = read_count(r, "iteration")?;
    let iterations = read_count(r, "iteration")?;
    let clamped = match read_u8(r)? {
        0 => false,
        1 => true,
        other => return Err(parse(format!("invalid clamp flag {other}"))),
    };
    let mc = read_count(r, "center")?;
    let center_indices = read_usize_seq(r, mc)?;
    let points = Array2::from_shape_vec((mc, d), read_f64_seq(r, mc * d)?)
        .map_err(|e| parse(format!("center block shape: {e}")))?;
    let coefficients = Array1::from_vec(read_f64_seq(r, mc)?);
    if coefficients.iter().any(|v| !v.is_finite()) {
        return Err(parse("non-finite coefficients in model file".into()));
    }
    let model = LocalModel {
        nystrom: NystromSet { center_indices, points, clamped },
        coefficients,
        lambda,
        iterations,
    };
    Ok((model, t_budget))
}

fn write_header(w: &mut impl Write, mode: u8, spec: &KernelSpec, d: usize) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u8(w, mode)?;
    write_u8(w, family_byte(spec.family))?;
    write_f64(w, spec.bandwidth)?;
    write_u64(w, d as u64)?;
    Ok(())
}

/// Write a routed model to `path`.
pub fn save_park_model(path: &Path, model: &ParkModel) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let d = model.dim();
    write_header(&mut w, MODE_ROUTED, &model.spec, d)?;
    write_f64(&mut w, model.lambda)?;
    write_u64(&mut w, model.centers as u64)?;
    write_u64(&mut w, model.iterations as u64)?;
    let q = model.num_cells();
    write_u64(&mut w, q as u64)?;
    write_u64(&mut w, model.partition.num_points() as u64)?;
    write_usize_seq(&mut w, &model.partition.centroid_indices)?;
    write_usize_seq(&mut w, &model.partition.assignment)?;
    write_f64_seq(&mut w, model.centroids.iter())?;
    for (i, cell) in model.cells.iter().enumerate() {
        write_cell(&mut w, cell, model.cell_iterations[i], d)?;
    }
    w.flush()?;
    Ok(())
}

/// Write an averaged (split-baseline) model to `path`.
pub fn save_dnc_model(path: &Path, model: &DncModel) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let d = model.dim();
    write_header(&mut w, MODE_AVERAGED, &model.spec, d)?;
    write_f64(&mut w, model.lambda)?;
    write_u64(&mut w, model.centers as u64)?;
    write_u64(&mut w, model.iterations as u64)?;
    let q = model.cells.len();
    write_u64(&mut w, q as u64)?;
    for (i, cell) in model.cells.iter().enumerate() {
        write_u64(&mut w, model.subsets[i].len() as u64)?;
        write_usize_seq(&mut w, &model.subsets[i])?;
        write_cell(&mut w, cell, model.iterations, d)?;
    }
    w.flush()?;
    Ok(())
}

/// A model read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    Routed(ParkModel),
    Averaged(DncModel),
}

impl SavedModel {
    pub fn dim(&self) -> usize {
        match self {
            SavedModel::Routed(m) => m.dim(),
            SavedModel::Averaged(m) => m.dim(),
        }
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        match self {
            SavedModel::Routed(m) => m.predict_one(x),
            SavedModel::Averaged(m) => m.predict_one(x),
        }
    }

    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        match self {
            SavedModel::Routed(m) => m.predict_batch(x),
            SavedModel::Averaged(m) => m.predict_batch(x),
        }
    }
}

/// Read either model kind back from `path`.
pub fn load_model(path: &Path) -> Result<SavedModel> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(parse("not a model file (bad magic)".into()));
    }
    let mode = read_u8(&mut r)?;
    let family = family_from_byte(read_u8(&mut r)?)?;
    let bandwidth = read_f64(&mut r)?;
    let spec = KernelSpec::new(family, bandwidth)?;
    let d = read_count(&mut r, "dimension")?;
    if d == 0 {
        return Err(parse("model dimension must be >= 1".into()));
    }
    let lambda = read_f64(&mut r)?;
    let centers = read_count(&mut r, "center")?;
    let iterations = read_count(&mut r, "iteration")?;
    let q = read_count(&mut r, "cell")?;
    if q == 0 {
        return Err(parse("model must have at least one cell".into()));
    }
    match mode {
        MODE_ROUTED => {
            let n = read_count(&mut r, "point")?;
            let centroid_indices = read_usize_seq(&mut r, q)?;
            let assignment = read_usize_seq(&mut r, n)?;
            let partition = Partition::from_parts(centroid_indices, assignment)
                .map_err(|e| parse(format!("invalid stored partition: {e}")))?;
            let centroids = Array2::from_shape_vec((q, d), read_f64_seq(&mut r, q * d)?)
                .map_err(|e| parse(format!("centroid block shape: {e}")))?;
            let mut cells = Vec::with_capacity(q);
            let mut cell_lambdas = Vec::with_capacity(q);
            let mut cell_centers = Vec::with_capacity(q);
            let mut cell_iterations = Vec::with_capacity(q);
            for _ in 0..q {
                let (cell, t_budget) = read_cell(&mut r, d)?;
                cell_lambdas.push(cell.lambda);
                cell_centers.push(cell.nystrom.size());
                cell_iterations.push(t_budget);
                cells.push(cell);
            }
            Ok(SavedModel::Routed(ParkModel {
                spec,
                partition,
                centroids,
                cells,
                lambda,
                centers,
                iterations,
                cell_lambdas,
                cell_centers,
                cell_iterations,
            }))
        }
        MODE_AVERAGED => {
            let mut subsets = Vec::with_capacity(q);
            let mut cells = Vec::with_capacity(q);
            let mut cell_lambdas = Vec::with_capacity(q);
            let mut cell_centers = Vec::with_capacity(q);
            for _ in 0..q {
                let len = read_count(&mut r, "subset")?;
                subsets.push(read_usize_seq(&mut r, len)?);
                let (cell, _) = read_cell(&mut r, d)?;
                cell_lambdas.push(cell.lambda);
                cell_centers.push(cell.nystrom.size());
                cells.push(cell);
            }
            Ok(SavedModel::Averaged(DncModel {
                spec,
                subsets,
                cells,
                lambda,
                centers,
                iterations,
                cell_lambdas,
                cell_centers,
            }))
        }
        other => Err(parse(format!("unknown model mode byte {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{dnc_train, park_train, ParkConfig};
    use crate::partition::CentroidMode;

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut state = seed;
        let mut vals = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            vals.push((state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0);
        }
        Array2::from_shape_vec((n, d), vals).unwrap()
    }

    fn trained_park() -> (ParkModel, Array2<f64>) {
        let x = random_points(80, 3, 1);
        let y = Array1::from_iter(random_points(80, 1, 2).iter().copied());
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let config = ParkConfig {
            cells: 4,
            lambda: 0.05,
            centers: 24,
            iterations: 15,
            mode: CentroidMode::Greedy,
            seed: 3,
            ..ParkConfig::default()
        };
        let (model, _) = park_train(&x, &y, &spec, &config).unwrap();
        (model, x)
    }

    #[test]
    fn routed_model_round_trips_bit_exactly() {
        let (model, _) = trained_park();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_park_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        let SavedModel::Routed(back) = loaded else {
            panic!("wrong mode");
        };
        assert_eq!(back, model);
        for (a, b) in back.cells.iter().zip(&model.cells) {
            for (x, y) in a.coefficients.iter().zip(b.coefficients.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let queries = random_points(10, 3, 9);
        assert_eq!(
            back.predict_batch(&queries).unwrap(),
            model.predict_batch(&queries).unwrap()
        );
    }

    #[test]
    fn averaged_model_round_trips_bit_exactly() {
        let x = random_points(90, 2, 4);
        let y = Array1::from_iter(random_points(90, 1, 5).iter().copied());
        let spec = KernelSpec::laplacian(1.3).unwrap();
        let config = ParkConfig {
            cells: 3,
            lambda: 0.02,
            centers: 18,
            iterations: 10,
            mode: CentroidMode::Uniform,
            seed: 6,
            ..ParkConfig::default()
        };
        let (model, _) = dnc_train(&x, &y, &spec, &config, 2.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        save_dnc_model(&path, &model).unwrap();
        let SavedModel::Averaged(back) = load_model(&path).unwrap() else {
            panic!("wrong mode");
        };
        assert_eq!(back, model);
        let queries = random_points(10, 2, 9);
        assert_eq!(
            back.predict_batch(&queries).unwrap(),
            model.predict_batch(&queries).unwrap()
        );
    }

    #[test]
    fn save_load_save_produces_identical_bytes() {
        let (model, _) = trained_park();
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.bin");
        let second = dir.path().join("b.bin");
        save_park_model(&first, &model).unwrap();
        let SavedModel::Routed(back) = load_model(&first).unwrap() else {
            panic!("wrong mode");
        };
        save_park_model(&second, &back).unwrap();
        let a = std::fs::read(&first).unwrap();
        let b = std::fs::read(&second).unwrap();
        assert_eq!(a, b, "serialized bytes drifted across a round-trip");
    }

    #[test]
    fn bad_magic_truncation_and_bad_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTAMODEL").unwrap();
        assert!(matches!(load_model(&path), Err(ParkError::Parse { .. })));

        let (model, _) = trained_park();
        let good = dir.path().join("good.bin");
        save_park_model(&good, &model).unwrap();
        let bytes = std::fs::read(&good).unwrap();

        let truncated = dir.path().join("short.bin");
        std::fs::write(&truncated, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&truncated), Err(ParkError::Io(_))));

        let mut corrupt = bytes.clone();
        corrupt[6] = 99; // family byte
        let badfam = dir.path().join("fam.bin");
        std::fs::write(&badfam, &corrupt).unwrap();
        assert!(matches!(load_model(&badfam), Err(ParkError::Parse { .. })));

        let mut badmode = bytes;
        badmode[5] = 7; // mode byte
        let badmode_path = dir.path().join("mode.bin");
        std::fs::write(&badmode_path, &badmode).unwrap();
        assert!(matches!(load_model(&badmode_path), Err(ParkError::Parse { .. })));
    }

    #[test]
    fn exit_codes_distinguish_usage_from_numerical_failures() {
        assert_eq!(parse("x".into()).exit_code(), 2);
        assert_eq!(ParkError::Numerical("x".into()).exit_code(), 3);
    }
}
