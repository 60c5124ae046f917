//! The partitioned estimator: centroid selection + assignment, per-cell
//! sketched solvers with cell-proportional hyperparameters, single-cell
//! routing at prediction time, and two reference baselines (exact kernel
//! ridge regression and divide-and-conquer averaging over a random split).

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ParkError, Result};
use crate::kernel::{rows_of, KernelSpec};
use crate::local_solver::{
    build_preconditioner, pcg_train, sample_nystrom, LocalModel, DEFAULT_BLOCK_ROWS,
};
use crate::parallel;
use crate::partition::{build_partition, CentroidMode, Partition, PartitionStats};
#[cfg(test)]
use crate::partition::assign;

/// Stateless 64-bit mixer used to derive independent seed streams.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seed for stream `stream` derived from `base`; stable across runs and
/// independent of evaluation order. The mixer is a bijection composed with
/// xor, so distinct streams of one base never collide.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// Copy the selected rows of `x` into a fresh row-major matrix.
pub(crate) fn gather_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let d = x.ncols();
    let mut out = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        out.extend(x.row(i).iter().copied());
    }
    Array2::from_shape_vec((idx.len(), d), out)
        .expect("gathered matrix shape follows from construction")
}

pub(crate) fn gather_vals(y: &Array1<f64>, idx: &[usize]) -> Array1<f64> {
    Array1::from_iter(idx.iter().map(|&i| y[i]))
}

/// Training configuration for the partitioned estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParkConfig {
    /// Number of cells Q.
    pub cells: usize,
    /// Global regularization; each cell gets lambda / rho_q.
    pub lambda: f64,
    /// Global center budget; each cell gets ceil(m * rho_q), capped at its
    /// size.
    pub centers: usize,
    /// Conjugate-gradient iterations per cell.
    pub iterations: usize,
    pub mode: CentroidMode,
    pub seed: u64,
    /// Rows per streamed kernel-block product.
    pub block_rows: usize,
    /// Train cells concurrently. Off by default so timing comparisons
    /// against the baselines stay sequential-to-sequential.
    pub parallel_cells: bool,
}

impl Default for ParkConfig {
    fn default() -> Self {
        ParkConfig {
            cells: 1,
            lambda: 1e-3,
            centers: 1,
            iterations: 20,
            mode: CentroidMode::Greedy,
            seed: 0,
            block_rows: DEFAULT_BLOCK_ROWS,
            parallel_cells: false,
        }
    }
}

impl ParkConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if self.cells == 0 || self.cells > n {
            return Err(ParkError::Input(format!(
                "cell count must satisfy 1 <= Q <= n, got Q = {}, n = {n}",
                self.cells
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(ParkError::Input(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.centers < self.cells {
            return Err(ParkError::Input(format!(
                "center budget m = {} must be >= Q = {} so every cell keeps a center",
                self.centers, self.cells
            )));
        }
        if self.iterations == 0 {
            return Err(ParkError::Input("iteration budget must be >= 1".into()));
        }
        if self.block_rows == 0 {
            return Err(ParkError::Input("block size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cell-proportional hyperparameters: lambda_q = lambda / rho_q and
/// m_q = min(ceil(m * rho_q), n_q), floored at one center.
pub fn scale_hyperparameters(
    lambda: f64,
    m: usize,
    partition: &Partition,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if !(lambda > 0.0) {
        return Err(ParkError::Input(format!("lambda must be positive, got {lambda}")));
    }
    if m == 0 {
        return Err(ParkError::Input("center budget must be >= 1".into()));
    }
    let mut lambdas = Vec::with_capacity(partition.num_cells());
    let mut centers = Vec::with_capacity(partition.num_cells());
    for (q, cell) in partition.cells.iter().enumerate() {
        let rho = partition.cell_fractions[q];
        lambdas.push(lambda / rho);
        let scaled = (m as f64 * rho).ceil() as usize;
        centers.push(scaled.clamp(1, cell.len()));
    }
    Ok((lambdas, centers))
}

/// Wall-clock breakdown of a training run, split the same way benchmark
/// tables report it: partition construction (init) versus solver work
/// (train).
#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainReport {
    pub init_seconds: f64,
    pub train_seconds: f64,
    pub cell_train_seconds: Vec<f64>,
    pub partition_stats: PartitionStats,
}

/// A trained partitioned model: routing data plus one local model per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ParkModel {
    pub spec: KernelSpec,
    pub partition: Partition,
    /// Centroid coordinates, one row per cell, enabling routing without the
    /// training set.
    pub centroids: Array2<f64>,
    pub cells: Vec<LocalModel>,
    pub lambda: f64,
    pub centers: usize,
    pub iterations: usize,
    pub cell_lambdas: Vec<f64>,
    pub cell_centers: Vec<usize>,
    pub cell_iterations: Vec<usize>,
}

impl ParkModel {
    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(ParkError::Input(format!(
                "query has dimension {got}, model expects {}",
                self.dim()
            )));
        }
        Ok(())
    }

    fn route_raw(&self, x: &[f64]) -> usize {
        let d = self.dim();
        let cs = self
            .centroids
            .as_slice()
            .expect("centroid matrix is owned row-major by construction");
        let mut best_q = 0usize;
        let mut best_d = f64::INFINITY;
        for q in 0..self.centroids.nrows() {
            let dist = self.spec.rkhs_dist_sq_raw(x, &cs[q * d..(q + 1) * d]);
            if dist < best_d {
                best_d = dist;
                best_q = q;
            }
        }
        best_q
    }

    /// Cell a query falls in: nearest centroid in the feature-space metric,
    /// ties to the smallest cell id.
    pub fn route(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x.len())?;
        Ok(self.route_raw(x))
    }

    /// Predict at one point: route to a single cell and evaluate only that
    /// cell's expansion.
    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let q = self.route_raw(x);
        Ok(self.cells[q].predict_unchecked(&self.spec, x))
    }

    /// Batch prediction; identical to calling [`predict_one`] per row.
    ///
    /// [`predict_one`]: ParkModel::predict_one
    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_dim(x.ncols())?;
        let xs = rows_of(x)?;
        let d = self.dim();
        let out = parallel::map_indexed(x.nrows(), |i| {
            let xi = &xs[i * d..(i + 1) * d];
            self.cells[self.route_raw(xi)].predict_unchecked(&self.spec, xi)
        });
        Ok(Array1::from_vec(out))
    }
}

/// Train one cell: sample centers, factor the preconditioner, run the
/// sketched solver. Returns the model and the wall-clock seconds spent.
#[allow(clippy::too_many_arguments)]
fn train_cell(
    x: &Array2<f64>,
    y: &Array1<f64>,
    cell_indices: &[usize],
    spec: &KernelSpec,
    lambda_q: f64,
    m_q: usize,
    t_q: usize,
    seed_q: u64,
    block_rows: usize,
) -> Result<(LocalModel, f64)> {
    let started = Instant::now();
    let x_q = gather_rows(x, cell_indices);
    let y_q = gather_vals(y, cell_indices);
    let centers = sample_nystrom(x, cell_indices, m_q, seed_q)?;
    let km = spec.gram(&centers.points, &centers.points)?;
    let pre = build_preconditioner(&km, cell_indices.len(), centers.size(), lambda_q)?;
    let model = pcg_train(&x_q, &y_q, centers, &pre, spec, lambda_q, t_q, block_rows)?;
    Ok((model, started.elapsed().as_secs_f64()))
}

/// Train the partitioned estimator: select centroids, assign points, then
/// fit one sketched local solver per cell with cell-proportional
/// hyperparameters. Cell RNG streams derive from (seed, cell id), so
/// sequential and concurrent cell training produce identical models.
pub fn park_train(
    x: &Array2<f64>,
    y: &Array1<f64>,
    spec: &KernelSpec,
    config: &ParkConfig,
) -> Result<(ParkModel, TrainReport)> {
    let n = x.nrows();
    if y.len() != n {
        return Err(ParkError::Input(format!("{} points but {} labels", n, y.len())));
    }
    config.validate(n)?;

    let init_started = Instant::now();
    let (partition, partition_stats) =
        build_partition(x, spec, config.cells, config.mode, config.seed)?;
    let (cell_lambdas, cell_centers) =
        scale_hyperparameters(config.lambda, config.centers, &partition)?;
    let cell_iterations = vec![config.iterations; partition.num_cells()];
    let init_seconds = init_started.elapsed().as_secs_f64();

    let train_started = Instant::now();
    let trained: Vec<(LocalModel, f64)> =
        parallel::try_map_indexed(partition.num_cells(), config.parallel_cells, |q| {
            train_cell(
                x,
                y,
                &partition.cells[q],
                spec,
                cell_lambdas[q],
                cell_centers[q],
                cell_iterations[q],
                derive_seed(config.seed, q as u64),
                config.block_rows,
            )
        })?;
    let train_seconds = train_started.elapsed().as_secs_f64();

    let mut cells = Vec::with_capacity(trained.len());
    let mut cell_train_seconds = Vec::with_capacity(trained.len());
    for (model, secs) in trained {
        cells.push(model);
        cell_train_seconds.push(secs);
    }
    let centroids = gather_rows(x, &partition.centroid_indices);
    let model = ParkModel {
        spec: *spec,
        partition,
        centroids,
        cells,
        lambda: config.lambda,
        centers: config.centers,
        iterations: config.iterations,
        cell_lambdas,
        cell_centers,
        cell_iterations,
    };
    let report = TrainReport {
        init_seconds,
        train_seconds,
        cell_train_seconds,
        partition_stats,
    };
    Ok((model, report))
}

/// Prediction through the routed single-cell path.
pub fn park_predict(model: &ParkModel, x: &[f64]) -> Result<f64> {
    model.predict_one(x)
}

/// Exact kernel ridge regression packaged as a single-cell model, so the
/// harness can time and serialize it through one interface.
pub fn krr_train(
    x: &Array2<f64>,
    y: &Array1<f64>,
    spec: &KernelSpec,
    lambda: f64,
) -> Result<(ParkModel, TrainReport)> {
    let n = x.nrows();
    let started = Instant::now();
    let alpha = crate::local_solver::exact_krr(x, y, spec, lambda)?;
    let elapsed = started.elapsed().as_secs_f64();
    let (partition, partition_stats) =
        build_partition(x, spec, 1, CentroidMode::Uniform, 0)?;
    let all: Vec<usize> = (0..n).collect();
    let centers = sample_nystrom(x, &all, n, 0)?;
    let local = LocalModel {
        nystrom: centers,
        coefficients: alpha,
        lambda,
        iterations: 0,
    };
    let centroids = gather_rows(x, &partition.centroid_indices);
    let model = ParkModel {
        spec: *spec,
        partition,
        centroids,
        cells: vec![local],
        lambda,
        centers: n,
        iterations: 0,
        cell_lambdas: vec![lambda],
        cell_centers: vec![n],
        cell_iterations: vec![0],
    };
    let report = TrainReport {
        init_seconds: 0.0,
        train_seconds: elapsed,
        cell_train_seconds: vec![elapsed],
        partition_stats,
    };
    Ok((model, report))
}

/// Divide-and-conquer baseline: a uniform random split into Q near-equal
/// subsets, one sketched solver per subset, predictions averaged over all
/// of them (every subset model is evaluated, unlike the routed estimator).
#[derive(Debug, Clone, PartialEq)]
pub struct DncModel {
    pub spec: KernelSpec,
    /// Disjoint training-row subsets, each sorted ascending.
    pub subsets: Vec<Vec<usize>>,
    pub cells: Vec<LocalModel>,
    pub lambda: f64,
    pub centers: usize,
    pub iterations: usize,
    pub cell_lambdas: Vec<f64>,
    pub cell_centers: Vec<usize>,
}

impl DncModel {
    pub fn dim(&self) -> usize {
        self.cells[0].nystrom.points.ncols()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(ParkError::Input(format!(
                "query has dimension {got}, model expects {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Mean of the per-subset predictions, accumulated in subset order.
    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(self.predict_raw(x))
    }

    fn predict_raw(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for cell in &self.cells {
            acc += cell.predict_unchecked(&self.spec, x);
        }
        acc / self.cells.len() as f64
    }

    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_dim(x.ncols())?;
        let xs = rows_of(x)?;
        let d = self.dim();
        let out = parallel::map_indexed(x.nrows(), |i| self.predict_raw(&xs[i * d..(i + 1) * d]));
        Ok(Array1::from_vec(out))
    }
}

/// Train the averaging baseline. `center_multiplier` inflates each subset's
/// center count (1.0 reproduces the plain proportional rule).
pub fn dnc_train(
    x: &Array2<f64>,
    y: &Array1<f64>,
    spec: &KernelSpec,
    config: &ParkConfig,
    center_multiplier: f64,
) -> Result<(DncModel, TrainReport)> {
    let n = x.nrows();
    if y.len() != n {
        return Err(ParkError::Input(format!("{} points but {} labels", n, y.len())));
    }
    config.validate(n)?;
    if !(center_multiplier > 0.0 && center_multiplier.is_finite()) {
        return Err(ParkError::Input(format!(
            "center multiplier must be positive and finite, got {center_multiplier}"
        )));
    }

    let init_started = Instant::now();
    let q = config.cells;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x5b1f7));
    order.shuffle(&mut rng);
    let base = n / q;
    let extra = n % q;
    let mut subsets = Vec::with_capacity(q);
    let mut cursor = 0usize;
    for i in 0..q {
        let size = base + usize::from(i < extra);
        let mut subset = order[cursor..cursor + size].to_vec();
        subset.sort_unstable();
        subsets.push(subset);
        cursor += size;
    }
    let mut cell_lambdas = Vec::with_capacity(q);
    let mut cell_centers = Vec::with_capacity(q);
    for subset in &subsets {
        let rho = subset.len() as f64 / n as f64;
        cell_lambdas.push(config.lambda / rho);
        let scaled = (center_multiplier * config.centers as f64 * rho).ceil() as usize;
        cell_centers.push(scaled.clamp(1, subset.len()));
    }
    let init_seconds = init_started.elapsed().as_secs_f64();

    let train_started = Instant::now();
    let trained: Vec<(LocalModel, f64)> =
        parallel::try_map_indexed(q, config.parallel_cells, |i| {
            train_cell(
                x,
                y,
                &subsets[i],
                spec,
                cell_lambdas[i],
                cell_centers[i],
                config.iterations,
                derive_seed(config.seed, i as u64),
                config.block_rows,
            )
        })?;
    let train_seconds = train_started.elapsed().as_secs_f64();

    let mut cells = Vec::with_capacity(trained.len());
    let mut cell_train_seconds = Vec::with_capacity(trained.len());
    for (model, secs) in trained {
        cells.push(model);
        cell_train_seconds.push(secs);
    }
    let model = DncModel {
        spec: *spec,
        subsets,
        cells,
        lambda: config.lambda,
        centers: config.centers,
        iterations: config.iterations,
        cell_lambdas,
        cell_centers,
    };
    let report = TrainReport {
        init_seconds,
        train_seconds,
        cell_train_seconds,
        partition_stats: PartitionStats {
            requested_cells: q,
            dropped_empty_cells: 0,
            cell_sizes: model.subsets.iter().map(Vec::len).collect(),
        },
    };
    Ok((model, report))
}

/// Prediction through the subset-averaging path.
pub fn dnc_predict(model: &DncModel, x: &[f64]) -> Result<f64> {
    model.predict_one(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{kernel_expansion, row};
    use crate::local_solver::exact_krr;

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut state = seed;
        let mut vals = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            vals.push((state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0);
        }
        Array2::from_shape_vec((n, d), vals).unwrap()
    }

    fn random_labels(n: usize, seed: u64) -> Array1<f64> {
        let v = random_points(n, 1, seed);
        Array1::from_iter(v.iter().copied())
    }

    fn rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        let num = (a - b).mapv(|v| v * v).sum().sqrt();
        let den = b.mapv(|v| v * v).sum().sqrt();
        num / den.max(f64::MIN_POSITIVE)
    }

    fn base_config(cells: usize, centers: usize) -> ParkConfig {
        ParkConfig {
            cells,
            lambda: 0.05,
            centers,
            iterations: 20,
            mode: CentroidMode::Greedy,
            seed: 7,
            ..ParkConfig::default()
        }
    }

    #[test]
    fn single_cell_full_budget_matches_exact_krr() {
        let x = random_points(80, 3, 1);
        let y = random_labels(80, 2);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let config = ParkConfig {
            cells: 1,
            lambda: 1e-2,
            centers: 80,
            iterations: 100,
            ..base_config(1, 80)
        };
        let (model, report) = park_train(&x, &y, &spec, &config).unwrap();
        let alpha = exact_krr(&x, &y, &spec, 1e-2).unwrap();
        let pred_park = model.predict_batch(&x).unwrap();
        let pred_krr = kernel_expansion(&spec, &x, &alpha, &x).unwrap();
        let rel = rel_err(&pred_park, &pred_krr);
        assert!(rel <= 1e-6, "reduction error {rel}");
        assert!(report.init_seconds >= 0.0 && report.train_seconds >= 0.0);
        assert_eq!(report.cell_train_seconds.len(), 1);
    }

    #[test]
    fn two_blob_cells_train_only_on_their_own_blob() {
        let n = 60;
        let base = random_points(n, 2, 9);
        let mut pts = Vec::with_capacity(n * 2);
        for i in 0..n {
            let offset = if i % 2 == 0 { 0.0 } else { 10.0 };
            pts.push(base[[i, 0]] * 0.2 + offset);
            pts.push(base[[i, 1]] * 0.2);
        }
        let x = Array2::from_shape_vec((n, 2), pts).unwrap();
        let y = random_labels(n, 10);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let config = base_config(2, 20);
        let (model, _) = park_train(&x, &y, &spec, &config).unwrap();
        assert_eq!(model.num_cells(), 2);
        // every cell is pure: all member points share one blob
        for cell in &model.partition.cells {
            let blob = cell[0] % 2;
            assert!(cell.iter().all(|&i| i % 2 == blob), "mixed cell");
        }
        // and each cell's centers are drawn from its own members
        for (q, local) in model.cells.iter().enumerate() {
            for (pos, &ci) in local.nystrom.center_indices.iter().enumerate() {
                let global = model.partition.cells[q][ci];
                assert_eq!(local.nystrom.points.row(pos), x.row(global));
            }
        }
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let x = random_points(90, 3, 11);
        let y = random_labels(90, 12);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let config = base_config(4, 24);
        let (a, _) = park_train(&x, &y, &spec, &config).unwrap();
        let (b, _) = park_train(&x, &y, &spec, &config).unwrap();
        assert_eq!(a.partition, b.partition);
        for (ca, cb) in a.cells.iter().zip(&b.cells) {
            assert_eq!(ca.coefficients, cb.coefficients, "coefficients drifted");
            assert_eq!(ca.nystrom, cb.nystrom);
        }
    }

    #[test]
    fn parallel_and_sequential_cell_training_agree_bitwise() {
        let x = random_points(90, 3, 13);
        let y = random_labels(90, 14);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let seq = base_config(4, 24);
        let par = ParkConfig { parallel_cells: true, ..seq.clone() };
        let (a, _) = park_train(&x, &y, &spec, &seq).unwrap();
        let (b, _) = park_train(&x, &y, &spec, &par).unwrap();
        for (ca, cb) in a.cells.iter().zip(&b.cells) {
            assert_eq!(ca.coefficients, cb.coefficients, "schedules diverged");
        }
        let q = random_points(10, 3, 15);
        assert_eq!(a.predict_batch(&q).unwrap(), b.predict_batch(&q).unwrap());
    }

    #[test]
    fn centroids_route_to_their_own_cells() {
        let x = random_points(70, 2, 17);
        let y = random_labels(70, 18);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (model, _) = park_train(&x, &y, &spec, &base_config(5, 20)).unwrap();
        for (k, &ci) in model.partition.centroid_indices.iter().enumerate() {
            let point: Vec<f64> = x.row(ci).iter().copied().collect();
            assert_eq!(model.route(&point).unwrap(), k, "centroid {k} misrouted");
            let direct = model.cells[k].predict_one(&spec, &point).unwrap();
            assert_eq!(model.predict_one(&point).unwrap(), direct);
        }
    }

    #[test]
    fn batch_prediction_equals_per_point_loop() {
        let x = random_points(80, 3, 19);
        let y = random_labels(80, 20);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (model, _) = park_train(&x, &y, &spec, &base_config(4, 20)).unwrap();
        let queries = random_points(25, 3, 21);
        let batch = model.predict_batch(&queries).unwrap();
        for i in 0..25 {
            let single = model.predict_one(queries.row(i).as_slice().unwrap()).unwrap();
            assert_eq!(batch[i], single, "query {i}");
            assert_eq!(park_predict(&model, queries.row(i).as_slice().unwrap()).unwrap(), single);
        }
    }

    #[test]
    fn prediction_evaluates_exactly_one_cell() {
        let x = random_points(60, 2, 23);
        let y = random_labels(60, 24);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (model, _) = park_train(&x, &y, &spec, &base_config(4, 16)).unwrap();
        let queries = random_points(12, 2, 25);
        for i in 0..12 {
            let point: Vec<f64> = queries.row(i).iter().copied().collect();
            let routed = model.route(&point).unwrap();
            // poison every other cell: any stray evaluation turns the output
            // non-finite
            let mut poisoned = model.clone();
            for (q, cell) in poisoned.cells.iter_mut().enumerate() {
                if q != routed {
                    cell.coefficients.fill(f64::NAN);
                }
            }
            let out = poisoned.predict_one(&point).unwrap();
            assert!(out.is_finite(), "query {i} touched a foreign cell");
            assert_eq!(out, model.predict_one(&point).unwrap());
        }
    }

    #[test]
    fn stored_assignment_matches_post_hoc_reassignment() {
        let x = random_points(100, 3, 27);
        let y = random_labels(100, 28);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (model, _) = park_train(&x, &y, &spec, &base_config(6, 24)).unwrap();
        let again = assign(&x, &model.partition.centroid_indices, &spec).unwrap();
        assert_eq!(model.partition.assignment, again);
    }

    #[test]
    fn scaling_on_equal_cells_is_uniform() {
        let assignment: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let partition = Partition::from_parts(vec![0, 1, 2, 3], assignment).unwrap();
        let (lambdas, centers) = scale_hyperparameters(0.01, 10, &partition).unwrap();
        for q in 0..4 {
            assert!((lambdas[q] - 0.04).abs() < 1e-15);
            assert_eq!(centers[q], 3); // ceil(10/4)
        }
    }

    #[test]
    fn scaling_single_cell_is_identity_with_cap() {
        let partition = Partition::from_parts(vec![0], vec![0; 30]).unwrap();
        let (lambdas, centers) = scale_hyperparameters(0.2, 50, &partition).unwrap();
        assert!((lambdas[0] - 0.2).abs() < 1e-15);
        assert_eq!(centers[0], 30);
    }

    #[test]
    fn scaling_ceiling_bookkeeping_stays_in_range() {
        let x = random_points(200, 2, 29);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        for seed in 0..20u64 {
            let (p, _) = build_partition(&x, &spec, 7, CentroidMode::Uniform, seed).unwrap();
            for m in [7usize, 20, 63, 200] {
                let (_, centers) = scale_hyperparameters(0.1, m, &p).unwrap();
                let total: usize = centers.iter().sum();
                assert!(total >= m, "seed {seed}, m {m}: sum {total} < m");
                assert!(total <= m + p.num_cells(), "seed {seed}, m {m}: sum {total} > m+Q");
            }
        }
    }

    #[test]
    fn predictions_survive_training_row_permutation() {
        // Tie-free setting (linear kernel, distinct norms) with full center
        // budget, so the model is permutation-insensitive up to round-off.
        // The dimension exceeds every cell size, keeping the per-cell Gram
        // blocks full-rank for this kernel.
        let n = 60;
        let x = random_points(n, 24, 31);
        let y = random_labels(n, 32);
        let spec = KernelSpec::linear();
        let config = ParkConfig {
            cells: 3,
            lambda: 0.5,
            centers: n,
            iterations: 40,
            ..base_config(3, n)
        };
        let (model, _) = park_train(&x, &y, &spec, &config).unwrap();
        let shift = 13usize;
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let xp = gather_rows(&x, &perm);
        let yp = gather_vals(&y, &perm);
        let (model_p, _) = park_train(&xp, &yp, &spec, &config).unwrap();
        let queries = random_points(20, 24, 33);
        let a = model.predict_batch(&queries).unwrap();
        let b = model_p.predict_batch(&queries).unwrap();
        let rel = rel_err(&a, &b);
        assert!(rel <= 1e-8, "permutation moved predictions by {rel}");
    }

    #[test]
    fn dnc_single_subset_equals_single_cell_model() {
        let x = random_points(70, 3, 35);
        let y = random_labels(70, 36);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let config = ParkConfig { cells: 1, centers: 20, ..base_config(1, 20) };
        let (dnc, _) = dnc_train(&x, &y, &spec, &config, 1.0).unwrap();
        let (park, _) = park_train(&x, &y, &spec, &config).unwrap();
        assert_eq!(dnc.subsets[0], (0..70).collect::<Vec<_>>());
        assert_eq!(dnc.cells[0].coefficients, park.cells[0].coefficients);
        let queries = random_points(15, 3, 37);
        assert_eq!(
            dnc.predict_batch(&queries).unwrap(),
            park.predict_batch(&queries).unwrap()
        );
    }

    #[test]
    fn dnc_split_is_balanced_disjoint_and_reproducible() {
        let x = random_points(103, 2, 39);
        let y = random_labels(103, 40);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let config = base_config(4, 40);
        let (a, _) = dnc_train(&x, &y, &spec, &config, 1.0).unwrap();
        let (b, _) = dnc_train(&x, &y, &spec, &config, 1.0).unwrap();
        assert_eq!(a.subsets, b.subsets);
        let mut seen = vec![false; 103];
        for subset in &a.subsets {
            let size = subset.len();
            assert!(size == 25 || size == 26, "unbalanced subset of {size}");
            assert!(subset.windows(2).all(|w| w[0] < w[1]), "subset not sorted");
            for &i in subset {
                assert!(!seen[i], "row {i} in two subsets");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn dnc_prediction_is_mean_of_subset_predictions() {
        let x = random_points(80, 3, 41);
        let y = random_labels(80, 42);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (model, _) = dnc_train(&x, &y, &spec, &base_config(4, 32), 1.0).unwrap();
        let queries = random_points(10, 3, 43);
        for i in 0..10 {
            let point: Vec<f64> = queries.row(i).iter().copied().collect();
            let mut acc = 0.0;
            for cell in &model.cells {
                acc += cell.predict_one(&spec, &point).unwrap();
            }
            let want = acc / model.cells.len() as f64;
            assert_eq!(model.predict_one(&point).unwrap(), want, "query {i}");
            assert_eq!(dnc_predict(&model, &point).unwrap(), want);
        }
    }

    #[test]
    fn dnc_identical_subset_models_average_to_themselves() {
        let x = random_points(30, 2, 45);
        let y = random_labels(30, 46);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (mut model, _) = dnc_train(&x, &y, &spec, &base_config(3, 12), 1.0).unwrap();
        let clone = model.cells[0].clone();
        model.cells = vec![clone.clone(), clone.clone(), clone.clone()];
        let q = [0.1, -0.7];
        let single = clone.predict_one(&spec, &q).unwrap();
        let avg = model.predict_one(&q).unwrap();
        assert!((avg - single).abs() <= 1e-12 * single.abs().max(1.0));
    }

    #[test]
    fn dnc_center_multiplier_inflates_center_counts() {
        let x = random_points(120, 2, 47);
        let y = random_labels(120, 48);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let config = base_config(4, 24);
        let (v1, _) = dnc_train(&x, &y, &spec, &config, 1.0).unwrap();
        let (v2, _) = dnc_train(&x, &y, &spec, &config, 2.0).unwrap();
        for (i, subset) in v1.subsets.iter().enumerate() {
            let rho = subset.len() as f64 / 120.0;
            let want1 = ((24.0 * rho).ceil() as usize).clamp(1, subset.len());
            let want2 = ((2.0 * 24.0 * rho).ceil() as usize).clamp(1, subset.len());
            assert_eq!(v1.cell_centers[i], want1);
            assert_eq!(v2.cell_centers[i], want2);
            assert_eq!(v1.cells[i].nystrom.size(), want1);
            assert_eq!(v2.cells[i].nystrom.size(), want2);
        }
    }

    #[test]
    fn invalid_configurations_are_rejected_as_input_errors() {
        let x = random_points(20, 2, 49);
        let y = random_labels(20, 50);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let bad = [
            ParkConfig { cells: 0, ..base_config(1, 5) },
            ParkConfig { cells: 21, ..base_config(1, 25) },
            ParkConfig { lambda: 0.0, ..base_config(2, 5) },
            ParkConfig { lambda: -1.0, ..base_config(2, 5) },
            ParkConfig { centers: 1, ..base_config(2, 1) },
            ParkConfig { iterations: 0, ..base_config(2, 5) },
            ParkConfig { block_rows: 0, ..base_config(2, 5) },
        ];
        for config in bad {
            match park_train(&x, &y, &spec, &config) {
                Err(ParkError::Input(_)) => {}
                other => panic!("config {config:?} produced {other:?}"),
            }
        }
        let short = Array1::zeros(7);
        assert!(matches!(
            park_train(&x, &short, &spec, &base_config(2, 5)),
            Err(ParkError::Input(_))
        ));
    }

    #[test]
    fn krr_train_wraps_exact_solver_in_single_cell_model() {
        let x = random_points(50, 2, 51);
        let y = random_labels(50, 52);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (model, _) = krr_train(&x, &y, &spec, 0.05).unwrap();
        let alpha = exact_krr(&x, &y, &spec, 0.05).unwrap();
        assert_eq!(model.cells[0].coefficients, alpha);
        let queries = random_points(8, 2, 53);
        let via_model = model.predict_batch(&queries).unwrap();
        let direct = kernel_expansion(&spec, &x, &alpha, &queries).unwrap();
        for i in 0..8 {
            assert_eq!(via_model[i], direct[i]);
        }
        // routing with one cell is trivial but must still hold
        assert_eq!(model.route(row(&x, 3)).unwrap(), 0);
    }
}
