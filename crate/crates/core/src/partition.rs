//! Feature-space Voronoi partitioning: greedy (Schur-complement) or uniform
//! centroid selection plus nearest-centroid assignment.
//!
//! Greedy selection keeps a pivoted-Cholesky residual: after q picks, the
//! residual diagonal at a candidate c equals the Schur complement
//! `K(c,c) - k_c^T K_q^{-1} k_c`, i.e. the squared distance from phi(c) to
//! the span of the selected centroids. Each step picks the maximizer (ties
//! to the smallest index), then rank-one-updates every candidate in O(q)
//! time, for O(Q^2 n) total work and O(Q n) state.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ParkError, Result};
use crate::kernel::{rows_of, KernelSpec};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CentroidMode {
    Greedy,
    Uniform,
}

impl std::str::FromStr for CentroidMode {
    type Err = ParkError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(CentroidMode::Greedy),
            "uniform" => Ok(CentroidMode::Uniform),
            other => Err(ParkError::Input(format!(
                "unknown partition mode {other:?} (expected greedy or uniform)"
            ))),
        }
    }
}

/// A Voronoi partition of the training set in feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// Row indices of the centroids in the training set, in selection order.
    pub centroid_indices: Vec<usize>,
    /// Cell id per training point.
    pub assignment: Vec<usize>,
    /// Point indices per cell; disjoint, union = 0..n.
    pub cells: Vec<Vec<usize>>,
    /// n_q / n per cell.
    pub cell_fractions: Vec<f64>,
}

impl Partition {
    /// Rebuild the derived fields from the two stored ones. This is also the
    /// JSON-artifact entry point: the artifact stores centroids + assignment.
    pub fn from_parts(centroid_indices: Vec<usize>, assignment: Vec<usize>) -> Result<Self> {
        let q = centroid_indices.len();
        let n = assignment.len();
        if q == 0 || n == 0 {
            return Err(ParkError::Input("partition needs >= 1 centroid and >= 1 point".into()));
        }
        let mut cells = vec![Vec::new(); q];
        for (i, &c) in assignment.iter().enumerate() {
            if c >= q {
                return Err(ParkError::Input(format!(
                    "assignment[{i}] = {c} out of range for {q} cells"
                )));
            }
            cells[c].push(i);
        }
        if let Some(empty) = cells.iter().position(|c| c.is_empty()) {
            return Err(ParkError::Input(format!("cell {empty} is empty")));
        }
        let cell_fractions = cells.iter().map(|c| c.len() as f64 / n as f64).collect();
        Ok(Partition { centroid_indices, assignment, cells, cell_fractions })
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_points(&self) -> usize {
        self.assignment.len()
    }

    pub fn cell_sizes(&self) -> Vec<usize> {
        self.cells.iter().map(Vec::len).collect()
    }

    pub fn to_artifact(&self) -> PartitionArtifact {
        PartitionArtifact {
            centroid_indices: self.centroid_indices.clone(),
            assignment: self.assignment.clone(),
        }
    }
}

/// Compact serializable form (cells and fractions are derivable).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionArtifact {
    pub centroid_indices: Vec<usize>,
    pub assignment: Vec<usize>,
}

impl PartitionArtifact {
    pub fn into_partition(self) -> Result<Partition> {
        Partition::from_parts(self.centroid_indices, self.assignment)
    }
}

/// Bookkeeping from [`build_partition`].
#[derive(Debug, Clone, Serialize)]
pub struct PartitionStats {
    pub requested_cells: usize,
    /// Cells that received no points and were dropped (renumbering the rest).
    pub dropped_empty_cells: usize,
    pub cell_sizes: Vec<usize>,
}

/// Greedy centroid selection: first pick maximizes K(c,c); each later pick
/// maximizes the Schur complement of the selected set. Ties go to the
/// smallest index. Fails with a degenerate-rank error when every remaining
/// candidate's residual is at or below `1e-12 * max_i K(x_i, x_i)`.
pub fn greedy_centroids(x: &Array2<f64>, spec: &KernelSpec, q: usize) -> Result<Vec<usize>> {
    Ok(greedy_centroids_traced(x, spec, q)?.selected)
}

/// Greedy selection plus the residual diagonal recorded after every step
/// (exposed for the diagnostics in the test suite; `residual_history[s][i]`
/// is candidate i's Schur complement after s+1 picks).
pub struct GreedyTrace {
    pub selected: Vec<usize>,
    pub residual_history: Vec<Vec<f64>>,
}

pub fn greedy_centroids_traced(
    x: &Array2<f64>,
    spec: &KernelSpec,
    q: usize,
) -> Result<GreedyTrace> {
    let n = x.nrows();
    if q == 0 || q > n {
        return Err(ParkError::Input(format!(
            "centroid count must satisfy 1 <= q <= n, got q = {q}, n = {n}"
        )));
    }
    let xs = rows_of(x)?;
    let d = x.ncols();
    if d == 0 {
        return Err(ParkError::Input("points must have dimension >= 1".into()));
    }
    let row = |i: usize| &xs[i * d..(i + 1) * d];

    // residual[i] = SC(x_i | selected); starts at K(x_i, x_i).
    let mut residual: Vec<f64> =
        parallel::map_indexed(n, |i| spec.eval_raw(row(i), row(i)));
    let kappa_sq = residual.iter().cloned().fold(0.0f64, f64::max);
    let threshold = 1e-12 * kappa_sq;

    let mut eligible = vec![true; n];
    let mut factor_rows: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut selected = Vec::with_capacity(q);
    let mut history = Vec::with_capacity(q);

    for step in 0..q {
        // argmax over eligible candidates, smallest index on ties
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if !eligible[i] {
                continue;
            }
            let v = residual[i];
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((i, v));
            }
        }
        let (pivot_idx, pivot_val) = match best {
            Some(b) if b.1 > threshold => b,
            _ => {
                return Err(ParkError::DegenerateRank { selectable: step, requested: q })
            }
        };
        let pivot_sqrt = pivot_val.sqrt();
        let pivot_point = row(pivot_idx);

        // New pivoted-Cholesky row:
        //   g[i] = (K(x_i, pivot) - sum_s rows[s][i] * rows[s][pivot]) / sqrt(pivot residual)
        let prior: Vec<f64> = factor_rows.iter().map(|r| r[pivot_idx]).collect();
        let factor_snapshot = &factor_rows;
        let g: Vec<f64> = parallel::map_indexed(n, |i| {
            let mut v = spec.eval_raw(row(i), pivot_point);
            for (r, p) in factor_snapshot.iter().zip(&prior) {
                v -= r[i] * p;
            }
            v / pivot_sqrt
        });
        for i in 0..n {
            residual[i] -= g[i] * g[i];
            if residual[i] < 0.0 {
                // round-off: clamp and retire the candidate
                residual[i] = 0.0;
                eligible[i] = false;
            }
        }
        eligible[pivot_idx] = false;
        residual[pivot_idx] = 0.0;
        factor_rows.push(g);
        selected.push(pivot_idx);
        history.push(residual.clone());
    }
    Ok(GreedyTrace { selected, residual_history: history })
}

/// Q distinct indices sampled without replacement, returned in ascending
/// order (cell numbering then follows training-set order).
pub fn uniform_centroids(n: usize, q: usize, seed: u64) -> Result<Vec<usize>> {
    if q == 0 || q > n {
        return Err(ParkError::Input(format!(
            "centroid count must satisfy 1 <= q <= n, got q = {q}, n = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, q).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Nearest-centroid assignment in the feature-space metric; ties go to the
/// smallest cell id.
pub fn assign(x: &Array2<f64>, centroid_indices: &[usize], spec: &KernelSpec) -> Result<Vec<usize>> {
    let n = x.nrows();
    if centroid_indices.is_empty() {
        return Err(ParkError::Input("assignment needs at least one centroid".into()));
    }
    if let Some(&bad) = centroid_indices.iter().find(|&&c| c >= n) {
        return Err(ParkError::Input(format!(
            "centroid index {bad} out of range for {n} points"
        )));
    }
    let xs = rows_of(x)?;
    let d = x.ncols();
    let row = |i: usize| &xs[i * d..(i + 1) * d];
    Ok(parallel::map_indexed(n, |i| {
        let xi = row(i);
        let mut best_q = 0usize;
        let mut best_d = f64::INFINITY;
        for (qi, &c) in centroid_indices.iter().enumerate() {
            let dist = spec.rkhs_dist_sq_raw(xi, row(c));
            if dist < best_d {
                best_d = dist;
                best_q = qi;
            }
        }
        best_q
    }))
}

/// Select centroids, assign every point, and drop (renumber past) any cell
/// that received no points — possible only under exact distance ties.
pub fn build_partition(
    x: &Array2<f64>,
    spec: &KernelSpec,
    q: usize,
    mode: CentroidMode,
    seed: u64,
) -> Result<(Partition, PartitionStats)> {
    let centroids = match mode {
        CentroidMode::Greedy => greedy_centroids(x, spec, q)?,
        CentroidMode::Uniform => uniform_centroids(x.nrows(), q, seed)?,
    };
    let raw_assignment = assign(x, &centroids, spec)?;

    let mut occupied = vec![false; centroids.len()];
    for &c in &raw_assignment {
        occupied[c] = true;
    }
    let dropped = occupied.iter().filter(|&&o| !o).count();
    let (centroids, assignment) = if dropped == 0 {
        (centroids, raw_assignment)
    } else {
        let mut remap = vec![usize::MAX; centroids.len()];
        let mut kept = Vec::with_capacity(centroids.len() - dropped);
        for (old, &keep) in occupied.iter().enumerate() {
            if keep {
                remap[old] = kept.len();
                kept.push(centroids[old]);
            }
        }
        let renumbered = raw_assignment.iter().map(|&c| remap[c]).collect();
        (kept, renumbered)
    };
    let partition = Partition::from_parts(centroids, assignment)?;
    let stats = PartitionStats {
        requested_cells: q,
        dropped_empty_cells: dropped,
        cell_sizes: partition.cell_sizes(),
    };
    Ok((partition, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::row;
    use crate::numerics::{cholesky, tri_solve_vec, JitterPolicy, TriSide};
    use ndarray::Array1;

    fn random_points(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut state = seed;
        let mut vals = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            vals.push((state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0);
        }
        Array2::from_shape_vec((n, d), vals).unwrap()
    }

    /// Brute-force Schur complement: refactorize the selected Gram block and
    /// evaluate SC(c) for every remaining candidate at every step.
    fn brute_force_greedy(x: &Array2<f64>, spec: &KernelSpec, q: usize) -> Vec<usize> {
        let n = x.nrows();
        let mut selected: Vec<usize> = Vec::new();
        for _ in 0..q {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..n {
                if selected.contains(&c) {
                    continue;
                }
                let sc = if selected.is_empty() {
                    spec.eval(row(x, c), row(x, c)).unwrap()
                } else {
                    let m = selected.len();
                    let mut kq = Array2::zeros((m, m));
                    for (a, &ia) in selected.iter().enumerate() {
                        for (b, &ib) in selected.iter().enumerate() {
                            kq[[a, b]] = spec.eval(row(x, ia), row(x, ib)).unwrap();
                        }
                    }
                    let kc = Array1::from_iter(
                        selected.iter().map(|&ia| spec.eval(row(x, ia), row(x, c)).unwrap()),
                    );
                    let f = cholesky(&kq, &JitterPolicy::none()).unwrap();
                    let y = tri_solve_vec(f.lower(), &kc, TriSide::Lower).unwrap();
                    let z = tri_solve_vec(f.lower(), &y, TriSide::LowerTransposed).unwrap();
                    spec.eval(row(x, c), row(x, c)).unwrap() - kc.dot(&z)
                };
                if best.map_or(true, |(_, bv)| sc > bv) {
                    best = Some((c, sc));
                }
            }
            selected.push(best.unwrap().0);
        }
        selected
    }

    #[test]
    fn greedy_q1_gaussian_breaks_tie_to_index_zero() {
        let x = random_points(20, 2, 11);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let sel = greedy_centroids(&x, &spec, 1).unwrap();
        assert_eq!(sel, vec![0], "all K(c,c) = 1, smallest index wins");
    }

    #[test]
    fn greedy_q2_gaussian_picks_farthest_point_second() {
        let x = random_points(40, 3, 7);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let sel = greedy_centroids(&x, &spec, 2).unwrap();
        assert_eq!(sel[0], 0);
        // SC_1(c) = 1 - K(c, c_1)^2 maximized <=> K(c, c_1) minimized
        // <=> RKHS distance to c_1 maximized.
        let c1 = row(&x, sel[0]);
        let mut want = 0usize;
        let mut best = f64::NEG_INFINITY;
        for i in 0..40 {
            let v = 1.0 - spec.eval(row(&x, i), c1).unwrap().powi(2);
            if v > best {
                best = v;
                want = i;
            }
        }
        assert_eq!(sel[1], want);
    }

    #[test]
    fn greedy_matches_brute_force_schur_oracle() {
        let spec = KernelSpec::gaussian(0.9).unwrap();
        for seed in [1u64, 2, 3] {
            let x = random_points(60, 3, seed);
            let fast = greedy_centroids(&x, &spec, 6).unwrap();
            let slow = brute_force_greedy(&x, &spec, 6);
            assert_eq!(fast, slow, "seed {seed}");
        }
    }

    #[test]
    fn greedy_rejects_bad_q() {
        let x = random_points(5, 2, 1);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        assert!(greedy_centroids(&x, &spec, 0).is_err());
        assert!(greedy_centroids(&x, &spec, 6).is_err());
    }

    #[test]
    fn greedy_degenerate_rank_reports_selectable_count() {
        // 5 copies of the same point: rank 1, so only one centroid is selectable.
        let x = Array2::from_shape_vec((5, 2), [[1.0, 2.0]; 5].concat()).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        match greedy_centroids(&x, &spec, 3) {
            Err(ParkError::DegenerateRank { selectable, requested }) => {
                assert_eq!(selectable, 1);
                assert_eq!(requested, 3);
            }
            other => panic!("expected degenerate-rank error, got {other:?}"),
        }
    }

    #[test]
    fn greedy_residuals_are_non_increasing_per_candidate() {
        let x = random_points(80, 3, 21);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let trace = greedy_centroids_traced(&x, &spec, 10).unwrap();
        for step in 1..trace.residual_history.len() {
            let prev = &trace.residual_history[step - 1];
            let cur = &trace.residual_history[step];
            for i in 0..80 {
                assert!(
                    cur[i] <= prev[i] + 1e-10,
                    "residual grew at candidate {i}, step {step}: {} -> {}",
                    prev[i],
                    cur[i]
                );
            }
        }
    }

    #[test]
    fn greedy_is_permutation_covariant_without_ties() {
        // Linear kernel with distinct norms: no ties anywhere. The Gram rank
        // equals the point dimension, so keep q below it.
        let d = 8;
        let x = random_points(30, d, 33);
        let spec = KernelSpec::linear();
        let sel = greedy_centroids(&x, &spec, 5).unwrap();
        // rotate rows by 7
        let shift = 7usize;
        let n = x.nrows();
        let mut permuted = Array2::zeros((n, d));
        for i in 0..n {
            let src = (i + shift) % n;
            for j in 0..d {
                permuted[[i, j]] = x[[src, j]];
            }
        }
        let sel_p = greedy_centroids(&permuted, &spec, 5).unwrap();
        let mapped: Vec<usize> = sel.iter().map(|&i| (i + n - shift) % n).collect();
        assert_eq!(sel_p, mapped);
    }

    #[test]
    fn uniform_full_set_is_identity() {
        let sel = uniform_centroids(8, 8, 123).unwrap();
        assert_eq!(sel, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_same_seed_same_output() {
        let a = uniform_centroids(50, 7, 99).unwrap();
        let b = uniform_centroids(50, 7, 99).unwrap();
        assert_eq!(a, b);
        let c = uniform_centroids(50, 7, 100).unwrap();
        assert_eq!(c.len(), 7);
        assert!(c.windows(2).all(|w| w[0] < w[1]), "sorted distinct indices");
    }

    #[test]
    fn uniform_inclusion_frequency_is_near_q_over_n() {
        let mut counts = [0usize; 10];
        for seed in 0..1000u64 {
            for i in uniform_centroids(10, 3, seed).unwrap() {
                counts[i] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / 1000.0;
            assert!(
                (freq - 0.3).abs() <= 0.05,
                "index {i} inclusion frequency {freq} strays from 0.3"
            );
        }
    }

    #[test]
    fn assign_centroid_to_its_own_cell_and_singletons() {
        let x = random_points(30, 2, 5);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let centroids = vec![4usize, 17, 25];
        let a = assign(&x, &centroids, &spec).unwrap();
        assert_eq!(a[4], 0);
        assert_eq!(a[17], 1);
        assert_eq!(a[25], 2);
        let one = assign(&x, &[9], &spec).unwrap();
        assert!(one.iter().all(|&c| c == 0));
    }

    #[test]
    fn assign_matches_exhaustive_loop() {
        let x = random_points(300, 3, 77);
        let spec = KernelSpec::laplacian(1.2).unwrap();
        let centroids = uniform_centroids(300, 5, 4).unwrap();
        let fast = assign(&x, &centroids, &spec).unwrap();
        for i in 0..300 {
            let mut best_q = 0;
            let mut best_d = f64::INFINITY;
            for (qi, &c) in centroids.iter().enumerate() {
                let d = spec.rkhs_dist_sq(row(&x, i), row(&x, c)).unwrap();
                if d < best_d {
                    best_d = d;
                    best_q = qi;
                }
            }
            assert_eq!(fast[i], best_q, "point {i}");
        }
    }

    #[test]
    fn build_partition_single_cell() {
        let x = random_points(25, 2, 2);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (p, stats) = build_partition(&x, &spec, 1, CentroidMode::Greedy, 0).unwrap();
        assert_eq!(p.num_cells(), 1);
        assert_eq!(p.cells[0].len(), 25);
        assert_eq!(p.cell_fractions[0], 1.0);
        assert_eq!(stats.dropped_empty_cells, 0);
    }

    #[test]
    fn build_partition_separates_two_blobs() {
        // two tight blobs 10 bandwidths apart; greedy lands one centroid in
        // each and assignment must be 100% pure
        let n = 60;
        let mut pts = Vec::with_capacity(n * 2);
        let base = random_points(n, 2, 9);
        for i in 0..n {
            let offset = if i % 2 == 0 { 0.0 } else { 10.0 };
            pts.push(base[[i, 0]] * 0.2 + offset);
            pts.push(base[[i, 1]] * 0.2);
        }
        let x = Array2::from_shape_vec((n, 2), pts).unwrap();
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (p, _) = build_partition(&x, &spec, 2, CentroidMode::Greedy, 0).unwrap();
        assert_eq!(p.num_cells(), 2);
        for i in 0..n {
            let blob = i % 2;
            let mate = (i + 2) % n; // same blob
            assert_eq!(
                p.assignment[i], p.assignment[mate],
                "points {i} and {mate} share blob {blob} but split cells"
            );
        }
    }

    #[test]
    fn build_partition_invariants_hold() {
        let x = random_points(500, 3, 123);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        for mode in [CentroidMode::Greedy, CentroidMode::Uniform] {
            let (p, _) = build_partition(&x, &spec, 32, mode, 7).unwrap();
            let total: usize = p.cells.iter().map(Vec::len).sum();
            assert_eq!(total, 500);
            let mut seen = vec![false; 500];
            for (q, cell) in p.cells.iter().enumerate() {
                for &i in cell {
                    assert!(!seen[i], "point {i} in two cells");
                    seen[i] = true;
                    assert_eq!(p.assignment[i], q);
                }
            }
            assert!(seen.iter().all(|&s| s));
            let frac_sum: f64 = p.cell_fractions.iter().sum();
            assert!((frac_sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_artifact_round_trips_via_json() {
        let x = random_points(40, 2, 55);
        let spec = KernelSpec::gaussian(1.0).unwrap();
        let (p, _) = build_partition(&x, &spec, 4, CentroidMode::Uniform, 3).unwrap();
        let json = serde_json::to_string(&p.to_artifact()).unwrap();
        let back: PartitionArtifact = serde_json::from_str(&json).unwrap();
        let p2 = back.into_partition().unwrap();
        assert_eq!(p, p2);
    }
}
