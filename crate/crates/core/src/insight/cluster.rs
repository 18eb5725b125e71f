//! K-means over latent codes with morphometric purity statistics.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{LnmError, Result};
use crate::morphometry::NodeFeatures;
use crate::rng::{derive_seed, Rng};

/// Clusters with fewer members than this are excluded from the statistics.
pub const MIN_CLUSTER_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Lloyd's algorithm with seeded restarts; the lowest-inertia run wins.
pub fn kmeans(data: &Array2<f64>, k: usize, restarts: usize, max_iterations: usize, seed: u64) -> Result<KmeansResult> {
    let (n, dim) = data.dim();
    if k == 0 || k > n {
        return Err(LnmError::Config(format!("k = {k} is outside [1, {n}]")));
    }
    let mut best: Option<KmeansResult> = None;
    for restart in 0..restarts.max(1) {
        let mut rng = Rng::seed_from_u64(derive_seed(seed, &format!("kmeans-{restart}")));
        let picks = sample(&mut rng, n, k);
        let mut centroids = Array2::<f64>::zeros((k, dim));
        for (c, idx) in picks.into_iter().enumerate() {
            centroids.row_mut(c).assign(&data.row(idx));
        }

        let mut assignments = vec![0usize; n];
        let mut last_inertia = f64::INFINITY;
        let mut converged = false;
        let mut iterations = 0;
        for iter in 0..max_iterations {
            iterations = iter + 1;
            // assign
            let mut inertia = 0.0;
            for i in 0..n {
                let row = data.row(i);
                let mut best_c = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..k {
                    let d = row
                        .iter()
                        .zip(centroids.row(c).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                    if d < best_d {
                        best_d = d;
                        best_c = c;
                    }
                }
                assignments[i] = best_c;
                inertia += best_d;
            }
            debug_assert!(inertia <= last_inertia + 1e-9, "k-means objective must not increase");
            // update
            let mut counts = vec![0usize; k];
            let mut sums = Array2::<f64>::zeros((k, dim));
            for i in 0..n {
                counts[assignments[i]] += 1;
                let mut row = sums.row_mut(assignments[i]);
                row += &data.row(i);
            }
            for c in 0..k {
                if counts[c] == 0 {
                    // re-seed an empty cluster with the point farthest from its centroid
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            let da: f64 = data
                                .row(a)
                                .iter()
                                .zip(centroids.row(assignments[a]).iter())
                                .map(|(x, y)| (x - y) * (x - y))
                                .sum();
                            let db: f64 = data
                                .row(b)
                                .iter()
                                .zip(centroids.row(assignments[b]).iter())
                                .map(|(x, y)| (x - y) * (x - y))
                                .sum();
                            da.total_cmp(&db)
                        })
                        .expect("nonempty data");
                    centroids.row_mut(c).assign(&data.row(far));
                } else {
                    let mut row = centroids.row_mut(c);
                    row.assign(&sums.row(c));
                    row.mapv_inplace(|v| v / counts[c] as f64);
                }
            }
            if (last_inertia - inertia).abs() < 1e-12 {
                converged = true;
                last_inertia = inertia;
                break;
            }
            last_inertia = inertia;
        }
        let candidate = KmeansResult {
            assignments,
            centroids,
            inertia: last_inertia,
            iterations,
            converged,
        };
        if best.as_ref().map_or(true, |b| candidate.inertia < b.inertia) {
            best = Some(candidate);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Spread statistics of one feature across clusters (Table-style layout).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpread {
    pub global_sd: f64,
    pub mean_intra_sd: f64,
    pub min_intra_sd: f64,
    pub max_intra_sd: f64,
    pub global_range: f64,
    pub mean_intra_range: f64,
    pub min_intra_range: f64,
    pub max_intra_range: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub cluster_sizes: Vec<usize>,
    /// Clusters dropped from the statistics for having < 3 members.
    pub excluded_clusters: usize,
    pub short_axis: FeatureSpread,
    pub long_axis: FeatureSpread,
    pub axis_ratio: FeatureSpread,
    pub border_irregularity: FeatureSpread,
    /// All effective members collapsed into a single cluster.
    pub degenerate: bool,
}

/// Cluster the latents for every k in `k_range`, choose the k that minimizes
/// the mean intra-cluster short-axis standard deviation, and report the
/// spread statistics for the winning clustering.
pub fn cluster_latents(
    latents: &Array2<f64>,
    features: &[NodeFeatures],
    k_range: (usize, usize),
    restarts: usize,
    max_iterations: usize,
    seed: u64,
) -> Result<(usize, KmeansResult, ClusterReport)> {
    let n = latents.dim().0;
    if features.len() != n {
        return Err(LnmError::Validation(format!(
            "{n} latent rows but {} feature rows",
            features.len()
        )));
    }
    if k_range.0 == 0 || k_range.0 > k_range.1 {
        return Err(LnmError::Config(format!("k range {k_range:?} is invalid")));
    }
    if k_range.1 > n {
        return Err(LnmError::Config(format!(
            "k range {k_range:?} exceeds the {n} available samples"
        )));
    }

    let short: Vec<f64> = features.iter().map(|f| f.short_axis_mm).collect();
    let mut best: Option<(usize, KmeansResult, f64)> = None;
    for k in k_range.0..=k_range.1 {
        let result = kmeans(latents, k, restarts, max_iterations, derive_seed(seed, &format!("k-{k}")))?;
        let score = mean_intra_sd(&result.assignments, k, &short);
        let better = best.as_ref().map_or(true, |(_, _, s)| score < *s);
        if better {
            best = Some((k, result, score));
        }
    }
    let (k, result, _) = best.expect("nonempty k range");
    let report = build_report(k, &result.assignments, features);
    Ok((k, result, report))
}

fn mean_intra_sd(assignments: &[usize], k: usize, values: &[f64]) -> f64 {
    let mut sds = Vec::new();
    for c in 0..k {
        let members: Vec<f64> = assignments
            .iter()
            .zip(values.iter())
            .filter(|(a, _)| **a == c)
            .map(|(_, v)| *v)
            .collect();
        if members.len() >= MIN_CLUSTER_SIZE {
            sds.push(population_sd(&members));
        }
    }
    if sds.is_empty() {
        f64::INFINITY
    } else {
        sds.iter().sum::<f64>() / sds.len() as f64
    }
}

fn build_report(k: usize, assignments: &[usize], features: &[NodeFeatures]) -> ClusterReport {
    let columns: [Vec<f64>; 4] = [
        features.iter().map(|f| f.short_axis_mm).collect(),
        features.iter().map(|f| f.long_axis_mm).collect(),
        features.iter().map(|f| f.axis_ratio).collect(),
        features.iter().map(|f| f.border_irregularity_mean()).collect(),
    ];
    let mut cluster_sizes = vec![0usize; k];
    for &a in assignments {
        cluster_sizes[a] += 1;
    }
    let included: Vec<usize> = (0..k).filter(|&c| cluster_sizes[c] >= MIN_CLUSTER_SIZE).collect();
    let excluded_clusters = k - included.len();

    let spread = |values: &[f64]| -> FeatureSpread {
        let mut intra_sd = Vec::new();
        let mut intra_range = Vec::new();
        for &c in &included {
            let members: Vec<f64> = assignments
                .iter()
                .zip(values.iter())
                .filter(|(a, _)| **a == c)
                .map(|(_, v)| *v)
                .collect();
            intra_sd.push(population_sd(&members));
            intra_range.push(range_of(&members));
        }
        let agg = |v: &[f64], f: fn(f64, f64) -> f64, init: f64| v.iter().cloned().fold(init, f);
        FeatureSpread {
            global_sd: population_sd(values),
            mean_intra_sd: if intra_sd.is_empty() { f64::NAN } else { intra_sd.iter().sum::<f64>() / intra_sd.len() as f64 },
            min_intra_sd: agg(&intra_sd, f64::min, f64::INFINITY),
            max_intra_sd: agg(&intra_sd, f64::max, f64::NEG_INFINITY),
            global_range: range_of(values),
            mean_intra_range: if intra_range.is_empty() { f64::NAN } else { intra_range.iter().sum::<f64>() / intra_range.len() as f64 },
            min_intra_range: agg(&intra_range, f64::min, f64::INFINITY),
            max_intra_range: agg(&intra_range, f64::max, f64::NEG_INFINITY),
        }
    };

    ClusterReport {
        k,
        excluded_clusters,
        degenerate: included.len() <= 1,
        short_axis: spread(&columns[0]),
        long_axis: spread(&columns[1]),
        axis_ratio: spread(&columns[2]),
        border_irregularity: spread(&columns[3]),
        cluster_sizes,
    }
}

fn population_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

fn range_of(values: &[f64]) -> f64 {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max - min
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::component_rng;
    use rand::Rng as _;

    fn fake_feature(short: f64) -> NodeFeatures {
        NodeFeatures {
            short_axis_mm: short,
            long_axis_mm: short * 1.4,
            axis_ratio: 1.0 / 1.4,
            convexity: 0.98,
            compactness: 1.05,
        }
    }

    /// Two latent blobs whose short-axis values differ: intra-cluster spread
    /// must be below the global spread.
    #[test]
    fn separable_blobs_reduce_intra_cluster_sd() {
        let mut rng = component_rng(1, "cluster-blobs");
        let n = 40;
        let mut latents = Array2::<f64>::zeros((n, 6));
        let mut features = Vec::new();
        for i in 0..n {
            let big = i % 2 == 0;
            for j in 0..6 {
                latents[[i, j]] = if big { 2.0 } else { -2.0 } + 0.05 * rng.random::<f64>();
            }
            features.push(fake_feature(if big { 9.0 + rng.random::<f64>() } else { 4.0 + rng.random::<f64>() }));
        }
        let (k, result, report) = cluster_latents(&latents, &features, (2, 2), 5, 50, 7).unwrap();
        assert_eq!(k, 2);
        assert!(result.converged);
        assert!(
            report.short_axis.mean_intra_sd < report.short_axis.global_sd,
            "intra {} vs global {}",
            report.short_axis.mean_intra_sd,
            report.short_axis.global_sd
        );
        assert!(!report.degenerate);
    }

    #[test]
    fn identical_latents_flag_degeneracy() {
        let latents = Array2::<f64>::zeros((10, 4));
        let features: Vec<NodeFeatures> = (0..10).map(|i| fake_feature(4.0 + i as f64 * 0.3)).collect();
        let (_, _, report) = cluster_latents(&latents, &features, (2, 3), 3, 30, 5).unwrap();
        assert!(report.degenerate, "all-identical latents must collapse: {report:?}");
    }

    #[test]
    fn k_range_beyond_samples_rejected() {
        let latents = Array2::<f64>::zeros((4, 2));
        let features: Vec<NodeFeatures> = (0..4).map(|i| fake_feature(5.0 + i as f64)).collect();
        assert!(matches!(
            cluster_latents(&latents, &features, (2, 10), 2, 10, 1),
            Err(LnmError::Config(_))
        ));
    }

    #[test]
    fn assignment_invariant_to_sample_order() {
        let mut rng = component_rng(2, "cluster-order");
        let n = 24;
        let mut latents = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            for j in 0..3 {
                latents[[i, j]] = if i < n / 2 { 1.0 } else { -1.0 } + 0.01 * rng.random::<f64>();
            }
        }
        let a = kmeans(&latents, 2, 4, 50, 11).unwrap();
        // reversed sample order
        let mut reversed = Array2::<f64>::zeros((n, 3));
        for i in 0..n {
            reversed.row_mut(i).assign(&latents.row(n - 1 - i));
        }
        let b = kmeans(&reversed, 2, 4, 50, 11).unwrap();
        // same partition content regardless of order (cluster ids may swap)
        let part_a: Vec<bool> = (0..n).map(|i| a.assignments[i] == a.assignments[0]).collect();
        let part_b: Vec<bool> = (0..n).map(|i| b.assignments[n - 1 - i] == b.assignments[n - 1]).collect();
        assert_eq!(part_a, part_b);
    }

    #[test]
    fn small_clusters_are_excluded() {
        // 9 points near one blob, 1 outlier: k=2 gives a singleton cluster
        let mut latents = Array2::<f64>::zeros((10, 2));
        for i in 0..9 {
            latents[[i, 0]] = 0.1 * i as f64;
        }
        latents[[9, 0]] = 100.0;
        let features: Vec<NodeFeatures> = (0..10).map(|i| fake_feature(4.0 + 0.1 * i as f64)).collect();
        let (_, result, report) = cluster_latents(&latents, &features, (2, 2), 3, 30, 2).unwrap();
        let singleton = result.assignments.iter().filter(|&&a| a == result.assignments[9]).count();
        assert_eq!(singleton, 1);
        assert_eq!(report.excluded_clusters, 1);
    }
}
