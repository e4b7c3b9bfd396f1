//! Lloyd's k-means with k-means++ seeding.

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarError, Result};

/// Fitted clustering model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansModel {
    pub schema_version: u32,
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    /// Row-major `k x dim` centroid matrix.
    pub centroids: Vec<f64>,
    /// Final within-cluster sum of squared distances.
    pub inertia: f64,
    pub iterations: usize,
}

impl KMeansModel {
    pub fn centroid_matrix(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.k, self.dim), self.centroids.clone())
            .expect("stored shape consistent")
    }

    /// Nearest centroid by squared Euclidean distance; ties break toward the
    /// lowest centroid index.
    pub fn assign(&self, point: &[f64]) -> usize {
        let cents = self.centroid_matrix();
        nearest(&cents, point).0
    }
}

fn nearest(centroids: &Array2<f64>, point: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (idx, c) in centroids.rows().into_iter().enumerate() {
        let d: f64 = c
            .iter()
            .zip(point)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best_d = d;
            best = idx;
        }
    }
    (best, best_d)
}

fn total_inertia(data: &Array2<f64>, centroids: &Array2<f64>, assign: &[usize]) -> f64 {
    let mut s = 0.0;
    for (row, &a) in data.rows().into_iter().zip(assign) {
        let c = centroids.row(a);
        s += row
            .iter()
            .zip(c.iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>();
    }
    s
}

/// k-means++ initialization: first centroid uniform, the rest sampled with
/// probability proportional to squared distance from the chosen set.
fn kmeans_pp_init(data: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<f64> = data
        .rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .zip(centroids.row(0).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            // all points coincide with chosen centroids
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, row) in data.rows().into_iter().enumerate() {
            let d: f64 = row
                .iter()
                .zip(centroids.row(c).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Fits k-means on row vectors.
///
/// Runs Lloyd iterations to an assignment fixpoint (or `max_iter`); the
/// objective is non-increasing per iteration. An emptied cluster is
/// re-seeded from the point farthest from its assigned centroid.
pub fn fit_kmeans(data: &Array2<f64>, k: usize, seed: u64) -> Result<KMeansModel> {
    fit_kmeans_capped(data, k, seed, 100)
}

pub fn fit_kmeans_capped(
    data: &Array2<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeansModel> {
    let n = data.nrows();
    if k < 2 {
        return Err(HarError::data("fit_kmeans: k must be >= 2"));
    }
    if n < k {
        return Err(HarError::data(format!(
            "fit_kmeans: {n} vectors for k={k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(data, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut last_inertia = f64::INFINITY;
    let mut iterations = 0usize;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let mut changed = false;
        for (i, row) in data.rows().into_iter().enumerate() {
            let (a, _) = nearest(&centroids, row.as_slice().unwrap());
            if assignments[i] != a {
                assignments[i] = a;
                changed = true;
            }
        }
        let inertia = total_inertia(data, &centroids, &assignments);
        debug_assert!(
            inertia <= last_inertia + 1e-9,
            "k-means objective increased: {last_inertia} -> {inertia}"
        );
        last_inertia = inertia;
        if !changed && iter > 0 {
            break;
        }
        // update step
        let mut sums = Array2::<f64>::zeros((k, data.ncols()));
        let mut counts = vec![0usize; k];
        for (i, row) in data.rows().into_iter().enumerate() {
            let a = assignments[i];
            counts[a] += 1;
            let mut s = sums.row_mut(a);
            s += &row;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mut row = sums.row_mut(c);
                row.mapv_inplace(|v| v / counts[c] as f64);
                centroids.row_mut(c).assign(&sums.row(c));
            } else {
                // re-seed from the farthest point
                let far = data
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let c0 = centroids.row(assignments[i]);
                        let d: f64 = row
                            .iter()
                            .zip(c0.iter())
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum();
                        (i, d)
                    })
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                centroids.row_mut(c).assign(&data.row(far));
            }
        }
    }
    // final assignment pass for the reported inertia
    for (i, row) in data.rows().into_iter().enumerate() {
        let (a, _) = nearest(&centroids, row.as_slice().unwrap());
        assignments[i] = a;
    }
    let inertia = total_inertia(data, &centroids, &assignments);

    Ok(KMeansModel {
        schema_version: 1,
        k,
        dim: data.ncols(),
        seed,
        centroids: centroids.iter().copied().collect(),
        inertia,
        iterations,
    })
}

/// Mean silhouette coefficient of a clustering (subsampled for large n).
pub fn silhouette(data: &Array2<f64>, assignments: &[usize], k: usize, cap: usize) -> f64 {
    let n = data.nrows();
    let stride = n.div_ceil(cap).max(1);
    let sample: Vec<usize> = (0..n).step_by(stride).collect();
    let mut score = 0.0;
    let mut counted = 0usize;
    let cluster_sizes = {
        let mut sizes = vec![0usize; k];
        for &a in assignments {
            sizes[a] += 1;
        }
        sizes
    };
    for &i in &sample {
        if cluster_sizes[assignments[i]] < 2 {
            continue;
        }
        let mut dist_sum = vec![0.0f64; k];
        let mut dist_cnt = vec![0usize; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            let d: f64 = data
                .row(i)
                .iter()
                .zip(data.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist_sum[assignments[j]] += d;
            dist_cnt[assignments[j]] += 1;
        }
        let own = assignments[i];
        // own-cluster count excludes i itself
        let a = dist_sum[own] / (cluster_sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && dist_cnt[c] > 0)
            .map(|c| dist_sum[c] / dist_cnt[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            score += (b - a) / a.max(b);
            counted += 1;
        }
    }
    if counted == 0 {
        0.0
    } else {
        score / counted as f64
    }
}

/// Picks k in `[k_min, k_max]` by maximal mean silhouette (ties toward the
/// smaller k).
pub fn select_k_by_silhouette(
    data: &Array2<f64>,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<usize> {
    let mut best_k = None;
    let mut best_score = f64::NEG_INFINITY;
    for k in k_min..=k_max.min(data.nrows()) {
        let model = fit_kmeans(data, k, seed)?;
        let assignments: Vec<usize> = data
            .rows()
            .into_iter()
            .map(|r| model.assign(r.as_slice().unwrap()))
            .collect();
        let s = silhouette(data, &assignments, k, 2000);
        if s > best_score {
            best_score = s;
            best_k = Some(k);
        }
    }
    best_k.ok_or_else(|| HarError::data("select_k: no feasible k in range"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blobs(seed: u64, n_per: usize) -> (Array2<f64>, [f64; 2], [f64; 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Array2::zeros((2 * n_per, 2));
        let mut sum_a = [0.0, 0.0];
        let mut sum_b = [0.0, 0.0];
        for i in 0..n_per {
            for d in 0..2 {
                let v = rng.gen_range(-0.05..0.05);
                data[(i, d)] = v;
                sum_a[d] += v;
                let w = 10.0 + rng.gen_range(-0.05..0.05);
                data[(n_per + i, d)] = w;
                sum_b[d] += w;
            }
        }
        let mean_a = [sum_a[0] / n_per as f64, sum_a[1] / n_per as f64];
        let mean_b = [sum_b[0] / n_per as f64, sum_b[1] / n_per as f64];
        (data, mean_a, mean_b)
    }

    #[test]
    fn two_blobs_recover_analytic_means() {
        let (data, mean_a, mean_b) = blobs(3, 50);
        let model = fit_kmeans(&data, 2, 9).unwrap();
        let cents = model.centroid_matrix();
        // match centroids to blobs by proximity
        let c0 = cents.row(0).to_vec();
        let c1 = cents.row(1).to_vec();
        let (low, high) = if c0[0] < c1[0] { (c0, c1) } else { (c1, c0) };
        for d in 0..2 {
            assert!((low[d] - mean_a[d]).abs() < 1e-6, "low centroid off");
            assert!((high[d] - mean_b[d]).abs() < 1e-6, "high centroid off");
        }
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let data = Array2::from_shape_vec(
            (4, 2),
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 5.0, 5.0],
        )
        .unwrap();
        let model = fit_kmeans(&data, 4, 1).unwrap();
        assert!(model.inertia < 1e-12, "inertia {}", model.inertia);
    }

    #[test]
    fn deterministic_under_seed() {
        let (data, _, _) = blobs(4, 30);
        let a = fit_kmeans(&data, 3, 42).unwrap();
        let b = fit_kmeans(&data, 3, 42).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.inertia, b.inertia);
    }

    #[test]
    fn too_few_points_is_error() {
        let data = Array2::zeros((3, 2));
        assert!(fit_kmeans(&data, 4, 0).is_err());
    }

    #[test]
    fn assignment_is_brute_force_optimal() {
        let (data, _, _) = blobs(5, 40);
        let model = fit_kmeans(&data, 4, 7).unwrap();
        let cents = model.centroid_matrix();
        for row in data.rows() {
            let p = row.as_slice().unwrap();
            let assigned = model.assign(p);
            let assigned_d: f64 = cents
                .row(assigned)
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            for c in cents.rows() {
                let d: f64 = c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(assigned_d <= d + 1e-12);
            }
        }
    }

    #[test]
    fn silhouette_prefers_true_k_on_blobs() {
        let (data, _, _) = blobs(6, 40);
        let k = select_k_by_silhouette(&data, 2, 5, 11).unwrap();
        assert_eq!(k, 2);
    }
}
