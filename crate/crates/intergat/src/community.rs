//! Spectral clustering of the static adjacency matrix and intra/inter
//! community contrast statistics of learned interaction matrices.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graphio::Graph;
use crate::numkern::Mat;
use crate::spectra::{sym_eig, SpectraError};

pub const CONTRAST_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum CommunityError {
    #[error("cluster count {0} out of range [2, {1}]")]
    KOutOfRange(usize, usize),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error("interaction matrix is {0}x{1} but partition covers {2} nodes")]
    SizeMismatch(usize, usize, usize),
}

/// Node-to-cluster assignment with labels in [0, k).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Partition {
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl Partition {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Squared Euclidean distance between two rows.
fn row_dist2(a: &Mat, i: usize, center: &[f64]) -> f64 {
    (0..a.cols()).map(|j| (a[(i, j)] - center[j]).powi(2)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Returns (assignment, inertia).
fn kmeans(points: &Mat, k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
    let n = points.rows();
    let d = points.cols();
    // k-means++ init
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rng.random_range(0..n);
    centers.push((0..d).map(|j| points[(first, j)]).collect());
    let mut min_d2: Vec<f64> = (0..n).map(|i| row_dist2(points, i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let c: Vec<f64> = (0..d).map(|j| points[(pick, j)]).collect();
        for i in 0..n {
            min_d2[i] = min_d2[i].min(row_dist2(points, i, &c));
        }
        centers.push(c);
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d2 = row_dist2(points, i, center);
                if d2 < best_d {
                    best_d = d2;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        // recompute centers; an emptied cluster grabs the farthest point
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for j in 0..d {
                sums[assignment[i]][j] += points[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        row_dist2(points, a, &centers[assignment[a]])
                            .partial_cmp(&row_dist2(points, b, &centers[assignment[b]]))
                            .unwrap()
                    })
                    .unwrap();
                assignment[far] = c;
                centers[c] = (0..d).map(|j| points[(far, j)]).collect();
                changed = true;
            } else {
                for j in 0..d {
                    centers[c][j] = sums[c][j] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia: f64 = (0..n).map(|i| row_dist2(points, i, &centers[assignment[i]])).sum();
    (assignment, inertia)
}

/// Spectral clustering: symmetric normalized Laplacian, bottom-k
/// eigenvectors, row normalization, then k-means++ with 50 restarts keeping
/// the lowest-inertia run. Deterministic under `seed`.
pub fn spectral_cluster(graph: &Graph, k: usize, seed: u64) -> Result<Partition, CommunityError> {
    let n = graph.n;
    if k < 2 || k > n {
        return Err(CommunityError::KOutOfRange(k, n));
    }
    let a = &graph.adjacency;
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|j| a[(i, j)]).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let lap = Mat::from_fn(n, n, |i, j| {
        let sym = if i == j { 1.0 } else { 0.0 };
        sym - inv_sqrt_deg[i] * a[(i, j)] * inv_sqrt_deg[j]
    });
    let eig = sym_eig(&lap.symmetrize(), 1e-12)?;
    // embedding: bottom-k eigenvectors as columns, rows renormalized to the
    // unit sphere (zero rows kept as zero)
    let mut points = Mat::from_fn(n, k, |i, j| eig.vectors[(i, j)]);
    for i in 0..n {
        let norm: f64 = (0..k).map(|j| points[(i, j)].powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for j in 0..k {
                points[(i, j)] /= norm;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e37_79b9));
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..50 {
        let (assignment, inertia) = kmeans(&points, k, &mut rng);
        if best.as_ref().map_or(true, |(_, b)| inertia < *b) {
            best = Some((assignment, inertia));
        }
    }
    let (assignment, _) = best.unwrap();
    Ok(Partition { k, assignment })
}

/// Adjusted Rand index between two labelings of the same nodes.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for i in 0..n {
        table[a[i]][b[i]] += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&x| choose2(x)).sum();
    let sum_a: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < 1e-15 {
        return 1.0;
    }
    (sum_ij - expected) / (max - expected)
}

/// One row of a contrast table. `degenerate` marks a k whose intra or inter
/// pool is empty; such rows are excluded from cross-k averages.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContrastRow {
    pub k: usize,
    pub mu_intra: f64,
    pub mu_inter: f64,
    pub sigma_intra: f64,
    pub sigma_inter: f64,
    pub contrast: f64,
    pub std: f64,
    pub degenerate: bool,
}

fn pool_stats(pool: &[f64]) -> (f64, f64) {
    if pool.is_empty() {
        return (0.0, 0.0);
    }
    let n = pool.len() as f64;
    let mean = pool.iter().sum::<f64>() / n;
    let var = pool.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Contrast of one interaction matrix under one partition. The diagonal is
/// excluded from both pools.
pub fn contrast_row(m: &Mat, partition: &Partition) -> Result<ContrastRow, CommunityError> {
    let n = partition.assignment.len();
    if m.rows() != n || m.cols() != n {
        return Err(CommunityError::SizeMismatch(m.rows(), m.cols(), n));
    }
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if partition.assignment[i] == partition.assignment[j] {
                intra.push(m[(i, j)]);
            } else {
                inter.push(m[(i, j)]);
            }
        }
    }
    let degenerate = intra.is_empty() || inter.is_empty();
    let (mu_intra, sigma_intra) = pool_stats(&intra);
    let (mu_inter, sigma_inter) = pool_stats(&inter);
    Ok(ContrastRow {
        k: partition.k,
        mu_intra,
        mu_inter,
        sigma_intra,
        sigma_inter,
        contrast: (mu_intra - mu_inter) / (mu_inter + CONTRAST_EPS),
        std: (sigma_intra * sigma_intra + sigma_inter * sigma_inter).sqrt() / (mu_inter + CONTRAST_EPS),
        degenerate,
    })
}

/// Contrast rows of `m` across a partition set, in ascending k.
pub fn contrast_table(m: &Mat, partitions: &[Partition]) -> Result<Vec<ContrastRow>, CommunityError> {
    let mut rows: Vec<ContrastRow> = partitions
        .iter()
        .map(|p| contrast_row(m, p))
        .collect::<Result<_, _>>()?;
    rows.sort_by_key(|r| r.k);
    Ok(rows)
}

/// Mean and standard deviation of Contrast_k over the non-degenerate rows.
pub fn contrast_summary(rows: &[ContrastRow]) -> (f64, f64) {
    let vals: Vec<f64> = rows.iter().filter(|r| !r.degenerate).map(|r| r.contrast).collect();
    pool_stats(&vals)
}

/// Partitions of the static adjacency for every k in the given range,
/// clipped to valid values.
pub fn partition_range(
    graph: &Graph,
    k_min: usize,
    k_max: usize,
    seed: u64,
) -> Result<Vec<Partition>, CommunityError> {
    let hi = k_max.min(graph.n);
    let lo = k_min.max(2);
    let mut out = Vec::new();
    for k in lo..=hi {
        out.push(spectral_cluster(graph, k, seed)?);
    }
    Ok(out)
}
