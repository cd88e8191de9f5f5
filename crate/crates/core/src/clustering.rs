//! Offline dual-level partition of the sample pool.
//!
//! Samples are first binned by instruction-following difficulty (IFD) into
//! fixed-width intervals; each non-empty bin becomes one bandit arm. Inside a
//! bin, k-means over task embeddings produces the finer task clusters across
//! which a batch quota is spread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One data point and its running selection state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub ifd: f64,
    pub embedding: Vec<f64>,
    /// Latest observed training loss (nats).
    pub current_loss: f64,
    pub idu: f64,
    pub last_selected_iter: Option<usize>,
    pub difficulty_bin: Option<usize>,
    pub task_cluster: Option<usize>,
}

impl SampleRecord {
    pub fn new(id: u64, ifd: f64, embedding: Vec<f64>, loss: f64) -> Self {
        Self {
            id,
            ifd,
            embedding,
            current_loss: loss,
            idu: loss,
            last_selected_iter: None,
            difficulty_bin: None,
            task_cluster: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCluster {
    pub index: usize,
    /// Sorted ascending.
    pub member_ids: Vec<u64>,
    pub centroid: Vec<f64>,
}

impl TaskCluster {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

/// A difficulty bin; the unit the bandit chooses among.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyCluster {
    pub index: usize,
    /// Half-open `[lo, hi)`; the overflow bin has `hi = +inf`.
    pub ifd_range: (f64, f64),
    pub task_clusters: Vec<TaskCluster>,
    pub size: usize,
}

impl DifficultyCluster {
    pub fn member_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.task_clusters
            .iter()
            .flat_map(|tc| tc.member_ids.iter().copied())
    }
}

/// `PPL(y|x) / PPL(y)`.
pub fn compute_ifd(ppl_conditional: f64, ppl_unconditional: f64) -> Result<f64> {
    if !(ppl_conditional > 0.0 && ppl_conditional.is_finite()) {
        return Err(Error::domain(
            "ppl_conditional",
            format!("must be positive and finite, got {ppl_conditional}"),
        ));
    }
    if !(ppl_unconditional > 0.0 && ppl_unconditional.is_finite()) {
        return Err(Error::domain(
            "ppl_unconditional",
            format!("must be positive and finite, got {ppl_unconditional}"),
        ));
    }
    Ok(ppl_conditional / ppl_unconditional)
}

/// Raw bin index for one IFD value, with overflow clamped into the last bin.
pub fn bin_index(ifd: f64, bin_width: f64, num_bins: usize) -> usize {
    let raw = (ifd / bin_width).floor();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(num_bins - 1)
    }
}

/// Bin samples by IFD. Empty bins are dropped and the survivors re-indexed
/// densely in ascending IFD order. Each returned cluster holds a single task
/// cluster spanning the whole bin; [`split_tasks`] refines it.
pub fn bin_by_difficulty(
    samples: &[SampleRecord],
    bin_width: f64,
    num_bins: usize,
) -> Result<Vec<DifficultyCluster>> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::domain("bin_width", format!("must be positive, got {bin_width}")));
    }
    if num_bins == 0 {
        return Err(Error::domain("num_bins", "must be at least 1"));
    }
    let mut members: Vec<Vec<u64>> = vec![Vec::new(); num_bins];
    for s in samples {
        if !(s.ifd >= 0.0) {
            return Err(Error::domain("ifd", format!("sample {} has ifd {}", s.id, s.ifd)));
        }
        members[bin_index(s.ifd, bin_width, num_bins)].push(s.id);
    }

    let dim = samples.first().map_or(0, |s| s.embedding.len());
    let mut out = Vec::new();
    for (raw_bin, mut ids) in members.into_iter().enumerate() {
        if ids.is_empty() {
            continue;
        }
        ids.sort_unstable();
        ids.dedup();
        let lo = raw_bin as f64 * bin_width;
        let hi = if raw_bin + 1 == num_bins {
            f64::INFINITY
        } else {
            (raw_bin + 1) as f64 * bin_width
        };
        let size = ids.len();
        out.push(DifficultyCluster {
            index: out.len(),
            ifd_range: (lo, hi),
            task_clusters: vec![TaskCluster {
                index: 0,
                member_ids: ids,
                centroid: vec![0.0; dim],
            }],
            size,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn objective(&self) -> f64 {
        self.objective_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = Some(i);
                    break;
                }
                target -= d;
            }
            // Round-off can walk past the end; fall back to the last positive mass.
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            chosen.iter().position(|&c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = points[pick].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with seeded k-means++ initialization.
pub fn kmeans(points: &[Vec<f64>], k: usize, max_iters: usize, seed: u64) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::domain("points", "empty input"));
    }
    if k == 0 || k > points.len() {
        return Err(Error::domain(
            "k",
            format!("need 1 <= k <= {} points, got {k}", points.len()),
        ));
    }
    let dim = points[0].len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::domain(
            "points",
            format!("mixed dimensions {dim} and {}", p.len()),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut objective_history = Vec::new();
    let mut iterations = 0;

    loop {
        let mut changed = false;
        let mut objective = 0.0;
        let mut dists = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            if assignments[i] != j {
                assignments[i] = j;
                changed = true;
            }
            objective += d;
            dists.push(d);
        }
        objective_history.push(objective);
        if !changed || iterations >= max_iters {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s * inv).collect();
            }
        }
        // An empty cluster takes over the point worst served by a cluster
        // that can spare it; that point's cost drops to zero.
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let donor = (0..points.len())
                .filter(|&i| counts[assignments[i]] > 1)
                .fold(None::<(usize, f64)>, |best, i| match best {
                    Some((_, bd)) if dists[i] <= bd => best,
                    _ => Some((i, dists[i])),
                });
            if let Some((i, _)) = donor {
                counts[assignments[i]] -= 1;
                counts[j] = 1;
                dists[i] = 0.0;
                centroids[j] = points[i].clone();
            }
        }
    }

    Ok(KMeansResult {
        assignments,
        centroids,
        objective_history,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub mean_size: f64,
    /// Population convention: `(1/K) Σ (|C_i| - mean)^2 / mean^2`.
    pub cv_squared: f64,
}

pub fn cluster_stats(sizes: &[f64]) -> Result<ClusterStats> {
    if sizes.is_empty() {
        return Err(Error::domain("sizes", "at least one cluster required"));
    }
    if let Some(s) = sizes.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::domain("sizes", format!("sizes must be positive, got {s}")));
    }
    let k = sizes.len() as f64;
    let mean_size = sizes.iter().sum::<f64>() / k;
    let var = sizes.iter().map(|s| (s - mean_size).powi(2)).sum::<f64>() / k;
    Ok(ClusterStats {
        mean_size,
        cv_squared: var / (mean_size * mean_size),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    pub bin_width: f64,
    pub num_bins: usize,
    /// Task clusters per difficulty bin (reduced to the bin population when smaller).
    pub task_clusters: usize,
    pub kmeans_max_iters: usize,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            bin_width: 0.1,
            num_bins: 10,
            task_clusters: 4,
            kmeans_max_iters: 100,
            seed: 0,
        }
    }
}

/// Replace a bin's task clusters with a k-means split of its members.
pub fn split_tasks(
    cluster: &mut DifficultyCluster,
    samples: &[SampleRecord],
    index_of: &std::collections::HashMap<u64, usize>,
    m: usize,
    max_iters: usize,
    seed: u64,
) -> Result<()> {
    let ids: Vec<u64> = cluster.member_ids().collect();
    let points: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| samples[index_of[id]].embedding.clone())
        .collect();
    let k = m.clamp(1, ids.len());
    let km = kmeans(&points, k, max_iters, seed)?;

    let mut groups: Vec<Vec<u64>> = vec![Vec::new(); k];
    for (id, &a) in ids.iter().zip(&km.assignments) {
        groups[a].push(*id);
    }
    let mut task_clusters = Vec::new();
    for (members, centroid) in groups.into_iter().zip(km.centroids) {
        if members.is_empty() {
            continue;
        }
        task_clusters.push(TaskCluster {
            index: task_clusters.len(),
            member_ids: members,
            centroid,
        });
    }
    cluster.task_clusters = task_clusters;
    cluster.size = cluster.task_clusters.iter().map(TaskCluster::len).sum();
    Ok(())
}

/// The full two-level partition over a sample pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub clusters: Vec<DifficultyCluster>,
}

impl Partition {
    /// Bin, split, and write the cluster coordinates back onto each sample.
    pub fn build(samples: &mut [SampleRecord], cfg: &PartitionConfig) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("samples", "empty dataset"));
        }
        let dim = samples[0].embedding.len();
        if let Some(s) = samples.iter().find(|s| s.embedding.len() != dim) {
            return Err(Error::domain(
                "embedding",
                format!("sample {} has dimension {} (expected {dim})", s.id, s.embedding.len()),
            ));
        }
        let index_of: std::collections::HashMap<u64, usize> =
            samples.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        if index_of.len() != samples.len() {
            return Err(Error::domain("id", "duplicate sample ids"));
        }

        let mut clusters = bin_by_difficulty(samples, cfg.bin_width, cfg.num_bins)?;
        for c in clusters.iter_mut() {
            let seed = cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(c.index as u64 + 1));
            split_tasks(c, samples, &index_of, cfg.task_clusters, cfg.kmeans_max_iters, seed)?;
        }
        for c in &clusters {
            for tc in &c.task_clusters {
                for id in &tc.member_ids {
                    let s = &mut samples[index_of[id]];
                    s.difficulty_bin = Some(c.index);
                    s.task_cluster = Some(tc.index);
                }
            }
        }
        Ok(Self { clusters })
    }

    pub fn num_arms(&self) -> usize {
        self.clusters.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.size).collect()
    }

    pub fn stats(&self) -> Result<ClusterStats> {
        let sizes: Vec<f64> = self.clusters.iter().map(|c| c.size as f64).collect();
        cluster_stats(&sizes)
    }
}
