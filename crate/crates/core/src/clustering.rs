//! k-means with seeded k-means++ initialization and Lloyd iterations.
//!
//! Points are processed in the order of the input matrix (callers pass rows
//! sorted by document id), so centroid sums are accumulated in a fixed order
//! and a given `(points, k, seed)` always yields bitwise-identical output.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, MatrixMeta, FORMAT_VERSION};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub max_iter: usize,
    /// Stop once the relative change in inertia falls below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    /// Row-major `k × dim`.
    pub centroids: Vec<f64>,
    pub ids: Vec<String>,
    pub assignment: Vec<usize>,
    /// Euclidean distance of each point to its own centroid.
    pub distance: Vec<f64>,
    pub inertia: f64,
    /// Inertia after the initial assignment and after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct(points: &EmbeddingMatrix) -> usize {
    (0..points.len())
        .map(|i| {
            points
                .row(i)
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<u64>>()
        })
        .collect::<HashSet<_>>()
        .len()
}

/// Nearest centroid (ties go to the lowest index) and its squared distance.
fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks(dim).enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus(points: &EmbeddingMatrix, k: usize, rng: &mut seed::Rng) -> Vec<f64> {
    let n = points.len();
    let dim = points.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(points.row(rng.random_range(0..n)));
    let mut closest: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let chosen = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave the running sum just short of the target.
            pick.unwrap_or_else(|| {
                closest
                    .iter()
                    .rposition(|&d| d > 0.0)
                    .expect("positive total")
            })
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(points.row(chosen));
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(sq_dist(points.row(i), &centroids[start..start + dim]));
        }
    }
    centroids
}

struct Assignment {
    labels: Vec<usize>,
    sq: Vec<f64>,
    inertia: f64,
}

fn assign(points: &EmbeddingMatrix, centroids: &[f64]) -> Assignment {
    let dim = points.dim();
    let mut labels = Vec::with_capacity(points.len());
    let mut sq = Vec::with_capacity(points.len());
    for i in 0..points.len() {
        let (c, d) = nearest(points.row(i), centroids, dim);
        labels.push(c);
        sq.push(d);
    }
    let inertia = sq.iter().sum();
    Assignment {
        labels,
        sq,
        inertia,
    }
}

/// Recomputes centroids as member means. An empty cluster takes over the
/// point currently farthest from its centroid.
fn update_centroids(points: &EmbeddingMatrix, k: usize, current: &mut Assignment) -> Vec<f64> {
    let dim = points.dim();
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &c) in current.labels.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            let far = (0..points.len())
                .filter(|&i| counts[current.labels[i]] > 1)
                .max_by(|&a, &b| current.sq[a].total_cmp(&current.sq[b]).then(b.cmp(&a)))
                .expect("k <= distinct points leaves a multi-member cluster");
            let old = current.labels[far];
            counts[old] -= 1;
            for (s, v) in sums[old * dim..(old + 1) * dim]
                .iter_mut()
                .zip(points.row(far))
            {
                *s -= v;
            }
            counts[c] = 1;
            sums[c * dim..(c + 1) * dim].copy_from_slice(points.row(far));
            current.labels[far] = c;
            current.sq[far] = 0.0;
        }
    }
    for c in 0..k {
        let n = counts[c] as f64;
        sums[c * dim..(c + 1) * dim]
            .iter_mut()
            .for_each(|s| *s /= n);
    }
    sums
}

/// Fits k-means to the rows of `points`.
pub fn kmeans_fit(
    points: &EmbeddingMatrix,
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<ClusterModel> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "k-means needs k >= 2, got {k}"
        )));
    }
    let distinct = count_distinct(points);
    if distinct < k {
        return Err(Error::TooFewDistinctPoints { distinct, k });
    }
    let mut rng = seed::rng(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut current = assign(points, &centroids);
    let mut trace = vec![current.inertia];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        centroids = update_centroids(points, k, &mut current);
        let next = assign(points, &centroids);
        debug_assert!(
            next.inertia <= current.inertia * (1.0 + 1e-12) + 1e-12,
            "inertia rose from {} to {}",
            current.inertia,
            next.inertia
        );
        let unchanged = next.labels == current.labels;
        let rel_change = if current.inertia > 0.0 {
            (current.inertia - next.inertia).abs() / current.inertia
        } else {
            0.0
        };
        trace.push(next.inertia);
        current = next;
        if unchanged || rel_change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(ClusterModel {
        k,
        dim: points.dim(),
        seed,
        centroids,
        ids: points.ids().to_vec(),
        distance: current.sq.iter().map(|d| d.sqrt()).collect(),
        assignment: current.labels,
        inertia: current.inertia,
        inertia_trace: trace,
        iterations_run: iterations,
        converged,
    })
}

#[derive(Serialize, Deserialize)]
struct ClusterMeta {
    format_version: u32,
    k: usize,
    dim: usize,
    seed: u64,
    inertia: f64,
    iterations_run: usize,
    converged: bool,
    centroids: MatrixMeta,
    assignments_file: String,
}

impl ClusterModel {
    pub fn centroid(&self, cluster: usize) -> &[f64] {
        &self.centroids[cluster * self.dim..(cluster + 1) * self.dim]
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }

    pub fn cluster_size(&self, cluster: usize) -> usize {
        self.members(cluster).count()
    }

    /// Members of `cluster` ordered by ascending distance to the centroid,
    /// ties broken by id.
    pub fn rank_by_centroid_distance(&self, cluster: usize) -> Vec<&str> {
        let mut members: Vec<usize> = self.members(cluster).collect();
        members.sort_by(|&a, &b| {
            self.distance[a]
                .total_cmp(&self.distance[b])
                .then_with(|| self.ids[a].cmp(&self.ids[b]))
        });
        members.into_iter().map(|i| self.ids[i].as_str()).collect()
    }

    /// Writes `meta.json`, `centroids.f32` and `assignments.csv`
    /// (`doc_id,cluster,distance`).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        artifact::create_dir(dir)?;
        let centroids =
            artifact::write_f32_matrix(dir, "centroids.f32", self.k, self.dim, &self.centroids)?;
        let path = dir.join("assignments.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["doc_id", "cluster", "distance"])?;
        for i in 0..self.ids.len() {
            w.write_record([
                self.ids[i].as_str(),
                &self.assignment[i].to_string(),
                &self.distance[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        artifact::write_json(
            &dir.join("meta.json"),
            &ClusterMeta {
                format_version: FORMAT_VERSION,
                k: self.k,
                dim: self.dim,
                seed: self.seed,
                inertia: self.inertia,
                iterations_run: self.iterations_run,
                converged: self.converged,
                centroids,
                assignments_file: "assignments.csv".into(),
            },
        )
    }

    /// Loads a model written by [`ClusterModel::write_dir`]. The inertia
    /// trace is not persisted.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta: ClusterMeta = artifact::read_json(&dir.join("meta.json"), "cluster")?;
        let centroids = artifact::read_f32_matrix(dir, &meta.centroids, "cluster")?;
        let path = dir.join(&meta.assignments_file);
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                producer: "cluster",
            });
        }
        let mut ids = Vec::new();
        let mut assignment = Vec::new();
        let mut distance = Vec::new();
        for record in csv::Reader::from_path(&path)?.records() {
            let record = record?;
            let corrupt = |m: &str| Error::CorruptArtifact {
                path: path.clone(),
                message: m.to_string(),
            };
            ids.push(
                record
                    .get(0)
                    .ok_or_else(|| corrupt("missing doc_id"))?
                    .to_string(),
            );
            assignment.push(
                record
                    .get(1)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| corrupt("bad cluster"))?,
            );
            distance.push(
                record
                    .get(2)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| corrupt("bad distance"))?,
            );
        }
        Ok(ClusterModel {
            k: meta.k,
            dim: meta.dim,
            seed: meta.seed,
            centroids,
            ids,
            assignment,
            distance,
            inertia: meta.inertia,
            inertia_trace: Vec::new(),
            iterations_run: meta.iterations_run,
            converged: meta.converged,
        })
    }
}

/// Writes a compact text summary of cluster sizes, mostly for examples.
pub fn write_summary(model: &ClusterModel, mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "k={} inertia={:.6} iterations={} converged={}",
        model.k, model.inertia, model.iterations_run, model.converged
    )?;
    for c in 0..model.k {
        writeln!(out, "  cluster {c}: {} members", model.cluster_size(c))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Backend;
    use rand::Rng;

    pub(crate) fn matrix(points: &[Vec<f64>]) -> EmbeddingMatrix {
        let dim = points[0].len();
        let ids = (0..points.len()).map(|i| format!("p{i}")).collect();
        EmbeddingMatrix::from_rows(Backend::Tfidf, dim, ids, points.concat(), false).unwrap()
    }

    /// Minimum inertia over every labeling of the points with at most k labels.
    fn brute_force_inertia(points: &[Vec<f64>], k: usize) -> f64 {
        let n = points.len();
        let dim = points[0].len();
        let mut best = f64::INFINITY;
        let mut labels = vec![0usize; n];
        loop {
            let mut cost = 0.0;
            for c in 0..k {
                let members: Vec<&Vec<f64>> = (0..n)
                    .filter(|&i| labels[i] == c)
                    .map(|i| &points[i])
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mean: Vec<f64> = (0..dim)
                    .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
                    .collect();
                cost += members.iter().map(|p| sq_dist(p, &mean)).sum::<f64>();
            }
            best = best.min(cost);
            let mut i = 0;
            while i < n {
                labels[i] += 1;
                if labels[i] < k {
                    break;
                }
                labels[i] = 0;
                i += 1;
            }
            if i == n {
                return best;
            }
        }
    }

    #[test]
    fn four_point_example() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ];
        assert!((brute_force_inertia(&pts, 2) - 1.0).abs() < 1e-12);
        let m = kmeans_fit(&matrix(&pts), 2, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(m.assignment[0], m.assignment[1]);
        assert_eq!(m.assignment[2], m.assignment[3]);
        assert_ne!(m.assignment[0], m.assignment[2]);
        assert!((m.inertia - 1.0).abs() < 1e-12);
        let left = m.assignment[0];
        assert_eq!(m.centroid(left), &[0.0, 0.5]);
        assert_eq!(m.centroid(1 - left), &[10.0, 0.5]);
        assert!(m.converged);
    }

    #[test]
    fn one_cluster_per_point_has_zero_inertia() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 3.0],
            vec![5.0, 5.0],
        ];
        let m = kmeans_fit(&matrix(&pts), 4, 0, &KMeansConfig::default()).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(
            kmeans_fit(&matrix(&pts), 3, 0, &KMeansConfig::default()),
            Err(Error::TooFewDistinctPoints { distinct: 2, k: 3 })
        ));
        assert!(kmeans_fit(&matrix(&pts), 1, 0, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn deterministic() {
        let mut rng = seed::rng(4);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..5).map(|_| rng.random::<f64>()).collect())
            .collect();
        let m = matrix(&pts);
        let a = kmeans_fit(&m, 6, 17, &KMeansConfig::default()).unwrap();
        let b = kmeans_fit(&m, 6, 17, &KMeansConfig::default()).unwrap();
        assert_eq!(a.assignment, b.assignment);
        let bits = |m: &ClusterModel| m.centroids.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn invariants_on_random_data() {
        let mut rng = seed::rng(8);
        for trial in 0..10 {
            let n = 50 + trial * 20;
            let pts: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
                .collect();
            let m = kmeans_fit(
                &matrix(&pts),
                2 + trial % 5,
                trial as u64,
                &KMeansConfig::default(),
            )
            .unwrap();
            for w in m.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            let recomputed: f64 = (0..n)
                .map(|i| sq_dist(&pts[i], m.centroid(m.assignment[i])))
                .sum();
            assert!((recomputed - m.inertia).abs() <= 1e-6 * m.inertia.max(1e-12));
            for (i, p) in pts.iter().enumerate() {
                let own = m.distance[i];
                for c in 0..m.k {
                    assert!(own <= sq_dist(p, m.centroid(c)).sqrt() + 1e-9);
                }
            }
        }
    }

    #[test]
    fn small_instances_reach_global_optimum() {
        let mut rng = seed::rng(12);
        for _ in 0..10 {
            let pts: Vec<Vec<f64>> = (0..7)
                .map(|_| (0..2).map(|_| rng.random::<f64>() * 10.0).collect())
                .collect();
            for k in 2..=3 {
                let best = (0..50)
                    .map(|s| {
                        kmeans_fit(&matrix(&pts), k, s, &KMeansConfig::default())
                            .unwrap()
                            .inertia
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!((best - brute_force_inertia(&pts, k)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ranking_sorts_by_distance_then_id() {
        let model = ClusterModel {
            k: 2,
            dim: 1,
            seed: 0,
            centroids: vec![0.0, 9.0],
            ids: vec![
                "a".into(),
                "b".into(),
                "c".into(),
                "y".into(),
                "x".into(),
                "z".into(),
            ],
            assignment: vec![0, 0, 0, 1, 1, 1],
            distance: vec![0.5, 0.2, 0.9, 0.3, 0.3, 0.1],
            inertia: 0.0,
            inertia_trace: vec![],
            iterations_run: 0,
            converged: true,
        };
        assert_eq!(model.rank_by_centroid_distance(0), ["b", "a", "c"]);
        assert_eq!(model.rank_by_centroid_distance(1), ["z", "x", "y"]);
    }

    #[test]
    fn ranking_matches_recomputed_sort() {
        let mut rng = seed::rng(30);
        let pts: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let m = kmeans_fit(&matrix(&pts), 5, 1, &KMeansConfig::default()).unwrap();
        for c in 0..m.k {
            let mut oracle: Vec<(f64, String)> = (0..pts.len())
                .filter(|&i| m.assignment[i] == c)
                .map(|i| (sq_dist(&pts[i], m.centroid(c)).sqrt(), format!("p{i}")))
                .collect();
            oracle.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let expected: Vec<&str> = oracle.iter().map(|o| o.1.as_str()).collect();
            assert_eq!(m.rank_by_centroid_distance(c), expected);
        }
    }

    #[test]
    fn artifact_round_trip() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 0.0],
            vec![10.0, 1.0],
        ];
        let m = kmeans_fit(&matrix(&pts), 2, 3, &KMeansConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.write_dir(dir.path()).unwrap();
        let back = ClusterModel::read_dir(dir.path()).unwrap();
        assert_eq!(back.assignment, m.assignment);
        assert_eq!(back.ids, m.ids);
        assert_eq!(back.distance, m.distance);
        let csv = std::fs::read_to_string(dir.path().join("assignments.csv")).unwrap();
        assert!(csv.starts_with("doc_id,cluster,distance\n"));
    }
}
