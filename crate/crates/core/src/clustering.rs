//! k-means quantization of the hidden-pattern cloud and the mean silhouette
//! coefficient used to score a partition.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symbol::StepLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            n_init: 10,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    /// Cluster id of each pattern ("list-clusters").
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Nearest centroid by Euclidean distance, lowest index on ties.
pub fn assign_to_centroid(centroids: &[Vec<f64>], point: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

pub fn count_distinct(patterns: &[Vec<f64>]) -> usize {
    patterns
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

/// k-means++ seeding: each new centre is drawn with probability
/// proportional to its squared distance to the nearest chosen centre.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(patterns: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = patterns.len();
    let mut centroids = vec![patterns[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = patterns
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            rng.gen_range(0..n)
        };
        let c = patterns[pick].clone();
        for (d, p) in d2.iter_mut().zip(patterns) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_all(patterns: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    patterns
        .par_iter()
        .with_min_len(256)
        .map(|p| assign_to_centroid(centroids, p))
        .collect()
}

fn inertia_of(patterns: &[Vec<f64>], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    patterns
        .iter()
        .zip(assignment)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(patterns: &[Vec<f64>], centroids: &mut [Vec<f64>], assignment: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = 0.0;
        for (i, p) in patterns.iter().enumerate() {
            let d = squared_distance(p, &centroids[assignment[i]]);
            if sizes[assignment[i]] > 1 && d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        let Some(far) = far else {
            return;
        };
        centroids[empty] = patterns[far].clone();
        assignment[far] = empty;
    }
}

fn update_centroids(patterns: &[Vec<f64>], assignment: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in patterns.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
}

/// Lloyd iterations from the given centres until the assignment is stable
/// or `max_iter` is reached. Also returns the inertia after every
/// assignment step.
pub fn lloyd(
    patterns: &[Vec<f64>],
    mut centroids: Vec<Vec<f64>>,
    max_iter: usize,
) -> (ClusterAssignment, Vec<f64>) {
    let k = centroids.len();
    let mut assignment = assign_all(patterns, &centroids);
    let mut history = vec![inertia_of(patterns, &centroids, &assignment)];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        repair_empty(patterns, &mut centroids, &mut assignment);
        update_centroids(patterns, &assignment, &mut centroids);
        let next = assign_all(patterns, &centroids);
        history.push(inertia_of(patterns, &centroids, &next));
        if next == assignment {
            converged = true;
            break;
        }
        assignment = next;
    }
    if !converged {
        repair_empty(patterns, &mut centroids, &mut assignment);
        update_centroids(patterns, &assignment, &mut centroids);
    }
    let inertia = inertia_of(patterns, &centroids, &assignment);
    (
        ClusterAssignment {
            k,
            assignment,
            centroids,
            inertia,
            iterations,
        },
        history,
    )
}

pub fn kmeans(patterns: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans_with(patterns, k, seed, &KMeansConfig::default())
}

/// Best of `n_init` k-means++ seeded Lloyd runs by inertia. Restart `r`
/// draws from stream `r` of a ChaCha generator seeded with `seed`.
pub fn kmeans_with(
    patterns: &[Vec<f64>],
    k: usize,
    seed: u64,
    cfg: &KMeansConfig,
) -> Result<ClusterAssignment> {
    let distinct = count_distinct(patterns);
    if k < 2 || k > distinct {
        return Err(Error::InvalidK { k, distinct });
    }
    let runs: Vec<ClusterAssignment> = (0..cfg.n_init.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            let init = kmeans_plus_plus(patterns, k, &mut rng);
            lloyd(patterns, init, cfg.max_iter).0
        })
        .collect();
    Ok(runs
        .into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("at least one restart"))
}

/// Per-pattern silhouette values. Singleton clusters score 0.
pub fn silhouette_samples(patterns: &[Vec<f64>], assignment: &[usize]) -> Result<Vec<f64>> {
    if patterns.len() != assignment.len() {
        return Err(Error::LengthMismatch {
            patterns: patterns.len(),
            assignment: assignment.len(),
        });
    }
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::SingleCluster);
    }
    Ok(patterns
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let own = assignment[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (q, &a) in patterns.iter().zip(assignment) {
                sums[a] += distance(p, q);
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect())
}

pub fn silhouette_mean(patterns: &[Vec<f64>], assignment: &[usize]) -> Result<f64> {
    let s = silhouette_samples(patterns, assignment)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// Mean silhouette on a uniform subsample of at most `max_points` patterns.
pub fn silhouette_subsampled(
    patterns: &[Vec<f64>],
    assignment: &[usize],
    max_points: usize,
    seed: u64,
) -> Result<f64> {
    if patterns.len() <= max_points {
        return silhouette_mean(patterns, assignment);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, patterns.len(), max_points).into_vec();
    idx.sort_unstable();
    let p: Vec<Vec<f64>> = idx.iter().map(|&i| patterns[i].clone()).collect();
    let a: Vec<usize> = idx.iter().map(|&i| assignment[i]).collect();
    silhouette_mean(&p, &a)
}

/// CSV with columns `index,label,cluster`.
pub fn write_assignment_csv(path: &Path, labels: &[StepLabel], assignment: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "label", "cluster"])?;
    for (i, (l, c)) in labels.iter().zip(assignment).enumerate() {
        w.write_record([i.to_string(), l.to_string(), c.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_assignment_csv(path: &Path) -> Result<(Vec<StepLabel>, Vec<usize>)> {
    let mut r = csv::Reader::from_path(path)?;
    let mut labels = Vec::new();
    let mut clusters = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::format("assignment", format!("row {}", i + 1));
        if rec.len() != 3 || rec[0].parse::<usize>().ok() != Some(i) {
            return Err(bad());
        }
        labels.push(rec[1].parse()?);
        clusters.push(rec[2].parse().map_err(|_| bad())?);
    }
    Ok((labels, clusters))
}

/// One centroid per row, comma separated, no header.
pub fn write_centroids_csv(path: &Path, centroids: &[Vec<f64>]) -> Result<()> {
    let text: String = centroids
        .iter()
        .map(|c| {
            let row: Vec<String> = c.iter().map(|v| v.to_string()).collect();
            row.join(",") + "\n"
        })
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_centroids_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::format("centroids", e.to_string()))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, prop_assume, proptest};
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, per_blob: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        // radius ~0.1 per axis, centres 10 apart along every axis
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (b, centre) in [0.0, 10.0].iter().enumerate() {
            for _ in 0..per_blob {
                pts.push((0..8).map(|_| centre + noise.sample(&mut rng)).collect());
                truth.push(b);
            }
        }
        (pts, truth)
    }

    #[test]
    fn nearest_centroid_ties_go_low() {
        let c = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0], vec![2.0, 2.0], vec![-1.0, 0.0]];
        assert_eq!(assign_to_centroid(&c, &[2.0, 2.0]), 3);
        assert_eq!(assign_to_centroid(&c, &[0.0, 0.0]), 0);
        // equidistant to 1 and 4
        let c2 = vec![vec![9.0, 9.0], vec![1.0, 0.0], vec![9.0, 8.0], vec![7.0, 7.0], vec![-1.0, 0.0]];
        assert_eq!(assign_to_centroid(&c2, &[0.0, 0.0]), 1);
    }

    #[test]
    fn worked_example_list_clusters_shape() {
        // h0 and h4 coincide, h2 and h3 coincide
        let pts = vec![
            vec![0.0, 0.0],
            vec![5.0, 5.0],
            vec![9.0, 0.0],
            vec![9.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 9.0],
        ];
        let c = kmeans(&pts, 4, 1).unwrap();
        let a = &c.assignment;
        assert_eq!(a[0], a[4]);
        assert_eq!(a[2], a[3]);
        assert_eq!(c.inertia, 0.0);
        let distinct: HashSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn k_equals_distinct_points() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let c = kmeans(&pts, 6, 3).unwrap();
        assert_eq!(c.inertia, 0.0);
        let distinct: HashSet<_> = c.assignment.iter().collect();
        assert_eq!(distinct.len(), 6);
    }

    #[test]
    fn invalid_k() {
        let pts = vec![vec![0.0], vec![0.0], vec![1.0]];
        assert!(matches!(kmeans(&pts, 3, 0), Err(Error::InvalidK { k: 3, distinct: 2 })));
        assert!(kmeans(&pts, 1, 0).is_err());
        assert!(kmeans(&pts, 2, 0).is_ok());
    }

    #[test]
    fn recovers_separated_blobs() {
        let (pts, truth) = blobs(4, 100);
        let c = kmeans(&pts, 2, 9).unwrap();
        let agree = c.assignment.iter().zip(&truth).filter(|(a, t)| a == t).count();
        assert!(agree == pts.len() || agree == 0, "agree {agree}");
        for (p, &a) in pts.iter().zip(&c.assignment) {
            let brute = (0..2)
                .min_by(|&x, &y| {
                    squared_distance(p, &c.centroids[x])
                        .partial_cmp(&squared_distance(p, &c.centroids[y]))
                        .unwrap()
                })
                .unwrap();
            assert_eq!(a, brute);
        }
        assert!(silhouette_mean(&pts, &c.assignment).unwrap() > 0.95);
    }

    #[test]
    fn silhouette_hand_computed() {
        // two pairs 0.1 apart internally, 10 apart between pairs
        let pts = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![10.0, 0.0], vec![10.1, 0.0]];
        let s = silhouette_samples(&pts, &[0, 0, 1, 1]).unwrap();
        // point 0: a = 0.1, b = (10 + 10.1)/2 = 10.05
        let s0 = (10.05 - 0.1) / 10.05;
        // point 1: a = 0.1, b = (9.9 + 10.0)/2 = 9.95
        let s1 = (9.95 - 0.1) / 9.95;
        let expect = [s0, s1, s1, s0];
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!(silhouette_mean(&pts, &[0, 0, 1, 1]).unwrap() > 0.95);
    }

    #[test]
    fn silhouette_conventions() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert_eq!(silhouette_mean(&pts, &[0, 1]).unwrap(), 0.0);
        assert!(matches!(silhouette_mean(&pts, &[0, 0]), Err(Error::SingleCluster)));
        assert!(silhouette_mean(&pts, &[0]).is_err());

        // middle point sits on the boundary between the two pairs
        let pts = vec![vec![-1.1], vec![-1.0], vec![0.0], vec![1.0], vec![1.1]];
        let s = silhouette_samples(&pts, &[0, 0, 0, 1, 1]).unwrap();
        assert!(s[2].abs() < 0.1, "{}", s[2]);
    }

    #[test]
    fn inertia_never_increases() {
        let (pts, _) = blobs(8, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init: Vec<Vec<f64>> = (0..7).map(|_| pts[rng.gen_range(0..pts.len())].clone()).collect();
        let (c, history) = lloyd(&pts, init, 300);
        for w in history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{history:?}");
        }
        let ids: HashSet<_> = c.assignment.iter().collect();
        assert_eq!(ids.len(), 7);
    }

    #[test]
    fn repairs_empty_clusters() {
        // all centres start on the same point
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let (c, _) = lloyd(&pts, vec![vec![0.0]; 3], 300);
        let ids: HashSet<_> = c.assignment.iter().collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn perfect_partition_beats_random() {
        let (pts, truth) = blobs(6, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let random: Vec<usize> = (0..pts.len()).map(|_| rng.gen_range(0..2)).collect();
        assert!(silhouette_mean(&pts, &truth).unwrap() > silhouette_mean(&pts, &random).unwrap());
    }

    #[test]
    fn csv_files() {
        let dir = tempfile::tempdir().unwrap();
        let labels: Vec<StepLabel> = ["B0", "T1", "X2"].iter().map(|s| s.parse().unwrap()).collect();
        let p = dir.path().join("a.csv");
        write_assignment_csv(&p, &labels, &[0, 3, 2]).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "index,label,cluster\n0,B0,0\n1,T1,3\n2,X2,2\n"
        );
        assert_eq!(read_assignment_csv(&p).unwrap(), (labels, vec![0, 3, 2]));
        let c = vec![vec![0.5, -1.25], vec![1e-300, 3.0]];
        let q = dir.path().join("c.csv");
        write_centroids_csv(&q, &c).unwrap();
        assert_eq!(read_centroids_csv(&q).unwrap(), c);
    }

    proptest! {
        #[test]
        fn silhouette_ignores_cluster_names(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 4..30),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..pts.len()).map(|i| if i < 2 { i } else { rng.gen_range(0..4) }).collect();
            let perm = [2usize, 0, 3, 1];
            let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
            let a = silhouette_mean(&pts, &labels).unwrap();
            let b = silhouette_mean(&pts, &relabeled).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }

        #[test]
        fn random_points_match_exhaustive_nearest(
            centroids in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 8), 1..12),
            point in prop::collection::vec(-3.0f64..3.0, 8),
        ) {
            let got = assign_to_centroid(&centroids, &point);
            let best = centroids.iter().map(|c| squared_distance(c, &point)).fold(f64::INFINITY, f64::min);
            let first = centroids.iter().position(|c| squared_distance(c, &point) == best).unwrap();
            prop_assert_eq!(got, first);
        }

        #[test]
        fn converged_assignment_is_nearest(seed in 0u64..50, k in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let c = kmeans_with(&pts, k, seed, &KMeansConfig { n_init: 2, max_iter: 300 }).unwrap();
            prop_assume!(c.iterations < 300);
            for (p, &a) in pts.iter().zip(&c.assignment) {
                prop_assert_eq!(assign_to_centroid(&c.centroids, p), a);
            }
        }
    }
}
