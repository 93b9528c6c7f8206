//! Cannot-link constrained k-means over fleet primitives.
//!
//! Each primitive is embedded as a 5-moment feature vector (mean v, mean a,
//! var v, var a, cov va), z-scored per channel so velocity magnitudes do not
//! dominate. Clustering is COP-style k-means: primitives from the same
//! vehicle must never share a cluster. Clusters are then ranked by their
//! pooled share of data points, which becomes the weight ω used in scoring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{Mat2, Vec2};
use crate::primitives::Primitive;
use crate::rng::CounterRng;

/// Paper-scale default cluster count.
pub const DEFAULT_K: usize = 200;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_RESTARTS: usize = 5;

/// 5-moment embedding: [mean_v, mean_a, var_v, var_a, cov_va].
pub type FeatureVector = [f64; 5];

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("no primitives to cluster")]
    EmptyInput,
    #[error("k = {k} exceeds the number of primitives n = {n}")]
    InvalidK { k: usize, n: usize },
    #[error(
        "primitive {point} cannot be placed: its cannot-link partners already occupy \
         every cluster (a vehicle has more primitives than k)"
    )]
    InfeasibleConstraints { point: usize },
}

/// Per-channel z-score parameters of the feature embedding, kept so feature
/// coordinates can be mapped back to physical moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStandardization {
    pub mean: FeatureVector,
    pub std: FeatureVector,
}

impl FeatureStandardization {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 5],
            std: [1.0; 5],
        }
    }

    pub fn apply(&self, raw: &FeatureVector) -> FeatureVector {
        std::array::from_fn(|i| (raw[i] - self.mean[i]) / self.std[i])
    }

    pub fn invert(&self, z: &FeatureVector) -> FeatureVector {
        std::array::from_fn(|i| z[i] * self.std[i] + self.mean[i])
    }
}

/// Physical-unit pooled moments of one cluster's member data points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMoments {
    pub point_count: usize,
    pub mean: Vec2,
    pub cov: Mat2,
}

impl ClusterMoments {
    pub fn empty() -> Self {
        Self {
            point_count: 0,
            mean: [0.0; 2],
            cov: [[0.0; 2]; 2],
        }
    }
}

/// Constrained k-means fit plus cluster ranking.
///
/// `assignment[i]` is the cluster id of the i-th input primitive. `rank[r]`
/// is the cluster id holding rank r (descending omega; ties broken by lower
/// cluster id). `omega`, `rank`, and `cluster_moments` are filled by
/// [`rank_clusters`]; a bare [`fit_constrained_kmeans`] result leaves them
/// empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<FeatureVector>,
    pub standardization: FeatureStandardization,
    pub assignment: Vec<usize>,
    pub cluster_moments: Vec<ClusterMoments>,
    pub omega: Vec<f64>,
    pub rank: Vec<usize>,
    pub objective: f64,
}

/// Raw (unstandardized) 5-moment feature of a primitive.
pub fn raw_feature(p: &Primitive) -> FeatureVector {
    [p.mean[0], p.mean[1], p.cov[0][0], p.cov[1][1], p.cov[0][1]]
}

/// Embed primitives as z-scored 5-moment features.
///
/// Channels use the sample (n−1) standard deviation; a degenerate channel
/// (zero or non-finite spread, or a single primitive) keeps std = 1 so it
/// contributes a constant zero coordinate instead of NaN.
pub fn embed(primitives: &[Primitive]) -> (Vec<FeatureVector>, FeatureStandardization) {
    let raws: Vec<FeatureVector> = primitives.iter().map(raw_feature).collect();
    let n = raws.len();
    let mut mean = [0.0f64; 5];
    for r in &raws {
        for c in 0..5 {
            mean[c] += r[c];
        }
    }
    if n > 0 {
        for m in &mut mean {
            *m /= n as f64;
        }
    }
    let mut std = [1.0f64; 5];
    if n > 1 {
        for c in 0..5 {
            let ss: f64 = raws.iter().map(|r| (r[c] - mean[c]).powi(2)).sum();
            let s = (ss / (n - 1) as f64).sqrt();
            if s.is_finite() && s > 0.0 {
                std[c] = s;
            }
        }
    }
    let params = FeatureStandardization { mean, std };
    let features = raws.iter().map(|r| params.apply(r)).collect();
    (features, params)
}

/// All index pairs of primitives sharing a vehicle (the cannot-link set).
pub fn cannot_link_pairs(primitives: &[Primitive]) -> Vec<(usize, usize)> {
    let mut groups: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, p) in primitives.iter().enumerate() {
        groups.entry(p.vehicle_id.as_str()).or_default().push(i);
    }
    let mut pairs = Vec::new();
    for idxs in groups.values() {
        for (a, &i) in idxs.iter().enumerate() {
            for &j in &idxs[a + 1..] {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

fn dist2(a: &FeatureVector, b: &FeatureVector) -> f64 {
    let mut s = 0.0;
    for i in 0..5 {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// Greedy constrained assignment: points in `order` take the nearest
/// centroid whose cluster holds none of their already-assigned cannot-link
/// partners (distance ties go to the lower cluster id).
fn assign_greedy(
    features: &[FeatureVector],
    order: &[usize],
    neighbors: &[Vec<usize>],
    centroids: &[FeatureVector],
) -> Result<(Vec<usize>, f64), ClusterError> {
    let k = centroids.len();
    let mut assignment = vec![usize::MAX; features.len()];
    let mut objective = 0.0;
    let mut forbidden = vec![false; k];
    for &p in order {
        forbidden.iter_mut().for_each(|f| *f = false);
        for &q in &neighbors[p] {
            if assignment[q] != usize::MAX {
                forbidden[assignment[q]] = true;
            }
        }
        let mut best: Option<(f64, usize)> = None;
        for (c, centroid) in centroids.iter().enumerate() {
            if forbidden[c] {
                continue;
            }
            let d = dist2(&features[p], centroid);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
        let Some((d, c)) = best else {
            return Err(ClusterError::InfeasibleConstraints { point: p });
        };
        assignment[p] = c;
        objective += d;
    }
    Ok((assignment, objective))
}

fn update_centroids(
    features: &[FeatureVector],
    assignment: &[usize],
    prev: &[FeatureVector],
) -> Vec<FeatureVector> {
    let k = prev.len();
    let mut sums = vec![[0.0f64; 5]; k];
    let mut counts = vec![0usize; k];
    for (f, &c) in features.iter().zip(assignment) {
        counts[c] += 1;
        for i in 0..5 {
            sums[c][i] += f[i];
        }
    }
    (0..k)
        .map(|c| {
            // Empty clusters keep their previous centroid (not re-seeded).
            if counts[c] == 0 {
                prev[c]
            } else {
                std::array::from_fn(|i| sums[c][i] / counts[c] as f64)
            }
        })
        .collect()
}

/// k-means++ seeding: first centroid uniform, then proportional to the
/// squared distance to the nearest already-chosen centroid.
fn kmeanspp_init(features: &[FeatureVector], k: usize, rng: &mut CounterRng) -> Vec<FeatureVector> {
    let n = features.len();
    let first = rng.next_below(n as u64) as usize;
    let mut centroids = vec![features[first]];
    let mut d2: Vec<f64> = features
        .iter()
        .map(|f| dist2(f, &features[first]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 && total.is_finite() {
            let mut u = rng.next_f64() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            // All remaining mass is zero (duplicate points): fall back to a
            // uniform draw so seeding still terminates deterministically.
            rng.next_below(n as u64) as usize
        };
        centroids.push(features[chosen]);
        for (i, f) in features.iter().enumerate() {
            d2[i] = d2[i].min(dist2(f, &features[chosen]));
        }
    }
    centroids
}

/// COP-style constrained k-means, best of `restarts` seeded runs.
///
/// `point_counts` orders the greedy assignment (descending, ties by index) so
/// high-mass primitives get first pick of centroids. Each run alternates
/// greedy constrained assignment with mean updates; if a sweep would raise
/// the objective (possible under constraints, unlike vanilla k-means) the run
/// reverts to the previous state and stops, so the per-iteration objective is
/// non-increasing and the final assignment is always the fixed point of a
/// greedy pass against the returned centroids.
pub fn fit_constrained_kmeans(
    features: &[FeatureVector],
    point_counts: &[usize],
    cannot_link: &[(usize, usize)],
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<ClusterModel, ClusterError> {
    let n = features.len();
    if n == 0 {
        return Err(ClusterError::EmptyInput);
    }
    assert_eq!(
        point_counts.len(),
        n,
        "one point count per feature vector required"
    );
    if k == 0 || k > n {
        return Err(ClusterError::InvalidK { k, n });
    }

    let mut neighbors = vec![Vec::new(); n];
    for &(i, j) in cannot_link {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(point_counts[i]), i));

    let root = CounterRng::new(seed).derive("kmeans");
    let mut best: Option<(f64, Vec<FeatureVector>, Vec<usize>)> = None;
    for restart in 0..restarts.max(1) {
        let mut rng = root.derive_index(restart as u64);
        let mut centroids = kmeanspp_init(features, k, &mut rng);
        let (mut assignment, mut objective) =
            assign_greedy(features, &order, &neighbors, &centroids)?;
        for _ in 0..max_iter {
            let new_centroids = update_centroids(features, &assignment, &centroids);
            let (new_assignment, new_objective) =
                assign_greedy(features, &order, &neighbors, &new_centroids)?;
            if new_objective > objective + objective.abs() * 1e-12 + 1e-12 {
                break; // revert: keep the previous, cheaper state
            }
            let converged = new_assignment == assignment;
            assignment = new_assignment;
            centroids = new_centroids;
            objective = new_objective;
            if converged {
                break;
            }
        }
        if best.as_ref().is_none_or(|(bo, _, _)| objective < *bo) {
            best = Some((objective, centroids, assignment));
        }
    }
    let (objective, centroids, assignment) = best.expect("restarts >= 1");
    Ok(ClusterModel {
        k,
        centroids,
        standardization: FeatureStandardization::identity(),
        assignment,
        cluster_moments: Vec::new(),
        omega: Vec::new(),
        rank: Vec::new(),
        objective,
    })
}

/// Count-weighted merge of population moments: exact pooled mean/covariance
/// of the concatenation of the parts.
pub fn pooled_moments(parts: &[(usize, Vec2, Mat2)]) -> ClusterMoments {
    let total: usize = parts.iter().map(|(n, _, _)| n).sum();
    if total == 0 {
        return ClusterMoments::empty();
    }
    let tf = total as f64;
    let mut mean = [0.0f64; 2];
    let mut raw = [[0.0f64; 2]; 2]; // E[x xᵀ] accumulated count-weighted
    for (n, mu, cov) in parts {
        let w = *n as f64 / tf;
        for r in 0..2 {
            mean[r] += w * mu[r];
            for c in 0..2 {
                raw[r][c] += w * (cov[r][c] + mu[r] * mu[c]);
            }
        }
    }
    let mut cov = [[0.0f64; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            cov[r][c] = raw[r][c] - mean[r] * mean[c];
        }
    }
    ClusterMoments {
        point_count: total,
        mean,
        cov,
    }
}

/// Fill `omega`, `rank`, and `cluster_moments` from the member primitives.
///
/// omega_c = member point count / total point count; rank sorts cluster ids
/// by descending omega (ties by lower id). Empty clusters get omega 0, zero
/// moments, and sort last.
pub fn rank_clusters(mut model: ClusterModel, primitives: &[Primitive]) -> ClusterModel {
    assert_eq!(
        model.assignment.len(),
        primitives.len(),
        "assignment must cover all primitives"
    );
    let k = model.k;
    let mut member_stats: Vec<Vec<(usize, Vec2, Mat2)>> = vec![Vec::new(); k];
    for (p, &c) in primitives.iter().zip(&model.assignment) {
        member_stats[c].push((p.point_count, p.mean, p.cov));
    }
    let moments: Vec<ClusterMoments> = member_stats.iter().map(|m| pooled_moments(m)).collect();
    let total: usize = moments.iter().map(|m| m.point_count).sum();
    let omega: Vec<f64> = moments
        .iter()
        .map(|m| {
            if total == 0 {
                0.0
            } else {
                m.point_count as f64 / total as f64
            }
        })
        .collect();
    let mut rank: Vec<usize> = (0..k).collect();
    rank.sort_by(|&a, &b| {
        omega[b]
            .partial_cmp(&omega[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.cmp(&b))
    });
    model.cluster_moments = moments;
    model.omega = omega;
    model.rank = rank;
    model
}

/// Embed, constrain, fit, and rank in one call — the pipeline entry point.
pub fn cluster_primitives(
    primitives: &[Primitive],
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<ClusterModel, ClusterError> {
    let (features, standardization) = embed(primitives);
    let pairs = cannot_link_pairs(primitives);
    let point_counts: Vec<usize> = primitives.iter().map(|p| p.point_count).collect();
    let mut model = fit_constrained_kmeans(
        &features,
        &point_counts,
        &pairs,
        k,
        seed,
        max_iter,
        restarts,
    )?;
    model.standardization = standardization;
    Ok(rank_clusters(model, primitives))
}
