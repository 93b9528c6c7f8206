//! Physical-unit driving-primitive statistics.
//!
//! Segmentation assigns every retained sample a primitive label on the
//! standardized scale. This module pools each label's samples in ORIGINAL
//! physical units (m/s, m/s²) into one [`Primitive`] record per used label,
//! then ranks primitives by data fraction and prunes the rank tail.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::GaussianMoments;
use crate::ingest::TripSeries;
use crate::linalg::{self, Mat2, Vec2};

/// Default fraction of the primitive count pruned from the rank tail.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PrimitiveError {
    #[error("label sequences cover {labels} trips but the vehicle has {trips} trips")]
    TripCountMismatch { labels: usize, trips: usize },
    #[error("trip {trip_id}: {labels} labels for {samples} samples")]
    Misaligned {
        trip_id: String,
        labels: usize,
        samples: usize,
    },
}

/// One contiguous run of a primitive label inside a trip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub trip_id: String,
    /// Index of the run's first sample within the trip.
    pub start: usize,
    /// Run length in samples.
    pub duration: usize,
}

/// Pooled physical statistics of one driving primitive on one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub vehicle_id: String,
    pub label: usize,
    /// Number of samples carrying this label across all trips.
    pub point_count: usize,
    /// Pooled mean of (v, a) in physical units.
    pub mean: Vec2,
    /// Pooled population covariance (divisor n) of (v, a).
    pub cov: Mat2,
    /// point_count / vehicle's total retained sample count.
    pub fraction: f64,
    pub segments: Vec<SegmentRef>,
}

impl Primitive {
    /// The primitive's Gaussian view used for KL coupling.
    pub fn moments(&self) -> GaussianMoments {
        GaussianMoments {
            mu: self.mean,
            sigma: self.cov,
        }
    }
}

/// Pool every label's samples (original physical units) into `Primitive`
/// records, one per label used anywhere in the vehicle's trips.
///
/// `label_seqs[k][i]` labels `trips[k].samples[i]`; the two must align 1:1.
/// Moments use the population (divisor n) convention, so a single-point label
/// gets a zero covariance matrix. Output is sorted by ascending label.
pub fn compute_primitives(
    label_seqs: &[Vec<usize>],
    trips: &[TripSeries],
    vehicle_id: &str,
) -> Result<Vec<Primitive>, PrimitiveError> {
    if label_seqs.len() != trips.len() {
        return Err(PrimitiveError::TripCountMismatch {
            labels: label_seqs.len(),
            trips: trips.len(),
        });
    }
    for (labels, trip) in label_seqs.iter().zip(trips) {
        if labels.len() != trip.samples.len() {
            return Err(PrimitiveError::Misaligned {
                trip_id: trip.trip_id.clone(),
                labels: labels.len(),
                samples: trip.samples.len(),
            });
        }
    }

    let mut points: BTreeMap<usize, Vec<Vec2>> = BTreeMap::new();
    let mut segments: BTreeMap<usize, Vec<SegmentRef>> = BTreeMap::new();
    for (labels, trip) in label_seqs.iter().zip(trips) {
        let mut run_start = 0usize;
        for (i, (&label, sample)) in labels.iter().zip(&trip.samples).enumerate() {
            points.entry(label).or_default().push([sample.v, sample.a]);
            let run_ends = i + 1 == labels.len() || labels[i + 1] != label;
            if run_ends {
                segments.entry(label).or_default().push(SegmentRef {
                    trip_id: trip.trip_id.clone(),
                    start: run_start,
                    duration: i + 1 - run_start,
                });
                run_start = i + 1;
            }
        }
    }

    let total: usize = points.values().map(Vec::len).sum();
    let mut out = Vec::with_capacity(points.len());
    for (label, pts) in points {
        let n = pts.len() as f64;
        let mut mean = [0.0f64; 2];
        for p in &pts {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let mut cov = [[0.0f64; 2]; 2];
        for p in &pts {
            let d = linalg::sub_vec(p, &mean);
            cov = linalg::add(&cov, &linalg::outer(&d));
        }
        cov = linalg::scale(&cov, 1.0 / n);
        out.push(Primitive {
            vehicle_id: vehicle_id.to_owned(),
            label,
            point_count: pts.len(),
            mean,
            cov,
            fraction: pts.len() as f64 / total as f64,
            segments: segments.remove(&label).unwrap_or_default(),
        });
    }
    Ok(out)
}

/// Sort primitives by descending fraction (ties: descending point_count,
/// then ascending label) and drop the lowest ⌈tail_fraction·n⌉ BY RANK
/// POSITION, always retaining at least the top-ranked primitive.
///
/// Fractions are NOT renormalized after pruning: they keep measuring each
/// primitive's share of the vehicle's full retained data.
pub fn rank_and_prune(mut primitives: Vec<Primitive>, tail_fraction: f64) -> Vec<Primitive> {
    primitives.sort_by(|a, b| {
        b.fraction
            .partial_cmp(&a.fraction)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| b.point_count.cmp(&a.point_count))
            .then_with(|| a.label.cmp(&b.label))
    });
    let n = primitives.len();
    if n == 0 {
        return primitives;
    }
    // The 1e-9 nudge keeps exact products like 0.05·20 = 1 from ceiling to 2
    // when the float result lands a hair above the true value.
    let pruned = (tail_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
    primitives.truncate(n.saturating_sub(pruned).max(1));
    primitives
}
