//! Cluster→primitive coupling and the weighted efficiency score.
//!
//! Every ranked (non-empty) cluster is coupled to the evaluated vehicle's
//! KL-nearest primitive; each coupled primitive's mean measured rate becomes
//! that cluster's E_i, and the final score is E = Σ ω_i·E_i over retained
//! clusters with ω renormalized to a proper convex combination.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::ClusterModel;
use crate::gaussian::{kl_gaussian, GaussianError, GaussianMoments};
use crate::ingest::{Sample, TripSeries};
use crate::primitives::Primitive;

/// Which per-sample measurement channel E_i aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementChannel {
    /// Gallons-per-mile equivalent; enables the MPG derivation.
    #[default]
    Fuel,
    /// Grams-per-mile equivalent; no MPG.
    Emission,
}

impl MeasurementChannel {
    pub fn of(&self, s: &Sample) -> Option<f64> {
        match self {
            MeasurementChannel::Fuel => s.fuel_rate,
            MeasurementChannel::Emission => s.emission_rate,
        }
    }
}

impl std::str::FromStr for MeasurementChannel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fuel" => Ok(MeasurementChannel::Fuel),
            "emission" => Ok(MeasurementChannel::Emission),
            other => Err(format!(
                "unknown channel {other:?} (expected fuel|emission)"
            )),
        }
    }
}

/// KL is asymmetric; the default follows the divergence FROM the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    #[default]
    ClusterToPrimitive,
    PrimitiveToCluster,
}

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("no evaluated-vehicle primitives to couple against")]
    NoEvalPrimitives,
    #[error("no retained (non-empty) clusters to couple")]
    NoRetainedClusters,
    #[error("cluster {cluster} has degenerate pooled moments: {source}")]
    SingularCluster {
        cluster: usize,
        source: GaussianError,
    },
    #[error("evaluated primitive {label} has degenerate moments: {source}")]
    SingularPrimitive { label: usize, source: GaussianError },
    #[error("label sequences cover {labels} samples but trips hold {samples}")]
    Misaligned { labels: usize, samples: usize },
    #[error("primitive label {label} never occurs in the evaluated trips")]
    EmptyPrimitive { label: usize },
    #[error("{channel:?} channel missing on sample {index} of trip {trip_id}")]
    MissingChannel {
        channel: MeasurementChannel,
        trip_id: String,
        index: usize,
    },
    #[error("coupling has {entries} entries but {got} {what} were supplied")]
    LengthMismatch {
        entries: usize,
        got: usize,
        what: &'static str,
    },
    #[error("omega over retained clusters sums to {sum}, cannot renormalize")]
    DegenerateOmega { sum: f64 },
    #[error("E = {e} is non-positive; MPG = 1/E is undefined")]
    NonPositiveE { e: f64 },
}

/// One ranked cluster coupled to its KL-nearest evaluated primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    /// Cluster id in the ClusterModel.
    pub cluster: usize,
    /// Rank position of the cluster (0 = largest omega).
    pub rank: usize,
    /// Label of the evaluated vehicle's coupled primitive.
    pub primitive_label: usize,
    /// The minimized KL divergence.
    pub kl: f64,
}

/// Coupling of every retained cluster, in rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMap {
    pub direction: KlDirection,
    pub entries: Vec<CouplingEntry>,
}

/// Per-cluster provenance of the final score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterContribution {
    pub cluster: usize,
    pub rank: usize,
    pub primitive_label: usize,
    pub kl: f64,
    /// Renormalized weight over retained clusters (sums to 1).
    pub omega: f64,
    pub e_i: f64,
    /// omega · e_i.
    pub contribution: f64,
}

/// Final weighted score: E = Σ ω_i·E_i, MPG = 1/E on the fuel channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub channel: MeasurementChannel,
    pub e: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpg: Option<f64>,
    pub per_cluster: Vec<ClusterContribution>,
}

/// Couple each retained (non-empty) cluster, in rank order, to the
/// evaluated primitive minimizing the KL divergence; ties go to the lower
/// primitive label.
pub fn couple(
    model: &ClusterModel,
    eval_primitives: &[Primitive],
    direction: KlDirection,
) -> Result<CouplingMap, CouplingError> {
    if eval_primitives.is_empty() {
        return Err(CouplingError::NoEvalPrimitives);
    }
    // Validate every eval primitive's moments once up front.
    for p in eval_primitives {
        let g = p.moments();
        g.floored_sigma()
            .map_err(|source| CouplingError::SingularPrimitive {
                label: p.label,
                source,
            })?;
    }

    let mut entries = Vec::new();
    for (rank, &cluster) in model.rank.iter().enumerate() {
        let m = &model.cluster_moments[cluster];
        if m.point_count == 0 {
            continue;
        }
        let cluster_g = GaussianMoments::new(m.mean, m.cov);
        cluster_g
            .floored_sigma()
            .map_err(|source| CouplingError::SingularCluster { cluster, source })?;
        let mut best: Option<(f64, usize)> = None;
        for p in eval_primitives {
            let prim_g = p.moments();
            let kl = match direction {
                KlDirection::ClusterToPrimitive => kl_gaussian(&cluster_g, &prim_g),
                KlDirection::PrimitiveToCluster => kl_gaussian(&prim_g, &cluster_g),
            }
            .map_err(|source| CouplingError::SingularPrimitive {
                label: p.label,
                source,
            })?;
            let better = match best {
                None => true,
                Some((bk, bl)) => kl < bk || (kl == bk && p.label < bl),
            };
            if better {
                best = Some((kl, p.label));
            }
        }
        let (kl, primitive_label) = best.expect("eval_primitives non-empty");
        entries.push(CouplingEntry {
            cluster,
            rank,
            primitive_label,
            kl,
        });
    }
    if entries.is_empty() {
        return Err(CouplingError::NoRetainedClusters);
    }
    Ok(CouplingMap { direction, entries })
}

/// Mean measured rate over exactly the evaluated samples carrying `label`.
pub fn aggregate_measurement(
    trips: &[TripSeries],
    label_seqs: &[Vec<usize>],
    label: usize,
    channel: MeasurementChannel,
) -> Result<f64, CouplingError> {
    let labels_total: usize = label_seqs.iter().map(Vec::len).sum();
    let samples_total: usize = trips.iter().map(|t| t.samples.len()).sum();
    if label_seqs.len() != trips.len() || labels_total != samples_total {
        return Err(CouplingError::Misaligned {
            labels: labels_total,
            samples: samples_total,
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (labels, trip) in label_seqs.iter().zip(trips) {
        if labels.len() != trip.samples.len() {
            return Err(CouplingError::Misaligned {
                labels: labels.len(),
                samples: trip.samples.len(),
            });
        }
        for (i, (&l, s)) in labels.iter().zip(&trip.samples).enumerate() {
            if l != label {
                continue;
            }
            let rate = channel.of(s).ok_or_else(|| CouplingError::MissingChannel {
                channel,
                trip_id: trip.trip_id.clone(),
                index: i,
            })?;
            sum += rate;
            count += 1;
        }
    }
    if count == 0 {
        return Err(CouplingError::EmptyPrimitive { label });
    }
    Ok(sum / count as f64)
}

/// Weighted score per Eq. E = Σ ω_i·E_i.
///
/// `omega` and `e_values` align 1:1 with `coupling.entries`. Raw omegas are
/// renormalized over the retained clusters so the weights form a convex
/// combination; MPG = 1/E is derived only on the fuel channel and errors on
/// E ≤ 0.
pub fn evaluate(
    coupling: &CouplingMap,
    omega: &[f64],
    e_values: &[f64],
    channel: MeasurementChannel,
) -> Result<EvaluationResult, CouplingError> {
    let n = coupling.entries.len();
    if omega.len() != n {
        return Err(CouplingError::LengthMismatch {
            entries: n,
            got: omega.len(),
            what: "omega weights",
        });
    }
    if e_values.len() != n {
        return Err(CouplingError::LengthMismatch {
            entries: n,
            got: e_values.len(),
            what: "E_i values",
        });
    }
    let omega_sum: f64 = omega.iter().sum();
    if !omega_sum.is_finite() || omega_sum <= 0.0 {
        return Err(CouplingError::DegenerateOmega { sum: omega_sum });
    }
    let mut e = 0.0;
    let mut per_cluster = Vec::with_capacity(n);
    for ((entry, &w), &e_i) in coupling.entries.iter().zip(omega).zip(e_values) {
        let w = w / omega_sum;
        let contribution = w * e_i;
        e += contribution;
        per_cluster.push(ClusterContribution {
            cluster: entry.cluster,
            rank: entry.rank,
            primitive_label: entry.primitive_label,
            kl: entry.kl,
            omega: w,
            e_i,
            contribution,
        });
    }
    let mpg = match channel {
        MeasurementChannel::Fuel => {
            if e <= 0.0 {
                return Err(CouplingError::NonPositiveE { e });
            }
            Some(1.0 / e)
        }
        MeasurementChannel::Emission => None,
    };
    Ok(EvaluationResult {
        channel,
        e,
        mpg,
        per_cluster,
    })
}
