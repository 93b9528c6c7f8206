//! Report tables: the data behind the cluster-rank and coupling figures.
//!
//! All builders are pure string producers so they can be verified without a
//! store; the pipeline writes their output under `report/`.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::cluster::ClusterModel;
use crate::coupling::{CouplingMap, EvaluationResult, MeasurementChannel};
use crate::primitives::Primitive;

/// Per-cluster physical moments and weight, one row per cluster in rank
/// order (empty clusters included with zero moments).
pub fn moments_vs_rank_csv(model: &ClusterModel) -> String {
    let mut out = String::from("rank,cluster,omega,point_count,mean_v,mean_a,var_v,var_a,cov_va\n");
    for (rank, &c) in model.rank.iter().enumerate() {
        let m = &model.cluster_moments[c];
        writeln!(
            out,
            "{rank},{c},{},{},{},{},{},{},{}",
            model.omega[c],
            m.point_count,
            m.mean[0],
            m.mean[1],
            m.cov[0][0],
            m.cov[1][1],
            m.cov[0][1]
        )
        .expect("write to String");
    }
    out
}

/// Data-point fraction against rank, all clusters.
pub fn omega_vs_rank_csv(model: &ClusterModel) -> String {
    let mut out = String::from("rank,cluster,omega\n");
    for (rank, &c) in model.rank.iter().enumerate() {
        writeln!(out, "{rank},{c},{}", model.omega[c]).expect("write to String");
    }
    out
}

/// Coupled cluster/primitive mean-velocity table, one row per retained
/// cluster in rank order.
pub fn coupled_pairs_csv(
    model: &ClusterModel,
    map: &CouplingMap,
    eval_primitives: &[Primitive],
) -> String {
    let by_label: BTreeMap<usize, &Primitive> =
        eval_primitives.iter().map(|p| (p.label, p)).collect();
    let mut out = String::from(
        "rank,cluster,omega,cluster_mean_v,primitive_label,primitive_mean_v,mean_v_gap,kl\n",
    );
    for e in &map.entries {
        let m = &model.cluster_moments[e.cluster];
        let pv = by_label
            .get(&e.primitive_label)
            .map(|p| p.mean[0])
            .unwrap_or(f64::NAN);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            e.rank,
            e.cluster,
            model.omega[e.cluster],
            m.mean[0],
            e.primitive_label,
            pv,
            (m.mean[0] - pv).abs(),
            e.kl
        )
        .expect("write to String");
    }
    out
}

/// Human-readable run summary, including coupling multiplicity (how many
/// clusters each evaluated primitive serves).
pub fn summary_text(eval_vehicle: &str, result: &EvaluationResult, model: &ClusterModel) -> String {
    let mut out = String::new();
    let retained = model
        .cluster_moments
        .iter()
        .filter(|m| m.point_count > 0)
        .count();
    writeln!(out, "fleet evaluation summary").unwrap();
    writeln!(out, "========================").unwrap();
    writeln!(out, "evaluated vehicle: {eval_vehicle}").unwrap();
    let (channel, unit) = match result.channel {
        MeasurementChannel::Fuel => ("fuel", "gal/mi"),
        MeasurementChannel::Emission => ("emission", "g/mi"),
    };
    writeln!(out, "channel: {channel}").unwrap();
    writeln!(out, "E = {:.6} {unit}", result.e).unwrap();
    match result.mpg {
        Some(mpg) => writeln!(out, "MPG = {mpg:.4}").unwrap(),
        None => writeln!(out, "MPG: not applicable for this channel").unwrap(),
    }
    writeln!(out, "clusters: {} retained of k = {}", retained, model.k).unwrap();
    writeln!(out).unwrap();
    writeln!(out, "top clusters by data fraction:").unwrap();
    for c in result.per_cluster.iter().take(8) {
        let m = &model.cluster_moments[c.cluster];
        writeln!(
            out,
            "  rank {:>2}: cluster {:>3}  omega {:.4}  mean v {:>7.3} m/s  mean a {:>7.3} m/s²  \
             -> primitive {} (KL {:.4}, E_i {:.6})",
            c.rank, c.cluster, c.omega, m.mean[0], m.mean[1], c.primitive_label, c.kl, c.e_i
        )
        .unwrap();
    }
    let mut multiplicity: BTreeMap<usize, usize> = BTreeMap::new();
    for c in &result.per_cluster {
        *multiplicity.entry(c.primitive_label).or_default() += 1;
    }
    writeln!(out).unwrap();
    writeln!(
        out,
        "coupling multiplicity (clusters served per primitive):"
    )
    .unwrap();
    for (label, count) in &multiplicity {
        writeln!(out, "  primitive {label}: {count}").unwrap();
    }
    out
}
