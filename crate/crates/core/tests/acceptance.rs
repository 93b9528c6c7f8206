//! Acceptance suite: eight numbered criteria, each printing one
//! `ACCEPTANCE <n>: PASS/FAIL — …` line (visible with `--nocapture`).
//!
//! Tolerances are pinned in the assertions; fixtures are seeded, so every
//! run is reproducible.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_distr::Poisson;

use dpe_core::cluster::{cluster_primitives, fit_constrained_kmeans, ClusterError};
use dpe_core::coupling::{
    couple, evaluate, CouplingEntry, CouplingMap, KlDirection, MeasurementChannel,
};
use dpe_core::gaussian::{kl_gaussian, GaussianMoments, PreparedGaussian};
use dpe_core::hsmm;
use dpe_core::ingest::{Sample, TripSeries, VehicleClass};
use dpe_core::linalg::{Mat2, Vec2};
use dpe_core::pipeline::{
    cmd_cluster, cmd_couple, cmd_evaluate, cmd_ingest, cmd_report, cmd_segment, cmd_simulate,
    ClusterArtifact, CouplingArtifact, PipelineError, PrimitivesArtifact,
};
use dpe_core::primitives::{compute_primitives, Primitive};
use dpe_core::rng::CounterRng;
use dpe_core::synth::{ChannelModel, RegimeSpec, SyntheticFleetSpec};
use dpe_core::PipelineConfig;

/// Print the per-criterion verdict line, then enforce it.
fn verdict(criterion: usize, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1 — KL correctness against Monte-Carlo estimates.
// ---------------------------------------------------------------------------

/// Random SPD matrix with eigenvalues in [0.3, 3]: R diag(l1, l2) R^T.
fn random_spd(rng: &mut CounterRng) -> Mat2 {
    let theta = rng.next_f64() * std::f64::consts::PI;
    let (s, c) = theta.sin_cos();
    let l1 = 0.3 + 2.7 * rng.next_f64();
    let l2 = 0.3 + 2.7 * rng.next_f64();
    [
        [c * c * l1 + s * s * l2, s * c * (l1 - l2)],
        [s * c * (l1 - l2), s * s * l1 + c * c * l2],
    ]
}

/// Monte-Carlo KL(p || q) by sampling from p.
fn mc_kl(p: &GaussianMoments, q: &GaussianMoments, n: usize, rng: &mut CounterRng) -> f64 {
    let lp = PreparedGaussian::new(p).expect("p SPD");
    let lq = PreparedGaussian::new(q).expect("q SPD");
    let mut acc = 0.0;
    for _ in 0..n {
        let x = p.sample(rng).expect("sample from p");
        acc += lp.log_pdf(&x) - lq.log_pdf(&x);
    }
    acc / n as f64
}

#[test]
fn criterion_1_kl_closed_form_matches_monte_carlo() {
    let start = Instant::now();

    // Worked value: KL(N(0, I) || N((1,0), 2I)) = (1 + 1/2 - 2 + 2 ln 2)/2.
    let p = GaussianMoments::new([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]);
    let q = GaussianMoments::new([1.0, 0.0], [[2.0, 0.0], [0.0, 2.0]]);
    let exact = kl_gaussian(&p, &q).unwrap();
    let worked = 0.5 * (1.0 + 0.5 - 2.0 + 2.0 * std::f64::consts::LN_2);
    let worked_err = (exact - worked).abs();

    // 20 random pairs, |mu_p - mu_q| >= 1, eigenvalues in [0.3, 3].
    let mut max_rel = 0.0f64;
    for pair in 0..20u64 {
        let mut rng = CounterRng::new(101).derive("kl-mc").derive_index(pair);
        let mu_p = [4.0 * rng.next_f64() - 2.0, 4.0 * rng.next_f64() - 2.0];
        let phi = rng.next_f64() * std::f64::consts::TAU;
        let norm = 1.0 + rng.next_f64();
        let mu_q = [mu_p[0] + norm * phi.cos(), mu_p[1] + norm * phi.sin()];
        let p = GaussianMoments::new(mu_p, random_spd(&mut rng));
        let q = GaussianMoments::new(mu_q, random_spd(&mut rng));

        let exact = kl_gaussian(&p, &q).unwrap();
        let estimate = mc_kl(&p, &q, 1_000_000, &mut rng);
        max_rel = max_rel.max((estimate - exact).abs() / exact);
    }

    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        1,
        worked_err < 1e-9 && max_rel < 0.02 && elapsed < 30.0,
        &format!(
            "worked value err {worked_err:.2e} (<1e-9); max MC rel err {max_rel:.4} (<0.02) \
             over 20 pairs x 1e6 samples; {elapsed:.1} s (<30 s)"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2 — segmentation recovery on a 4-regime synthetic vehicle.
// ---------------------------------------------------------------------------

/// Markov-regime series: 4 Gaussian regimes, >=3 sigma apart, shifted-Poisson
/// dwell with mean 20, uniform switching among the other regimes.
fn four_regime_series(seed: u64, t_len: usize) -> (Vec<Vec2>, Vec<usize>) {
    let means: [Vec2; 4] = [[0.0, 0.0], [10.0, 0.0], [5.0, 1.5], [15.0, -1.5]];
    let (sd_v, sd_a) = (1.0, 0.25);
    let dwell = Poisson::new(19.0f64).unwrap();
    let mut rng = CounterRng::new(seed).derive("four-regime");
    let mut series = Vec::with_capacity(t_len);
    let mut truth = Vec::with_capacity(t_len);
    let mut state = (rng.next_below(4)) as usize;
    while series.len() < t_len {
        let d = 1 + rng.sample(dwell) as usize;
        for _ in 0..d.min(t_len - series.len()) {
            let v = means[state][0] + sd_v * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let a = means[state][1] + sd_a * rng.sample::<f64, _>(rand_distr::StandardNormal);
            series.push([v, a]);
            truth.push(state);
        }
        let step = 1 + (rng.next_below(3)) as usize;
        state = (state + step) % 4;
    }
    (series, truth)
}

/// Best per-point agreement over injective maps truth-regime -> sampler-state
/// (unmatched truth regimes score zero).
fn optimal_matching_agreement(labels: &[usize], truth: &[usize]) -> f64 {
    let mut confusion: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&l, &t) in labels.iter().zip(truth) {
        *confusion.entry((l, t)).or_default() += 1;
    }
    let used: Vec<usize> = {
        let mut u: Vec<usize> = labels.to_vec();
        u.sort_unstable();
        u.dedup();
        u
    };
    fn best(
        t: usize,
        taken: &mut Vec<bool>,
        used: &[usize],
        confusion: &BTreeMap<(usize, usize), usize>,
    ) -> usize {
        if t == 4 {
            return 0;
        }
        // Leave regime t unmatched…
        let mut top = best(t + 1, taken, used, confusion);
        // …or match it to any free sampler state.
        for (i, &s) in used.iter().enumerate() {
            if taken[i] {
                continue;
            }
            taken[i] = true;
            let score =
                confusion.get(&(s, t)).copied().unwrap_or(0) + best(t + 1, taken, used, confusion);
            taken[i] = false;
            top = top.max(score);
        }
        top
    }
    let mut taken = vec![false; used.len()];
    best(0, &mut taken, &used, &confusion) as f64 / truth.len() as f64
}

#[test]
fn criterion_2_segmentation_recovers_four_regimes() {
    let start = Instant::now();
    let mut passes = 0;
    let mut details = Vec::new();
    for seed in 0..10u64 {
        let (series, truth) = four_regime_series(900 + seed, 5000);
        let (z, _) = dpe_core::ingest::standardize(&series).unwrap();
        let hp = hsmm::HsmmHyperParams {
            l: 10,
            d_max: 50,
            sweeps: 200,
            seed: CounterRng::new(seed).derive("c2-fit").next_value(),
            ..hsmm::HsmmHyperParams::default()
        };
        let sample = hsmm::fit(&[z], &hp).expect("fit");
        let labels = &sample.trips[0].label_seq;
        let agreement = optimal_matching_agreement(labels, &truth);
        let used = sample.used_states().len();
        let ok = agreement >= 0.85 && (2..=6).contains(&used);
        if ok {
            passes += 1;
        }
        details.push(format!(
            "seed {seed}: {:.1}% / {used} states{}",
            agreement * 100.0,
            if ok { "" } else { " (MISS)" }
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        2,
        passes >= 8 && elapsed < 300.0,
        &format!(
            "{passes}/10 seeds with >=85% matched agreement and 4±2 used states \
             [{}]; {elapsed:.0} s (<300 s)",
            details.join(", ")
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3 — cannot-link satisfaction on random instances.
// ---------------------------------------------------------------------------

struct KmeansInstance {
    features: Vec<[f64; 5]>,
    point_counts: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    max_group: usize,
    k: usize,
}

fn random_instance(id: u64, force_infeasible: bool) -> KmeansInstance {
    let mut rng = CounterRng::new(33).derive("c3").derive_index(id);
    let n = 5 + rng.next_below(496) as usize;
    // Vehicle groups of 1..=8 primitives, first group >= 2 so that
    // an infeasible k (max_group - 1) always exists.
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut assigned = 0usize;
    while assigned < n {
        let min = if groups.is_empty() { 2 } else { 1 };
        let size = (min + rng.next_below(8 - min as u64 + 1) as usize)
            .min(n - assigned)
            .max(1);
        groups.push((assigned..assigned + size).collect());
        assigned += size;
    }
    let max_group = groups.iter().map(Vec::len).max().unwrap();
    let mut pairs = Vec::new();
    for g in &groups {
        for (a, &i) in g.iter().enumerate() {
            for &j in &g[a + 1..] {
                pairs.push((i, j));
            }
        }
    }
    let k = if force_infeasible && max_group >= 2 {
        max_group - 1
    } else {
        (max_group + rng.next_below(20) as usize).min(50).min(n)
    };
    let features = (0..n)
        .map(|_| std::array::from_fn(|_| rng.next_f64() * 4.0 - 2.0))
        .collect();
    let point_counts = (0..n).map(|_| 1 + rng.next_below(999) as usize).collect();
    KmeansInstance {
        features,
        point_counts,
        pairs,
        max_group,
        k,
    }
}

#[test]
fn criterion_3_constrained_kmeans_satisfies_cannot_link() {
    let mut feasible_seen = 0;
    let mut infeasible_seen = 0;
    let mut monotonicity_checks = 0;
    for id in 0..100u64 {
        let inst = random_instance(id, id % 5 == 0);
        let result = fit_constrained_kmeans(
            &inst.features,
            &inst.point_counts,
            &inst.pairs,
            inst.k,
            4100 + id,
            40,
            2,
        );
        if inst.max_group > inst.k {
            // Must be detected as infeasible.
            match result {
                Err(ClusterError::InfeasibleConstraints { .. }) => infeasible_seen += 1,
                other => panic!(
                    "instance {id}: max group {} > k {} must be infeasible, got {other:?}",
                    inst.max_group, inst.k
                ),
            }
            continue;
        }
        let model = result.unwrap_or_else(|e| {
            panic!(
                "instance {id}: feasible (max group {} <= k {}) but failed: {e}",
                inst.max_group, inst.k
            )
        });
        feasible_seen += 1;
        for &(i, j) in &inst.pairs {
            assert_ne!(
                model.assignment[i], model.assignment[j],
                "instance {id}: cannot-link ({i}, {j}) violated"
            );
        }
        // Per-iteration objective non-increasing: with a fixed seed and a
        // single restart, max_iter = m yields the objective after sweep m.
        if id % 10 == 3 {
            monotonicity_checks += 1;
            let mut prev = f64::INFINITY;
            for m in 1..=6 {
                let truncated = fit_constrained_kmeans(
                    &inst.features,
                    &inst.point_counts,
                    &inst.pairs,
                    inst.k,
                    4100 + id,
                    m,
                    1,
                )
                .expect("feasible");
                assert!(
                    truncated.objective <= prev * (1.0 + 1e-12) + 1e-12,
                    "instance {id}: objective rose from {prev} to {} at sweep {m}",
                    truncated.objective
                );
                prev = truncated.objective;
            }
        }
    }
    verdict(
        3,
        feasible_seen >= 10 && infeasible_seen >= 10,
        &format!(
            "100 instances (n<=500, k<=50): zero violations on {feasible_seen} feasible, \
             InfeasibleConstraints on all {infeasible_seen} infeasible, \
             objective non-increasing on {monotonicity_checks} sweep probes"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 4 + 5 — shared end-to-end demo-fleet run.
// ---------------------------------------------------------------------------

struct DemoRun {
    _dir: tempfile::TempDir,
    clusters: ClusterArtifact,
    coupling: CouplingArtifact,
    eval_prims: PrimitivesArtifact,
    elapsed_s: f64,
}

static DEMO: OnceLock<DemoRun> = OnceLock::new();

fn demo_run() -> &'static DemoRun {
    DEMO.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let mut config = PipelineConfig {
            store_dir: dir.path().join("store"),
            seed: 1,
            k: 10,
            ..Default::default()
        };
        config.fleet_query.min_total_duration_s = 600.0;
        config.hsmm.l = 12;
        config.hsmm.d_max = 80;
        config.hsmm.sweeps = 200;

        let started = Instant::now();
        let input = dir.path().join("input");
        cmd_simulate(&config, &input).expect("simulate");
        cmd_ingest(&config, &input, false).expect("ingest");
        cmd_segment(&config, false).expect("segment");
        let clusters = cmd_cluster(&config, Some("sim-010"), false).expect("cluster");
        let coupling = cmd_couple(&config, "sim-010", false).expect("couple");
        cmd_evaluate(&config, "sim-010", MeasurementChannel::Fuel, false).expect("evaluate");
        cmd_report(&config, "sim-010", false).expect("report");
        let elapsed_s = started.elapsed().as_secs_f64();

        let eval_prims: PrimitivesArtifact = serde_json::from_slice::<serde_json::Value>(
            &fs::read(config.store_dir.join("primitives/sim-010.json")).expect("eval primitives"),
        )
        .ok()
        .and_then(|v| serde_json::from_value(v["payload"].clone()).ok())
        .expect("primitives payload");

        DemoRun {
            _dir: dir,
            clusters,
            coupling,
            eval_prims,
            elapsed_s,
        }
    })
}

#[test]
fn criterion_4_top_cluster_is_idle_with_dominant_weight() {
    let run = demo_run();
    let model = &run.clusters.model;
    let top = model.rank[0];
    let second = model.rank[1];
    let m = &model.cluster_moments[top];
    let (w0, w1) = (model.omega[top], model.omega[second]);
    let pass =
        m.mean[0].abs() < 0.5 && m.mean[1].abs() < 0.05 && w0 >= 2.0 * w1 && run.elapsed_s < 900.0;
    verdict(
        4,
        pass,
        &format!(
            "top cluster mean v {:.3} m/s (<0.5), mean a {:.4} m/s^2 (<0.05), \
             omega {:.3} >= 2 x {:.3}; end-to-end {:.0} s (<900 s)",
            m.mean[0], m.mean[1], w0, w1, run.elapsed_s
        ),
    );
}

#[test]
fn criterion_5_coupling_is_tight_and_equals_brute_force() {
    let run = demo_run();
    let model = &run.clusters.model;

    // Top-5 ranked clusters couple to primitives with matching mean speed.
    let mut max_gap = 0.0f64;
    for entry in run.coupling.map.entries.iter().take(5) {
        let cm = &model.cluster_moments[entry.cluster];
        let prim = run
            .eval_prims
            .retained
            .iter()
            .find(|p| p.label == entry.primitive_label)
            .expect("coupled primitive is retained");
        max_gap = max_gap.max((cm.mean[0] - prim.mean[0]).abs());
    }

    // couple() equals an independent brute-force argmin scan, bit-for-bit.
    let mut mismatches = Vec::new();
    for entry in &run.coupling.map.entries {
        let cm = &model.cluster_moments[entry.cluster];
        let cg = GaussianMoments::new(cm.mean, cm.cov);
        let mut best: Option<(f64, usize)> = None;
        for p in &run.eval_prims.retained {
            let kl = kl_gaussian(&cg, &GaussianMoments::new(p.mean, p.cov)).unwrap();
            let better = match best {
                None => true,
                Some((bk, bl)) => kl < bk || (kl == bk && p.label < bl),
            };
            if better {
                best = Some((kl, p.label));
            }
        }
        let (bk, bl) = best.unwrap();
        if bl != entry.primitive_label || bk != entry.kl {
            mismatches.push(format!(
                "cluster {}: got label {} kl {}, brute force label {bl} kl {bk}",
                entry.cluster, entry.primitive_label, entry.kl
            ));
        }
    }

    verdict(
        5,
        max_gap < 1.0 && mismatches.is_empty(),
        &format!(
            "top-5 max |cluster mean v - primitive mean v| = {max_gap:.3} m/s (<1.0); \
             brute-force argmin over {} clusters: {}",
            run.coupling.map.entries.len(),
            if mismatches.is_empty() {
                "exact match".to_string()
            } else {
                mismatches.join("; ")
            }
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6 — weighted-sum exactness and the convex bound.
// ---------------------------------------------------------------------------

fn map_of(n: usize) -> CouplingMap {
    CouplingMap {
        direction: KlDirection::ClusterToPrimitive,
        entries: (0..n)
            .map(|i| CouplingEntry {
                cluster: i,
                rank: i,
                primitive_label: i,
                kl: 0.0,
            })
            .collect(),
    }
}

#[test]
fn criterion_6_evaluation_is_exact_and_convex() {
    // Worked example: E = 0.5*0.02 + 0.3*0.04 + 0.2*0.10 = 0.042 gal/mi.
    let result = evaluate(
        &map_of(3),
        &[0.5, 0.3, 0.2],
        &[0.02, 0.04, 0.10],
        MeasurementChannel::Fuel,
    )
    .unwrap();
    let e_rel = (result.e - 0.042).abs() / 0.042;
    let mpg = result.mpg.unwrap();
    let mpg_rel = (mpg - 1.0 / 0.042).abs() / (1.0 / 0.042);

    // Convex-combination bound on 1,000 random inputs.
    let mut convex_ok = true;
    let mut rng = CounterRng::new(606).derive("c6");
    for _ in 0..1000 {
        let n = 1 + rng.next_below(20) as usize;
        let omega: Vec<f64> = (0..n).map(|_| 0.01 + rng.next_f64()).collect();
        let e_values: Vec<f64> = (0..n).map(|_| 0.001 + rng.next_f64()).collect();
        let r = evaluate(&map_of(n), &omega, &e_values, MeasurementChannel::Emission).unwrap();
        let lo = e_values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = e_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo - 1e-12 <= r.e && r.e <= hi + 1e-12) {
            convex_ok = false;
        }
    }

    verdict(
        6,
        e_rel < 1e-12 && mpg_rel < 1e-12 && convex_ok,
        &format!(
            "worked example rel errs E {e_rel:.1e}, MPG {mpg_rel:.1e} (<1e-12; \
             E=0.042 gal/mi, MPG={mpg:.4}); convex bound held on 1000 random inputs"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7 — byte-identical artifact stores.
// ---------------------------------------------------------------------------

fn compact_spec() -> SyntheticFleetSpec {
    let regime = |name: &str, mean: Vec2, dwell: f64, weight: f64, fuel: f64| RegimeSpec {
        name: name.into(),
        mean,
        cov: [[0.25, 0.0], [0.0, 0.04]],
        expected_dwell: dwell,
        weight,
        fuel: Some(ChannelModel {
            mean: fuel,
            noise_sd: fuel * 0.05,
        }),
        emission: None,
    };
    SyntheticFleetSpec {
        n_vehicles: 3,
        regimes: vec![
            regime("idle", [0.0, 0.0], 20.0, 0.5, 0.09),
            regime("drive", [12.0, 0.0], 20.0, 0.5, 0.04),
        ],
        trips_per_vehicle: 2,
        trip_len_range: (400, 500),
        rate_hz: 10.0,
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).expect("read_dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.push((rel, fs::read(&path).expect("read")));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn criterion_7_pipeline_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut stores = Vec::new();
    for run in ["a", "b"] {
        let mut config = PipelineConfig {
            store_dir: tmp.path().join(format!("store-{run}")),
            seed: 77,
            k: 4,
            kmeans_restarts: 3,
            synth: Some(compact_spec()),
            ..Default::default()
        };
        config.fleet_query.min_total_duration_s = 30.0;
        config.hsmm.l = 5;
        config.hsmm.d_max = 30;
        config.hsmm.sweeps = 25;

        let input = tmp.path().join(format!("input-{run}"));
        cmd_simulate(&config, &input).expect("simulate");
        cmd_ingest(&config, &input, false).expect("ingest");
        cmd_segment(&config, false).expect("segment");
        cmd_cluster(&config, Some("sim-002"), false).expect("cluster");
        cmd_couple(&config, "sim-002", false).expect("couple");
        cmd_evaluate(&config, "sim-002", MeasurementChannel::Fuel, false).expect("evaluate");
        cmd_report(&config, "sim-002", false).expect("report");
        stores.push(snapshot(&config.store_dir));
    }
    let (a, b) = (&stores[0], &stores[1]);
    let same_layout = a.iter().map(|(n, _)| n).eq(b.iter().map(|(n, _)| n));
    let diffs: Vec<&str> = a
        .iter()
        .zip(b)
        .filter(|((_, ba), (_, bb))| ba != bb)
        .map(|((n, _), _)| n.as_str())
        .collect();
    verdict(
        7,
        same_layout && diffs.is_empty() && !a.is_empty(),
        &format!(
            "two full runs, identical config and seed: {} artifacts byte-identical{}",
            a.len(),
            if diffs.is_empty() {
                String::new()
            } else {
                format!("; differing: {diffs:?}")
            }
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8 — degenerate inputs hit floors and errors, never panics.
// ---------------------------------------------------------------------------

fn flat_trip(vehicle_id: &str) -> TripSeries {
    TripSeries {
        vehicle_id: vehicle_id.into(),
        trip_id: "trip-000".into(),
        rate_hz: 10.0,
        vehicle_class: VehicleClass::LightDutyCar,
        samples: (0..100)
            .map(|i| Sample {
                t: i as f64 * 0.1,
                v: 5.0,
                a: 0.0,
                fuel_rate: Some(0.05),
                emission_rate: None,
                valid: true,
            })
            .collect(),
    }
}

#[test]
fn criterion_8_degenerate_inputs_are_floored_or_rejected() {
    // (a) Zero-variance vehicle: rejected at standardization, by name.
    let tmp = tempfile::tempdir().unwrap();
    let mut config = PipelineConfig {
        store_dir: tmp.path().join("store"),
        ..Default::default()
    };
    config.fleet_query.min_total_duration_s = 5.0;
    let vdir = tmp.path().join("input").join("flat-veh");
    fs::create_dir_all(&vdir).unwrap();
    let mut csv = String::from("t,v,a,valid\n");
    for i in 0..100 {
        csv.push_str(&format!("{:.1},5.0,0.0,1\n", i as f64 * 0.1));
    }
    fs::write(vdir.join("trip-000.csv"), csv).unwrap();
    let rejected = matches!(
        cmd_ingest(&config, &tmp.path().join("input"), false),
        Err(PipelineError::Standardize { vehicle_id, .. }) if vehicle_id == "flat-veh"
    );

    // (b) Single-point primitive: a label occurring once yields a zero
    // covariance that the KL floor must absorb.
    let trip = flat_trip("eval");
    let mut labels = vec![1usize; 100];
    labels[0] = 0; // label 0 appears exactly once
    let prims = compute_primitives(&[labels], &[trip], "eval").unwrap();
    let single = prims.iter().find(|p| p.point_count == 1).unwrap();
    let kl = kl_gaussian(
        &GaussianMoments::new([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]),
        &GaussianMoments::new(single.mean, single.cov),
    )
    .unwrap();
    let single_ok = kl.is_finite() && kl >= 0.0;

    // (c) Empty clusters: identical primitives from distinct vehicles leave
    // spare centroids empty; ranking and coupling must survive.
    let clone_prim = |vehicle: &str| Primitive {
        vehicle_id: vehicle.into(),
        label: 0,
        point_count: 50,
        mean: [3.0, 0.1],
        cov: [[0.5, 0.0], [0.0, 0.02]],
        fraction: 1.0,
        segments: vec![],
    };
    let identical = vec![clone_prim("v1"), clone_prim("v2"), clone_prim("v3")];
    let model = cluster_primitives(&identical, 3, 9, 50, 2).unwrap();
    let empties = model
        .cluster_moments
        .iter()
        .filter(|m| m.point_count == 0)
        .count();
    let eval_prim = clone_prim("eval");
    let map = couple(&model, &[eval_prim], KlDirection::ClusterToPrimitive).unwrap();
    let empty_ok = empties == 2 && map.entries.len() == 1;

    // (d) Idle covariance (zero acceleration variance): floored, finite KL.
    let idle_p = GaussianMoments::new([0.1, 0.0], [[0.06, 0.0], [0.0, 0.0]]);
    let idle_q = GaussianMoments::new([0.0, 0.0], [[0.07, 0.0], [0.0, 0.0]]);
    let self_kl = kl_gaussian(&idle_p, &idle_p).unwrap();
    let cross_kl = kl_gaussian(&idle_p, &idle_q).unwrap();
    let idle_ok = self_kl.abs() < 1e-9 && cross_kl.is_finite() && cross_kl >= 0.0;

    verdict(
        8,
        rejected && single_ok && empty_ok && idle_ok,
        &format!(
            "zero-variance vehicle rejected by name; single-point primitive KL {kl:.1} finite \
             under 1e-9 floor; {empties} empty clusters ranked and skipped by coupling; \
             idle covariance self-KL {self_kl:.1e}, cross-KL {cross_kl:.2} finite"
        ),
    );
}
