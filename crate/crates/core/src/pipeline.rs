//! Stage orchestration: `simulate → ingest → segment → cluster → couple →
//! evaluate → report`, each stage reading its inputs from the artifact store
//! and writing its outputs back under the run's config hash.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_primitives, ClusterError, ClusterModel};
use crate::config::{ConfigError, PipelineConfig};
use crate::coupling::{
    aggregate_measurement, couple, evaluate, CouplingError, CouplingMap, EvaluationResult,
    MeasurementChannel,
};
use crate::hsmm::{fit, log_joint, HsmmError, TripSegmentation};
use crate::ingest::{
    filter_fleet, parse_trip_csv, standardize, write_trip_csv, FleetQuery, IngestError,
    StandardizationParams, TripSeries, VehicleClass,
};
use crate::linalg::Vec2;
use crate::primitives::{compute_primitives, rank_and_prune, Primitive, PrimitiveError};
use crate::report;
use crate::rng::CounterRng;
use crate::store::{ArtifactStore, StoreError};
use crate::synth::{demo_fleet, generate_fleet, SynthError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("ingest failed for {path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error("standardization failed for vehicle `{vehicle_id}`: {source}")]
    Standardize {
        vehicle_id: String,
        source: IngestError,
    },
    #[error("segmentation failed for vehicle `{vehicle_id}`: {source}")]
    Hsmm {
        vehicle_id: String,
        source: HsmmError,
    },
    #[error("primitive extraction failed for vehicle `{vehicle_id}`: {source}")]
    Primitives {
        vehicle_id: String,
        source: PrimitiveError,
    },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Data(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code: 4 for numerical failures, 3 for any other
    /// data/pipeline error (usage errors exit 2 before reaching here).
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Hsmm {
                source: HsmmError::NumericalFailure(_),
                ..
            } => 4,
            PipelineError::Coupling(CouplingError::SingularCluster { .. })
            | PipelineError::Coupling(CouplingError::SingularPrimitive { .. }) => 4,
            _ => 3,
        }
    }
}

/// One fleet vehicle after query filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub vehicle_id: String,
    pub vehicle_class: VehicleClass,
    pub n_trips: usize,
    pub n_samples: usize,
    pub total_duration_s: f64,
}

/// `fleet.json`: the vehicles that passed the fleet query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetArtifact {
    pub query: FleetQuery,
    pub vehicles: Vec<VehicleSummary>,
}

/// `segmentation/<vehicle>.json`: the posterior segmentation sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationArtifact {
    pub vehicle_id: String,
    /// Trip ids aligned with `segmentations`.
    pub trip_ids: Vec<String>,
    pub segmentations: Vec<TripSegmentation>,
    pub used_states: Vec<usize>,
    pub log_joint: f64,
}

/// `primitives/<vehicle>.json`: ranked primitives after tail pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitivesArtifact {
    pub vehicle_id: String,
    /// Retained primitives in rank order (fraction descending).
    pub retained: Vec<Primitive>,
    /// Number of rank-tail primitives dropped.
    pub pruned: usize,
    /// Total labeled points before pruning.
    pub total_points: usize,
}

/// Identity of one clustered primitive, aligned with the model's assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveKey {
    pub vehicle_id: String,
    pub label: usize,
}

/// `clusters/model.json`: the fitted fleet-level cluster model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub model: ClusterModel,
    /// Clustered primitives, aligned with `model.assignment`.
    pub members: Vec<PrimitiveKey>,
    /// Vehicle whose primitives were held out of cluster training.
    pub excluded_vehicle: Option<String>,
}

/// `coupling/<vehicle>.json`: cluster → evaluated-primitive map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingArtifact {
    pub eval_vehicle: String,
    pub map: CouplingMap,
}

/// `evaluation/<vehicle>.json`: the weighted score with full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationArtifact {
    pub eval_vehicle: String,
    pub result: EvaluationResult,
}

fn trips_rel(vehicle_id: &str) -> String {
    format!("trips/{vehicle_id}.json")
}

fn standardization_rel(vehicle_id: &str) -> String {
    format!("standardization/{vehicle_id}.json")
}

fn segmentation_rel(vehicle_id: &str) -> String {
    format!("segmentation/{vehicle_id}.json")
}

fn primitives_rel(vehicle_id: &str) -> String {
    format!("primitives/{vehicle_id}.json")
}

const CLUSTERS_REL: &str = "clusters/model.json";

fn coupling_rel(vehicle_id: &str) -> String {
    format!("coupling/{vehicle_id}.json")
}

fn evaluation_rel(vehicle_id: &str) -> String {
    format!("evaluation/{vehicle_id}.json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_owned(),
        source,
    }
}

fn write_plain_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable artifact");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_plain_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| PipelineError::Data(format!("malformed JSON in {}: {e}", path.display())))
}

/// Generate a synthetic fleet and write it as a raw trip-log directory:
/// `<out>/<vehicle>/<trip>.csv`, `<out>/meta.json` (vehicle classes), and
/// `<out>/truth/<vehicle>.json` (per-sample regime ids for benchmarking).
/// Returns the number of vehicles written.
pub fn cmd_simulate(config: &PipelineConfig, out_dir: &Path) -> Result<usize, PipelineError> {
    let spec = config.synth.clone().unwrap_or_else(demo_fleet);
    let fleet = generate_fleet(&spec, config.seed)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut meta: BTreeMap<String, VehicleClass> = BTreeMap::new();
    for vehicle in &fleet {
        let vdir = out_dir.join(&vehicle.vehicle_id);
        fs::create_dir_all(&vdir).map_err(io_err(&vdir))?;
        for trip in &vehicle.trips {
            let path = vdir.join(format!("{}.csv", trip.trip_id));
            let file = fs::File::create(&path).map_err(io_err(&path))?;
            write_trip_csv(file, trip).map_err(|source| PipelineError::Ingest {
                path: path.clone(),
                source,
            })?;
        }
        write_plain_json(
            &out_dir
                .join("truth")
                .join(format!("{}.json", vehicle.vehicle_id)),
            &vehicle.truth,
        )?;
        meta.insert(vehicle.vehicle_id.clone(), VehicleClass::LightDutyCar);
    }
    write_plain_json(&out_dir.join("meta.json"), &meta)?;
    log::info!(
        "simulated {} vehicles x {} trips into {}",
        fleet.len(),
        spec.trips_per_vehicle,
        out_dir.display()
    );
    Ok(fleet.len())
}

/// Scan `<input>/<vehicle>/<trip>.csv`, apply the fleet query, fit each
/// vehicle's standardization, and write `trips/`, `standardization/`, and
/// `fleet.json` into the store.
pub fn cmd_ingest(
    config: &PipelineConfig,
    input_dir: &Path,
    force: bool,
) -> Result<FleetArtifact, PipelineError> {
    let store = ArtifactStore::open(&config.store_dir, config, force)?;

    let meta_path = input_dir.join("meta.json");
    let meta: BTreeMap<String, VehicleClass> = if meta_path.exists() {
        read_plain_json(&meta_path)?
    } else {
        BTreeMap::new()
    };

    let mut vehicle_dirs: Vec<PathBuf> = fs::read_dir(input_dir)
        .map_err(io_err(input_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    vehicle_dirs.sort();

    let mut all_trips: Vec<TripSeries> = Vec::new();
    for vdir in &vehicle_dirs {
        let vehicle_id = vdir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| PipelineError::Data(format!("non-UTF-8 directory {}", vdir.display())))?
            .to_owned();
        let class = meta
            .get(&vehicle_id)
            .copied()
            .unwrap_or(VehicleClass::LightDutyCar);
        let mut csvs: Vec<PathBuf> = fs::read_dir(vdir)
            .map_err(io_err(vdir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        csvs.sort();
        for path in csvs {
            let trip_id = path
                .file_stem()
                .and_then(|n| n.to_str())
                .unwrap_or("trip")
                .to_owned();
            let file = fs::File::open(&path).map_err(io_err(&path))?;
            let trip = parse_trip_csv(file, &vehicle_id, &trip_id, class).map_err(|source| {
                PipelineError::Ingest {
                    path: path.clone(),
                    source,
                }
            })?;
            all_trips.push(trip);
        }
    }
    if all_trips.is_empty() {
        return Err(PipelineError::Data(format!(
            "no trip CSVs found under {} (expected <vehicle>/<trip>.csv)",
            input_dir.display()
        )));
    }

    let parsed = all_trips.len();
    let fleet = filter_fleet(all_trips, &config.fleet_query);
    if fleet.is_empty() {
        return Err(PipelineError::Data(format!(
            "no vehicles passed the fleet query ({parsed} trips scanned); \
             relax `fleet_query` or check vehicle classes in meta.json"
        )));
    }

    let mut vehicles = Vec::with_capacity(fleet.len());
    for (vehicle_id, trips) in &fleet {
        let pooled: Vec<Vec2> = trips
            .iter()
            .flat_map(|t| t.samples.iter().map(|s| [s.v, s.a]))
            .collect();
        let (_, params) = standardize(&pooled).map_err(|source| PipelineError::Standardize {
            vehicle_id: vehicle_id.clone(),
            source,
        })?;
        store.write(&trips_rel(vehicle_id), trips)?;
        store.write(&standardization_rel(vehicle_id), &params)?;
        vehicles.push(VehicleSummary {
            vehicle_id: vehicle_id.clone(),
            vehicle_class: trips[0].vehicle_class,
            n_trips: trips.len(),
            n_samples: trips.iter().map(|t| t.samples.len()).sum(),
            total_duration_s: trips.iter().map(|t| t.duration_s()).sum(),
        });
    }
    let artifact = FleetArtifact {
        query: config.fleet_query.clone(),
        vehicles,
    };
    store.write("fleet.json", &artifact)?;
    log::info!(
        "ingested {} vehicles ({} trips scanned) into {}",
        artifact.vehicles.len(),
        parsed,
        store.dir().display()
    );
    Ok(artifact)
}

fn segment_one_vehicle(
    store: &ArtifactStore,
    config: &PipelineConfig,
    vehicle_id: &str,
) -> Result<(), PipelineError> {
    let trips: Vec<TripSeries> = store.read(&trips_rel(vehicle_id), "ingest")?;
    let params: StandardizationParams = store.read(&standardization_rel(vehicle_id), "ingest")?;
    let z_trips: Vec<Vec<Vec2>> = trips
        .iter()
        .map(|t| {
            t.samples
                .iter()
                .map(|s| params.standardize(&[s.v, s.a]))
                .collect()
        })
        .collect();

    let mut hp = config.hsmm.clone();
    hp.seed = CounterRng::new(config.seed)
        .derive("segment")
        .derive(vehicle_id)
        .next_value();
    let sample = fit(&z_trips, &hp).map_err(|source| PipelineError::Hsmm {
        vehicle_id: vehicle_id.to_owned(),
        source,
    })?;
    let lj = log_joint(&sample, &z_trips, &hp);

    let label_seqs: Vec<Vec<usize>> = sample.trips.iter().map(|t| t.label_seq.clone()).collect();
    let segmentation = SegmentationArtifact {
        vehicle_id: vehicle_id.to_owned(),
        trip_ids: trips.iter().map(|t| t.trip_id.clone()).collect(),
        segmentations: sample.trips.clone(),
        used_states: sample.used_states().into_iter().collect(),
        log_joint: lj,
    };
    store.write(&segmentation_rel(vehicle_id), &segmentation)?;

    let primitives = compute_primitives(&label_seqs, &trips, vehicle_id).map_err(|source| {
        PipelineError::Primitives {
            vehicle_id: vehicle_id.to_owned(),
            source,
        }
    })?;
    let total = primitives.len();
    let total_points: usize = primitives.iter().map(|p| p.point_count).sum();
    let retained = rank_and_prune(primitives, config.tail_fraction);
    let artifact = PrimitivesArtifact {
        vehicle_id: vehicle_id.to_owned(),
        pruned: total - retained.len(),
        retained,
        total_points,
    };
    store.write(&primitives_rel(vehicle_id), &artifact)?;
    log::info!(
        "segmented `{vehicle_id}`: {} states used, {} primitives retained ({} pruned), log-joint {:.1}",
        segmentation.used_states.len(),
        artifact.retained.len(),
        artifact.pruned,
        lj
    );
    Ok(())
}

/// Fit the per-vehicle segmentation model on standardized (v, a) series and
/// derive each vehicle's ranked, pruned primitives.
pub fn cmd_segment(config: &PipelineConfig, force: bool) -> Result<(), PipelineError> {
    let store = ArtifactStore::open(&config.store_dir, config, force)?;
    let fleet: FleetArtifact = store.read("fleet.json", "ingest")?;
    fleet
        .vehicles
        .par_iter()
        .map(|v| segment_one_vehicle(&store, config, &v.vehicle_id))
        .collect::<Result<Vec<()>, PipelineError>>()?;
    Ok(())
}

/// Cluster primitives across the fleet (excluding `eval_vehicle` when given)
/// with cannot-link constrained k-means, and rank clusters by data fraction.
pub fn cmd_cluster(
    config: &PipelineConfig,
    eval_vehicle: Option<&str>,
    force: bool,
) -> Result<ClusterArtifact, PipelineError> {
    let store = ArtifactStore::open(&config.store_dir, config, force)?;
    let fleet: FleetArtifact = store.read("fleet.json", "ingest")?;

    if let Some(eval) = eval_vehicle {
        if !fleet.vehicles.iter().any(|v| v.vehicle_id == eval) {
            return Err(PipelineError::Data(format!(
                "evaluated vehicle `{eval}` is not in the ingested fleet"
            )));
        }
    }

    let mut primitives: Vec<Primitive> = Vec::new();
    let mut members: Vec<PrimitiveKey> = Vec::new();
    for v in &fleet.vehicles {
        if Some(v.vehicle_id.as_str()) == eval_vehicle {
            continue;
        }
        let artifact: PrimitivesArtifact = store.read(&primitives_rel(&v.vehicle_id), "segment")?;
        for p in artifact.retained {
            members.push(PrimitiveKey {
                vehicle_id: p.vehicle_id.clone(),
                label: p.label,
            });
            primitives.push(p);
        }
    }
    if primitives.is_empty() {
        return Err(PipelineError::Data(
            "no primitives available for clustering (is the fleet empty after exclusion?)".into(),
        ));
    }

    let mut k = config.k;
    if k > primitives.len() {
        log::warn!(
            "k = {k} exceeds the {} available primitives; clamping k to {}",
            primitives.len(),
            primitives.len()
        );
        k = primitives.len();
    }
    let seed = CounterRng::new(config.seed).derive("cluster").next_value();
    let model = cluster_primitives(
        &primitives,
        k,
        seed,
        config.kmeans_max_iter,
        config.kmeans_restarts,
    )?;
    let artifact = ClusterArtifact {
        model,
        members,
        excluded_vehicle: eval_vehicle.map(String::from),
    };
    store.write(CLUSTERS_REL, &artifact)?;
    log::info!(
        "clustered {} primitives into k = {} (objective {:.4})",
        artifact.members.len(),
        artifact.model.k,
        artifact.model.objective
    );
    Ok(artifact)
}

/// Couple every ranked cluster to the evaluated vehicle's KL-nearest
/// retained primitive.
pub fn cmd_couple(
    config: &PipelineConfig,
    eval_vehicle: &str,
    force: bool,
) -> Result<CouplingArtifact, PipelineError> {
    let store = ArtifactStore::open(&config.store_dir, config, force)?;
    let clusters: ClusterArtifact = store.read(CLUSTERS_REL, "cluster")?;
    if clusters.excluded_vehicle.as_deref() != Some(eval_vehicle) {
        return Err(PipelineError::Data(format!(
            "cluster model was trained {}; re-run `dpe cluster --eval-vehicle {eval_vehicle}` so \
             the evaluated vehicle is held out of cluster training",
            match &clusters.excluded_vehicle {
                Some(v) => format!("with `{v}` held out"),
                None => "without holding any vehicle out".to_owned(),
            }
        )));
    }
    let eval_prims: PrimitivesArtifact = store.read(&primitives_rel(eval_vehicle), "segment")?;
    let map = couple(&clusters.model, &eval_prims.retained, config.kl_direction)?;
    let artifact = CouplingArtifact {
        eval_vehicle: eval_vehicle.to_owned(),
        map,
    };
    store.write(&coupling_rel(eval_vehicle), &artifact)?;
    log::info!(
        "coupled {} clusters to {} evaluated primitives",
        artifact.map.entries.len(),
        eval_prims.retained.len()
    );
    Ok(artifact)
}

/// Compute E_i over the evaluated vehicle's labeled samples on the selected
/// channel and aggregate the weighted score.
pub fn cmd_evaluate(
    config: &PipelineConfig,
    eval_vehicle: &str,
    channel: MeasurementChannel,
    force: bool,
) -> Result<EvaluationArtifact, PipelineError> {
    let store = ArtifactStore::open(&config.store_dir, config, force)?;
    let coupling: CouplingArtifact = store.read(&coupling_rel(eval_vehicle), "couple")?;
    let clusters: ClusterArtifact = store.read(CLUSTERS_REL, "cluster")?;
    let trips: Vec<TripSeries> = store.read(&trips_rel(eval_vehicle), "ingest")?;
    let segmentation: SegmentationArtifact =
        store.read(&segmentation_rel(eval_vehicle), "segment")?;
    let label_seqs: Vec<Vec<usize>> = segmentation
        .segmentations
        .iter()
        .map(|t| t.label_seq.clone())
        .collect();

    let mut omega = Vec::with_capacity(coupling.map.entries.len());
    let mut e_values = Vec::with_capacity(coupling.map.entries.len());
    for entry in &coupling.map.entries {
        omega.push(clusters.model.omega[entry.cluster]);
        e_values.push(aggregate_measurement(
            &trips,
            &label_seqs,
            entry.primitive_label,
            channel,
        )?);
    }
    let result = evaluate(&coupling.map, &omega, &e_values, channel)?;
    let artifact = EvaluationArtifact {
        eval_vehicle: eval_vehicle.to_owned(),
        result,
    };
    store.write(&evaluation_rel(eval_vehicle), &artifact)?;
    match artifact.result.mpg {
        Some(mpg) => log::info!("E = {:.6}, MPG = {mpg:.4}", artifact.result.e),
        None => log::info!("E = {:.6}", artifact.result.e),
    }
    Ok(artifact)
}

/// Write the report tables (`report/*.csv`) and human-readable summary.
/// Returns the report directory.
pub fn cmd_report(
    config: &PipelineConfig,
    eval_vehicle: &str,
    force: bool,
) -> Result<PathBuf, PipelineError> {
    let store = ArtifactStore::open(&config.store_dir, config, force)?;
    let clusters: ClusterArtifact = store.read(CLUSTERS_REL, "cluster")?;
    let coupling: CouplingArtifact = store.read(&coupling_rel(eval_vehicle), "couple")?;
    let evaluation: EvaluationArtifact = store.read(&evaluation_rel(eval_vehicle), "evaluate")?;
    let eval_prims: PrimitivesArtifact = store.read(&primitives_rel(eval_vehicle), "segment")?;

    store.write_text(
        "report/moments_vs_rank.csv",
        &report::moments_vs_rank_csv(&clusters.model),
    )?;
    store.write_text(
        "report/omega_vs_rank.csv",
        &report::omega_vs_rank_csv(&clusters.model),
    )?;
    store.write_text(
        &format!("report/coupled_pairs_{eval_vehicle}.csv"),
        &report::coupled_pairs_csv(&clusters.model, &coupling.map, &eval_prims.retained),
    )?;
    store.write_text(
        &format!("report/summary_{eval_vehicle}.txt"),
        &report::summary_text(eval_vehicle, &evaluation.result, &clusters.model),
    )?;
    let dir = store.dir().join("report");
    log::info!("report written to {}", dir.display());
    Ok(dir)
}
