//! Driving-primitive extraction and vehicle energy evaluation.
//!
//! The pipeline, end to end:
//!
//! 1. **ingest** — parse trip CSV logs, apply the fleet query (vehicle
//!    class, CAN-validity flag, minimum total driving duration), and
//!    z-score each vehicle's pooled (speed, acceleration) record.
//! 2. **hsmm** — segment each vehicle's standardized series into driving
//!    primitives with a weak-limit sticky HDP-HSMM Gibbs sampler.
//! 3. **primitives** — convert label sequences into physical-unit
//!    primitive records, rank them by data fraction, prune the rank tail.
//! 4. **cluster** — k-means over all vehicles' primitives with cannot-link
//!    constraints (two primitives of one vehicle never share a cluster),
//!    then rank clusters by pooled data-point fraction.
//! 5. **coupling** — match each ranked cluster to the evaluated vehicle's
//!    KL-nearest primitive and compute the weighted energy/emission score
//!    E = sum(omega_i * E_i), with MPG = 1/E for the fuel channel.
//!
//! The `dpe` binary drives these stages against an on-disk artifact store;
//! `synth` generates reproducible synthetic fleets for testing. Everything
//! is deterministic given a seed: randomness flows from counter-based
//! streams derived per vehicle, trip, and sweep.

pub mod cluster;
pub mod config;
pub mod coupling;
pub mod gaussian;
pub mod hsmm;
pub mod ingest;
pub mod linalg;
pub mod pipeline;
pub mod primitives;
pub mod report;
pub mod rng;
pub mod special;
pub mod store;
pub mod synth;

pub use config::PipelineConfig;
pub use pipeline::PipelineError;
