//! Weak-limit sticky HDP-HSMM Gibbs sampler over standardized (v, a) series.
//!
//! The model, per vehicle:
//!
//! ```text
//!   beta        ~ Dir(gamma/L, ..., gamma/L)          (weak-limit GEM)
//!   pi_i        ~ Dir(alpha beta + kappa e_i)          i = 1..L
//!   (theta_i)   ~ NIW(mu0, lambda0, Psi, nu0)          Gaussian emission params
//!   (omega_i)   ~ Gamma(a, b)                          duration rate, D-1 ~ Poisson
//!   z_s         ~ pi_bar_{z_{s-1}}                     super-states; pi_bar removes
//!                                                      self-transitions
//!   D_s         ~ 1 + Poisson(omega_{z_s})             censored at d_max
//!   y_t         ~ N(theta_{x_t})                       x_t expands (z_s, D_s)
//! ```
//!
//! Inference alternates conjugate parameter resampling with exact block
//! resampling of `(z_s, D_s)` from HSMM backward messages. Durations are
//! truncated at `d_max` with the tail mass lumped into the last cell, so the
//! sampler is exact for the truncated model; trip-final segments are
//! right-censored (the recording ends, the state does not).

pub mod messages;
pub mod resample;

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussian::{GaussianMoments, PreparedGaussian};
use crate::linalg::{self, Mat2, Vec2};
use crate::rng::CounterRng;
use crate::special::ln_gamma;

#[derive(Debug, Error)]
pub enum HsmmError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("trip {index} has no observations")]
    EmptyTrip { index: usize },
    #[error("need at least {need} observations total, got {got}")]
    TooFewObservations { got: usize, need: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// Normal-inverse-Wishart prior on a state's Gaussian emission parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NiwPrior {
    pub mu0: Vec2,
    pub lambda0: f64,
    pub psi: Mat2,
    pub nu0: f64,
}

impl Default for NiwPrior {
    fn default() -> Self {
        // Observations are standardized, so states live within a unit or so
        // of the origin with sub-unit covariance: E[Sigma] = psi/(nu0-3).
        Self {
            mu0: [0.0, 0.0],
            lambda0: 0.5,
            psi: [[0.5, 0.0], [0.0, 0.5]],
            nu0: 5.0,
        }
    }
}

impl NiwPrior {
    pub fn validate(&self) -> Result<(), String> {
        if !self.lambda0.is_finite() || self.lambda0 <= 0.0 {
            return Err(format!("lambda0 must be > 0, got {}", self.lambda0));
        }
        if !self.nu0.is_finite() || self.nu0 <= 3.0 {
            return Err(format!(
                "nu0 must exceed dim + 1 = 3 so the prior covariance mean exists, got {}",
                self.nu0
            ));
        }
        if linalg::cholesky(&self.psi).is_none() {
            return Err(format!(
                "psi must be symmetric positive definite, got {:?}",
                self.psi
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationFamily {
    Poisson,
}

/// Gamma(a, b) prior (shape a, rate b) on the shifted-Poisson duration mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DurationPrior {
    pub family: DurationFamily,
    pub a: f64,
    pub b: f64,
}

impl Default for DurationPrior {
    fn default() -> Self {
        // Prior mean dwell 1 + a/b = 21 steps (about 2 s at 10 Hz), broad.
        Self {
            family: DurationFamily::Poisson,
            a: 2.0,
            b: 0.1,
        }
    }
}

impl DurationPrior {
    pub fn validate(&self) -> Result<(), String> {
        if !self.a.is_finite() || self.a <= 0.0 || !self.b.is_finite() || self.b <= 0.0 {
            return Err(format!(
                "duration prior needs a, b > 0, got a={}, b={}",
                self.a, self.b
            ));
        }
        Ok(())
    }
}

/// Per-state duration parameter: D - 1 ~ Poisson(rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationParams {
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HsmmHyperParams {
    /// Top-level DP concentration (gamma).
    pub gamma: f64,
    /// Second-level DP concentration (alpha).
    pub alpha: f64,
    /// Sticky self-transition bias (kappa). Defaults to 0: the HSMM already
    /// removes self-transitions via pi_bar.
    pub kappa_sticky: f64,
    /// Weak-limit truncation level L (maximum state count).
    pub l: usize,
    pub niw: NiwPrior,
    pub dur: DurationPrior,
    /// Maximum segment duration in steps; the duration pmf's tail mass is
    /// lumped at d_max.
    pub d_max: usize,
    /// Gibbs sweep count; the final sweep is the reported sample.
    pub sweeps: usize,
    pub seed: u64,
}

impl Default for HsmmHyperParams {
    fn default() -> Self {
        Self {
            gamma: 6.0,
            alpha: 6.0,
            kappa_sticky: 0.0,
            l: 40,
            niw: NiwPrior::default(),
            dur: DurationPrior::default(),
            d_max: 300,
            sweeps: 200,
            seed: 0,
        }
    }
}

impl HsmmHyperParams {
    pub fn validate(&self) -> Result<(), String> {
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !self.kappa_sticky.is_finite() || self.kappa_sticky < 0.0 {
            return Err(format!(
                "kappa_sticky must be >= 0, got {}",
                self.kappa_sticky
            ));
        }
        if self.l < 2 {
            return Err(format!("truncation level L must be >= 2, got {}", self.l));
        }
        if self.d_max < 1 {
            return Err("d_max must be >= 1".into());
        }
        if self.sweeps < 1 {
            return Err("sweeps must be >= 1".into());
        }
        self.niw.validate()?;
        self.dur.validate()?;
        Ok(())
    }
}

/// One segment: `duration` consecutive steps in `state`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuperState {
    pub state: usize,
    pub duration: usize,
}

/// One trip's latent segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSegmentation {
    pub super_states: Vec<SuperState>,
    pub label_seq: Vec<usize>,
}

impl TripSegmentation {
    pub fn from_super_states(super_states: Vec<SuperState>) -> Self {
        let mut label_seq = Vec::with_capacity(super_states.iter().map(|s| s.duration).sum());
        for s in &super_states {
            label_seq.resize(label_seq.len() + s.duration, s.state);
        }
        Self {
            super_states,
            label_seq,
        }
    }
}

/// One Gibbs-sweep snapshot of the full latent state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub beta: Vec<f64>,
    pub init_dist: Vec<f64>,
    pub pi: Vec<Vec<f64>>,
    pub pi_bar: Vec<Vec<f64>>,
    pub emissions: Vec<GaussianMoments>,
    pub durations: Vec<DurationParams>,
    /// One segmentation per input trip, in input order.
    pub trips: Vec<TripSegmentation>,
}

impl PosteriorSample {
    /// States with at least one assigned time step.
    pub fn used_states(&self) -> BTreeSet<usize> {
        self.trips
            .iter()
            .flat_map(|t| t.super_states.iter().map(|s| s.state))
            .collect()
    }

    /// Check every structural invariant; returns a description of the first
    /// violation. `trip_lens` are the observation counts per input trip.
    pub fn check_invariants(&self, trip_lens: &[usize], d_max: usize) -> Result<(), String> {
        let l = self.beta.len();
        let simplex = |v: &[f64], what: &str| -> Result<(), String> {
            let sum: f64 = v.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(format!("{what} sums to {sum}, not 1"));
            }
            if v.iter().any(|&x| !(0.0..=1.0 + 1e-12).contains(&x)) {
                return Err(format!("{what} has entries outside [0, 1]"));
            }
            Ok(())
        };
        simplex(&self.beta, "beta")?;
        simplex(&self.init_dist, "init_dist")?;
        if self.pi.len() != l || self.pi_bar.len() != l {
            return Err("pi / pi_bar row count differs from L".into());
        }
        for (i, row) in self.pi.iter().enumerate() {
            simplex(row, &format!("pi[{i}]"))?;
        }
        for (i, row) in self.pi_bar.iter().enumerate() {
            simplex(row, &format!("pi_bar[{i}]"))?;
            if row[i] != 0.0 {
                return Err(format!("pi_bar[{i}][{i}] = {} is not exactly 0", row[i]));
            }
        }
        if self.trips.len() != trip_lens.len() {
            return Err("trip count mismatch".into());
        }
        for (ti, (trip, &t_len)) in self.trips.iter().zip(trip_lens).enumerate() {
            let total: usize = trip.super_states.iter().map(|s| s.duration).sum();
            if total != t_len {
                return Err(format!(
                    "trip {ti}: durations sum to {total}, expected {t_len}"
                ));
            }
            let expanded = TripSegmentation::from_super_states(trip.super_states.clone());
            if expanded.label_seq != trip.label_seq {
                return Err(format!("trip {ti}: label_seq does not expand super_states"));
            }
            for w in trip.super_states.windows(2) {
                if w[0].state == w[1].state {
                    return Err(format!(
                        "trip {ti}: consecutive super-states share state {}",
                        w[0].state
                    ));
                }
            }
            for s in &trip.super_states {
                if s.state >= l {
                    return Err(format!("trip {ti}: state {} out of range", s.state));
                }
                if s.duration == 0 || s.duration > d_max {
                    return Err(format!(
                        "trip {ti}: duration {} outside [1, {d_max}]",
                        s.duration
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Run the Gibbs sampler and return the final sweep's sample.
///
/// Deterministic given `(trips, hp)`: all randomness derives from
/// `hp.seed` via counter-based streams, one per (sweep, stage, trip), so
/// per-trip work may be scheduled in any order without changing the result.
pub fn fit(trips: &[Vec<Vec2>], hp: &HsmmHyperParams) -> Result<PosteriorSample, HsmmError> {
    hp.validate().map_err(HsmmError::InvalidHyperParams)?;
    for (index, trip) in trips.iter().enumerate() {
        if trip.is_empty() {
            return Err(HsmmError::EmptyTrip { index });
        }
    }
    let total: usize = trips.iter().map(Vec::len).sum();
    if total < 10 {
        return Err(HsmmError::TooFewObservations {
            got: total,
            need: 10,
        });
    }

    let l = hp.l;
    let root = CounterRng::new(hp.seed);

    // Initial segmentation: random contiguous blocks with prior-mean dwell.
    // Blocks give states distinct local moments, which breaks the symmetry
    // a per-point random assignment would leave intact.
    let init_rng = root.derive("init-blocks");
    let mut segmentations: Vec<TripSegmentation> = trips
        .iter()
        .enumerate()
        .map(|(ti, obs)| {
            let mut r = init_rng.derive_index(ti as u64);
            let dwell = (hp.dur.a / hp.dur.b).max(1.0);
            let mut t = 0usize;
            let mut prev: Option<usize> = None;
            let mut ss = Vec::new();
            while t < obs.len() {
                let draw: f64 =
                    rand::Rng::sample(&mut r, rand_distr::Poisson::new(dwell).expect("dwell > 0"));
                let d = (1 + draw as usize).min(hp.d_max).min(obs.len() - t);
                let state = loop {
                    let s = r.next_below(l as u64) as usize;
                    if Some(s) != prev {
                        break s;
                    }
                };
                ss.push(SuperState { state, duration: d });
                prev = Some(state);
                t += d;
            }
            TripSegmentation::from_super_states(ss)
        })
        .collect();

    // One sweep = a labels update (exact block sampling from messages)
    // followed by a parameters update (conjugate resampling given labels).
    // Parameters are drawn once up-front from the initial blocks, with
    // uniform previous values feeding the first augmentation step.
    let resample_params = |segs: &[TripSegmentation],
                           prev_pi: &[Vec<f64>],
                           prev_beta: &[f64],
                           srng: &CounterRng|
     -> Result<
        (
            Vec<GaussianMoments>,
            Vec<DurationParams>,
            resample::TransitionSample,
        ),
        HsmmError,
    > {
        let emissions =
            resample::resample_emissions(segs, trips, l, &hp.niw, &mut srng.derive("emissions"))?;
        let durations =
            resample::resample_durations(segs, l, &hp.dur, &mut srng.derive("durations"));
        let trans = resample::resample_transitions_and_beta(
            segs,
            prev_pi,
            prev_beta,
            hp.gamma,
            hp.alpha,
            hp.kappa_sticky,
            l,
            &mut srng.derive("transitions"),
        );
        Ok((emissions, durations, trans))
    };

    let uniform = vec![1.0 / l as f64; l];
    let uniform_pi = vec![uniform.clone(); l];
    let (mut emissions, mut durations, mut trans) = resample_params(
        &segmentations,
        &uniform_pi,
        &uniform,
        &root.derive("sweep").derive_index(0),
    )?;

    for sweep in 1..=hp.sweeps {
        let srng = root.derive("sweep").derive_index(sweep as u64);

        // Labels given parameters.
        let ctx = messages::InferenceContext::new(
            &trans.pi_bar,
            &trans.init_dist,
            &emissions,
            &durations,
            hp.d_max,
        )
        .map_err(|e| HsmmError::NumericalFailure(e.to_string()))?;
        let states_rng = srng.derive("states");
        segmentations = trips
            .par_iter()
            .enumerate()
            .map(|(ti, obs)| {
                let mut r = states_rng.derive_index(ti as u64);
                let msgs = messages::backward_messages(&ctx, obs);
                messages::sample_super_states(&ctx, &msgs, &mut r)
            })
            .collect();

        // Parameters given labels.
        (emissions, durations, trans) =
            resample_params(&segmentations, &trans.pi, &trans.beta, &srng)?;
    }

    Ok(PosteriorSample {
        beta: trans.beta,
        init_dist: trans.init_dist,
        pi: trans.pi,
        pi_bar: trans.pi_bar,
        emissions,
        durations,
        trips: segmentations,
    })
}

/// Joint log-density of a posterior sample with the observations under the
/// truncated model. Used as a finite-value regression check on the sampler
/// (Gibbs does not monotonically increase it).
pub fn log_joint(sample: &PosteriorSample, trips: &[Vec<Vec2>], hp: &HsmmHyperParams) -> f64 {
    let l = hp.l;
    let mut lp = 0.0;

    // Priors on global structure.
    lp += ln_dirichlet_pdf(&sample.beta, &vec![hp.gamma / l as f64; l]);
    for (i, row) in sample.pi.iter().enumerate() {
        let mut conc: Vec<f64> = sample.beta.iter().map(|b| hp.alpha * b).collect();
        conc[i] += hp.kappa_sticky;
        lp += ln_dirichlet_pdf(row, &conc);
    }
    lp += ln_dirichlet_pdf(
        &sample.init_dist,
        &sample.beta.iter().map(|b| hp.alpha * b).collect::<Vec<_>>(),
    );

    // Priors on per-state parameters.
    for em in &sample.emissions {
        lp += ln_niw_pdf(em, &hp.niw);
    }
    for d in &sample.durations {
        lp += ln_gamma_pdf(d.rate, hp.dur.a, hp.dur.b);
    }

    // Latent sequence and observations.
    let dur_table = messages::DurationTable::build(&sample.durations, hp.d_max);
    let prepared: Vec<PreparedGaussian> = match sample
        .emissions
        .iter()
        .map(PreparedGaussian::new)
        .collect::<Result<Vec<_>, _>>()
    {
        Ok(p) => p,
        Err(_) => return f64::NEG_INFINITY,
    };
    for (trip, obs) in sample.trips.iter().zip(trips) {
        let n_seg = trip.super_states.len();
        for (si, s) in trip.super_states.iter().enumerate() {
            if si == 0 {
                lp += sample.init_dist[s.state].max(1e-300).ln();
            } else {
                let prev = trip.super_states[si - 1].state;
                lp += sample.pi_bar[prev][s.state].max(1e-300).ln();
            }
            // Trip-final segments are right-censored: the recording ends
            // before the state does, so they contribute survival mass.
            lp += if si + 1 == n_seg {
                dur_table.log_sf(s.state, s.duration)
            } else {
                dur_table.log_pmf(s.state, s.duration)
            };
        }
        for (t, x) in obs.iter().enumerate() {
            lp += prepared[trip.label_seq[t]].log_pdf(x);
        }
    }
    lp
}

fn ln_dirichlet_pdf(x: &[f64], conc: &[f64]) -> f64 {
    let total: f64 = conc.iter().sum();
    let mut lp = ln_gamma(total);
    for (&xi, &a) in x.iter().zip(conc) {
        lp -= ln_gamma(a);
        lp += (a - 1.0) * xi.max(1e-300).ln();
    }
    lp
}

fn ln_gamma_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.max(1e-300).ln() - rate * x
}

/// log NIW(mu, Sigma) = log N(mu; mu0, Sigma/lambda0) + log IW(Sigma; Psi, nu0).
fn ln_niw_pdf(g: &GaussianMoments, prior: &NiwPrior) -> f64 {
    let sigma = match linalg::spd_repair(&g.sigma, 1e-12, 3) {
        Some((s, _)) => s,
        None => return f64::NEG_INFINITY,
    };
    let det = linalg::det(&sigma);
    let inv = match linalg::inverse(&sigma) {
        Some(i) => i,
        None => return f64::NEG_INFINITY,
    };
    // Normal part.
    let d = linalg::sub_vec(&g.mu, &prior.mu0);
    let maha = prior.lambda0 * linalg::dot(&d, &linalg::mat_vec(&inv, &d));
    let ln_norm = -(2.0 * std::f64::consts::PI / prior.lambda0).ln() - 0.5 * det.ln() - 0.5 * maha;
    // Inverse-Wishart part, dim p = 2.
    let p = 2.0;
    let nu = prior.nu0;
    let ln_gamma_p =
        0.5 * std::f64::consts::PI.ln() + ln_gamma(0.5 * nu) + ln_gamma(0.5 * (nu - 1.0));
    let ln_iw = 0.5 * nu * linalg::det(&prior.psi).ln()
        - 0.5 * nu * p * std::f64::consts::LN_2
        - ln_gamma_p
        - 0.5 * (nu + p + 1.0) * det.ln()
        - 0.5 * linalg::trace(&linalg::mat_mul(&prior.psi, &inv));
    ln_norm + ln_iw
}
