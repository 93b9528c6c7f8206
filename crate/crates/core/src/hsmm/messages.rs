//! HSMM backward message passing and exact block sampling of the
//! super-state sequence, all in log space.
//!
//! Message definitions, for a trip of length T and states i = 0..L:
//!
//! ```text
//!   B*[t][i] = log P(y_{t:T} | segment of state i starts at t)
//!            = lse_{d=1}^{min(d_max, T-t-1)} [ ln pmf_i(d) + ll_i(t, t+d) + B[t+d][i] ]
//!              (+) if T-t <= d_max:  ln P(D >= T-t) + ll_i(t, T)
//!   B[t][i]  = log P(y_{t:T} | a segment of state i ended at t-1)
//!            = lse_{j != i} [ ln pi_bar[i][j] + B*[t][j] ]
//! ```
//!
//! `ll_i(t0, t1)` is the summed observation log-likelihood under state i,
//! computed from per-state prefix sums. The final term right-censors the
//! trip-ending segment: the recording stops, the state need not. Cost is
//! O(T d_max L + T L^2).

use crate::gaussian::{GaussianError, GaussianMoments, PreparedGaussian};
use crate::linalg::Vec2;
use crate::rng::CounterRng;
use crate::special::{ln_factorial, log_sum_exp, lse2};

use super::{DurationParams, SuperState, TripSegmentation};

/// Per-state duration log-pmf and log-survival tables.
///
/// The pmf is censored at `d_max`: `pmf(d_max)` carries the whole tail mass
/// `P(D >= d_max)`, so it still sums to one and the sampler is exact for
/// the truncated model.
#[derive(Debug, Clone)]
pub struct DurationTable {
    d_max: usize,
    /// Flat L x d_max: entry `[i][d-1]` is ln pmf_i(d), censored at d_max.
    log_pmf: Vec<f64>,
    /// Flat L x d_max: entry `[i][n-1]` is ln P(D_i >= n).
    log_sf: Vec<f64>,
}

impl DurationTable {
    pub fn build(durations: &[DurationParams], d_max: usize) -> Self {
        let l = durations.len();
        let mut log_pmf = vec![f64::NEG_INFINITY; l * d_max];
        let mut log_sf = vec![f64::NEG_INFINITY; l * d_max];
        for (i, dp) in durations.iter().enumerate() {
            let lambda = dp.rate.max(1e-12);
            let ln_lambda = lambda.ln();
            // Uncensored shifted-Poisson support runs to a cap far enough
            // into the tail that the remainder is below 1e-30 relative.
            let cap = d_max + (12.0 * lambda.sqrt() + 30.0).ceil() as usize;
            let lp = |k: usize| k as f64 * ln_lambda - lambda - ln_factorial(k as u64);
            // Survival by backward accumulation: exact in log space.
            let mut tail = f64::NEG_INFINITY;
            let mut sf_rev = vec![f64::NEG_INFINITY; d_max];
            for k in (0..cap).rev() {
                tail = lse2(tail, lp(k));
                if k < d_max {
                    sf_rev[k] = tail; // ln P(K >= k) = ln P(D >= k + 1)
                }
            }
            for d in 1..=d_max {
                log_sf[i * d_max + d - 1] = sf_rev[d - 1];
                log_pmf[i * d_max + d - 1] = if d == d_max { sf_rev[d - 1] } else { lp(d - 1) };
            }
        }
        Self {
            d_max,
            log_pmf,
            log_sf,
        }
    }

    /// ln pmf(d) for d in 1..=d_max (censored at d_max).
    #[inline]
    pub fn log_pmf(&self, state: usize, d: usize) -> f64 {
        self.log_pmf[state * self.d_max + d - 1]
    }

    /// ln P(D >= n) for n in 1..=d_max.
    #[inline]
    pub fn log_sf(&self, state: usize, n: usize) -> f64 {
        self.log_sf[state * self.d_max + n - 1]
    }
}

/// Everything the message passing needs that does not depend on the trip:
/// log transition rows, log initial distribution, prepared emission
/// densities, and duration tables. Built once per sweep, shared across trips.
pub struct InferenceContext {
    pub l: usize,
    pub d_max: usize,
    ln_init: Vec<f64>,
    ln_pi_bar: Vec<Vec<f64>>,
    prepared: Vec<PreparedGaussian>,
    dur: DurationTable,
}

impl InferenceContext {
    pub fn new(
        pi_bar: &[Vec<f64>],
        init_dist: &[f64],
        emissions: &[GaussianMoments],
        durations: &[DurationParams],
        d_max: usize,
    ) -> Result<Self, GaussianError> {
        let ln = |p: &f64| if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        Ok(Self {
            l: emissions.len(),
            d_max,
            ln_init: init_dist.iter().map(ln).collect(),
            ln_pi_bar: pi_bar
                .iter()
                .map(|row| row.iter().map(ln).collect())
                .collect(),
            prepared: emissions
                .iter()
                .map(PreparedGaussian::new)
                .collect::<Result<_, _>>()?,
            dur: DurationTable::build(durations, d_max),
        })
    }

    pub fn duration_table(&self) -> &DurationTable {
        &self.dur
    }
}

/// Backward message tables plus the per-state observation prefix sums the
/// forward sampling pass reuses.
///
/// `b` is stored per state (flat `i * T + t`) so the duration loop in the
/// recursion reads it contiguously; `bstar` is stored per time step
/// (flat `t * L + i`) for the transition reduction.
pub struct Messages {
    t_len: usize,
    l: usize,
    b: Vec<f64>,
    bstar: Vec<f64>,
    /// Flat L x (T+1): `cum[i][t]` = sum of state-i log-likelihoods before t.
    cum: Vec<f64>,
}

impl Messages {
    #[inline]
    pub fn b_at(&self, t: usize, i: usize) -> f64 {
        self.b[i * self.t_len + t]
    }

    #[inline]
    pub fn bstar_at(&self, t: usize, i: usize) -> f64 {
        self.bstar[t * self.l + i]
    }

    /// Summed log-likelihood of observations t0..t1 under state i.
    #[inline]
    pub fn seg_ll(&self, i: usize, t0: usize, t1: usize) -> f64 {
        let row = i * (self.t_len + 1);
        self.cum[row + t1] - self.cum[row + t0]
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }
}

pub fn backward_messages(ctx: &InferenceContext, obs: &[Vec2]) -> Messages {
    let t_len = obs.len();
    let l = ctx.l;
    let d_max = ctx.d_max;

    let mut cum = vec![0.0; l * (t_len + 1)];
    for i in 0..l {
        let row = i * (t_len + 1);
        let mut acc = 0.0;
        for (t, x) in obs.iter().enumerate() {
            acc += ctx.prepared[i].log_pdf(x);
            cum[row + t + 1] = acc;
        }
    }

    let mut b = vec![f64::NEG_INFINITY; t_len * l];
    let mut bstar = vec![f64::NEG_INFINITY; t_len * l];
    let mut buf: Vec<f64> = Vec::with_capacity(d_max.max(l) + 1);

    for t in (0..t_len).rev() {
        let remaining = t_len - t;
        for i in 0..l {
            buf.clear();
            let cum_row = &cum[i * (t_len + 1)..];
            let ll_base = cum_row[t];
            let pmf_row = &ctx.dur.log_pmf[i * d_max..(i + 1) * d_max];
            let b_row = &b[i * t_len..(i + 1) * t_len];
            let d_hi = d_max.min(remaining - 1);
            for d in 1..=d_hi {
                buf.push(pmf_row[d - 1] + (cum_row[t + d] - ll_base) + b_row[t + d]);
            }
            if remaining <= d_max {
                buf.push(ctx.dur.log_sf(i, remaining) + (cum_row[t_len] - ll_base));
            }
            bstar[t * l + i] = log_sum_exp(&buf);
        }
        let bstar_row = &bstar[t * l..(t + 1) * l];
        for i in 0..l {
            buf.clear();
            let ln_row = &ctx.ln_pi_bar[i];
            for j in 0..l {
                if j != i {
                    buf.push(ln_row[j] + bstar_row[j]);
                }
            }
            b[i * t_len + t] = log_sum_exp(&buf);
        }
    }

    Messages {
        t_len,
        l,
        b,
        bstar,
        cum,
    }
}

/// Draw one (super_states, label_seq) block sample from the messages.
/// Never panics: if every candidate weight underflows to -inf (which does
/// not happen for parameters produced by the sampler), a documented
/// fallback picks an arbitrary valid continuation.
pub fn sample_super_states(
    ctx: &InferenceContext,
    msgs: &Messages,
    rng: &mut CounterRng,
) -> TripSegmentation {
    let t_len = msgs.t_len;
    let l = ctx.l;
    let d_max = ctx.d_max;
    let mut wbuf = vec![0.0; l.max(d_max + 1)];
    let mut super_states = Vec::new();
    let mut t = 0usize;
    let mut prev: Option<usize> = None;

    while t < t_len {
        for (i, w) in wbuf.iter_mut().enumerate().take(l) {
            let trans = match prev {
                None => ctx.ln_init[i],
                Some(p) => ctx.ln_pi_bar[p][i], // -inf on the diagonal
            };
            *w = trans + msgs.bstar_at(t, i);
        }
        let state = sample_categorical_log(&wbuf[..l], rng)
            .unwrap_or_else(|| prev.map(|p| (p + 1) % l).unwrap_or(0));

        let remaining = t_len - t;
        let d_hi = d_max.min(remaining - 1);
        let mut n = 0;
        for d in 1..=d_hi {
            wbuf[n] =
                ctx.dur.log_pmf(state, d) + msgs.seg_ll(state, t, t + d) + msgs.b_at(t + d, state);
            n += 1;
        }
        if remaining <= d_max {
            // Right-censored final segment: survives to the end of the trip.
            wbuf[n] = ctx.dur.log_sf(state, remaining) + msgs.seg_ll(state, t, t_len);
            n += 1;
        }
        // Candidate index k encodes duration k+1; when the censored term is
        // present it sits at index remaining-1, encoding duration `remaining`.
        let duration = sample_categorical_log(&wbuf[..n], rng)
            .map(|k| k + 1)
            .unwrap_or(remaining.min(d_max));

        super_states.push(SuperState { state, duration });
        prev = Some(state);
        t += duration;
    }

    TripSegmentation::from_super_states(super_states)
}

/// Sample an index proportional to exp(weights), stably. None when no
/// weight is finite.
fn sample_categorical_log(weights: &[f64], rng: &mut CounterRng) -> Option<usize> {
    let mut max = f64::NEG_INFINITY;
    for &w in weights {
        if w > max {
            max = w;
        }
    }
    if !max.is_finite() {
        return None;
    }
    let cutoff = max - 45.0;
    let mut total = 0.0;
    for &w in weights {
        if w >= cutoff {
            total += (w - max).exp();
        }
    }
    let target = rng.next_f64() * total;
    let mut acc = 0.0;
    for (idx, &w) in weights.iter().enumerate() {
        if w >= cutoff {
            acc += (w - max).exp();
            if acc >= target {
                return Some(idx);
            }
        }
    }
    // Rounding fallthrough: take the last candidate above the cutoff.
    weights.iter().rposition(|w| *w >= cutoff)
}
