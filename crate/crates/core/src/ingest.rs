//! Trip-log parsing, fleet-query filtering, and per-vehicle standardization.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Vec2;

/// Jitter tolerance on sample spacing, as a fraction of the median step.
const SPACING_TOLERANCE: f64 = 0.01;

/// Assumed rate for single-sample trips, where spacing cannot be inferred.
const DEFAULT_RATE_HZ: f64 = 10.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("required column `{name}` missing from header")]
    MissingColumn { name: &'static str },
    #[error("time not strictly increasing at line {line}")]
    NonMonotonicTime { line: u64 },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("irregular sampling at line {line}: step {dt:.6} s vs expected {expected:.6} s (>1% jitter)")]
    IrregularSampling { line: u64, dt: f64, expected: f64 },
    #[error("zero variance on channel `{channel}`; vehicle cannot be standardized")]
    ZeroVariance { channel: &'static str },
    #[error("fewer than 2 samples; cannot standardize")]
    TooFewSamples,
}

/// One timestamped observation from a trip log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Seconds since trip start.
    pub t: f64,
    /// Speed, m/s (non-negative).
    pub v: f64,
    /// Acceleration, m/s^2.
    pub a: f64,
    /// Instantaneous fuel consumption, gallons/mile equivalent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_rate: Option<f64>,
    /// Instantaneous emission level, g/mile equivalent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_rate: Option<f64>,
    /// CAN-validity flag.
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    LightDutyCar,
    Bus,
    Other,
}

impl std::str::FromStr for VehicleClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "light_duty_car" => Ok(Self::LightDutyCar),
            "bus" => Ok(Self::Bus),
            "other" => Ok(Self::Other),
            _ => Err(format!("unknown vehicle class `{s}`")),
        }
    }
}

/// One vehicle-trip's samples at a fixed recording rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripSeries {
    pub vehicle_id: String,
    pub trip_id: String,
    pub rate_hz: f64,
    pub vehicle_class: VehicleClass,
    pub samples: Vec<Sample>,
}

impl TripSeries {
    /// Trip duration in seconds: (n - 1) / rate.
    pub fn duration_s(&self) -> f64 {
        (self.samples.len().saturating_sub(1)) as f64 / self.rate_hz
    }
}

/// Fleet-query filter: which vehicles enter the analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetQuery {
    pub min_total_duration_s: f64,
    pub require_valid_flag: bool,
    pub allowed_classes: BTreeSet<VehicleClass>,
}

impl Default for FleetQuery {
    fn default() -> Self {
        Self {
            min_total_duration_s: 3600.0,
            require_valid_flag: true,
            allowed_classes: BTreeSet::from([VehicleClass::LightDutyCar]),
        }
    }
}

impl FleetQuery {
    pub fn validate(&self) -> Result<(), String> {
        if !self.min_total_duration_s.is_finite() || self.min_total_duration_s <= 0.0 {
            return Err(format!(
                "min_total_duration_s must be > 0, got {}",
                self.min_total_duration_s
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizationScope {
    PerVehicle,
}

/// Invertible z-score transform for one vehicle's (v, a) record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub mean: Vec2,
    pub std: Vec2,
    pub scope: StandardizationScope,
}

impl StandardizationParams {
    /// Forward z-score transform of one physical (v, a) point.
    pub fn standardize(&self, x: &Vec2) -> Vec2 {
        [
            (x[0] - self.mean[0]) / self.std[0],
            (x[1] - self.mean[1]) / self.std[1],
        ]
    }

    pub fn unstandardize(&self, z: &Vec2) -> Vec2 {
        [
            z[0] * self.std[0] + self.mean[0],
            z[1] * self.std[1] + self.mean[1],
        ]
    }
}

/// Parse one trip CSV. Header must contain `t`, `v`, and `valid`; `a`,
/// `fuel_rate`, and `emission_rate` are optional. When `a` is absent it is
/// derived from `v` by central differences followed by a 3-tap moving
/// average. Rows with valid=0 are retained but flagged. The recording rate
/// is inferred from the median sample spacing and every step must sit
/// within 1% of it.
pub fn parse_trip_csv<R: Read>(
    source: R,
    vehicle_id: &str,
    trip_id: &str,
    vehicle_class: VehicleClass,
) -> Result<TripSeries, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(source);

    let headers = reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let t_col = col("t").ok_or(IngestError::MissingColumn { name: "t" })?;
    let v_col = col("v").ok_or(IngestError::MissingColumn { name: "v" })?;
    let valid_col = col("valid").ok_or(IngestError::MissingColumn { name: "valid" })?;
    let a_col = col("a");
    let fuel_col = col("fuel_rate");
    let emission_col = col("emission_rate");

    let mut samples: Vec<Sample> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = (idx + 2) as u64;
        let record = record.map_err(|e| IngestError::MalformedRow {
            line,
            message: e.to_string(),
        })?;
        let field = |c: usize, name: &str| -> Result<&str, IngestError> {
            record.get(c).ok_or_else(|| IngestError::MalformedRow {
                line,
                message: format!("missing `{name}` field"),
            })
        };
        let parse_f64 = |c: usize, name: &str| -> Result<f64, IngestError> {
            let raw = field(c, name)?;
            raw.parse::<f64>().map_err(|_| IngestError::MalformedRow {
                line,
                message: format!("`{name}` is not a number: `{raw}`"),
            })
        };
        let parse_opt = |c: Option<usize>, name: &str| -> Result<Option<f64>, IngestError> {
            match c {
                None => Ok(None),
                Some(c) => {
                    let raw = field(c, name)?;
                    if raw.is_empty() {
                        Ok(None)
                    } else {
                        raw.parse::<f64>()
                            .map(Some)
                            .map_err(|_| IngestError::MalformedRow {
                                line,
                                message: format!("`{name}` is not a number: `{raw}`"),
                            })
                    }
                }
            }
        };

        let t = parse_f64(t_col, "t")?;
        let v = parse_f64(v_col, "v")?;
        if !t.is_finite() || !v.is_finite() {
            return Err(IngestError::MalformedRow {
                line,
                message: "non-finite t or v".into(),
            });
        }
        if v < 0.0 {
            return Err(IngestError::MalformedRow {
                line,
                message: format!("negative speed {v}"),
            });
        }
        if let Some(prev) = samples.last() {
            if t <= prev.t {
                return Err(IngestError::NonMonotonicTime { line });
            }
        } else if t < 0.0 {
            return Err(IngestError::MalformedRow {
                line,
                message: format!("negative time {t}"),
            });
        }
        let valid = match field(valid_col, "valid")? {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(IngestError::MalformedRow {
                    line,
                    message: format!("`valid` must be 0/1/true/false, got `{other}`"),
                })
            }
        };
        let a = match a_col {
            Some(c) => parse_f64(c, "a")?,
            None => 0.0, // filled in below once the whole series is known
        };
        samples.push(Sample {
            t,
            v,
            a,
            fuel_rate: parse_opt(fuel_col, "fuel_rate")?,
            emission_rate: parse_opt(emission_col, "emission_rate")?,
            valid,
        });
    }

    if samples.is_empty() {
        return Err(IngestError::EmptyFile);
    }

    let rate_hz = check_spacing(&samples)?;
    if a_col.is_none() {
        derive_acceleration(&mut samples);
    }

    Ok(TripSeries {
        vehicle_id: vehicle_id.to_string(),
        trip_id: trip_id.to_string(),
        rate_hz,
        vehicle_class,
        samples,
    })
}

/// Infer the recording rate from the median step and reject >1% jitter.
fn check_spacing(samples: &[Sample]) -> Result<f64, IngestError> {
    if samples.len() < 2 {
        return Ok(DEFAULT_RATE_HZ);
    }
    let mut steps: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    steps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = steps[steps.len() / 2];
    for (i, w) in samples.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        if (dt - median).abs() > SPACING_TOLERANCE * median {
            return Err(IngestError::IrregularSampling {
                line: (i + 3) as u64, // row of the second sample in the pair
                dt,
                expected: median,
            });
        }
    }
    Ok(1.0 / median)
}

/// Central-difference acceleration with one-sided ends, then a 3-tap
/// moving average (window clamped at the boundaries).
fn derive_acceleration(samples: &mut [Sample]) {
    let n = samples.len();
    if n == 1 {
        samples[0].a = 0.0;
        return;
    }
    let mut raw = vec![0.0; n];
    for (i, r) in raw.iter_mut().enumerate() {
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
        *r = (samples[hi].v - samples[lo].v) / (samples[hi].t - samples[lo].t);
    }
    for (i, sample) in samples.iter_mut().enumerate() {
        let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
        let window = &raw[lo..=hi];
        sample.a = window.iter().sum::<f64>() / window.len() as f64;
    }
}

/// Write a trip back out in the input CSV format. Optional channels are
/// emitted only when present on the first sample (the synthetic generator
/// sets them uniformly across a trip).
pub fn write_trip_csv<W: Write>(sink: W, trip: &TripSeries) -> Result<(), IngestError> {
    let with_fuel = trip.samples.first().is_some_and(|s| s.fuel_rate.is_some());
    let with_emission = trip
        .samples
        .first()
        .is_some_and(|s| s.emission_rate.is_some());
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["t", "v", "a"];
    if with_fuel {
        header.push("fuel_rate");
    }
    if with_emission {
        header.push("emission_rate");
    }
    header.push("valid");
    writer.write_record(&header).map_err(csv_io)?;
    for s in &trip.samples {
        let mut row = vec![s.t.to_string(), s.v.to_string(), s.a.to_string()];
        if with_fuel {
            row.push(s.fuel_rate.map(|x| x.to_string()).unwrap_or_default());
        }
        if with_emission {
            row.push(s.emission_rate.map(|x| x.to_string()).unwrap_or_default());
        }
        row.push(if s.valid { "1" } else { "0" }.to_string());
        writer.write_record(&row).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> IngestError {
    IngestError::MalformedRow {
        line: 0,
        message: e.to_string(),
    }
}

/// Apply the fleet query: drop invalid samples (when required), keep only
/// allowed classes, and keep only vehicles whose total retained duration
/// meets the threshold. Result is grouped by vehicle id in sorted order.
pub fn filter_fleet(
    trips: Vec<TripSeries>,
    query: &FleetQuery,
) -> BTreeMap<String, Vec<TripSeries>> {
    let mut by_vehicle: BTreeMap<String, Vec<TripSeries>> = BTreeMap::new();
    for mut trip in trips {
        if !query.allowed_classes.contains(&trip.vehicle_class) {
            continue;
        }
        if query.require_valid_flag {
            trip.samples.retain(|s| s.valid);
        }
        if trip.samples.is_empty() {
            continue;
        }
        by_vehicle
            .entry(trip.vehicle_id.clone())
            .or_default()
            .push(trip);
    }
    by_vehicle.retain(|_, trips| {
        let total: f64 = trips.iter().map(|t| t.duration_s()).sum();
        total >= query.min_total_duration_s
    });
    // Deterministic trip order within each vehicle.
    for trips in by_vehicle.values_mut() {
        trips.sort_by(|a, b| a.trip_id.cmp(&b.trip_id));
    }
    by_vehicle
}

/// Z-score a vehicle's pooled (v, a) record. Sample (n-1) standard
/// deviation, so the output's sample std is exactly 1 per channel.
pub fn standardize(samples: &[Vec2]) -> Result<(Vec<Vec2>, StandardizationParams), IngestError> {
    let n = samples.len();
    if n < 2 {
        return Err(IngestError::TooFewSamples);
    }
    let nf = n as f64;
    let mut mean = [0.0, 0.0];
    for x in samples {
        mean[0] += x[0];
        mean[1] += x[1];
    }
    mean[0] /= nf;
    mean[1] /= nf;
    let mut ss = [0.0, 0.0];
    for x in samples {
        ss[0] += (x[0] - mean[0]).powi(2);
        ss[1] += (x[1] - mean[1]).powi(2);
    }
    let std = [(ss[0] / (nf - 1.0)).sqrt(), (ss[1] / (nf - 1.0)).sqrt()];
    if std[0] <= 0.0 {
        return Err(IngestError::ZeroVariance { channel: "v" });
    }
    if std[1] <= 0.0 {
        return Err(IngestError::ZeroVariance { channel: "a" });
    }
    let standardized = samples
        .iter()
        .map(|x| [(x[0] - mean[0]) / std[0], (x[1] - mean[1]) / std[1]])
        .collect();
    Ok((
        standardized,
        StandardizationParams {
            mean,
            std,
            scope: StandardizationScope::PerVehicle,
        },
    ))
}
