//! Sliding-window engine: assembles split-windows from a measurement stream,
//! runs the spectral pipeline per window (grid-wide and per partition), and
//! produces MSR time series with a simple trailing-mean event detector.

use std::collections::BTreeMap;

use ndarray::prelude::*;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::RingLawError;
use crate::rmt::{
    self, ConformanceReport, DataWindow, RingParams, Spectrum, StandardizeOpts, Unitary,
};
use crate::Result;

/// Per-timestep bus measurements: one row per bus, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementStream {
    bus_ids: Vec<u32>,
    timestamps: Vec<u64>,
    values: Array2<f64>,
}

impl MeasurementStream {
    pub fn new(bus_ids: Vec<u32>, timestamps: Vec<u64>, values: Array2<f64>) -> Result<Self> {
        let (n, t) = values.dim();
        if bus_ids.len() != n {
            return Err(RingLawError::ValidationError(format!(
                "{} bus ids for {} rows",
                bus_ids.len(),
                n
            )));
        }
        if timestamps.len() != t {
            return Err(RingLawError::ValidationError(format!(
                "{} timestamps for {} columns",
                timestamps.len(),
                t
            )));
        }
        if t == 0 {
            return Err(RingLawError::ValidationError("empty stream".into()));
        }
        if t > 1 {
            let step = timestamps[1].wrapping_sub(timestamps[0]);
            if step == 0 {
                return Err(RingLawError::ValidationError(
                    "timestamps must be strictly increasing".into(),
                ));
            }
            for w in timestamps.windows(2) {
                if w[1].wrapping_sub(w[0]) != step {
                    return Err(RingLawError::ValidationError(format!(
                        "timestamps must advance by a constant step (saw {} then {})",
                        w[0], w[1]
                    )));
                }
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &bus_ids {
            if !seen.insert(*id) {
                return Err(RingLawError::ValidationError(format!(
                    "duplicate bus id {id}"
                )));
            }
        }
        Ok(Self {
            bus_ids,
            timestamps,
            values,
        })
    }

    pub fn bus_ids(&self) -> &[u32] {
        &self.bus_ids
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_buses(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Sample step in time units (1 for a single-sample stream).
    pub fn step(&self) -> u64 {
        if self.timestamps.len() > 1 {
            self.timestamps[1] - self.timestamps[0]
        } else {
            1
        }
    }

    fn row_of(&self, bus: u32) -> Result<usize> {
        self.bus_ids
            .iter()
            .position(|b| *b == bus)
            .ok_or_else(|| RingLawError::UnknownBus(bus.to_string()))
    }

    /// Copy of the stream without the given buses (missing-data experiments).
    pub fn without_buses(&self, drop: &[u32]) -> Result<MeasurementStream> {
        for b in drop {
            self.row_of(*b)?;
        }
        let keep: Vec<usize> = (0..self.n_buses())
            .filter(|i| !drop.contains(&self.bus_ids[*i]))
            .collect();
        let ids = keep.iter().map(|&i| self.bus_ids[i]).collect();
        let values = self.values.select(Axis(0), &keep);
        MeasurementStream::new(ids, self.timestamps.clone(), values)
    }
}

/// How the unitary factors are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnitaryMode {
    #[default]
    Haar,
    /// Identity factors; deterministic debugging mode.
    Identity,
}

/// Window geometry and seeding for the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowConfig {
    /// T: samples per split-window.
    pub window_len: usize,
    /// Samples between consecutive analyses.
    pub hop: usize,
    /// L: number of unitary factors per window.
    pub factors: usize,
    /// Base seed; per-window unitary seeds derive from it.
    pub seed: u64,
    /// Partition name -> member bus ids; analyzed alongside the grid scope.
    pub partitions: Option<BTreeMap<String, Vec<u32>>>,
    /// Annulus tolerance for conformance reports.
    pub conformance_tol: f64,
    /// Jitter flat rows instead of failing.
    pub jitter: bool,
    pub unitary_mode: UnitaryMode,
}

impl WindowConfig {
    pub fn new(window_len: usize, seed: u64) -> Self {
        Self {
            window_len,
            hop: 1,
            factors: 1,
            seed,
            partitions: None,
            conformance_tol: 0.05,
            jitter: false,
            unitary_mode: UnitaryMode::Haar,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.hop == 0 || self.factors == 0 {
            return Err(RingLawError::ValidationError(
                "window_len, hop, and factors must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Grid-wide scope name; partition scopes use the partition name.
pub const GRID_SCOPE: &str = "grid";

/// Factor index reserved for the jitter stream.
const JITTER_FACTOR: u32 = u32::MAX;

/// Deterministic 32-byte RNG seed for (base, end_time, factor, scope).
pub fn derive_seed(base: u64, end_time: u64, factor: u32, scope: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"ringlaw.seed.v1");
    h.update(base.to_le_bytes());
    h.update(end_time.to_le_bytes());
    h.update(factor.to_le_bytes());
    h.update((scope.len() as u64).to_le_bytes());
    h.update(scope.as_bytes());
    h.finalize().into()
}

/// N×T window ending at `end_time`; rows restricted to `rows` when given.
pub fn window_at(
    stream: &MeasurementStream,
    end_time: u64,
    config: &WindowConfig,
    rows: Option<&[u32]>,
) -> Result<DataWindow> {
    config.validate()?;
    let t = config.window_len;
    let pos = stream
        .timestamps
        .iter()
        .position(|ts| *ts == end_time)
        .ok_or_else(|| RingLawError::InsufficientHistory {
            needed: t,
            have: stream.timestamps.iter().filter(|ts| **ts <= end_time).count(),
        })?;
    if pos + 1 < t {
        return Err(RingLawError::InsufficientHistory {
            needed: t,
            have: pos + 1,
        });
    }
    let col_range = (pos + 1 - t)..(pos + 1);
    let (row_idx, ids): (Vec<usize>, Vec<u32>) = match rows {
        Some(requested) => {
            let mut idx = Vec::with_capacity(requested.len());
            for b in requested {
                idx.push(stream.row_of(*b)?);
            }
            (idx, requested.to_vec())
        }
        None => ((0..stream.n_buses()).collect(), stream.bus_ids.clone()),
    };
    let slice = stream.values.slice(s![.., col_range]);
    let values = slice.select(Axis(0), &row_idx);
    DataWindow::new(values, ids, end_time, stream.step() as f64)
}

/// Everything the pipeline produces for one window.
#[derive(Debug, Clone)]
pub struct WindowAnalysis {
    pub spectrum: Spectrum,
    pub msr: f64,
    pub conformance: ConformanceReport,
    pub params: RingParams,
}

/// Full pipeline on one window: standardize, L singular-value equivalents
/// with independent seeded unitaries, product, row normalization, spectrum,
/// MSR, and annulus conformance. Deterministic given (window, seed, scope).
pub fn analyze_window(
    window: &DataWindow,
    config: &WindowConfig,
    scope: &str,
) -> Result<WindowAnalysis> {
    config.validate()?;
    let end_time = window.end_time();
    let attach = |e: RingLawError| match e {
        RingLawError::ZeroVarianceRow { row } => RingLawError::ZeroVarianceRow {
            row: format!("{row} (window ending at {end_time})"),
        },
        other => other,
    };
    let opts = StandardizeOpts {
        jitter_seed: config
            .jitter
            .then(|| derive_seed(config.seed, end_time, JITTER_FACTOR, scope)),
        ..StandardizeOpts::default()
    };
    let x = rmt::standardize_rows(window, &opts).map_err(attach)?;
    let unitaries = (0..config.factors)
        .map(|i| match config.unitary_mode {
            UnitaryMode::Haar => Unitary::Haar(derive_seed(config.seed, end_time, i as u32, scope)),
            UnitaryMode::Identity => Unitary::Identity,
        })
        .collect();
    let factors = rmt::singular_value_equivalents(&x, unitaries)?;
    let z = rmt::normalize_product_rows(&rmt::ring_product(&factors)?)?;
    let spectrum = rmt::eigenvalues(&z)?;
    let msr = rmt::msr(&spectrum)?;
    let params = RingParams::new(window.n_rows(), window.n_cols(), config.factors)?;
    let conformance = rmt::ring_conformance(&spectrum, &params, config.conformance_tol)?;
    Ok(WindowAnalysis {
        spectrum,
        msr,
        conformance,
        params,
    })
}

/// MSR trajectory for one scope (grid-wide or a single partition).
#[derive(Debug, Clone)]
pub struct MsrSeries {
    pub scope: String,
    pub times: Vec<u64>,
    pub values: Vec<f64>,
    pub conformance: Vec<ConformanceReport>,
    pub params: RingParams,
}

impl MsrSeries {
    pub fn value_at(&self, time: u64) -> Result<f64> {
        self.times
            .iter()
            .position(|t| *t == time)
            .map(|i| self.values[i])
            .ok_or(RingLawError::TimeNotInSeries { time })
    }
}

/// One series per scope: grid first, then partitions in name order. Windows
/// are analyzed at every `hop`-th sample once a full window of history
/// exists; unitary seeds are keyed by (seed, end_time, factor, scope), so a
/// coarser hop is an exact subsample of the hop-1 series.
pub fn msr_series(stream: &MeasurementStream, config: &WindowConfig) -> Result<Vec<MsrSeries>> {
    config.validate()?;
    let t = config.window_len;
    if stream.len() < t {
        return Err(RingLawError::InsufficientHistory {
            needed: t,
            have: stream.len(),
        });
    }
    let end_times: Vec<u64> = (t - 1..stream.len())
        .step_by(config.hop)
        .map(|i| stream.timestamps[i])
        .collect();

    let mut scopes: Vec<(String, Option<Vec<u32>>)> = vec![(GRID_SCOPE.to_string(), None)];
    if let Some(parts) = &config.partitions {
        for (name, buses) in parts {
            scopes.push((name.clone(), Some(buses.clone())));
        }
    }

    scopes
        .into_iter()
        .map(|(scope, rows)| {
            let analyses: Result<Vec<WindowAnalysis>> = end_times
                .par_iter()
                .map(|&et| {
                    let w = window_at(stream, et, config, rows.as_deref())?;
                    analyze_window(&w, config, &scope)
                })
                .collect();
            let analyses = analyses?;
            let params = analyses
                .first()
                .map(|a| a.params)
                .expect("at least one window guaranteed above");
            Ok(MsrSeries {
                scope,
                times: end_times.clone(),
                values: analyses.iter().map(|a| a.msr).collect(),
                conformance: analyses.iter().map(|a| a.conformance).collect(),
                params,
            })
        })
        .collect()
}

/// A flagged MSR drop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: u64,
    pub severity: f64,
}

/// Trailing-mean threshold detector: flags samples whose MSR falls below
/// (1 − drop_fraction) times the mean of the previous `baseline_window`
/// values; severity is the relative drop.
pub fn detect_events(
    series: &MsrSeries,
    baseline_window: usize,
    drop_fraction: f64,
) -> Result<Vec<Event>> {
    if baseline_window < 10 {
        return Err(RingLawError::ValidationError(format!(
            "baseline window must be at least 10 samples, got {baseline_window}"
        )));
    }
    if !(drop_fraction > 0.0 && drop_fraction < 1.0) {
        return Err(RingLawError::ValidationError(format!(
            "drop fraction must be in (0,1), got {drop_fraction}"
        )));
    }
    if series.values.len() <= baseline_window {
        return Err(RingLawError::SeriesTooShort {
            needed: baseline_window + 1,
            have: series.values.len(),
        });
    }
    let mut events = Vec::new();
    for k in baseline_window..series.values.len() {
        let base: f64 =
            series.values[k - baseline_window..k].iter().sum::<f64>() / baseline_window as f64;
        let v = series.values[k];
        if v < (1.0 - drop_fraction) * base {
            events.push(Event {
                time: series.times[k],
                severity: 1.0 - v / base,
            });
        }
    }
    Ok(events)
}
