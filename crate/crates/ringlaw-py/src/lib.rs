//! Python bindings for the ringlaw library.
//!
//! Exposes the simulation, windowed MSR analysis, event detection, and IDW
//! interpolation entry points as a `ringlaw_py` extension module. Values
//! cross the boundary as plain Python lists/tuples/complex numbers; heavy
//! numerics stay on the Rust side.

use std::collections::BTreeMap;

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ringlaw::powermap::{idw_interpolate, MapSpec, Neighbors};
use ringlaw::rmt::{self, RingParams};
use ringlaw::sim::{self, EventScript, GridTopology, SimConfig};
use ringlaw::window::{self, MeasurementStream, MsrSeries, WindowConfig, GRID_SCOPE};
use ringlaw::RingLawError;

fn err(e: RingLawError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn make_params(n_rows: usize, window_len: usize, factors: usize) -> PyResult<RingParams> {
    RingParams::new(n_rows, window_len, factors).map_err(err)
}

/// Bus layout with named partitions.
#[pyclass(name = "Topology", frozen)]
struct PyTopology {
    inner: GridTopology,
}

#[pymethods]
impl PyTopology {
    /// The bundled 118-bus benchmark grid.
    #[staticmethod]
    fn builtin() -> Self {
        PyTopology {
            inner: GridTopology::builtin().clone(),
        }
    }

    /// Load a topology text file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyTopology {
            inner: GridTopology::load(std::path::Path::new(path)).map_err(err)?,
        })
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.inner.n_buses()
    }

    fn bus_ids(&self) -> Vec<u32> {
        self.inner.bus_ids()
    }

    /// Partition name -> sorted member bus ids.
    fn partitions(&self) -> BTreeMap<String, Vec<u32>> {
        self.inner.partitions().clone()
    }

    fn bus_xy(&self, id: u32) -> PyResult<(f64, f64)> {
        let bus = self
            .inner
            .bus(id)
            .ok_or_else(|| PyValueError::new_err(format!("unknown bus {id}")))?;
        Ok((bus.x, bus.y))
    }

    fn __repr__(&self) -> String {
        format!("Topology(n_buses={})", self.inner.n_buses())
    }
}

/// A rectangular block of per-bus voltage samples at a fixed cadence.
#[pyclass(name = "Stream", frozen)]
struct PyStream {
    inner: MeasurementStream,
}

#[pymethods]
impl PyStream {
    #[getter]
    fn bus_ids(&self) -> Vec<u32> {
        self.inner.bus_ids().to_vec()
    }

    #[getter]
    fn timestamps(&self) -> Vec<u64> {
        self.inner.timestamps().to_vec()
    }

    /// Sample matrix as a list of per-bus rows.
    fn values(&self) -> Vec<Vec<f64>> {
        self.inner
            .values()
            .outer_iter()
            .map(|row| row.to_vec())
            .collect()
    }

    /// Copy of the stream with the given buses removed.
    fn without_buses(&self, drop: Vec<u32>) -> PyResult<PyStream> {
        Ok(PyStream {
            inner: self.inner.without_buses(&drop).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Stream(n_buses={}, len={})",
            self.inner.n_buses(),
            self.inner.len()
        )
    }
}

/// MSR trajectory for one scope ("grid" or a partition name).
#[pyclass(name = "Series", frozen)]
struct PySeries {
    inner: MsrSeries,
}

#[pymethods]
impl PySeries {
    #[getter]
    fn scope(&self) -> String {
        self.inner.scope.clone()
    }

    #[getter]
    fn times(&self) -> Vec<u64> {
        self.inner.times.clone()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    /// Theoretical MSR for this scope's window shape.
    fn expected_msr(&self) -> f64 {
        rmt::expected_msr(&self.inner.params)
    }

    /// Values divided by the theoretical MSR.
    fn relative(&self) -> Vec<f64> {
        let e = rmt::expected_msr(&self.inner.params);
        self.inner.values.iter().map(|v| v / e).collect()
    }

    fn value_at(&self, time: u64) -> PyResult<f64> {
        self.inner.value_at(time).map_err(err)
    }

    /// Trailing-mean drop detector; returns (time, severity) pairs.
    fn detect(&self, baseline_window: usize, drop_fraction: f64) -> PyResult<Vec<(u64, f64)>> {
        let events = window::detect_events(&self.inner, baseline_window, drop_fraction)
            .map_err(err)?;
        Ok(events.into_iter().map(|e| (e.time, e.severity)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Series(scope='{}', len={})",
            self.inner.scope,
            self.inner.times.len()
        )
    }
}

/// Simulate a measurement stream on a topology.
#[pyfunction]
#[pyo3(signature = (topology=None, seed=0, duration=1000, noise_sigma=None,
                    attenuation=None, gain=None, base_voltage=None, empty_script=false))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    topology: Option<&PyTopology>,
    seed: u64,
    duration: u64,
    noise_sigma: Option<f64>,
    attenuation: Option<f64>,
    gain: Option<f64>,
    base_voltage: Option<f64>,
    empty_script: bool,
) -> PyResult<PyStream> {
    let defaults = SimConfig::default();
    let cfg = SimConfig {
        duration,
        seed,
        noise_sigma: noise_sigma.unwrap_or(defaults.noise_sigma),
        attenuation: attenuation.unwrap_or(defaults.attenuation),
        gain: gain.unwrap_or(defaults.gain),
        base_voltage: base_voltage.unwrap_or(defaults.base_voltage),
        ..defaults
    };
    let builtin;
    let topo = match topology {
        Some(t) => &t.inner,
        None => {
            builtin = GridTopology::builtin();
            builtin
        }
    };
    let script = if empty_script {
        EventScript::empty()
    } else {
        EventScript::builtin().clone()
    };
    Ok(PyStream {
        inner: sim::simulate(topo, &script, &cfg).map_err(err)?,
    })
}

/// Sliding-window MSR series for the whole grid plus every partition.
#[pyfunction]
#[pyo3(signature = (stream, topology=None, window_len=240, hop=1, factors=1, seed=0))]
fn msr_series(
    stream: &PyStream,
    topology: Option<&PyTopology>,
    window_len: usize,
    hop: usize,
    factors: usize,
    seed: u64,
) -> PyResult<Vec<PySeries>> {
    let builtin;
    let topo = match topology {
        Some(t) => &t.inner,
        None => {
            builtin = GridTopology::builtin();
            builtin
        }
    };
    let mut cfg = WindowConfig::new(window_len, seed);
    cfg.hop = hop;
    cfg.factors = factors;
    cfg.partitions = Some(topo.partitions().clone());
    let series = window::msr_series(&stream.inner, &cfg).map_err(err)?;
    Ok(series.into_iter().map(|s| PySeries { inner: s }).collect())
}

fn analyze_at(
    stream: &MeasurementStream,
    end_time: u64,
    window_len: usize,
    factors: usize,
    seed: u64,
) -> PyResult<window::WindowAnalysis> {
    let mut cfg = WindowConfig::new(window_len, seed);
    cfg.factors = factors;
    let w = window::window_at(stream, end_time, &cfg, None).map_err(err)?;
    window::analyze_window(&w, &cfg, GRID_SCOPE).map_err(err)
}

/// Eigenvalues of the normalized ring product for one window.
#[pyfunction]
#[pyo3(signature = (stream, end_time, window_len=240, factors=1, seed=0))]
fn window_eigenvalues(
    stream: &PyStream,
    end_time: u64,
    window_len: usize,
    factors: usize,
    seed: u64,
) -> PyResult<Vec<Complex64>> {
    let analysis = analyze_at(&stream.inner, end_time, window_len, factors, seed)?;
    Ok(analysis.spectrum.eigenvalues().to_vec())
}

/// (MSR, in-annulus fraction) for one window.
#[pyfunction]
#[pyo3(signature = (stream, end_time, window_len=240, factors=1, seed=0))]
fn window_msr(
    stream: &PyStream,
    end_time: u64,
    window_len: usize,
    factors: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let analysis = analyze_at(&stream.inner, end_time, window_len, factors, seed)?;
    Ok((analysis.msr, analysis.conformance.fraction))
}

/// Theoretical mean spectral radius for an N x T window with L factors.
#[pyfunction]
#[pyo3(signature = (n_rows, window_len, factors=1))]
fn expected_msr(n_rows: usize, window_len: usize, factors: usize) -> PyResult<f64> {
    Ok(rmt::expected_msr(&make_params(n_rows, window_len, factors)?))
}

/// Inner radius of the limiting support annulus.
#[pyfunction]
#[pyo3(signature = (n_rows, window_len, factors=1))]
fn ring_inner_radius(n_rows: usize, window_len: usize, factors: usize) -> PyResult<f64> {
    Ok(make_params(n_rows, window_len, factors)?.inner_radius)
}

/// Limiting radial eigenvalue density at the given |lambda|.
#[pyfunction]
#[pyo3(signature = (radius, n_rows, window_len, factors=1))]
fn ring_density(radius: f64, n_rows: usize, window_len: usize, factors: usize) -> PyResult<f64> {
    Ok(rmt::ring_density(radius, &make_params(n_rows, window_len, factors)?))
}

/// Inverse-distance-weighted raster from scattered (x, y, value) points.
/// Returns (rows, (lo, hi)) with row 0 at the bbox minimum y.
#[pyfunction]
#[pyo3(signature = (points, width, height, bbox, power=2.0, neighbors=None))]
fn idw_frame(
    points: Vec<(f64, f64, f64)>,
    width: usize,
    height: usize,
    bbox: (f64, f64, f64, f64),
    power: f64,
    neighbors: Option<usize>,
) -> PyResult<(Vec<Vec<f64>>, (f64, f64))> {
    let mut spec = MapSpec::new(width, height, bbox).map_err(err)?;
    spec.idw_power = power;
    if let Some(k) = neighbors {
        spec.neighbors = Neighbors::Nearest(k);
    }
    spec.validate().map_err(err)?;
    let frame = idw_interpolate(&points, &spec, 0, "py").map_err(err)?;
    let rows = frame
        .values
        .outer_iter()
        .map(|row| row.to_vec())
        .collect();
    Ok((rows, frame.value_range))
}

#[pymodule]
fn ringlaw_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTopology>()?;
    m.add_class::<PyStream>()?;
    m.add_class::<PySeries>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(msr_series, m)?)?;
    m.add_function(wrap_pyfunction!(window_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(window_msr, m)?)?;
    m.add_function(wrap_pyfunction!(expected_msr, m)?)?;
    m.add_function(wrap_pyfunction!(ring_inner_radius, m)?)?;
    m.add_function(wrap_pyfunction!(ring_density, m)?)?;
    m.add_function(wrap_pyfunction!(idw_frame, m)?)?;
    Ok(())
}
