//! Inverse-distance-weighted interpolation of per-bus scalars onto a 2D
//! raster, plus frame serialization (JSON grid + binary PGM) with one shared
//! value range per animation.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::RingLawError;
use crate::rmt;
use crate::sim::{fmt_float, GridTopology};
use crate::window::MsrSeries;
use crate::Result;

/// Neighbor selection for IDW: every point, or the k nearest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbors {
    All,
    Nearest(usize),
}

/// Raster geometry and interpolation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSpec {
    pub width: usize,
    pub height: usize,
    /// (x_min, y_min, x_max, y_max) in topology coordinates.
    pub bbox: (f64, f64, f64, f64),
    pub idw_power: f64,
    pub neighbors: Neighbors,
}

impl MapSpec {
    pub fn new(width: usize, height: usize, bbox: (f64, f64, f64, f64)) -> Result<Self> {
        let spec = Self {
            width,
            height,
            bbox,
            idw_power: 2.0,
            neighbors: Neighbors::All,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec whose bounding box is the hull of the topology's bus coordinates.
    pub fn covering(topology: &GridTopology, width: usize, height: usize) -> Result<Self> {
        let xs = topology.buses().iter().map(|b| b.x);
        let ys = topology.buses().iter().map(|b| b.y);
        let bbox = (
            xs.clone().fold(f64::INFINITY, f64::min),
            ys.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.fold(f64::NEG_INFINITY, f64::max),
        );
        MapSpec::new(width, height, bbox)
    }

    /// Re-check the invariants after direct field edits.
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(RingLawError::ValidationError(format!(
                "map raster must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        let (x0, y0, x1, y1) = self.bbox;
        if !(x0 < x1 && y0 < y1) || ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return Err(RingLawError::ValidationError(format!(
                "degenerate bounding box ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        if !(self.idw_power > 0.0) {
            return Err(RingLawError::ValidationError(format!(
                "IDW power must be positive, got {}",
                self.idw_power
            )));
        }
        if let Neighbors::Nearest(0) = self.neighbors {
            return Err(RingLawError::ValidationError(
                "neighbor count must be positive".into(),
            ));
        }
        Ok(())
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, y0, x1, y1) = self.bbox;
        x0 <= x && x <= x1 && y0 <= y && y <= y1
    }
}

/// One interpolated frame. `values` is H×W, row 0 at the bbox's minimum y;
/// `value_range` is the color scale shared across an animation.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFrame {
    pub time: u64,
    pub quantity: String,
    pub values: Array2<f64>,
    pub value_range: (f64, f64),
}

impl MapFrame {
    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

const NODE_SNAP_DISTANCE: f64 = 1e-9;

/// IDW over scattered points: cell = Σ wᵏvᵏ/Σ wᵏ with w = d^(−power); a cell
/// within 1e-9 of a data point takes that value exactly.
pub fn idw_interpolate(points: &[(f64, f64, f64)], spec: &MapSpec, time: u64, quantity: &str) -> Result<MapFrame> {
    spec.validate()?;
    if points.is_empty() {
        return Err(RingLawError::EmptyPointSet);
    }
    for (x, y, v) in points {
        if !(x.is_finite() && y.is_finite() && v.is_finite()) {
            return Err(RingLawError::ValidationError(
                "interpolation points must be finite".into(),
            ));
        }
        if !spec.contains(*x, *y) {
            return Err(RingLawError::ValidationError(format!(
                "point ({x}, {y}) lies outside the bounding box"
            )));
        }
    }
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            if a.0 == b.0 && a.1 == b.1 {
                return Err(RingLawError::ValidationError(format!(
                    "duplicate interpolation coordinates ({}, {})",
                    a.0, a.1
                )));
            }
        }
    }
    let (x0, y0, x1, y1) = spec.bbox;
    let dx = (x1 - x0) / (spec.width - 1) as f64;
    let dy = (y1 - y0) / (spec.height - 1) as f64;
    let mut values = Array2::zeros((spec.height, spec.width));
    let mut dist = vec![0.0f64; points.len()];
    for r in 0..spec.height {
        let cy = y0 + r as f64 * dy;
        for c in 0..spec.width {
            let cx = x0 + c as f64 * dx;
            let mut nearest = (0usize, f64::INFINITY);
            for (k, p) in points.iter().enumerate() {
                let d = ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt();
                dist[k] = d;
                if d < nearest.1 {
                    nearest = (k, d);
                }
            }
            if nearest.1 < NODE_SNAP_DISTANCE {
                values[[r, c]] = points[nearest.0].2;
                continue;
            }
            let selected: Vec<usize> = match spec.neighbors {
                Neighbors::All => (0..points.len()).collect(),
                Neighbors::Nearest(k) => {
                    let mut order: Vec<usize> = (0..points.len()).collect();
                    order.sort_by(|a, b| dist[*a].total_cmp(&dist[*b]));
                    order.truncate(k);
                    order
                }
            };
            let mut num = 0.0;
            let mut den = 0.0;
            for k in selected {
                let w = dist[k].powf(-spec.idw_power);
                num += w * points[k].2;
                den += w;
            }
            values[[r, c]] = num / den;
        }
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(MapFrame {
        time,
        quantity: quantity.to_string(),
        values,
        value_range: (lo, hi),
    })
}

/// Per-bus points for one partition-valued frame: every bus carries its
/// partition's relative MSR (MSR divided by the partition's expected value),
/// and buses of partitions absent from `series` contribute nothing.
pub fn partition_frame(
    series: &[MsrSeries],
    topology: &GridTopology,
    time: u64,
    spec: &MapSpec,
) -> Result<MapFrame> {
    let mut points = Vec::new();
    for s in series {
        let members = match topology.partitions().get(&s.scope) {
            Some(m) => m,
            None => continue, // grid-wide or unknown scope: not a spatial series
        };
        let rel = s.value_at(time)? / rmt::expected_msr(&s.params);
        for bus in members {
            let b = topology
                .bus(*bus)
                .ok_or_else(|| RingLawError::UnknownBus(bus.to_string()))?;
            points.push((b.x, b.y, rel));
        }
    }
    idw_interpolate(&points, spec, time, "msr")
}

/// Frame file naming: `<quantity>_t<zero-padded-time>.<ext>`.
pub fn frame_filename(quantity: &str, time: u64, ext: &str) -> String {
    format!("{quantity}_t{time:06}.{ext}")
}

#[derive(Serialize, Deserialize)]
struct FrameJson {
    time: u64,
    quantity: String,
    width: usize,
    height: usize,
    bbox: (f64, f64, f64, f64),
    value_range: (f64, f64),
    config_hash: String,
    seed: u64,
    values: Vec<f64>,
}

/// Writes `frame` as a JSON grid and an 8-bit binary PGM next to it; the PGM
/// maps `value_range` linearly to [0,255] and clamps outside values.
pub fn write_frame(
    frame: &MapFrame,
    spec: &MapSpec,
    dir: &Path,
    config_hash: &str,
    seed: u64,
) -> Result<(PathBuf, PathBuf)> {
    let json_path = dir.join(frame_filename(&frame.quantity, frame.time, "json"));
    let pgm_path = dir.join(frame_filename(&frame.quantity, frame.time, "pgm"));
    let doc = FrameJson {
        time: frame.time,
        quantity: frame.quantity.clone(),
        width: spec.width,
        height: spec.height,
        bbox: spec.bbox,
        value_range: frame.value_range,
        config_hash: config_hash.to_string(),
        seed,
        values: frame.values.iter().cloned().collect(),
    };
    let mut json = serde_json::to_string(&doc).expect("frame serialization cannot fail");
    json.push('\n');
    std::fs::write(&json_path, json)?;

    let (lo, hi) = frame.value_range;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut pgm = Vec::with_capacity(64 + frame.values.len());
    write!(
        pgm,
        "P5\n# config_hash={config_hash} seed={seed} time={} quantity={} range=[{},{}]\n{} {}\n255\n",
        frame.time,
        frame.quantity,
        fmt_float(lo),
        fmt_float(hi),
        spec.width,
        spec.height
    )?;
    for v in frame.values.iter() {
        let scaled = ((v - lo) / span * 255.0).round().clamp(0.0, 255.0);
        pgm.push(scaled as u8);
    }
    std::fs::write(&pgm_path, pgm)?;
    Ok((json_path, pgm_path))
}

/// Reads back a frame JSON (value layout matches `MapFrame`).
pub fn read_frame_json(path: &Path) -> Result<(MapFrame, MapSpec)> {
    let text = std::fs::read_to_string(path)?;
    let doc: FrameJson = serde_json::from_str(&text).map_err(|e| RingLawError::FormatError {
        path: path.display().to_string(),
        row: 0,
        msg: e.to_string(),
    })?;
    if doc.values.len() != doc.width * doc.height {
        return Err(RingLawError::FormatError {
            path: path.display().to_string(),
            row: 0,
            msg: format!(
                "{} values for a {}x{} grid",
                doc.values.len(),
                doc.width,
                doc.height
            ),
        });
    }
    let values = Array2::from_shape_vec((doc.height, doc.width), doc.values)
        .expect("length checked above");
    // interpolation parameters are not recorded in the file; the spec carries
    // geometry only
    let spec = MapSpec::new(doc.width, doc.height, doc.bbox)?;
    Ok((
        MapFrame {
            time: doc.time,
            quantity: doc.quantity,
            values,
            value_range: doc.value_range,
        },
        spec,
    ))
}

/// Computes frames for every requested time, pins one shared value range per
/// quantity across them, and writes JSON + PGM pairs into `dir`. Returns the
/// written frames.
pub fn render_frames(
    mut frames: Vec<MapFrame>,
    spec: &MapSpec,
    dir: &Path,
    config_hash: &str,
    seed: u64,
) -> Result<Vec<MapFrame>> {
    if frames.is_empty() {
        return Ok(frames);
    }
    std::fs::create_dir_all(dir)?;
    let lo = frames.iter().map(MapFrame::min).fold(f64::INFINITY, f64::min);
    let hi = frames
        .iter()
        .map(MapFrame::max)
        .fold(f64::NEG_INFINITY, f64::max);
    for f in &mut frames {
        f.value_range = (lo, hi);
    }
    for f in &frames {
        write_frame(f, spec, dir, config_hash, seed)?;
    }
    Ok(frames)
}
