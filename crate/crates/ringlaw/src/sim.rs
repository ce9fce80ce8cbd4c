//! Deterministic grid simulator: a bundled 118-bus topology with six
//! partitions, scripted per-bus load schedules, and a linear
//! distance-attenuated response model producing noisy voltage streams.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use ndarray::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::RingLawError;
use crate::window::{derive_seed, MeasurementStream};
use crate::Result;

const BUILTIN_TOPOLOGY: &str = include_str!("../data/ieee118.topo");
const BUILTIN_EVENTS: &str = include_str!("../data/table2.events");

/// One bus: id, 2D layout coordinates, and partition name.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub partition: String,
}

/// Bus set, line list, and the partition cover derived from bus assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    buses: Vec<Bus>,
    lines: Vec<(u32, u32)>,
    partitions: BTreeMap<String, Vec<u32>>,
}

impl GridTopology {
    /// The bundled 118-bus system with partitions A1..A6.
    pub fn builtin() -> &'static GridTopology {
        static CACHE: OnceLock<GridTopology> = OnceLock::new();
        CACHE.get_or_init(|| {
            GridTopology::from_str(BUILTIN_TOPOLOGY, "<builtin>")
                .expect("bundled topology must parse")
        })
    }

    /// Parses the `[buses]` / `[lines]` two-section text format.
    pub fn from_str(text: &str, path: &str) -> Result<GridTopology> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Buses,
            Lines,
        }
        let mut section = Section::None;
        let mut buses = Vec::new();
        let mut lines = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| RingLawError::ParseError {
                path: path.to_string(),
                line: lineno + 1,
                msg,
            };
            match line {
                "[buses]" => {
                    section = Section::Buses;
                    continue;
                }
                "[lines]" => {
                    section = Section::Lines;
                    continue;
                }
                _ => {}
            }
            if line.starts_with('[') {
                return Err(err(format!("unknown section {line}")));
            }
            let fields: Vec<&str> = line
                .split([',', ' ', '\t'])
                .filter(|f| !f.is_empty())
                .collect();
            match section {
                Section::None => return Err(err("data before a section header".into())),
                Section::Buses => {
                    if fields.len() != 4 {
                        return Err(err(format!(
                            "bus row needs `id x y partition`, got {} fields",
                            fields.len()
                        )));
                    }
                    let id = fields[0]
                        .parse::<u32>()
                        .map_err(|e| err(format!("bus id: {e}")))?;
                    let x = fields[1]
                        .parse::<f64>()
                        .map_err(|e| err(format!("x coordinate: {e}")))?;
                    let y = fields[2]
                        .parse::<f64>()
                        .map_err(|e| err(format!("y coordinate: {e}")))?;
                    buses.push(Bus {
                        id,
                        x,
                        y,
                        partition: fields[3].to_string(),
                    });
                }
                Section::Lines => {
                    if fields.len() != 2 {
                        return Err(err(format!(
                            "line row needs `from to`, got {} fields",
                            fields.len()
                        )));
                    }
                    let a = fields[0]
                        .parse::<u32>()
                        .map_err(|e| err(format!("from bus: {e}")))?;
                    let b = fields[1]
                        .parse::<u32>()
                        .map_err(|e| err(format!("to bus: {e}")))?;
                    lines.push((a, b));
                }
            }
        }
        GridTopology::new(buses, lines)
    }

    pub fn new(buses: Vec<Bus>, lines: Vec<(u32, u32)>) -> Result<GridTopology> {
        if buses.len() < 2 {
            return Err(RingLawError::ValidationError(format!(
                "topology needs at least 2 buses, got {}",
                buses.len()
            )));
        }
        let mut ids = BTreeSet::new();
        for b in &buses {
            if !ids.insert(b.id) {
                return Err(RingLawError::ValidationError(format!(
                    "duplicate bus id {}",
                    b.id
                )));
            }
            if !b.x.is_finite() || !b.y.is_finite() {
                return Err(RingLawError::ValidationError(format!(
                    "bus {} has non-finite coordinates",
                    b.id
                )));
            }
            if b.partition.is_empty() {
                return Err(RingLawError::ValidationError(format!(
                    "bus {} has no partition assignment",
                    b.id
                )));
            }
        }
        for (i, a) in buses.iter().enumerate() {
            for b in &buses[i + 1..] {
                if a.x == b.x && a.y == b.y {
                    return Err(RingLawError::ValidationError(format!(
                        "buses {} and {} share coordinates ({}, {})",
                        a.id, b.id, a.x, a.y
                    )));
                }
            }
        }
        for (a, b) in &lines {
            if !ids.contains(a) || !ids.contains(b) {
                return Err(RingLawError::ValidationError(format!(
                    "line {a}-{b} references an unknown bus"
                )));
            }
        }
        let mut partitions: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        for b in &buses {
            partitions.entry(b.partition.clone()).or_default().push(b.id);
        }
        let topo = GridTopology {
            buses,
            lines,
            partitions,
        };
        let (component, total) = topo.largest_component();
        if component < total {
            return Err(RingLawError::DisconnectedGraph {
                component_size: component,
                total,
            });
        }
        Ok(topo)
    }

    fn largest_component(&self) -> (usize, usize) {
        let index: BTreeMap<u32, usize> =
            self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let mut adj = vec![BTreeSet::new(); self.buses.len()];
        for (a, b) in &self.lines {
            let (ia, ib) = (index[a], index[b]);
            if ia != ib {
                adj[ia].insert(ib);
                adj[ib].insert(ia);
            }
        }
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 0;
        while let Some(i) = queue.pop_front() {
            count += 1;
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        (count, self.buses.len())
    }

    /// Serializes in the same two-section format `from_str` accepts.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[buses]\n# id x y partition\n");
        for b in &self.buses {
            out.push_str(&format!("{} {:.6} {:.6} {}\n", b.id, b.x, b.y, b.partition));
        }
        out.push_str("\n[lines]\n# from to\n");
        for (a, b) in &self.lines {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }

    pub fn load(path: &std::path::Path) -> Result<GridTopology> {
        let text = std::fs::read_to_string(path)?;
        GridTopology::from_str(&text, &path.display().to_string())
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[(u32, u32)] {
        &self.lines
    }

    pub fn partitions(&self) -> &BTreeMap<String, Vec<u32>> {
        &self.partitions
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn bus_ids(&self) -> Vec<u32> {
        self.buses.iter().map(|b| b.id).collect()
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }
}

/// Piecewise load level: constant MW or an affine ramp a·t + b MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Load {
    Const(f64),
    Ramp { a: f64, b: f64 },
}

impl Load {
    fn at(&self, t: u64) -> f64 {
        match self {
            Load::Const(v) => *v,
            Load::Ramp { a, b } => a * t as f64 + b,
        }
    }
}

/// One scheduled segment: closed time interval with a load level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub t_start: u64,
    pub t_end: u64,
    pub load: Load,
}

/// Per-bus load schedules.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventScript {
    entries: BTreeMap<u32, Vec<Segment>>,
}

impl EventScript {
    /// The bundled case-study schedule (one bus, step then ramp).
    pub fn builtin() -> &'static EventScript {
        static CACHE: OnceLock<EventScript> = OnceLock::new();
        CACHE.get_or_init(|| {
            EventScript::from_str(BUILTIN_EVENTS, "<builtin>")
                .expect("bundled event script must parse")
        })
    }

    /// Empty script: pure-noise scenario.
    pub fn empty() -> EventScript {
        EventScript::default()
    }

    /// Parses `bus,t_start,t_end,kind,params` rows.
    pub fn from_str(text: &str, path: &str) -> Result<EventScript> {
        let mut entries: BTreeMap<u32, Vec<Segment>> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| RingLawError::ParseError {
                path: path.to_string(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 5 {
                return Err(err(format!(
                    "event row needs `bus,t_start,t_end,kind,params`, got {} fields",
                    fields.len()
                )));
            }
            let bus = fields[0]
                .parse::<u32>()
                .map_err(|e| err(format!("bus: {e}")))?;
            let t_start = fields[1]
                .parse::<u64>()
                .map_err(|e| err(format!("t_start: {e}")))?;
            let t_end = fields[2]
                .parse::<u64>()
                .map_err(|e| err(format!("t_end: {e}")))?;
            let load = match fields[3] {
                "const" => {
                    if fields.len() != 5 {
                        return Err(err("const takes one parameter (level MW)".into()));
                    }
                    Load::Const(
                        fields[4]
                            .parse::<f64>()
                            .map_err(|e| err(format!("const level: {e}")))?,
                    )
                }
                "ramp" => {
                    if fields.len() != 6 {
                        return Err(err("ramp takes two parameters (a, b for a*t+b MW)".into()));
                    }
                    Load::Ramp {
                        a: fields[4]
                            .parse::<f64>()
                            .map_err(|e| err(format!("ramp a: {e}")))?,
                        b: fields[5]
                            .parse::<f64>()
                            .map_err(|e| err(format!("ramp b: {e}")))?,
                    }
                }
                other => return Err(err(format!("unknown segment kind `{other}`"))),
            };
            if t_end < t_start {
                return Err(err(format!("segment ends ({t_end}) before it starts ({t_start})")));
            }
            entries.entry(bus).or_default().push(Segment {
                t_start,
                t_end,
                load,
            });
        }
        let script = EventScript { entries };
        script.validate()?;
        Ok(script)
    }

    pub fn new(entries: BTreeMap<u32, Vec<Segment>>) -> Result<EventScript> {
        let script = EventScript { entries };
        script.validate()?;
        Ok(script)
    }

    fn validate(&self) -> Result<()> {
        for (bus, segs) in &self.entries {
            for pair in segs.windows(2) {
                if pair[1].t_start != pair[0].t_end + 1 {
                    return Err(RingLawError::ValidationError(format!(
                        "bus {bus}: segments must be contiguous and non-overlapping \
                         ([..{}] then [{}..])",
                        pair[0].t_end, pair[1].t_start
                    )));
                }
            }
            for s in segs {
                if !s.load.at(s.t_start).is_finite() || !s.load.at(s.t_end).is_finite() {
                    return Err(RingLawError::ValidationError(format!(
                        "bus {bus}: non-finite load level"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<EventScript> {
        let text = std::fs::read_to_string(path)?;
        EventScript::from_str(&text, &path.display().to_string())
    }

    pub fn entries(&self) -> &BTreeMap<u32, Vec<Segment>> {
        &self.entries
    }

    /// Load at `bus` at time `t` (0 outside scheduled segments).
    pub fn load_at(&self, bus: u32, t: u64) -> f64 {
        self.entries
            .get(&bus)
            .and_then(|segs| {
                segs.iter()
                    .find(|s| s.t_start <= t && t <= s.t_end)
                    .map(|s| s.load.at(t))
            })
            .unwrap_or(0.0)
    }

    /// Pointwise sum of two scripts (superposition experiments).
    pub fn merged(&self, other: &EventScript) -> Result<EventScript> {
        // Concatenation of segment lists is not generally contiguous, so the
        // merge re-expresses both schedules; only used by tests over disjoint
        // bus sets, which is the case the validation below accepts.
        let mut entries = self.entries.clone();
        for (bus, segs) in &other.entries {
            entries.entry(*bus).or_default().extend(segs.iter().cloned());
        }
        for segs in entries.values_mut() {
            segs.sort_by_key(|s| s.t_start);
        }
        EventScript::new(entries)
    }
}

/// Simulator parameters; defaults reproduce the bundled case study.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of samples (1 s each).
    pub duration: u64,
    pub sample_period: f64,
    /// Per-unit voltage noise standard deviation.
    pub noise_sigma: f64,
    /// Per-hop decay of load influence, in (0,1].
    pub attenuation: f64,
    /// Per-unit baseline voltage.
    pub base_voltage: f64,
    /// MW -> per-unit voltage deviation coefficient.
    pub gain: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 1000,
            sample_period: 1.0,
            noise_sigma: 1e-4,
            attenuation: 0.6,
            base_voltage: 1.0,
            gain: 2e-4,
            seed: 0,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if !(self.noise_sigma > 0.0) {
            return Err(RingLawError::ValidationError(format!(
                "noise sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        if !(self.attenuation > 0.0 && self.attenuation <= 1.0) {
            return Err(RingLawError::ValidationError(format!(
                "attenuation must lie in (0,1], got {}",
                self.attenuation
            )));
        }
        if self.duration == 0 {
            return Err(RingLawError::ValidationError(
                "duration must be at least 1 sample".into(),
            ));
        }
        if !(self.sample_period > 0.0) {
            return Err(RingLawError::ValidationError(format!(
                "sample period must be positive, got {}",
                self.sample_period
            )));
        }
        Ok(())
    }
}

/// attenuation^d(i,j) over shortest-path hop distances; symmetric with unit
/// diagonal.
pub fn influence_matrix(topology: &GridTopology, attenuation: f64) -> Result<Array2<f64>> {
    if !(attenuation > 0.0 && attenuation <= 1.0) {
        return Err(RingLawError::ValidationError(format!(
            "attenuation must lie in (0,1], got {attenuation}"
        )));
    }
    let n = topology.n_buses();
    let index: BTreeMap<u32, usize> = topology
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();
    let mut adj = vec![Vec::new(); n];
    for (a, b) in topology.lines() {
        let (ia, ib) = (index[a], index[b]);
        if ia != ib {
            adj[ia].push(ib);
            adj[ib].push(ia);
        }
    }
    let mut out = Array2::zeros((n, n));
    for start in 0..n {
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    queue.push_back(j);
                }
            }
        }
        for (j, d) in dist.iter().enumerate() {
            if *d == usize::MAX {
                let (component, total) = topology.largest_component();
                return Err(RingLawError::DisconnectedGraph {
                    component_size: component,
                    total,
                });
            }
            out[[start, j]] = attenuation.powi(*d as i32);
        }
    }
    Ok(out)
}

/// v_i(t) = base − gain·Σ_j influence(i,j)·P_j(t) + N(0, noise_sigma²),
/// sampled at t = 1..duration; deterministic per seed.
pub fn simulate(
    topology: &GridTopology,
    script: &EventScript,
    config: &SimConfig,
) -> Result<MeasurementStream> {
    config.validate()?;
    let n = topology.n_buses();
    let index: BTreeMap<u32, usize> = topology
        .buses()
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id, i))
        .collect();
    let mut loaded: Vec<(u32, usize)> = Vec::new();
    for bus in script.entries().keys() {
        let idx = index
            .get(bus)
            .ok_or_else(|| RingLawError::UnknownBus(bus.to_string()))?;
        loaded.push((*bus, *idx));
    }
    let influence = influence_matrix(topology, config.attenuation)?;
    let mut rng = ChaCha8Rng::from_seed(derive_seed(config.seed, 0, 0, "sim.noise"));
    let t_len = config.duration as usize;
    let mut values = Array2::from_elem((n, t_len), config.base_voltage);
    for t in 1..=config.duration {
        let col = (t - 1) as usize;
        for &(bus, j) in &loaded {
            let p = script.load_at(bus, t);
            if p != 0.0 {
                for i in 0..n {
                    values[[i, col]] -= config.gain * influence[[i, j]] * p;
                }
            }
        }
        for i in 0..n {
            let g: f64 = StandardNormal.sample(&mut rng);
            values[[i, col]] += config.noise_sigma * g;
        }
    }
    MeasurementStream::new(topology.bus_ids(), (1..=config.duration).collect(), values)
}

/// Lossless decimal float formatting (17 significant digits round-trips f64).
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the stream as CSV: optional `#` comment lines, then a
/// `time,bus_<id>,...` header and one row per sample.
pub fn export_stream(
    stream: &MeasurementStream,
    w: &mut impl Write,
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let header: Vec<String> = std::iter::once("time".to_string())
        .chain(stream.bus_ids().iter().map(|b| format!("bus_{b}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (k, ts) in stream.timestamps().iter().enumerate() {
        let mut row = String::with_capacity(stream.n_buses() * 24 + 12);
        row.push_str(&ts.to_string());
        for i in 0..stream.n_buses() {
            row.push(',');
            row.push_str(&fmt_float(stream.values()[[i, k]]));
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Reads the CSV format written by `export_stream`; `path` labels errors.
pub fn import_stream(r: impl BufRead, path: &str) -> Result<MeasurementStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| RingLawError::FormatError {
            path: path.to_string(),
            row: 1,
            msg: format!("header: {e}"),
        })?
        .clone();
    if headers.len() < 2 || &headers[0] != "time" {
        return Err(RingLawError::FormatError {
            path: path.to_string(),
            row: 1,
            msg: "header must be `time,bus_<id>,...`".into(),
        });
    }
    let mut bus_ids = Vec::with_capacity(headers.len() - 1);
    for h in headers.iter().skip(1) {
        let id = h
            .strip_prefix("bus_")
            .and_then(|s| s.parse::<u32>().ok())
            .ok_or_else(|| RingLawError::FormatError {
                path: path.to_string(),
                row: 1,
                msg: format!("bad bus column name `{h}`"),
            })?;
        bus_ids.push(id);
    }
    let n = bus_ids.len();
    let mut timestamps = Vec::new();
    let mut data: Vec<f64> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rownum = k + 2; // header is row 1
        let rec = rec.map_err(|e| RingLawError::FormatError {
            path: path.to_string(),
            row: rownum,
            msg: e.to_string(),
        })?;
        let fmt_err = |msg: String| RingLawError::FormatError {
            path: path.to_string(),
            row: rownum,
            msg,
        };
        if rec.len() != n + 1 {
            return Err(fmt_err(format!("expected {} fields, got {}", n + 1, rec.len())));
        }
        timestamps.push(
            rec[0]
                .parse::<u64>()
                .map_err(|e| fmt_err(format!("time: {e}")))?,
        );
        for f in rec.iter().skip(1) {
            data.push(
                f.parse::<f64>()
                    .map_err(|e| fmt_err(format!("value: {e}")))?,
            );
        }
    }
    if timestamps.is_empty() {
        return Err(RingLawError::FormatError {
            path: path.to_string(),
            row: 2,
            msg: "stream has no samples".into(),
        });
    }
    // rows arrive time-major; the stream stores bus-major
    let t_len = timestamps.len();
    let time_major = Array2::from_shape_vec((t_len, n), data).expect("dims checked per row");
    MeasurementStream::new(bus_ids, timestamps, time_major.reversed_axes().as_standard_layout().to_owned())
}
