//! Command-line front end: simulate, analyze, map, ringcheck, repro.
//!
//! Every artifact written by a subcommand starts with a provenance block of
//! `#` comments carrying the effective configuration (canonical JSON), a
//! 16-hex-digit config hash, and the base seed, so any output can be traced
//! back to the run that produced it and regenerated byte-for-byte.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::s;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::powermap::{
    frame_filename, idw_interpolate, partition_frame, render_frames, MapFrame, MapSpec, Neighbors,
};
use crate::rmt::{expected_msr, gaussian_window, RingParams, Spectrum};
use crate::sim::{
    export_stream, fmt_float, import_stream, simulate, EventScript, GridTopology, SimConfig,
};
use crate::window::{
    analyze_window, derive_seed, msr_series, window_at, MsrSeries, WindowConfig, GRID_SCOPE,
};
use crate::{Result, RingLawError};

// ---------------------------------------------------------------------------
// argument surface

#[derive(Parser, Debug)]
#[command(
    name = "ringlaw",
    version,
    about = "ring-law spectral analysis for grid measurement streams"
)]
pub struct Cli {
    /// TOML file supplying defaults for any option (flags still win)
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// worker threads (default: all cores; also honours RINGLAW_THREADS)
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a voltage measurement stream for a topology and event script
    Simulate(SimulateArgs),
    /// Slide ring-law windows over a stream and emit MSR series per scope
    Analyze(AnalyzeArgs),
    /// Interpolate per-bus quantities onto raster frames (JSON + PGM)
    Map(MapArgs),
    /// Monte Carlo check of spectra against the single-ring law
    Ringcheck(RingcheckArgs),
    /// One-shot reproduction: simulate, analyze (full and degraded), map
    Repro(ReproArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// use the bundled 118-bus topology (default when --topology is absent)
    #[arg(long, conflicts_with = "topology")]
    pub builtin_118: bool,
    /// topology file to simulate on
    #[arg(long, value_name = "PATH")]
    pub topology: Option<PathBuf>,
    /// event script file (default: bundled three-phase script)
    #[arg(long, value_name = "PATH", conflicts_with = "empty_script")]
    pub script: Option<PathBuf>,
    /// run without any load events (noise-only baseline)
    #[arg(long)]
    pub empty_script: bool,
    /// base RNG seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// number of samples to generate
    #[arg(long)]
    pub duration: Option<u64>,
    /// seconds between samples
    #[arg(long)]
    pub sample_period: Option<f64>,
    /// measurement noise sigma
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// per-hop influence attenuation
    #[arg(long)]
    pub attenuation: Option<f64>,
    /// load-to-voltage coupling gain
    #[arg(long)]
    pub gain: Option<f64>,
    /// nominal bus voltage
    #[arg(long)]
    pub base_voltage: Option<f64>,
    /// output CSV path, or '-' for stdout
    #[arg(long, short = 'o', default_value = "-", value_name = "PATH")]
    pub output: String,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// stream CSV path, or '-' for stdin
    #[arg(long, short = 'i', default_value = "-", value_name = "PATH")]
    pub input: String,
    /// series CSV path, or '-' for stdout
    #[arg(long, short = 'o', default_value = "-", value_name = "PATH")]
    pub output: String,
    /// use the bundled 118-bus topology (default when --topology is absent)
    #[arg(long, conflicts_with = "topology")]
    pub builtin_118: bool,
    /// topology file providing partitions
    #[arg(long, value_name = "PATH")]
    pub topology: Option<PathBuf>,
    /// samples per window
    #[arg(long)]
    pub window_len: Option<usize>,
    /// stride between window end-times
    #[arg(long)]
    pub hop: Option<usize>,
    /// number of singular value equivalents multiplied per window
    #[arg(long, short = 'l')]
    pub factors: Option<usize>,
    /// base RNG seed for the unitary draws
    #[arg(long)]
    pub seed: Option<u64>,
    /// annulus tolerance for conformance reporting
    #[arg(long)]
    pub tol: Option<f64>,
    /// jitter zero-variance rows instead of failing
    #[arg(long)]
    pub jitter: bool,
    /// drop every bus of this partition before analysis (repeatable)
    #[arg(long, value_name = "NAME")]
    pub drop_partition: Vec<String>,
    /// write the grid eigen-spectrum at this end-time (repeatable)
    #[arg(long, value_name = "TIME")]
    pub dump_spectrum: Vec<u64>,
    /// directory for spectrum dumps
    #[arg(long, default_value = ".", value_name = "DIR")]
    pub spectrum_dir: PathBuf,
    /// first window end-time to report
    #[arg(long, value_name = "TIME")]
    pub from: Option<u64>,
    /// last sample to consume
    #[arg(long, value_name = "TIME")]
    pub to: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Quantity {
    /// relative MSR per partition, from an analyze series CSV
    Msr,
    /// raw bus voltages, from a stream CSV
    Voltage,
}

#[derive(Args, Debug)]
pub struct MapArgs {
    /// what to interpolate
    #[arg(long, value_enum)]
    pub quantity: Quantity,
    /// input CSV (series for msr, stream for voltage), or '-' for stdin
    #[arg(long, short = 'i', default_value = "-", value_name = "PATH")]
    pub input: String,
    /// directory receiving frame files
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// use the bundled 118-bus topology (default when --topology is absent)
    #[arg(long, conflicts_with = "topology")]
    pub builtin_118: bool,
    /// topology file giving bus coordinates and partitions
    #[arg(long, value_name = "PATH")]
    pub topology: Option<PathBuf>,
    /// comma-separated frame times
    #[arg(long, value_name = "T,T,...", conflicts_with = "all_times")]
    pub times: Option<String>,
    /// render every time present in the input
    #[arg(long)]
    pub all_times: bool,
    /// raster width in cells
    #[arg(long)]
    pub width: Option<usize>,
    /// raster height in cells
    #[arg(long)]
    pub height: Option<usize>,
    /// inverse-distance exponent
    #[arg(long)]
    pub power: Option<f64>,
    /// 'all' or a neighbour count k
    #[arg(long, value_name = "all|K")]
    pub neighbors: Option<String>,
}

#[derive(Args, Debug)]
pub struct RingcheckArgs {
    /// matrix rows N
    #[arg(short = 'n', long = "rows", value_name = "N")]
    pub n: usize,
    /// window length T
    #[arg(short = 't', long = "cols", value_name = "T")]
    pub t: usize,
    /// number of factors L
    #[arg(short = 'l', long = "factors", default_value_t = 1)]
    pub factors: usize,
    /// independent windows to draw
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// base RNG seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// annulus tolerance
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    /// write a JSON report to PATH ('-' for stdout) instead of text
    #[arg(long, value_name = "PATH")]
    pub json: Option<String>,
}

#[derive(Args, Debug)]
pub struct ReproArgs {
    /// directory receiving the whole artifact tree
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// base RNG seed for simulation and analysis
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// number of samples to simulate
    #[arg(long, default_value_t = 1000)]
    pub duration: u64,
    /// stride between window end-times
    #[arg(long, default_value_t = 1)]
    pub hop: usize,
    /// partition removed in the degraded pass
    #[arg(long, default_value = "A2", value_name = "NAME")]
    pub drop_partition: String,
    /// frame times to render (those beyond the series are skipped)
    #[arg(long, default_value = "300,301,302,420,820,826", value_name = "T,T,...")]
    pub frames: String,
    /// raster width in cells
    #[arg(long)]
    pub width: Option<usize>,
    /// raster height in cells
    #[arg(long)]
    pub height: Option<usize>,
}

// ---------------------------------------------------------------------------
// TOML defaults file

#[derive(Deserialize, Debug, Default, Clone)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    window: Option<WindowFile>,
    sim: Option<SimFile>,
    map: Option<MapFile>,
}

#[derive(Deserialize, Debug, Default, Clone)]
#[serde(deny_unknown_fields)]
struct WindowFile {
    window_len: Option<usize>,
    hop: Option<usize>,
    factors: Option<usize>,
    seed: Option<u64>,
    conformance_tol: Option<f64>,
    jitter: Option<bool>,
}

#[derive(Deserialize, Debug, Default, Clone)]
#[serde(deny_unknown_fields)]
struct SimFile {
    duration: Option<u64>,
    sample_period: Option<f64>,
    noise_sigma: Option<f64>,
    attenuation: Option<f64>,
    base_voltage: Option<f64>,
    gain: Option<f64>,
    seed: Option<u64>,
}

#[derive(Deserialize, Debug, Default, Clone)]
#[serde(deny_unknown_fields)]
struct MapFile {
    width: Option<usize>,
    height: Option<usize>,
    idw_power: Option<f64>,
    neighbors: Option<NeighborsFile>,
}

#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
enum NeighborsFile {
    Count(usize),
    Name(String),
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| RingLawError::ValidationError(format!("{}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| RingLawError::ValidationError(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// provenance

fn config_hash(cfg: &serde_json::Value) -> String {
    let canon = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(canon.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn provenance(cfg: &serde_json::Value, seed: u64) -> (String, Vec<String>) {
    let canon = serde_json::to_string(cfg).expect("config serializes");
    let hash = config_hash(cfg);
    let comments = vec![
        format!("config = {canon}"),
        format!("config_hash = {hash}"),
        format!("seed = {seed}"),
    ];
    (hash, comments)
}

// ---------------------------------------------------------------------------
// stream / file plumbing

fn open_input(path: &str) -> Result<Box<dyn BufRead>> {
    if path == "-" {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        let f = File::open(path)
            .map_err(|e| RingLawError::ValidationError(format!("{path}: {e}")))?;
        Ok(Box::new(BufReader::new(f)))
    }
}

fn create_output(path: &str) -> Result<Box<dyn Write>> {
    if path == "-" {
        Ok(Box::new(BufWriter::new(io::stdout())))
    } else {
        let f = File::create(path)
            .map_err(|e| RingLawError::ValidationError(format!("{path}: {e}")))?;
        Ok(Box::new(BufWriter::new(f)))
    }
}

fn input_label(path: &str) -> &str {
    if path == "-" {
        "<stdin>"
    } else {
        path
    }
}

fn resolve_topology(path: Option<&Path>) -> Result<(GridTopology, &'static str)> {
    match path {
        Some(p) => Ok((GridTopology::load(p)?, "file")),
        None => Ok((GridTopology::builtin().clone(), "builtin-118")),
    }
}

fn parse_neighbors(text: &str) -> Result<Neighbors> {
    if text.eq_ignore_ascii_case("all") {
        Ok(Neighbors::All)
    } else {
        let k: usize = text.parse().map_err(|_| {
            RingLawError::ValidationError(format!(
                "--neighbors expects 'all' or a positive count, got '{text}'"
            ))
        })?;
        Ok(Neighbors::Nearest(k))
    }
}

fn neighbors_json(n: Neighbors) -> serde_json::Value {
    match n {
        Neighbors::All => serde_json::Value::String("all".into()),
        Neighbors::Nearest(k) => serde_json::Value::from(k),
    }
}

fn parse_time_list(text: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let t: u64 = part.parse().map_err(|_| {
            RingLawError::ValidationError(format!("invalid time '{part}' in time list"))
        })?;
        out.push(t);
    }
    if out.is_empty() {
        return Err(RingLawError::ValidationError(
            "time list is empty".to_string(),
        ));
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

// ---------------------------------------------------------------------------
// series CSV format

/// Writes one row per window end-time: grid MSR, per-partition MSR columns in
/// topology order (empty cells for scopes that were not analyzed), and the
/// grid annulus conformance fraction.
fn write_series_csv<W: Write>(
    w: &mut W,
    comments: &[String],
    series: &[MsrSeries],
    partition_names: &[String],
    from: Option<u64>,
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut header = String::from("time,msr_grid");
    for name in partition_names {
        header.push_str(&format!(",msr_{name}"));
    }
    header.push_str(",conformance_grid");
    writeln!(w, "{header}")?;

    let grid = series
        .iter()
        .find(|s| s.scope == GRID_SCOPE)
        .ok_or_else(|| RingLawError::ValidationError("series lack a grid scope".to_string()))?;
    let by_scope: BTreeMap<&str, &MsrSeries> =
        series.iter().map(|s| (s.scope.as_str(), s)).collect();

    let start = from.unwrap_or(0);
    for (i, &t) in grid.times.iter().enumerate() {
        if t < start {
            continue;
        }
        write!(w, "{t},{}", fmt_float(grid.values[i]))?;
        for name in partition_names {
            match by_scope.get(name.as_str()) {
                Some(s) => write!(w, ",{}", fmt_float(s.values[i]))?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w, ",{}", fmt_float(grid.conformance[i].fraction))?;
    }
    Ok(())
}

struct SeriesCsv {
    times: Vec<u64>,
    columns: BTreeMap<String, Vec<Option<f64>>>,
    config: Option<serde_json::Value>,
    seed: Option<u64>,
}

fn read_series_csv(reader: &mut dyn BufRead, label: &str) -> Result<SeriesCsv> {
    let mut config = None;
    let mut seed = None;
    let mut header: Option<Vec<String>> = None;
    let mut times = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();

    let bad = |line: usize, msg: String| RingLawError::ParseError {
        path: label.to_string(),
        line,
        msg,
    };

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(json) = rest.strip_prefix("config = ") {
                config = serde_json::from_str(json).ok();
            } else if let Some(s) = rest.strip_prefix("seed = ") {
                seed = s.trim().parse().ok();
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        match &header {
            None => {
                if fields.first() != Some(&"time") {
                    return Err(bad(lineno, "header must start with 'time'".to_string()));
                }
                header = Some(fields.iter().map(|s| s.to_string()).collect());
                cells = vec![Vec::new(); fields.len() - 1];
            }
            Some(h) => {
                if fields.len() != h.len() {
                    return Err(bad(
                        lineno,
                        format!("expected {} fields, found {}", h.len(), fields.len()),
                    ));
                }
                let t: u64 = fields[0]
                    .parse()
                    .map_err(|_| bad(lineno, format!("invalid time '{}'", fields[0])))?;
                times.push(t);
                for (ci, cell) in fields[1..].iter().enumerate() {
                    if cell.is_empty() {
                        cells[ci].push(None);
                    } else {
                        let v: f64 = cell
                            .parse()
                            .map_err(|_| bad(lineno, format!("invalid value '{cell}'")))?;
                        cells[ci].push(Some(v));
                    }
                }
            }
        }
    }
    let header = header
        .ok_or_else(|| bad(0, "no header row found".to_string()))?;
    let mut columns = BTreeMap::new();
    for (name, col) in header[1..].iter().zip(cells) {
        columns.insert(name.clone(), col);
    }
    Ok(SeriesCsv {
        times,
        columns,
        config,
        seed,
    })
}

fn write_spectrum_csv<W: Write>(
    w: &mut W,
    comments: &[String],
    time: u64,
    spectrum: &Spectrum,
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "# time = {time}")?;
    writeln!(w, "re,im,radius")?;
    for (ev, r) in spectrum.eigenvalues().iter().zip(spectrum.radii()) {
        writeln!(
            w,
            "{},{},{}",
            fmt_float(ev.re),
            fmt_float(ev.im),
            fmt_float(*r)
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// shared mechanics

fn init_threads(explicit: Option<usize>) -> Result<()> {
    static DONE: OnceLock<()> = OnceLock::new();
    let requested = match explicit {
        Some(n) => Some(n),
        None => match std::env::var("RINGLAW_THREADS") {
            Ok(s) => Some(s.parse().map_err(|_| {
                RingLawError::ValidationError(format!("RINGLAW_THREADS must be a count, got '{s}'"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = requested {
        if n == 0 {
            return Err(RingLawError::ValidationError(
                "thread count must be at least 1".to_string(),
            ));
        }
        DONE.get_or_init(|| {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        });
    }
    Ok(())
}

fn truncate_stream(
    stream: crate::window::MeasurementStream,
    to: Option<u64>,
) -> Result<crate::window::MeasurementStream> {
    let Some(to) = to else { return Ok(stream) };
    let k = stream
        .timestamps()
        .iter()
        .take_while(|&&t| t <= to)
        .count();
    if k == stream.len() {
        return Ok(stream);
    }
    if k < 2 {
        return Err(RingLawError::ValidationError(format!(
            "--to {to} leaves fewer than two samples"
        )));
    }
    crate::window::MeasurementStream::new(
        stream.bus_ids().to_vec(),
        stream.timestamps()[..k].to_vec(),
        stream.values().slice(s![.., ..k]).to_owned(),
    )
}

// ---------------------------------------------------------------------------
// subcommands

fn cmd_simulate(a: SimulateArgs, fc: &FileConfig) -> Result<()> {
    let f = fc.sim.clone().unwrap_or_default();
    let d = SimConfig::default();
    let cfg = SimConfig {
        duration: a.duration.or(f.duration).unwrap_or(d.duration),
        sample_period: a.sample_period.or(f.sample_period).unwrap_or(d.sample_period),
        noise_sigma: a.noise_sigma.or(f.noise_sigma).unwrap_or(d.noise_sigma),
        attenuation: a.attenuation.or(f.attenuation).unwrap_or(d.attenuation),
        base_voltage: a.base_voltage.or(f.base_voltage).unwrap_or(d.base_voltage),
        gain: a.gain.or(f.gain).unwrap_or(d.gain),
        seed: a.seed.or(f.seed).unwrap_or(d.seed),
    };
    let (topo, topo_tag) = resolve_topology(a.topology.as_deref())?;
    let (script, script_tag) = if a.empty_script {
        (EventScript::empty(), "empty")
    } else if let Some(p) = &a.script {
        (EventScript::load(p)?, "file")
    } else {
        (EventScript::builtin().clone(), "builtin")
    };

    let cfg_json = serde_json::json!({
        "cmd": "simulate",
        "duration": cfg.duration,
        "sample_period": cfg.sample_period,
        "noise_sigma": cfg.noise_sigma,
        "attenuation": cfg.attenuation,
        "base_voltage": cfg.base_voltage,
        "gain": cfg.gain,
        "seed": cfg.seed,
        "topology": topo_tag,
        "script": script_tag,
    });
    let (_hash, comments) = provenance(&cfg_json, cfg.seed);

    let stream = simulate(&topo, &script, &cfg)?;
    let mut out = create_output(&a.output)?;
    export_stream(&stream, &mut out, &comments)?;
    out.flush()?;
    Ok(())
}

struct AnalyzeSetup {
    stream: crate::window::MeasurementStream,
    config: WindowConfig,
    partition_names: Vec<String>,
    cfg_json: serde_json::Value,
}

/// Validates the analyze knobs against the topology and prepares the reduced
/// stream plus window configuration shared by `analyze` and `repro`.
fn analyze_setup(
    stream: crate::window::MeasurementStream,
    topo: &GridTopology,
    topo_tag: &str,
    window_len: usize,
    hop: usize,
    factors: usize,
    seed: u64,
    tol: f64,
    jitter: bool,
    drop: &[String],
    from: Option<u64>,
    to: Option<u64>,
) -> Result<AnalyzeSetup> {
    let mut partitions = topo.partitions().clone();
    let mut dropped_buses: Vec<u32> = Vec::new();
    for name in drop {
        let buses = partitions.remove(name).ok_or_else(|| {
            RingLawError::ValidationError(format!("topology has no partition named '{name}'"))
        })?;
        dropped_buses.extend(buses);
    }
    let stream = truncate_stream(stream, to)?;
    let stream = if dropped_buses.is_empty() {
        stream
    } else {
        stream.without_buses(&dropped_buses)?
    };

    let partition_names: Vec<String> = partitions.keys().cloned().collect();
    let mut config = WindowConfig::new(window_len, seed);
    config.hop = hop;
    config.factors = factors;
    config.conformance_tol = tol;
    config.jitter = jitter;
    config.partitions = Some(partitions);

    let mut drop_sorted: Vec<String> = drop.to_vec();
    drop_sorted.sort();
    let cfg_json = serde_json::json!({
        "cmd": "analyze",
        "window_len": window_len,
        "hop": hop,
        "factors": factors,
        "seed": seed,
        "conformance_tol": tol,
        "jitter": jitter,
        "topology": topo_tag,
        "drop_partitions": drop_sorted,
        "from": from,
        "to": to,
    });
    Ok(AnalyzeSetup {
        stream,
        config,
        partition_names,
        cfg_json,
    })
}

fn cmd_analyze(a: AnalyzeArgs, fc: &FileConfig) -> Result<()> {
    let f = fc.window.clone().unwrap_or_default();
    let window_len = a.window_len.or(f.window_len).unwrap_or(240);
    let hop = a.hop.or(f.hop).unwrap_or(1);
    let factors = a.factors.or(f.factors).unwrap_or(1);
    let seed = a.seed.or(f.seed).unwrap_or(0);
    let tol = a.tol.or(f.conformance_tol).unwrap_or(0.05);
    let jitter = a.jitter || f.jitter.unwrap_or(false);

    let (topo, topo_tag) = resolve_topology(a.topology.as_deref())?;
    let mut input = open_input(&a.input)?;
    let stream = import_stream(&mut input, input_label(&a.input))?;
    let setup = analyze_setup(
        stream,
        &topo,
        topo_tag,
        window_len,
        hop,
        factors,
        seed,
        tol,
        jitter,
        &a.drop_partition,
        a.from,
        a.to,
    )?;
    let (_hash, comments) = provenance(&setup.cfg_json, seed);

    let series = msr_series(&setup.stream, &setup.config)?;
    let mut out = create_output(&a.output)?;
    write_series_csv(&mut out, &comments, &series, &setup.partition_names, a.from)?;
    out.flush()?;

    if !a.dump_spectrum.is_empty() {
        fs::create_dir_all(&a.spectrum_dir)?;
        for &t in &a.dump_spectrum {
            let window = window_at(&setup.stream, t, &setup.config, None)?;
            let analysis = analyze_window(&window, &setup.config, GRID_SCOPE)?;
            let path = a.spectrum_dir.join(format!("spectrum_t{t:06}.csv"));
            let mut w = BufWriter::new(File::create(&path)?);
            write_spectrum_csv(&mut w, &comments, t, &analysis.spectrum)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_map(a: MapArgs, fc: &FileConfig) -> Result<()> {
    let f = fc.map.clone().unwrap_or_default();
    let width = a.width.or(f.width).unwrap_or(64);
    let height = a.height.or(f.height).unwrap_or(48);
    let power = a.power.or(f.idw_power).unwrap_or(2.0);
    let neighbors = match (&a.neighbors, &f.neighbors) {
        (Some(s), _) => parse_neighbors(s)?,
        (None, Some(NeighborsFile::Count(k))) => Neighbors::Nearest(*k),
        (None, Some(NeighborsFile::Name(s))) => parse_neighbors(s)?,
        (None, None) => Neighbors::All,
    };

    let (topo, topo_tag) = resolve_topology(a.topology.as_deref())?;
    let mut spec = MapSpec::covering(&topo, width, height)?;
    spec.idw_power = power;
    spec.neighbors = neighbors;
    spec.validate()?;

    let quantity_tag = match a.quantity {
        Quantity::Msr => "msr",
        Quantity::Voltage => "voltage",
    };
    let cfg_json = serde_json::json!({
        "cmd": "map",
        "quantity": quantity_tag,
        "width": width,
        "height": height,
        "idw_power": power,
        "neighbors": neighbors_json(neighbors),
        "topology": topo_tag,
    });
    let hash = config_hash(&cfg_json);

    let mut input = open_input(&a.input)?;
    let requested = match (&a.times, a.all_times) {
        (Some(list), _) => Some(parse_time_list(list)?),
        (None, true) => None,
        (None, false) => {
            return Err(RingLawError::ValidationError(
                "pass --times T,T,... or --all-times".to_string(),
            ))
        }
    };

    fs::create_dir_all(&a.out_dir)?;
    let (frames, seed) = match a.quantity {
        Quantity::Msr => {
            let data = read_series_csv(&mut input, input_label(&a.input))?;
            let meta = data.config.as_ref().ok_or_else(|| {
                RingLawError::ValidationError(
                    "series input lacks the '# config = {...}' metadata line".to_string(),
                )
            })?;
            let window_len = meta["window_len"].as_u64().ok_or_else(|| {
                RingLawError::ValidationError("series metadata lacks window_len".to_string())
            })? as usize;
            let factors = meta["factors"].as_u64().ok_or_else(|| {
                RingLawError::ValidationError("series metadata lacks factors".to_string())
            })? as usize;

            let mut series = Vec::new();
            for (name, buses) in topo.partitions() {
                let Some(col) = data.columns.get(&format!("msr_{name}")) else {
                    continue;
                };
                if col.iter().any(Option::is_none) {
                    continue; // partition was dropped during analysis
                }
                series.push(MsrSeries {
                    scope: name.clone(),
                    times: data.times.clone(),
                    values: col.iter().map(|v| v.unwrap()).collect(),
                    conformance: Vec::new(),
                    params: RingParams::new(buses.len(), window_len, factors)?,
                });
            }
            if series.is_empty() {
                return Err(RingLawError::ValidationError(
                    "series input has no usable partition columns".to_string(),
                ));
            }
            let times = requested.unwrap_or_else(|| data.times.clone());
            let mut frames = Vec::new();
            for t in times {
                frames.push(partition_frame(&series, &topo, t, &spec)?);
            }
            (frames, data.seed.unwrap_or(0))
        }
        Quantity::Voltage => {
            let stream = import_stream(&mut input, input_label(&a.input))?;
            let times = requested.unwrap_or_else(|| stream.timestamps().to_vec());
            let mut frames = Vec::new();
            for t in times {
                frames.push(voltage_frame(&stream, &topo, t, &spec)?);
            }
            (frames, 0)
        }
    };
    render_frames(frames, &spec, &a.out_dir, &hash, seed)?;
    Ok(())
}

/// IDW frame of raw bus voltages at one sample time.
fn voltage_frame(
    stream: &crate::window::MeasurementStream,
    topo: &GridTopology,
    time: u64,
    spec: &MapSpec,
) -> Result<MapFrame> {
    let idx = stream
        .timestamps()
        .iter()
        .position(|&t| t == time)
        .ok_or(RingLawError::TimeNotInSeries { time })?;
    let mut points = Vec::with_capacity(stream.n_buses());
    for (row, &id) in stream.bus_ids().iter().enumerate() {
        let bus = topo
            .bus(id)
            .ok_or_else(|| RingLawError::UnknownBus(id.to_string()))?;
        points.push((bus.x, bus.y, stream.values()[[row, idx]]));
    }
    idw_interpolate(&points, spec, time, "voltage")
}

fn cmd_ringcheck(a: RingcheckArgs) -> Result<()> {
    if a.n < 2 || a.t < a.n {
        return Err(RingLawError::ValidationError(format!(
            "need 2 <= N <= T, got N={} T={}",
            a.n, a.t
        )));
    }
    if a.trials == 0 {
        return Err(RingLawError::ValidationError(
            "--trials must be at least 1".to_string(),
        ));
    }
    let params = RingParams::new(a.n, a.t, a.factors)?;

    let mut config = WindowConfig::new(a.t, a.seed);
    config.factors = a.factors;
    config.conformance_tol = a.tol;

    use rayon::prelude::*;
    let trials: Vec<(f64, f64)> = (0..a.trials as u64)
        .into_par_iter()
        .map(|k| {
            let wseed = derive_seed(a.seed, k, 0, "ringcheck.window");
            let window = gaussian_window(a.n, a.t, wseed, k)?;
            let analysis = analyze_window(&window, &config, "ringcheck")?;
            Ok((analysis.msr, analysis.conformance.fraction))
        })
        .collect::<Result<Vec<_>>>()?;

    let msrs: Vec<f64> = trials.iter().map(|t| t.0).collect();
    let fractions: Vec<f64> = trials.iter().map(|t| t.1).collect();
    let mean = msrs.iter().sum::<f64>() / msrs.len() as f64;
    let var = if msrs.len() > 1 {
        msrs.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (msrs.len() - 1) as f64
    } else {
        0.0
    };
    let std = var.sqrt();
    // every trial has the same spectrum size, so the pooled in-annulus
    // fraction is the plain mean of per-trial fractions
    let fraction = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let expected = expected_msr(&params);

    let cfg_json = serde_json::json!({
        "cmd": "ringcheck",
        "n": a.n,
        "t": a.t,
        "factors": a.factors,
        "trials": a.trials,
        "seed": a.seed,
        "tol": a.tol,
    });
    let (hash, _comments) = provenance(&cfg_json, a.seed);

    if let Some(json_path) = &a.json {
        let report = serde_json::json!({
            "n": a.n,
            "t": a.t,
            "factors": a.factors,
            "trials": a.trials,
            "seed": a.seed,
            "tol": a.tol,
            "ratio": params.ratio,
            "inner_radius": params.inner_radius,
            "outer_radius": params.outer_radius,
            "expected_msr": expected,
            "mean_msr": mean,
            "std_msr": std,
            "annulus_fraction": fraction,
            "msr_values": msrs,
            "annulus_fractions": fractions,
            "config_hash": hash,
        });
        let mut out = create_output(json_path)?;
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        writeln!(out, "{text}")?;
        out.flush()?;
    } else {
        let mut out = BufWriter::new(io::stdout());
        writeln!(
            out,
            "single-ring check: n={} t={} l={} trials={} seed={} tol={}",
            a.n, a.t, a.factors, a.trials, a.seed, a.tol
        )?;
        writeln!(out, "config_hash      : {hash}")?;
        writeln!(out, "ratio c          : {}", fmt_float(params.ratio))?;
        writeln!(
            out,
            "annulus          : [{}, {}]",
            fmt_float(params.inner_radius),
            fmt_float(params.outer_radius)
        )?;
        writeln!(out, "expected msr     : {}", fmt_float(expected))?;
        writeln!(out, "mean msr         : {}", fmt_float(mean))?;
        writeln!(out, "std msr          : {}", fmt_float(std))?;
        writeln!(out, "annulus fraction : {}", fmt_float(fraction))?;
        for (i, m) in msrs.iter().enumerate() {
            writeln!(out, "trial {i:>2} msr     : {}", fmt_float(*m))?;
        }
        out.flush()?;
    }
    Ok(())
}

fn cmd_repro(a: ReproArgs, fc: &FileConfig) -> Result<()> {
    let fw = fc.window.clone().unwrap_or_default();
    let fm = fc.map.clone().unwrap_or_default();
    let window_len = fw.window_len.unwrap_or(240);
    let width = a.width.or(fm.width).unwrap_or(64);
    let height = a.height.or(fm.height).unwrap_or(48);
    let frame_times = parse_time_list(&a.frames)?;

    if a.duration < window_len as u64 {
        return Err(RingLawError::ValidationError(format!(
            "--duration {} is shorter than the {window_len}-sample window",
            a.duration
        )));
    }

    let topo = GridTopology::builtin().clone();
    let script = EventScript::builtin().clone();
    let sim_cfg = SimConfig {
        duration: a.duration,
        seed: a.seed,
        ..SimConfig::default()
    };

    let cfg_json = serde_json::json!({
        "cmd": "repro",
        "seed": a.seed,
        "duration": a.duration,
        "hop": a.hop,
        "window_len": window_len,
        "factors": 1,
        "drop_partition": a.drop_partition,
        "frames": frame_times,
        "width": width,
        "height": height,
    });
    let (hash, comments) = provenance(&cfg_json, a.seed);

    fs::create_dir_all(&a.out_dir)?;
    let spectra_dir = a.out_dir.join("spectra");
    let frames_full_dir = a.out_dir.join("frames_full");
    let frames_drop_dir = a.out_dir.join(format!("frames_no{}", a.drop_partition));
    fs::create_dir_all(&spectra_dir)?;
    fs::create_dir_all(&frames_full_dir)?;
    fs::create_dir_all(&frames_drop_dir)?;

    // 1. simulate
    let stream = simulate(&topo, &script, &sim_cfg)?;
    {
        let mut w = BufWriter::new(File::create(a.out_dir.join("stream.csv"))?);
        export_stream(&stream, &mut w, &comments)?;
        w.flush()?;
    }

    // 2. analyze, full grid and with one partition removed
    let run_pass = |drop: &[String]| -> Result<AnalyzeSetup> {
        analyze_setup(
            stream.clone(),
            &topo,
            "builtin-118",
            window_len,
            a.hop,
            1,
            a.seed,
            0.05,
            false,
            drop,
            None,
            None,
        )
    };
    let full = run_pass(&[])?;
    let series_full = msr_series(&full.stream, &full.config)?;
    {
        let mut w = BufWriter::new(File::create(a.out_dir.join("series_full.csv"))?);
        write_series_csv(&mut w, &comments, &series_full, &full.partition_names, None)?;
        w.flush()?;
    }
    let dropped = run_pass(std::slice::from_ref(&a.drop_partition))?;
    let series_drop = msr_series(&dropped.stream, &dropped.config)?;
    {
        let name = format!("series_no{}.csv", a.drop_partition);
        let mut w = BufWriter::new(File::create(a.out_dir.join(name))?);
        write_series_csv(&mut w, &comments, &series_drop, &dropped.partition_names, None)?;
        w.flush()?;
    }

    // 3. grid spectra around the step edge
    let grid_times = &series_full[0].times;
    for &t in &[300u64, 301] {
        if !grid_times.contains(&t) {
            continue;
        }
        let window = window_at(&full.stream, t, &full.config, None)?;
        let analysis = analyze_window(&window, &full.config, GRID_SCOPE)?;
        let path = spectra_dir.join(format!("spectrum_t{t:06}.csv"));
        let mut w = BufWriter::new(File::create(&path)?);
        write_spectrum_csv(&mut w, &comments, t, &analysis.spectrum)?;
        w.flush()?;
    }

    // 4. frames at the key times present in the series
    let spec = {
        let mut s = MapSpec::covering(&topo, width, height)?;
        s.idw_power = 2.0;
        s.neighbors = Neighbors::All;
        s
    };
    let times: Vec<u64> = frame_times
        .iter()
        .copied()
        .filter(|t| grid_times.contains(t))
        .collect();
    if times.is_empty() {
        return Err(RingLawError::ValidationError(
            "no requested frame time falls inside the analyzed series".to_string(),
        ));
    }

    let render_pass = |series: &[MsrSeries],
                       setup: &AnalyzeSetup,
                       dir: &Path|
     -> Result<()> {
        let mut msr_frames = Vec::new();
        let mut volt_frames = Vec::new();
        for &t in &times {
            msr_frames.push(partition_frame(series, &topo, t, &spec)?);
            volt_frames.push(voltage_frame(&setup.stream, &topo, t, &spec)?);
        }
        render_frames(msr_frames, &spec, dir, &hash, a.seed)?;
        render_frames(volt_frames, &spec, dir, &hash, a.seed)?;
        Ok(())
    };
    render_pass(&series_full, &full, &frames_full_dir)?;
    render_pass(&series_drop, &dropped, &frames_drop_dir)?;

    // manifest of what landed where
    {
        let mut w = BufWriter::new(File::create(a.out_dir.join("MANIFEST.txt"))?);
        for c in &comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "stream.csv")?;
        writeln!(w, "series_full.csv")?;
        writeln!(w, "series_no{}.csv", a.drop_partition)?;
        for &t in &[300u64, 301] {
            if grid_times.contains(&t) {
                writeln!(w, "spectra/spectrum_t{t:06}.csv")?;
            }
        }
        for dir in ["frames_full", &format!("frames_no{}", a.drop_partition)] {
            for &t in &times {
                for q in ["msr", "voltage"] {
                    writeln!(w, "{dir}/{}", frame_filename(q, t, "json"))?;
                    writeln!(w, "{dir}/{}", frame_filename(q, t, "pgm"))?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// entry points

pub fn run(cli: Cli) -> Result<()> {
    let file_cfg = load_file_config(cli.config.as_deref())?;
    init_threads(cli.threads)?;
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a, &file_cfg),
        Command::Analyze(a) => cmd_analyze(a, &file_cfg),
        Command::Map(a) => cmd_map(a, &file_cfg),
        Command::Ringcheck(a) => cmd_ringcheck(a),
        Command::Repro(a) => cmd_repro(a, &file_cfg),
    }
}

/// Parses the process arguments and runs the requested subcommand, returning
/// the process exit code (0 ok, 1 numerical failure, 2 usage/data error).
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_class()
        }
    }
}
