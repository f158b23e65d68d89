// Copyright 2026 The spinreg Authors
// SPDX-License-Identifier: Apache-2.0

//! Command-line front end: one TOML config per experiment, CSV and JSON artifacts.
//!
//! Every command parses and validates its config, computes all artifacts in
//! memory and only then writes them, so a failing run leaves no files behind.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::blink::{analyze_power_series, analyze_trace, load_trace, synthesize_trace, AnalysisOptions, CountTrace, TraceAnalysis, TraceEmission};
use crate::dynamics::{HyperfineVector, RegisterConfig};
use crate::error::Error;
use crate::readout::{
    nuclear_rabi_sweep, nuclear_threshold_grid, run_nuclear_ssr, run_qnd_experiment, run_ssr_experiment, write_confusion_csv,
    write_records_csv, BlinkRates, NuclearSsrOptions, PhotonModel, SsrOptions,
};
use crate::rng::{derive_seed, tag};
use crate::spectra::{
    fit_hyperfine, fit_t2star, resonant_tau_dd, simulate_cs, simulate_cs_2d, simulate_xy8_spectrum, write_cs_csv, write_psd_csv,
    write_spectrum_csv, CouplingBounds, CsPlan, CsReadout, HyperfineFitOptions, MemoryMode, PeakOptions, PsdParams, PulseOptions,
    SpectrumPoint, extract_peaks_with,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "spinreg", version, about = "Electron-nuclear spin register simulations and readout analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(clap::Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Experiment config in TOML.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Artifact formats to write.
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    pub format: Format,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// XY8 survival spectrum over a grid of spacings.
    Xy8,
    /// Correlation spectroscopy signal, PSD and peaks.
    Cs,
    /// Electron single-shot readout statistics.
    Ssr,
    /// Repeated nuclear readout with Rabi and reads-threshold sweeps.
    NuclearSsr,
    /// Blinking rates from synthetic or recorded count traces.
    Blink,
    /// Hyperfine or T2* fit of measured data.
    Fit,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Both,
}

/// Failure of a CLI run with its exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn config_err(e: impl fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: Error) -> CliError {
    CliError::Runtime(e.to_string())
}

// ---------------------------------------------------------------------------
// Config

/// Photon model given inline or by preset name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhotonSpec {
    Preset(PhotonPreset),
    Model(PhotonModel),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhotonPreset {
    Reference,
    Calibrated,
}

impl Default for PhotonSpec {
    fn default() -> Self {
        PhotonSpec::Preset(PhotonPreset::Reference)
    }
}

impl PhotonSpec {
    pub fn model(&self) -> PhotonModel {
        match self {
            PhotonSpec::Preset(PhotonPreset::Reference) => PhotonModel::reference(),
            PhotonSpec::Preset(PhotonPreset::Calibrated) => PhotonModel::calibrated(),
            PhotonSpec::Model(m) => m.clone(),
        }
    }
}

/// Explicit values, `count` points from `start` to `stop`, or `count` points
/// from `start` in steps of `step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Values(Vec<f64>),
    Linspace(Linspace),
    Stepped(Stepped),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Linspace {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stepped {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        let v = match self {
            GridSpec::Values(v) => v.clone(),
            GridSpec::Linspace(l) => {
                if l.count < 2 {
                    return Err(config_err("linspace grid needs count >= 2"));
                }
                (0..l.count).map(|i| l.start + (l.stop - l.start) * i as f64 / (l.count - 1) as f64).collect()
            }
            GridSpec::Stepped(s) => CsPlan::uniform_grid(s.start, s.step, s.count),
        };
        if v.is_empty() {
            return Err(config_err("grid is empty"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(config_err("grid contains a non-finite value"));
        }
        Ok(v)
    }
}

/// Top-level file layout shared by all commands.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig<E> {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub register: RegisterConfig,
    #[serde(default)]
    pub photon: PhotonSpec,
    pub experiment: E,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Xy8Experiment {
    #[serde(default = "one")]
    pub order: usize,
    /// XY8 spacings in s.
    pub tau_dd: GridSpec,
    #[serde(default)]
    pub pulses: PulseOptions,
}

fn one() -> usize {
    1
}

/// Fixed spacing in s, or the resonance of one nucleus at harmonic `k`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum TauDdSpec {
    Value(f64),
    Resonant(Resonance),
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resonance {
    pub nucleus: usize,
    pub k: usize,
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CsReadoutChoice {
    #[default]
    Ideal,
    /// Uses the top-level photon model.
    Photon { threshold: u32 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsExperiment {
    pub tau_dd: TauDdSpec,
    pub order: usize,
    /// Correlation times in s.
    pub tau: GridSpec,
    #[serde(default)]
    pub randomize_tau: bool,
    #[serde(default)]
    pub memory_mode: MemoryMode,
    #[serde(default)]
    pub shots_per_point: u32,
    #[serde(default)]
    pub pulses: PulseOptions,
    #[serde(default)]
    pub readout: CsReadoutChoice,
    /// Defaults to [`PsdParams::for_length`].
    #[serde(default)]
    pub psd: Option<PsdParams>,
    #[serde(default)]
    pub peaks: PeakOptions,
    /// Spacings of a 2D scan; replaces `tau_dd` row by row.
    #[serde(default)]
    pub tau_dd_grid: Option<GridSpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsrExperiment {
    pub shots: u64,
    #[serde(default)]
    pub options: SsrOptions,
    /// Shots of the repeated-readout QND run; defaults to `shots`.
    #[serde(default)]
    pub qnd_shots: Option<u64>,
    #[serde(default)]
    pub write_records: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuclearSsrExperiment {
    #[serde(default)]
    pub options: NuclearSsrOptions,
    /// Gate Rabi frequencies in Hz.
    #[serde(default)]
    pub rabi_grid: Option<GridSpec>,
    #[serde(default = "default_max_reads")]
    pub max_reads: usize,
    #[serde(default = "default_max_threshold")]
    pub max_threshold: u32,
}

fn default_max_reads() -> usize {
    4
}

fn default_max_threshold() -> u32 {
    6
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSeries {
    pub powers_nw: Vec<f64>,
    pub grad_on_off: f64,
    pub grad_off_on: f64,
    pub bin_width_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub emission: TraceEmission,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlinkExperiment {
    /// Trace CSVs, each with a JSON sidecar of the same stem.
    #[serde(default)]
    pub traces: Vec<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSeries>,
    #[serde(default)]
    pub analysis: AnalysisOptions,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FitExperiment {
    /// Data CSV with columns `tau_dd_s,survival`.
    Hyperfine {
        data: PathBuf,
        targets: Vec<usize>,
        #[serde(default)]
        start: Option<Vec<HyperfineVector>>,
        /// Explicit bounds per target; otherwise `relative_bounds` around the start.
        #[serde(default)]
        bounds: Option<Vec<CouplingBounds>>,
        #[serde(default = "default_relative_bounds")]
        relative_bounds: f64,
        #[serde(default)]
        options: HyperfineFitOptions,
    },
    /// Data CSV with columns `time_s,signal`.
    T2star {
        data: PathBuf,
        #[serde(default = "default_exponent")]
        exponent: f64,
    },
}

fn default_relative_bounds() -> f64 {
    0.5
}

fn default_exponent() -> f64 {
    2.0
}

/// Parses a config, reporting TOML errors with line and column.
pub fn parse_config<E: DeserializeOwned>(text: &str) -> Result<ExperimentConfig<E>, CliError> {
    toml::from_str(text).map_err(config_err)
}

// ---------------------------------------------------------------------------
// Artifacts

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArtifactKind {
    Csv,
    Json,
}

/// One output file held in memory until the run succeeds.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub kind: ArtifactKind,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn csv(name: impl Into<String>, write: impl FnOnce(&mut Vec<u8>) -> crate::error::Result<()>) -> Result<Self, CliError> {
        let mut bytes = Vec::new();
        write(&mut bytes).map_err(runtime_err)?;
        Ok(Self { name: name.into(), kind: ArtifactKind::Csv, bytes })
    }

    fn json<T: Serialize>(name: impl Into<String>, value: &T) -> Result<Self, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        bytes.push(b'\n');
        Ok(Self { name: name.into(), kind: ArtifactKind::Json, bytes })
    }
}

fn keep(format: Format, kind: ArtifactKind) -> bool {
    match format {
        Format::Both => true,
        Format::Csv => kind == ArtifactKind::Csv,
        Format::Json => kind == ArtifactKind::Json,
    }
}

/// Validated inputs common to every command.
struct Context {
    base_dir: PathBuf,
    seed: Option<u64>,
}

impl Context {
    fn seed(&self, command: &str) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| config_err(format!("{command} is stochastic and needs a seed (config `seed` or --seed)")))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Runs the command and writes its artifacts. Returns the written paths.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let path = cli.global.config.as_ref().ok_or_else(|| config_err("--config PATH is required"))?;
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let (artifacts, output_dir) = pool.install(|| compute(cli.command, &text, &base_dir, cli.global.seed))?;
    let out = cli.global.out.clone().or(output_dir).unwrap_or_else(|| PathBuf::from("spinreg-out"));
    write_artifacts(&out, artifacts, cli.global.format)
}

/// Parses, validates and computes without touching the filesystem beyond
/// reading inputs.
pub fn compute(
    command: Command,
    text: &str,
    base_dir: &Path,
    seed_override: Option<u64>,
) -> Result<(Vec<Artifact>, Option<PathBuf>), CliError> {
    fn prepare<E: DeserializeOwned>(
        text: &str,
        base_dir: &Path,
        seed_override: Option<u64>,
    ) -> Result<(ExperimentConfig<E>, Context), CliError> {
        let cfg: ExperimentConfig<E> = parse_config(text)?;
        cfg.register.validate().map_err(config_err)?;
        cfg.photon.model().validate().map_err(config_err)?;
        let ctx = Context { base_dir: base_dir.to_path_buf(), seed: seed_override.or(cfg.seed) };
        Ok((cfg, ctx))
    }
    match command {
        Command::Xy8 => {
            let (cfg, ctx) = prepare::<Xy8Experiment>(text, base_dir, seed_override)?;
            Ok((cmd_xy8(&cfg, &ctx)?, cfg.output_dir))
        }
        Command::Cs => {
            let (cfg, ctx) = prepare::<CsExperiment>(text, base_dir, seed_override)?;
            Ok((cmd_cs(&cfg, &ctx)?, cfg.output_dir))
        }
        Command::Ssr => {
            let (cfg, ctx) = prepare::<SsrExperiment>(text, base_dir, seed_override)?;
            Ok((cmd_ssr(&cfg, &ctx)?, cfg.output_dir))
        }
        Command::NuclearSsr => {
            let (cfg, ctx) = prepare::<NuclearSsrExperiment>(text, base_dir, seed_override)?;
            Ok((cmd_nuclear_ssr(&cfg, &ctx)?, cfg.output_dir))
        }
        Command::Blink => {
            let (cfg, ctx) = prepare::<BlinkExperiment>(text, base_dir, seed_override)?;
            Ok((cmd_blink(&cfg, &ctx)?, cfg.output_dir))
        }
        Command::Fit => {
            let (cfg, ctx) = prepare::<FitExperiment>(text, base_dir, seed_override)?;
            Ok((cmd_fit(&cfg, &ctx)?, cfg.output_dir))
        }
    }
}

fn write_artifacts(dir: &Path, artifacts: Vec<Artifact>, format: Format) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for a in artifacts.into_iter().filter(|a| keep(format, a.kind)) {
        let p = dir.join(&a.name);
        std::fs::write(&p, &a.bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))?;
        written.push(p);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Serialize)]
struct Xy8Summary<'a> {
    order: usize,
    rabi_hz: f64,
    ideal_pulses: bool,
    n_nuclei: usize,
    points: &'a [SpectrumPoint],
}

fn cmd_xy8(cfg: &ExperimentConfig<Xy8Experiment>, _ctx: &Context) -> Result<Vec<Artifact>, CliError> {
    let e = &cfg.experiment;
    let grid = e.tau_dd.values()?;
    if e.order < 1 {
        return Err(config_err("order must be at least 1"));
    }
    if grid.iter().any(|&t| t < 0.0) {
        return Err(config_err("tau_dd values must be non-negative"));
    }
    let points = simulate_xy8_spectrum(&cfg.register, &grid, e.order, e.pulses).map_err(runtime_err)?;
    let summary =
        Xy8Summary { order: e.order, rabi_hz: e.pulses.rabi, ideal_pulses: e.pulses.ideal, n_nuclei: cfg.register.n_nuclei(), points: &points };
    Ok(vec![
        Artifact::csv("xy8_spectrum.csv", |w| write_spectrum_csv(&points, w))?,
        Artifact::json("xy8_spectrum.json", &summary)?,
    ])
}

#[derive(Serialize)]
struct PeakOut {
    frequency_hz: f64,
    power_per_hz: f64,
}

#[derive(Serialize)]
struct CsSummary {
    tau_dd_s: f64,
    order: usize,
    sample_interval_s: f64,
    resolution_hz: f64,
    segments: usize,
    noise_floor_per_hz: f64,
    peaks: Vec<PeakOut>,
}

#[derive(Serialize)]
struct Cs2dIndexRow {
    row: usize,
    tau_dd_s: f64,
    psd_file: String,
    resolution_hz: f64,
    peaks: Vec<PeakOut>,
}

fn peaks_out(set: &crate::spectra::PeakSet) -> Vec<PeakOut> {
    set.peaks.iter().map(|p| PeakOut { frequency_hz: p.frequency_hz, power_per_hz: p.power }).collect()
}

fn cmd_cs(cfg: &ExperimentConfig<CsExperiment>, ctx: &Context) -> Result<Vec<Artifact>, CliError> {
    let e = &cfg.experiment;
    let tau_dd = match e.tau_dd {
        TauDdSpec::Value(v) => v,
        TauDdSpec::Resonant(r) => resonant_tau_dd(&cfg.register, r.nucleus, r.k, e.pulses).map_err(config_err)?,
    };
    let readout = match e.readout {
        CsReadoutChoice::Ideal => CsReadout::Ideal,
        CsReadoutChoice::Photon { threshold } => CsReadout::Photon { model: cfg.photon.model(), threshold },
    };
    let plan = CsPlan {
        tau_dd,
        order: e.order,
        tau_grid: e.tau.values()?,
        randomize_tau: e.randomize_tau,
        memory_mode: e.memory_mode,
        shots_per_point: e.shots_per_point,
        pulses: e.pulses,
        readout,
    };
    plan.validate(&cfg.register).map_err(config_err)?;
    let psd = e.psd.unwrap_or_else(|| PsdParams::for_length(plan.tau_grid.len()));
    psd.validate().map_err(config_err)?;
    if psd.segment_length > plan.tau_grid.len() {
        return Err(config_err(format!("psd segment_length {} exceeds {} tau points", psd.segment_length, plan.tau_grid.len())));
    }
    let stochastic = e.shots_per_point > 0 || e.randomize_tau;
    let seed = if stochastic { ctx.seed("cs")? } else { ctx.seed.unwrap_or(0) };

    if let Some(grid) = &e.tau_dd_grid {
        let taus = grid.values()?;
        for &t in &taus {
            CsPlan { tau_dd: t, ..plan.clone() }.validate(&cfg.register).map_err(config_err)?;
        }
        let rows = simulate_cs_2d(&cfg.register, &taus, &plan, Some(psd), &e.peaks, seed).map_err(runtime_err)?;
        let mut out = Vec::with_capacity(rows.len() + 2);
        let mut index = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let name = format!("cs2d_row_{i:03}_psd.csv");
            out.push(Artifact::csv(name.clone(), |w| write_psd_csv(&r.psd, w))?);
            index.push(Cs2dIndexRow { row: i, tau_dd_s: r.tau_dd_s, psd_file: name, resolution_hz: r.psd.resolution, peaks: peaks_out(&r.peaks) });
        }
        out.push(Artifact::csv("cs2d_index.csv", |w| {
            use std::io::Write;
            writeln!(w, "row,tau_dd_s,psd_file,n_peaks")?;
            for r in &index {
                writeln!(w, "{},{},{},{}", r.row, r.tau_dd_s, r.psd_file, r.peaks.len())?;
            }
            Ok(())
        })?);
        out.push(Artifact::json("cs2d_index.json", &index)?);
        return Ok(out);
    }

    let signal = simulate_cs(&cfg.register, &plan, seed).map_err(runtime_err)?;
    let spectrum = signal.psd(Some(psd)).map_err(runtime_err)?;
    let peaks = extract_peaks_with(&spectrum, &e.peaks);
    let summary = CsSummary {
        tau_dd_s: tau_dd,
        order: e.order,
        sample_interval_s: signal.sample_interval(),
        resolution_hz: spectrum.resolution,
        segments: spectrum.segments,
        noise_floor_per_hz: peaks.floor,
        peaks: peaks_out(&peaks),
    };
    Ok(vec![
        Artifact::csv("cs_signal.csv", |w| write_cs_csv(&signal, w))?,
        Artifact::csv("cs_psd.csv", |w| write_psd_csv(&spectrum, w))?,
        Artifact::json("cs_peaks.json", &summary)?,
    ])
}

#[derive(Serialize)]
struct SsrSummary {
    shots: u64,
    f_ssr: f64,
    f_ssr_stderr: f64,
    f_ssr_raw: f64,
    f_qnd: f64,
    qnd_p_b2_given_b1: f64,
    qnd_p_d2_given_d1: f64,
    transfer_probability: f64,
    rejection_rate_b: f64,
    rejection_rate_d: f64,
    p_b_given_d: f64,
    p_d_given_b: f64,
}

fn cmd_ssr(cfg: &ExperimentConfig<SsrExperiment>, ctx: &Context) -> Result<Vec<Artifact>, CliError> {
    let e = &cfg.experiment;
    let seed = ctx.seed("ssr")?;
    e.options.validate().map_err(config_err)?;
    if e.shots < 2 || e.qnd_shots.is_some_and(|n| n < 2) {
        return Err(config_err("shots must be at least 2"));
    }
    let model = cfg.photon.model();
    let report = run_ssr_experiment(&cfg.register, &model, e.shots, &e.options, derive_seed(seed, tag::SHOT, 0)).map_err(runtime_err)?;
    let qnd = run_qnd_experiment(&model, e.qnd_shots.unwrap_or(e.shots), e.options.threshold, derive_seed(seed, tag::QND, 0))
        .map_err(runtime_err)?;
    let summary = SsrSummary {
        shots: e.shots,
        f_ssr: report.fidelity,
        f_ssr_stderr: report.fidelity_stderr,
        f_ssr_raw: report.raw_fidelity,
        f_qnd: qnd.fidelity,
        qnd_p_b2_given_b1: qnd.p_b2_given_b1,
        qnd_p_d2_given_d1: qnd.p_d2_given_d1,
        transfer_probability: report.transfer_probability,
        rejection_rate_b: report.rejection_rate_b,
        rejection_rate_d: report.rejection_rate_d,
        p_b_given_d: report.confusion.p_b_given_d,
        p_d_given_b: report.confusion.p_d_given_b,
    };
    let mut out = vec![
        Artifact::csv("ssr_confusion.csv", |w| write_confusion_csv(&report.confusion, w))?,
        Artifact::json("ssr_summary.json", &summary)?,
    ];
    if e.write_records {
        out.push(Artifact::csv("ssr_records.csv", |w| write_records_csv(&report.records, w))?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct NuclearSummary<'a> {
    rabi_hz: f64,
    n_reads: usize,
    threshold: u32,
    f_ssr: f64,
    f_ssr_stderr: f64,
    p_b_given_d: f64,
    p_d_given_b: f64,
    best_rabi_hz: Option<f64>,
    best_n_reads: usize,
    best_threshold: u32,
    rabi_sweep: &'a [crate::readout::RabiPoint],
    threshold_grid: &'a [crate::readout::ThresholdPoint],
}

fn cmd_nuclear_ssr(cfg: &ExperimentConfig<NuclearSsrExperiment>, ctx: &Context) -> Result<Vec<Artifact>, CliError> {
    let e = &cfg.experiment;
    let seed = ctx.seed("nuclear-ssr")?;
    e.options.validate().map_err(config_err)?;
    if e.max_reads < 1 || e.max_threshold < 1 {
        return Err(config_err("max_reads and max_threshold must be positive"));
    }
    if cfg.register.n_nuclei() < 1 {
        return Err(config_err("nuclear-ssr needs at least one nucleus in the register"));
    }
    let rabi_grid = e.rabi_grid.as_ref().map(GridSpec::values).transpose()?.unwrap_or_default();
    if rabi_grid.iter().any(|&r| r <= 0.0) {
        return Err(config_err("rabi_grid values must be positive"));
    }
    let model = cfg.photon.model();
    let report = run_nuclear_ssr(&cfg.register, &model, &e.options, derive_seed(seed, tag::SHOT, 0)).map_err(runtime_err)?;
    let sweep = nuclear_rabi_sweep(&cfg.register, &model, &e.options, &rabi_grid, derive_seed(seed, tag::SWEEP, 0)).map_err(runtime_err)?;
    let grid = nuclear_threshold_grid(&cfg.register, &model, &e.options, e.max_reads, e.max_threshold, derive_seed(seed, tag::SWEEP, 1))
        .map_err(runtime_err)?;
    let best_rabi = sweep.iter().max_by(|a, b| a.fidelity.total_cmp(&b.fidelity)).map(|p| p.rabi_hz);
    let best = grid
        .iter()
        .fold(None::<&crate::readout::ThresholdPoint>, |acc, p| match acc {
            Some(a) if a.fidelity >= p.fidelity => Some(a),
            _ => Some(p),
        })
        .copied()
        .ok_or_else(|| CliError::Runtime("empty threshold grid".into()))?;
    let summary = NuclearSummary {
        rabi_hz: e.options.rabi,
        n_reads: e.options.n_reads,
        threshold: e.options.threshold,
        f_ssr: report.fidelity,
        f_ssr_stderr: report.fidelity_stderr,
        p_b_given_d: report.confusion.p_b_given_d,
        p_d_given_b: report.confusion.p_d_given_b,
        best_rabi_hz: best_rabi,
        best_n_reads: best.n_reads,
        best_threshold: best.threshold,
        rabi_sweep: &sweep,
        threshold_grid: &grid,
    };
    let mut out = vec![
        Artifact::csv("nuclear_ssr_confusion.csv", |w| write_confusion_csv(&report.confusion, w))?,
        Artifact::csv("nuclear_threshold_grid.csv", |w| {
            use std::io::Write;
            writeln!(w, "n_reads,threshold,fidelity")?;
            for p in &grid {
                writeln!(w, "{},{},{}", p.n_reads, p.threshold, p.fidelity)?;
            }
            Ok(())
        })?,
        Artifact::json("nuclear_ssr_summary.json", &summary)?,
    ];
    if !sweep.is_empty() {
        out.push(Artifact::csv("nuclear_rabi_sweep.csv", |w| {
            use std::io::Write;
            writeln!(w, "rabi_hz,p_b_given_b,p_d_given_d,fidelity")?;
            for p in &sweep {
                writeln!(w, "{},{},{},{}", p.rabi_hz, p.p_b_given_b, p.p_d_given_d, p.fidelity)?;
            }
            Ok(())
        })?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct BlinkTraceOut {
    power_nw: f64,
    threshold_counts: f64,
    n_on_dwells: usize,
    n_off_dwells: usize,
    rate_on_off_hz: f64,
    rate_on_off_stderr_hz: f64,
    rate_off_on_hz: f64,
    rate_off_on_stderr_hz: f64,
    off_fraction: f64,
}

impl From<&TraceAnalysis> for BlinkTraceOut {
    fn from(a: &TraceAnalysis) -> Self {
        Self {
            power_nw: a.power_nw,
            threshold_counts: a.threshold_counts,
            n_on_dwells: a.n_on_dwells,
            n_off_dwells: a.n_off_dwells,
            rate_on_off_hz: a.rate_on_off.rate_hz,
            rate_on_off_stderr_hz: a.rate_on_off.rate_stderr_hz,
            rate_off_on_hz: a.rate_off_on.rate_hz,
            rate_off_on_stderr_hz: a.rate_off_on.rate_stderr_hz,
            off_fraction: a.off_fraction,
        }
    }
}

#[derive(Serialize)]
struct GradientOut {
    gradient_nw_per_hz: f64,
    gradient_stderr_nw_per_hz: f64,
    r_squared: Option<f64>,
}

#[derive(Serialize)]
struct BlinkSummary {
    traces: Vec<BlinkTraceOut>,
    mean_off_fraction: f64,
    gradient_on_off: Option<GradientOut>,
    gradient_off_on: Option<GradientOut>,
    predicted_off_fraction: Option<f64>,
}

fn cmd_blink(cfg: &ExperimentConfig<BlinkExperiment>, ctx: &Context) -> Result<Vec<Artifact>, CliError> {
    let e = &cfg.experiment;
    let traces: Vec<CountTrace> = match (&e.synthetic, e.traces.is_empty()) {
        (Some(_), false) => return Err(config_err("give either `traces` or `synthetic`, not both")),
        (None, true) => return Err(config_err("blink needs `traces` or a `synthetic` series")),
        (None, false) => e
            .traces
            .iter()
            .map(|p| load_trace(&ctx.resolve(p)).map_err(|err| config_err(format!("{}: {err}", p.display()))))
            .collect::<Result<_, _>>()?,
        (Some(s), true) => {
            let seed = ctx.seed("blink")?;
            if s.powers_nw.is_empty() {
                return Err(config_err("synthetic powers_nw is empty"));
            }
            let rates: Vec<BlinkRates> = s
                .powers_nw
                .iter()
                .map(|&p| BlinkRates::new(s.grad_on_off, s.grad_off_on, p).map_err(config_err))
                .collect::<Result<_, _>>()?;
            if !(s.bin_width_s > 0.0 && s.duration_s >= s.bin_width_s) {
                return Err(config_err("duration_s must cover at least one positive bin"));
            }
            use rayon::prelude::*;
            rates
                .par_iter()
                .enumerate()
                .map(|(i, r)| {
                    synthesize_trace(r, &s.emission, s.bin_width_s, s.duration_s, derive_seed(seed, tag::TELEGRAPH, i as u64))
                        .map(|(t, _)| t)
                        .map_err(runtime_err)
                })
                .collect::<Result<_, _>>()?
        }
    };
    e.analysis.segment.threshold.map_or(Ok(()), |t| if t >= 0.0 { Ok(()) } else { Err(config_err("threshold must be non-negative")) })?;

    let summary = if traces.len() >= 3 {
        let r = analyze_power_series(&traces, &e.analysis).map_err(runtime_err)?;
        let g = |f: &crate::blink::LinearFit| GradientOut { gradient_nw_per_hz: f.gradient, gradient_stderr_nw_per_hz: f.gradient_stderr, r_squared: f.r_squared };
        BlinkSummary {
            traces: r.points.iter().map(|p| BlinkTraceOut::from(&p.analysis)).collect(),
            mean_off_fraction: r.mean_off_fraction,
            gradient_on_off: Some(g(&r.gradient_on_off)),
            gradient_off_on: Some(g(&r.gradient_off_on)),
            predicted_off_fraction: r.points.first().map(|p| p.predicted_off_fraction),
        }
    } else {
        let analyses: Vec<TraceAnalysis> = traces.iter().map(|t| analyze_trace(t, &e.analysis)).collect::<crate::error::Result<_>>().map_err(runtime_err)?;
        let mean = analyses.iter().map(|a| a.off_fraction).sum::<f64>() / analyses.len() as f64;
        BlinkSummary {
            traces: analyses.iter().map(BlinkTraceOut::from).collect(),
            mean_off_fraction: mean,
            gradient_on_off: None,
            gradient_off_on: None,
            predicted_off_fraction: None,
        }
    };
    Ok(vec![
        Artifact::csv("blink_rates.csv", |w| {
            use std::io::Write;
            writeln!(w, "power_nw,rate_on_off_hz,rate_on_off_stderr_hz,rate_off_on_hz,rate_off_on_stderr_hz,off_fraction")?;
            for t in &summary.traces {
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    t.power_nw, t.rate_on_off_hz, t.rate_on_off_stderr_hz, t.rate_off_on_hz, t.rate_off_on_stderr_hz, t.off_fraction
                )?;
            }
            Ok(())
        })?,
        Artifact::json("blink_report.json", &summary)?,
    ])
}

#[derive(Deserialize)]
struct TimeRow {
    time_s: f64,
    signal: f64,
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    rdr.deserialize().collect::<Result<Vec<T>, _>>().map_err(|e| config_err(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct CouplingOut {
    nucleus: usize,
    a_zx_hz: f64,
    a_zz_hz: f64,
    detected: bool,
}

#[derive(Serialize)]
struct HyperfineOut {
    kind: &'static str,
    couplings: Vec<CouplingOut>,
    residual_ss: f64,
    residual_rms: f64,
    evaluations: usize,
}

#[derive(Serialize)]
struct T2StarOut {
    kind: &'static str,
    t2_star_s: f64,
    frequency_hz: f64,
    amplitude: f64,
    phase_rad: f64,
    offset: f64,
    exponent: f64,
    residual_rms: f64,
    unbounded: bool,
}

fn cmd_fit(cfg: &ExperimentConfig<FitExperiment>, ctx: &Context) -> Result<Vec<Artifact>, CliError> {
    match &cfg.experiment {
        FitExperiment::Hyperfine { data, targets, start, bounds, relative_bounds, options } => {
            let measured: Vec<SpectrumPoint> = read_rows(&ctx.resolve(data))?;
            if measured.is_empty() {
                return Err(config_err(format!("{}: no data rows", data.display())));
            }
            for &t in targets {
                cfg.register.nucleus(t).map_err(config_err)?;
            }
            let starts: Vec<HyperfineVector> = match start {
                Some(s) => s.clone(),
                None => targets.iter().map(|&t| cfg.register.nuclei[t]).collect(),
            };
            if starts.len() != targets.len() {
                return Err(config_err("`start` needs one entry per target"));
            }
            let bounds: Vec<CouplingBounds> = match bounds {
                Some(b) => b.clone(),
                None => {
                    if !(*relative_bounds > 0.0) {
                        return Err(config_err("relative_bounds must be positive"));
                    }
                    starts.iter().map(|v| CouplingBounds::around(v, *relative_bounds)).collect()
                }
            };
            if bounds.len() != targets.len() {
                return Err(config_err("`bounds` needs one entry per target"));
            }
            if options.order < 1 || options.grid_points < 1 {
                return Err(config_err("fit order and grid_points must be positive"));
            }
            let fit = fit_hyperfine(&measured, &cfg.register, targets, &bounds, Some(&starts), options).map_err(runtime_err)?;
            let out = HyperfineOut {
                kind: "hyperfine",
                couplings: fit
                    .couplings
                    .iter()
                    .map(|c| CouplingOut { nucleus: c.nucleus, a_zx_hz: c.a_zx, a_zz_hz: c.a_zz, detected: c.detected })
                    .collect(),
                residual_ss: fit.residual_ss,
                residual_rms: fit.residual_rms,
                evaluations: fit.evaluations,
            };
            Ok(vec![
                Artifact::csv("fit_hyperfine.csv", |w| {
                    use std::io::Write;
                    writeln!(w, "nucleus,a_zx_hz,a_zz_hz,detected")?;
                    for c in &out.couplings {
                        writeln!(w, "{},{},{},{}", c.nucleus, c.a_zx_hz, c.a_zz_hz, c.detected)?;
                    }
                    Ok(())
                })?,
                Artifact::json("fit.json", &out)?,
            ])
        }
        FitExperiment::T2star { data, exponent } => {
            let rows: Vec<TimeRow> = read_rows(&ctx.resolve(data))?;
            if !(*exponent > 0.0) {
                return Err(config_err("exponent must be positive"));
            }
            let times: Vec<f64> = rows.iter().map(|r| r.time_s).collect();
            let signal: Vec<f64> = rows.iter().map(|r| r.signal).collect();
            let fit = fit_t2star(&signal, &times, *exponent).map_err(runtime_err)?;
            let out = T2StarOut {
                kind: "t2star",
                t2_star_s: fit.t2_star_s,
                frequency_hz: fit.frequency_hz,
                amplitude: fit.amplitude,
                phase_rad: fit.phase,
                offset: fit.offset,
                exponent: fit.exponent,
                residual_rms: fit.residual_rms,
                unbounded: fit.unbounded,
            };
            Ok(vec![
                Artifact::csv("fit_t2star.csv", |w| {
                    use std::io::Write;
                    writeln!(w, "t2_star_s,frequency_hz,amplitude,phase_rad,offset,exponent,residual_rms,unbounded")?;
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        out.t2_star_s, out.frequency_hz, out.amplitude, out.phase_rad, out.offset, out.exponent, out.residual_rms, out.unbounded
                    )?;
                    Ok(())
                })?,
                Artifact::json("fit.json", &out)?,
            ])
        }
    }
}

/// Entry point used by the binary. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
