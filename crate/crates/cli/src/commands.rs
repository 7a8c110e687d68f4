//! Subcommands and argument parsing.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hbtsim_core::correlate::{background_correct, normalize, pair_histogram_parallel, tac_histogram};
use hbtsim_core::inference::{fit_exponential_dip, fit_linescan, fit_saturation, fit_three_level};
use hbtsim_core::photophysics::nanocrystal_lifetime;
use hbtsim_core::stream::ns_to_ps;
use hbtsim_core::{BinSpec, G2Curve, G2Kind, HistogramMode, PhotonStream};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, Preset};
use crate::files::{correlation_csv, ensure_dir, write_atomic, Table};
use crate::pipeline::{emitter_count, multiphoton_row, run_sweep, signal_fraction, simulate_point};
use crate::report::{FitSummary, LifetimeRow, Quantity, Report, SOFTWARE};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "hbtsim", version, about = "Photon antibunching simulator and HBT analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate click streams for each configured pump power.
    Simulate {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a coincidence histogram and normalized g2 from two stream files.
    Correlate(CorrelateArgs),
    /// Fit a model to a CSV table.
    Fit(FitArgs),
    /// Simulate and analyse a full pump-power sweep.
    Sweep {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Lifetime model, emitter count and multiphoton tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled preset: nanocrystal, bulk or shelving.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the pump powers (comma separated, mW).
    #[arg(long, value_delimiter = ',')]
    pub power_mw: Vec<f64>,
    /// Override the acquisition time per power (s).
    #[arg(long)]
    pub time_per_point_s: Option<f64>,
}

impl ExperimentArgs {
    pub fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = load_config(self.config.as_deref(), self.preset.as_deref())?
            .ok_or_else(|| CliError::Usage("one of --config or --preset is required".into()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if !self.power_mw.is_empty() {
            config.acquisition.powers_mw = self.power_mw.clone();
        }
        if let Some(t) = self.time_per_point_s {
            config.acquisition.time_per_point_s = t;
        }
        config.validate()?;
        Ok(config)
    }
}

fn load_config(path: Option<&Path>, preset: Option<&str>) -> Result<Option<ExperimentConfig>, CliError> {
    Ok(match (path, preset) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--config and --preset are exclusive".into())),
        (Some(path), None) => Some(ExperimentConfig::load(path)?),
        (None, Some(name)) => Some(name.parse::<Preset>()?.config()),
        (None, None) => None,
    })
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Tac,
    AllPairs,
}

impl From<ModeArg> for HistogramMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Tac => HistogramMode::TacStartStop,
            ModeArg::AllPairs => HistogramMode::AllPairs,
        }
    }
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Start (detector 1) stream file.
    pub stream1: PathBuf,
    /// Stop (detector 2) stream file.
    pub stream2: PathBuf,
    /// Output directory for correlation.csv and correlation.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "all-pairs")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 1.0)]
    pub bin_width_ns: f64,
    /// Histogram covers [-range, +range].
    #[arg(long, default_value_t = 200.0)]
    pub range_ns: f64,
    /// Signal fraction S/(S+B); adds the background-corrected columns.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 50.0)]
    pub tac_delay_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Dip,
    ThreeLevel,
    Saturation,
    Linescan,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: FitModel,
    /// CSV input. dip and three-level read a correlation table
    /// (g2_corrected if present, else C_N); saturation reads
    /// power_mw,rate_per_s; linescan reads position_um,counts.
    pub input: PathBuf,
    /// Write the fit as JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict g2 fits to |tau| <= window.
    #[arg(long)]
    pub window_ns: Option<f64>,
    /// Level scheme for the saturation model.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Let the pump-induced shelving coefficient float in saturation fits.
    #[arg(long)]
    pub fit_beta: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A sweep report.json to summarize.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Medium model source; defaults to the built-in medium values.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
    /// Measured or extrapolated nanocrystal lifetime.
    #[arg(long)]
    pub lifetime_ns: Option<f64>,
    /// Background-corrected g2(0) for the emitter count.
    #[arg(long)]
    pub g2_zero: Option<f64>,
    /// Raw C_N(0) values for the multiphoton table (repeatable).
    #[arg(long)]
    pub cn_zero: Vec<f64>,
    /// Also write report.json and report.txt here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { experiment, out } => simulate(&experiment.load()?, &out),
        Command::Correlate(args) => correlate(&args),
        Command::Fit(args) => fit(&args),
        Command::Sweep { experiment, out } => sweep(&experiment.load()?, &out),
        Command::Report(args) => report(&args),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFiles {
    pub index: usize,
    pub power: Quantity,
    pub det1: String,
    pub det2: String,
    pub background_det1: String,
    pub background_det2: String,
    pub rate_1: Quantity,
    pub rate_2: Quantity,
    pub background_1: Quantity,
    pub background_2: Quantity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Quantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMetadata {
    pub software: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub points: Vec<PointFiles>,
}

pub fn simulate(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    ensure_dir(out).map_err(|e| io_error(out, e))?;
    let mut points = Vec::new();
    for (i, &power) in config.acquisition.powers_mw.iter().enumerate() {
        let data = simulate_point(config, i).map_err(runtime)?;
        let names = [
            format!("p{i}_det1.bin"),
            format!("p{i}_det2.bin"),
            format!("p{i}_background_det1.bin"),
            format!("p{i}_background_det2.bin"),
        ];
        let streams = [
            &data.clicks.clicks1,
            &data.clicks.clicks2,
            &data.background.clicks1,
            &data.background.clicks2,
        ];
        for (name, stream) in names.iter().zip(streams) {
            stream.write_file(&out.join(name)).map_err(runtime)?;
        }
        let rates = data.clicks.rates_per_s();
        let bg = data.background.rates_per_s();
        let rate = |v: f64| Quantity::new(v, "s^-1");
        points.push(PointFiles {
            index: i,
            power: Quantity::new(power, "mW"),
            det1: names[0].clone(),
            det2: names[1].clone(),
            background_det1: names[2].clone(),
            background_det2: names[3].clone(),
            rate_1: rate(rates.0),
            rate_2: rate(rates.1),
            background_1: rate(bg.0),
            background_2: rate(bg.1),
            rho: signal_fraction(rates, bg).map(|r| Quantity::new(r, "1")),
        });
    }
    let meta = SimulationMetadata { software: SOFTWARE.into(), seed: config.seed, config: config.clone(), points };
    let mut json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    json.push('\n');
    let path = out.join("metadata.json");
    write_atomic(&path, json.as_bytes()).map_err(|e| io_error(&path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSidecar {
    pub software: String,
    pub inputs: [String; 2],
    pub mode: HistogramMode,
    pub bin_width: Quantity,
    pub range: Quantity,
    pub acquisition_time: Quantity,
    pub rate_1: Quantity,
    pub rate_2: Quantity,
    pub coincidences: u64,
    pub poisson_level: Quantity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cn_zero: Option<Quantity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g2c_zero: Option<Quantity>,
}

fn positive(flag: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("--{flag} must be finite and > 0, got {v}")))
    }
}

pub fn correlate(args: &CorrelateArgs) -> Result<(), CliError> {
    let width_ps = ns_to_ps(positive("bin-width-ns", args.bin_width_ns)?);
    let range_ps = ns_to_ps(positive("range-ns", args.range_ns)?);
    if !(args.tac_delay_ns.is_finite() && args.tac_delay_ns >= 0.0) {
        return Err(CliError::Usage("--tac-delay-ns must be finite and >= 0".into()));
    }
    let bins = BinSpec::centered(width_ps, range_ps).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(rho) = args.rho {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(CliError::Usage(format!("--rho must be in (0, 1], got {rho}")));
        }
    }
    let s1 = PhotonStream::read_file(&args.stream1).map_err(runtime)?;
    let s2 = PhotonStream::read_file(&args.stream2).map_err(runtime)?;
    let mode = HistogramMode::from(args.mode);
    let h = match mode {
        HistogramMode::AllPairs => pair_histogram_parallel(&s1, &s2, bins, rayon::current_num_threads()),
        HistogramMode::TacStartStop => tac_histogram(&s1, &s2, bins, ns_to_ps(args.tac_delay_ns)),
    }
    .map_err(runtime)?;
    let raw = normalize(&h).map_err(runtime)?;
    let corrected = args.rho.map(|rho| background_correct(&raw, rho)).transpose().map_err(runtime)?;

    ensure_dir(&args.out).map_err(|e| io_error(&args.out, e))?;
    let csv_path = args.out.join("correlation.csv");
    write_atomic(&csv_path, &correlation_csv(&h, &raw, corrected.as_ref())).map_err(|e| io_error(&csv_path, e))?;
    let zero = |c: &G2Curve| c.at_zero().map(|(v, s)| Quantity::with_uncertainty(v, s, "1"));
    let sidecar = CorrelationSidecar {
        software: SOFTWARE.into(),
        inputs: [args.stream1.display().to_string(), args.stream2.display().to_string()],
        mode,
        bin_width: Quantity::new(width_ps as f64 / 1e3, "ns"),
        range: Quantity::new(range_ps as f64 / 1e3, "ns"),
        acquisition_time: Quantity::new(h.acquisition_time_s, "s"),
        rate_1: Quantity::new(h.rate_1_per_s, "s^-1"),
        rate_2: Quantity::new(h.rate_2_per_s, "s^-1"),
        coincidences: h.total(),
        poisson_level: Quantity::new(h.poisson_level(), "counts"),
        rho: args.rho.map(|r| Quantity::new(r, "1")),
        cn_zero: zero(&raw),
        g2c_zero: corrected.as_ref().and_then(zero),
    };
    let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    json.push('\n');
    let json_path = args.out.join("correlation.json");
    write_atomic(&json_path, json.as_bytes()).map_err(|e| io_error(&json_path, e))
}

fn read_curve(path: &Path, window_ns: Option<f64>) -> Result<G2Curve, CliError> {
    let table = Table::read(path).map_err(runtime)?;
    let (values, sigma, kind) = if table.has("g2_corrected") {
        ("g2_corrected", "g2_corrected_sigma", G2Kind::BackgroundCorrected)
    } else {
        ("C_N", "sigma", G2Kind::RawNormalized)
    };
    let curve = G2Curve {
        delays_ns: table.column(path, "tau_ns").map_err(runtime)?,
        values: table.column(path, values).map_err(runtime)?,
        sigma: table.column(path, sigma).map_err(runtime)?,
        kind,
    };
    Ok(match window_ns {
        Some(w) => curve.window(positive("window-ns", w)?),
        None => curve,
    })
}

pub fn fit(args: &FitArgs) -> Result<(), CliError> {
    let path = &args.input;
    let (name, result) = match args.model {
        FitModel::Dip => ("exponential", fit_exponential_dip(&read_curve(path, args.window_ns)?)),
        FitModel::ThreeLevel => ("three-level", fit_three_level(&read_curve(path, args.window_ns)?)),
        FitModel::Saturation => {
            let config = load_config(args.config.as_deref(), args.preset.as_deref())?
                .unwrap_or_else(|| Preset::Nanocrystal.config());
            let table = Table::read(path).map_err(runtime)?;
            let p = table.column(path, "power_mw").map_err(runtime)?;
            let r = table.column(path, "rate_per_s").map_err(runtime)?;
            let points: Vec<(f64, f64)> = p.into_iter().zip(r).collect();
            ("three-level steady state", fit_saturation(&points, &config.scheme_at(0.0), args.fit_beta))
        }
        FitModel::Linescan => {
            let table = Table::read(path).map_err(runtime)?;
            let x = table.column(path, "position_um").map_err(runtime)?;
            let c = table.column(path, "counts").map_err(runtime)?;
            ("gaussian", fit_linescan(&x, &c))
        }
    };
    let fit = result.and_then(|f| f.ensure_converged()).map_err(runtime)?;
    let mut json = serde_json::to_string_pretty(&FitSummary::from_fit(name, &fit)).expect("fit serializes");
    json.push('\n');
    match &args.out {
        Some(out) => write_atomic(out, json.as_bytes()).map_err(|e| io_error(out, e)),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn sweep(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let report = write_sweep(config, out)?;
    print!("{}", report.to_text());
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} stage(s) failed; see report.json", report.failures.len())))
    }
}

/// Runs the sweep and writes its files. Stage failures are in the report.
pub fn write_sweep(config: &ExperimentConfig, out: &Path) -> Result<Report, CliError> {
    ensure_dir(out).map_err(|e| io_error(out, e))?;
    let result = run_sweep(config);
    for a in &result.points {
        if let (Some(h), Some(raw)) = (&a.histogram, &a.raw) {
            let path = out.join(format!("p{}_g2.csv", a.report.index));
            write_atomic(&path, &correlation_csv(h, raw, a.corrected.as_ref())).map_err(|e| io_error(&path, e))?;
        }
    }
    let path = out.join("sweep.csv");
    write_atomic(&path, &sweep_csv(&result.report)).map_err(|e| io_error(&path, e))?;
    write_report(&result.report, out)?;
    Ok(result.report)
}

fn sweep_csv(report: &Report) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "power_mw",
        "rate_1_per_s",
        "rate_2_per_s",
        "signal_per_s",
        "rho",
        "C_N_zero",
        "C_N_zero_sigma",
        "g2c_zero",
        "g2c_zero_sigma",
        "dip_width_per_ns",
        "dip_width_sigma_per_ns",
    ])
    .expect("in-memory write");
    let num = |q: Option<&Quantity>| q.map(|q| q.value.to_string()).unwrap_or_default();
    let unc = |q: Option<&Quantity>| q.and_then(|q| q.uncertainty).map(|u| u.to_string()).unwrap_or_default();
    for p in &report.points {
        w.write_record([
            p.power.value.to_string(),
            p.rate_1.value.to_string(),
            p.rate_2.value.to_string(),
            p.signal.value.to_string(),
            num(p.rho.as_ref()),
            num(p.cn_zero.as_ref()),
            unc(p.cn_zero.as_ref()),
            num(p.g2c_zero.as_ref()),
            unc(p.g2c_zero.as_ref()),
            num(p.dip_width.as_ref()),
            unc(p.dip_width.as_ref()),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn write_report(report: &Report, out: &Path) -> Result<(), CliError> {
    let json = out.join("report.json");
    write_atomic(&json, report.to_json().as_bytes()).map_err(|e| io_error(&json, e))?;
    let text = out.join("report.txt");
    write_atomic(&text, report.to_text().as_bytes()).map_err(|e| io_error(&text, e))
}

/// Reference C_N(0) rows used when no measurement is supplied.
const REFERENCE_CN_ZERO: [(&str, f64); 2] = [("nanocrystal reference", 0.17), ("bulk reference", 0.26)];

pub fn build_report(args: &ReportArgs) -> Result<Report, CliError> {
    let config = load_config(args.config.as_deref(), args.preset.as_deref())?;
    let input = match &args.input {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            Some(Report::from_json(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let config = config.or_else(|| input.as_ref().and_then(|r| r.config.clone()));
    let medium = config.as_ref().map(|c| c.medium.model()).unwrap_or_default();
    let mut report = Report::new("report", input.as_ref().and_then(|r| r.seed), config.clone());
    let mismatch = |e: crate::report::UnitMismatch| runtime(e);

    report.lifetime_table.push(LifetimeRow {
        label: "bulk".into(),
        lifetime: Quantity::new(medium.bulk_lifetime_ns, "ns"),
    });
    let predicted = nanocrystal_lifetime(&medium).map_err(runtime)?;
    report.lifetime_table.push(LifetimeRow {
        label: "nanocrystal, index-corrected".into(),
        lifetime: Quantity::new(predicted, "ns"),
    });
    let measured = match (args.lifetime_ns, input.as_ref().and_then(|r| r.lifetime.as_ref())) {
        (Some(t), _) => Some(Quantity::new(positive("lifetime-ns", t)?, "ns")),
        (None, Some(fit)) => match fit.get("lifetime_ns") {
            Some(q) => {
                q.expect("lifetime.lifetime_ns", "ns").map_err(mismatch)?;
                Some(q.clone())
            }
            None => None,
        },
        (None, None) => None,
    };
    if let Some(q) = measured {
        report.lifetime_table.push(LifetimeRow { label: "nanocrystal, extrapolated".into(), lifetime: q });
    }

    let g2 = match (args.g2_zero, input.as_ref().and_then(|r| r.emitter_count.as_ref())) {
        (Some(g), _) => Some((Quantity::new(g, "1"), "--g2-zero".to_string())),
        (None, Some(e)) => {
            e.g2_zero.expect("emitter_count.g2_zero", "1").map_err(mismatch)?;
            Some((e.g2_zero.clone(), e.source.clone()))
        }
        (None, None) => None,
    };
    if let Some((g, source)) = g2 {
        report.emitter_count = Some(emitter_count(&g, &source).map_err(runtime)?);
    }

    let mut rows: Vec<(String, f64)> = args.cn_zero.iter().map(|&c| (format!("C_N(0) = {c}"), c)).collect();
    if let Some(r) = &input {
        for row in &r.multiphoton {
            let cn = row.cn_zero.expect("multiphoton.cn_zero", "1").map_err(mismatch)?;
            rows.push((row.label.clone(), cn));
        }
    }
    if rows.is_empty() {
        rows = REFERENCE_CN_ZERO.iter().map(|&(l, c)| (l.to_string(), c)).collect();
    }
    for (label, cn) in rows {
        report.multiphoton.push(multiphoton_row(&label, cn).map_err(runtime)?);
    }
    if let Some(r) = input {
        report.lifetime = r.lifetime;
        report.failures = r.failures;
    }
    Ok(report)
}

pub fn report(args: &ReportArgs) -> Result<(), CliError> {
    let report = build_report(args)?;
    if let Some(out) = &args.out {
        ensure_dir(out).map_err(|e| io_error(out, e))?;
        write_report(&report, out)?;
    }
    print!("{}", report.to_text());
    Ok(())
}
