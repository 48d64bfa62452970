//! Command-line front end.
//!
//! All quantities are SI: seconds, volts, hertz. Configuration is a TOML
//! document; flags override the values it holds.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::coincidence::CoincidenceMeasurement;
use crate::detector::{estimate, simulate, RunLength};
use crate::error::Error;
use crate::events::{generate, SourceModel};
use crate::experiment::{generate_fringe_dataset, measure_accidentals, PairSourceModel};
use crate::fringe::{analyze, FringeDataset, VisibilityFit};
use crate::io::write_atomic;
use crate::lut::{self, DutyCycleTable};
use crate::recovery::{DetectorParams, RecoveryKind};

#[derive(Debug, Parser)]
#[command(
    name = "gmapd",
    version,
    about = "Geiger-mode APD duty-cycle simulation and coincidence correction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one detector on a Poisson stream; write the trace and print both duty-cycle estimates.
    SimulateDetector(SimulateArgs),
    /// Write a seeded arrival sequence as CSV.
    GenerateEvents(GenerateEventsArgs),
    /// Build a duty-cycle lookup table from the [lut] section of the config.
    BuildLut(BuildLutArgs),
    /// Look up the duty cycle at an operating point.
    Lookup(LookupArgs),
    /// Correct a coincidence rate for accidentals.
    Correct(CorrectArgs),
    /// Fit raw, naively corrected and duty-cycle corrected fringes.
    FitVisibility(FitArgs),
    /// Simulate a polarization-fringe experiment from the [fringe] section.
    GenerateFringes(GenerateFringesArgs),
    /// Count AND-gate coincidences between two independent Poisson arms.
    MeasureAccidentals(MeasureArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Input rate, Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trace CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the summary as JSON to this file.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenerateEventsArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildLutArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Table file (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `v_e,observed_rate,eta` export.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LookupArgs {
    #[arg(long)]
    pub lut: PathBuf,
    /// Excess voltage, V.
    #[arg(long)]
    pub ve: f64,
    /// Observed rate, Hz.
    #[arg(long)]
    pub rate: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    /// Table for detector 1; required unless --eta1 is given.
    #[arg(long)]
    pub lut1: Option<PathBuf>,
    /// Table for detector 2; defaults to --lut1.
    #[arg(long)]
    pub lut2: Option<PathBuf>,
    #[arg(long)]
    pub s1: f64,
    #[arg(long)]
    pub s2: f64,
    #[arg(long)]
    pub tau1: f64,
    #[arg(long)]
    pub tau2: f64,
    /// Raw coincidence rate, Hz.
    #[arg(long)]
    pub craw: f64,
    #[arg(long)]
    pub ve1: Option<f64>,
    #[arg(long)]
    pub ve2: Option<f64>,
    /// Use these duty cycles instead of table lookups.
    #[arg(long, requires = "eta2", conflicts_with_all = ["lut1", "lut2"])]
    pub eta1: Option<f64>,
    #[arg(long, requires = "eta1")]
    pub eta2: Option<f64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Fringe CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lut1: PathBuf,
    /// Defaults to --lut1.
    #[arg(long)]
    pub lut2: Option<PathBuf>,
    /// Write the fit report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GenerateFringesArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub rate1: f64,
    #[arg(long)]
    pub rate2: f64,
    #[arg(long)]
    pub tau1: f64,
    #[arg(long)]
    pub tau2: f64,
    #[arg(long)]
    pub duration: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub json: bool,
}

/// Detector section. Give either `v_e_set` or both `bias` and `breakdown`;
/// everything else defaults to the reference device.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_e_set: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rc_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_characteristic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_cld: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_rel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovery_kind: Option<RecoveryKind<f64>>,
}

impl DetectorConfig {
    pub fn params(&self) -> Result<DetectorParams<f64>, Error> {
        let r = DetectorParams::<f64>::reference();
        let v_e_set = match (self.v_e_set, self.bias, self.breakdown) {
            (Some(v), None, None) => v,
            (None, Some(b), Some(br)) => b - br,
            (None, None, None) => r.v_e_set,
            _ => {
                return Err(Error::InvalidArgument(
                    "detector: give either v_e_set or both bias and breakdown".into(),
                ))
            }
        };
        let p = DetectorParams {
            v_e_set,
            rc_time: self.rc_time.unwrap_or(r.rc_time),
            v_characteristic: self.v_characteristic.unwrap_or(r.v_characteristic),
            pulse_gain: self.pulse_gain.unwrap_or(r.pulse_gain),
            v_cld: self.v_cld.unwrap_or(r.v_cld),
            sigma_rel: self.sigma_rel.unwrap_or(r.sigma_rel),
            recovery_kind: self.recovery_kind.unwrap_or(r.recovery_kind),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default)]
    pub dark_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateGrid {
    List(Vec<f64>),
    LogSpaced { min: f64, max: f64, count: usize },
}

impl RateGrid {
    pub fn values(&self) -> Result<Vec<f64>, Error> {
        match *self {
            RateGrid::List(ref v) => Ok(v.clone()),
            RateGrid::LogSpaced { min, max, count } => {
                if !(min > 0.0 && max > min && count >= 2) {
                    return Err(Error::InvalidArgument(
                        "lut.input_rates: need 0 < min < max and count >= 2".into(),
                    ));
                }
                let (a, b) = (min.log10(), max.log10());
                Ok((0..count)
                    .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                    .collect())
            }
        }
    }
}

/// Omitted axes fall back to the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_e: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_rates: Option<RateGrid>,
    /// Expected input events per cell; mutually exclusive with `duration_per_cell`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub events_per_cell: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_per_cell: Option<f64>,
}

impl LutConfig {
    pub fn run_length(&self) -> Result<RunLength, Error> {
        match (self.events_per_cell, self.duration_per_cell) {
            (Some(n), None) if n > 0 => Ok(RunLength::Events(n)),
            (None, Some(d)) if d > 0.0 => Ok(RunLength::Duration(d)),
            (None, None) => Ok(lut::DEFAULT_RUN_LENGTH),
            _ => Err(Error::InvalidArgument(
                "lut: give one positive value of events_per_cell or duration_per_cell".into(),
            )),
        }
    }

    pub fn v_e_values(&self) -> Vec<f64> {
        self.v_e.clone().unwrap_or_else(|| lut::DEFAULT_V_E_AXIS.to_vec())
    }

    pub fn input_rate_values(&self) -> Result<Vec<f64>, Error> {
        self.input_rates
            .as_ref()
            .map_or_else(|| Ok(lut::default_input_rates()), RateGrid::values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FringeConfig {
    pub source: PairSourceModel,
    pub angles: Vec<f64>,
    pub tau1: f64,
    pub tau2: f64,
    pub duration_per_angle: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Detector 1, and detector 2 unless `detector2` is present.
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detector2: Option<DetectorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lut: Option<LutConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fringe: Option<FringeConfig>,
}

impl RunConfig {
    /// Parses and validates every section that is present.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(Error::io(path, e)))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let location = e.span().map(|s| line_col(text, s.start));
            CliError::Config(Error::Parse {
                path: path.to_path_buf(),
                location,
                message: e.message().to_string(),
            })
        })?;
        cfg.validate().map_err(CliError::Config)?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Error> {
        self.detector.params().map_err(|e| e.for_arm("detector"))?;
        if let Some(d) = &self.detector2 {
            d.params().map_err(|e| e.for_arm("detector2"))?;
        }
        if let Some(lut) = &self.lut {
            lut.run_length()?;
            lut.input_rate_values()?;
        }
        if let Some(f) = &self.fringe {
            f.source.validate()?;
        }
        Ok(())
    }

    pub fn params1(&self) -> DetectorParams<f64> {
        self.detector.params().expect("validated on load")
    }

    pub fn params2(&self) -> DetectorParams<f64> {
        self.detector2
            .as_ref()
            .map_or_else(|| self.params1(), |d| d.params().expect("validated on load"))
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(Error),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    /// 2 usage or configuration, 3 data or range, 4 numerical failure.
    pub fn exit_code(&self) -> u8 {
        fn of(e: &Error) -> u8 {
            match e {
                Error::InvalidArgument(_) | Error::InvalidParams(_) => 2,
                Error::Arm { source, .. } => of(source),
                Error::Build(_) | Error::Fit(_) => 4,
                Error::EmptyTrace
                | Error::SaturationAmbiguity { .. }
                | Error::OutOfRange { .. }
                | Error::Parse { .. }
                | Error::Version { .. }
                | Error::Io { .. } => 3,
            }
        }
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Run(e) => of(e),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn need<T>(v: Option<T>, what: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Usage(format!("{what} is required (flag or config)")))
}

fn config_json(cfg: &RunConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("result serializes")
}

/// Runs one parsed command, writing human or JSON output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    let text = match cli.command {
        Command::SimulateDetector(a) => simulate_detector(a)?,
        Command::GenerateEvents(a) => generate_events(a)?,
        Command::BuildLut(a) => build_lut(a)?,
        Command::Lookup(a) => lookup(a)?,
        Command::Correct(a) => correct(a)?,
        Command::FitVisibility(a) => fit_visibility(a)?,
        Command::GenerateFringes(a) => generate_fringes(a)?,
        Command::MeasureAccidentals(a) => measure(a)?,
    };
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

/// Source section with flag overrides applied, written back for provenance.
fn effective_source(cfg: &mut RunConfig, rate: Option<f64>, duration: Option<f64>) -> CliResult<(f64, f64, f64)> {
    let src = cfg.source.get_or_insert(SourceConfig {
        rate: None,
        dark_rate: 0.0,
        duration: None,
    });
    src.rate = rate.or(src.rate);
    src.duration = duration.or(src.duration);
    Ok((
        need(src.rate, "source rate")?,
        src.dark_rate,
        need(src.duration, "duration")?,
    ))
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    #[serde(flatten)]
    estimate: crate::detector::DutyCycleEstimate,
    seed: u64,
    params: DetectorParams<f64>,
    config: &'a RunConfig,
}

fn simulate_detector(a: SimulateArgs) -> CliResult<String> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.seed = a.seed.or(cfg.seed);
    let seed = need(cfg.seed, "seed")?;
    let (rate, dark, duration) = effective_source(&mut cfg, a.rate, a.duration)?;
    let p = cfg.params1();
    let seq = generate(&SourceModel::poisson(rate).with_dark_rate(dark), duration, seed)?;
    let trace = simulate(&seq, &p, seed)?;
    let est = estimate(&trace)?;
    let prov = config_json(&cfg);
    write_atomic(&a.out, |w| {
        writeln!(w, "# config={prov}")?;
        trace.write_csv(w)
    })?;
    let summary = SimulationSummary {
        estimate: est,
        seed,
        params: p,
        config: &cfg,
    };
    if let Some(path) = &a.summary {
        let json = to_json(&summary);
        write_atomic(path, |w| writeln!(w, "{json}"))?;
    }
    if a.json {
        return Ok(to_json(&summary) + "\n");
    }
    let mut s = String::new();
    let _ = writeln!(s, "input_rate      {:.6e} Hz", est.input_rate);
    let _ = writeln!(s, "observed_rate   {:.6e} Hz", est.observed_rate);
    let _ = writeln!(
        s,
        "eta_fractional  {:.6} +- {:.6}",
        est.eta_fractional, est.stderr_fractional
    );
    let _ = writeln!(s, "eta_area        {:.6} +- {:.1e}", est.eta_area, est.quadrature_error);
    let _ = writeln!(
        s,
        "events          {} input, {} sensed",
        est.input_count, est.sensed_count
    );
    Ok(s)
}

fn generate_events(a: GenerateEventsArgs) -> CliResult<String> {
    let mut cfg = RunConfig::load(&a.config)?;
    let seed = need(a.seed.or(cfg.seed), "seed")?;
    let (rate, dark, duration) = effective_source(&mut cfg, a.rate, a.duration)?;
    let seq = generate(&SourceModel::poisson(rate).with_dark_rate(dark), duration, seed)?;
    write_atomic(&a.out, |w| seq.write_csv(w))?;
    Ok(format!("{} events written to {}\n", seq.len(), a.out.display()))
}

fn build_lut(a: BuildLutArgs) -> CliResult<String> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.seed = a.seed.or(cfg.seed);
    let seed = need(cfg.seed, "seed")?;
    let lut_cfg = need(cfg.lut.clone(), "[lut] section")?;
    let run = lut_cfg.run_length().map_err(CliError::Config)?;
    let rates = lut_cfg.input_rate_values().map_err(CliError::Config)?;
    let v_e = lut_cfg.v_e_values();
    let p = cfg.params1();
    let build = || DutyCycleTable::build(&p, &v_e, &rates, run, seed);
    let mut table = match a.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?
            .install(build)?,
        None => build()?,
    };
    // wall-clock stamps would break reproducible output
    if let Ok(epoch) = std::env::var("SOURCE_DATE_EPOCH") {
        table = table.with_timestamp(format!("unix:{epoch}"));
    }
    table.save(&a.out)?;
    if let Some(csv) = &a.csv {
        write_atomic(csv, |w| table.write_csv(w))?;
    }
    let (rows, cols) = table.shape();
    Ok(format!(
        "table {} x {} written to {} (observed rate {:.3e} .. {:.3e} Hz)\n",
        rows,
        cols,
        a.out.display(),
        table.observed_rate_axis.first().copied().unwrap_or(0.0),
        table.observed_rate_axis.last().copied().unwrap_or(0.0),
    ))
}

fn lookup(a: LookupArgs) -> CliResult<String> {
    let table = DutyCycleTable::load(&a.lut)?;
    let eta = table.lookup_eta(a.ve, a.rate)?;
    if a.json {
        Ok(format!(
            "{{\"v_e\": {}, \"observed_rate\": {}, \"eta\": {}}}\n",
            a.ve, a.rate, eta
        ))
    } else {
        Ok(format!("{eta}\n"))
    }
}

fn correct(a: CorrectArgs) -> CliResult<String> {
    let m = CoincidenceMeasurement {
        s1: a.s1,
        s2: a.s2,
        tau1: a.tau1,
        tau2: a.tau2,
        c_raw: a.craw,
        v_e1: a.ve1,
        v_e2: a.ve2,
    };
    let r = match (a.eta1, a.eta2) {
        (Some(e1), Some(e2)) => m.correct_with_eta(e1, e2)?,
        _ => {
            let path1 = need(a.lut1, "--lut1 (or --eta1/--eta2)")?;
            let t1 = DutyCycleTable::load(&path1)?;
            let t2 = match &a.lut2 {
                Some(p) => DutyCycleTable::load(p)?,
                None => t1.clone(),
            };
            m.correct_pair(&t1, &t2)?
        }
    };
    if a.json {
        return Ok(to_json(&r) + "\n");
    }
    let mut s = String::new();
    let _ = writeln!(s, "eta1                {:.6}", r.eta1);
    let _ = writeln!(s, "eta2                {:.6}", r.eta2);
    let _ = writeln!(s, "accidentals_naive   {:.6e} Hz", r.c_acc_naive);
    let _ = writeln!(s, "accidentals         {:.6e} Hz", r.c_acc_corrected);
    let _ = writeln!(s, "corrected_rate      {:.6e} Hz", r.c_corrected);
    if r.negative {
        let _ = writeln!(s, "warning: corrected rate is negative");
    }
    Ok(s)
}

fn describe_fit(s: &mut String, name: &str, f: &VisibilityFit<f64>) {
    let u = &f.uncertainties;
    let _ = writeln!(
        s,
        "{name:<10} V = {:.4} +- {:.4}  offset = {:.4e} +- {:.2e} Hz  phase = {:.2} +- {:.2} deg  rms = {:.3e} Hz{}",
        f.visibility,
        u.visibility,
        f.offset,
        u.offset,
        f.phase_deg,
        u.phase_deg,
        f.residual_rms,
        if f.unphysical { "  [V > 1]" } else { "" }
    );
}

fn fit_visibility(a: FitArgs) -> CliResult<String> {
    let file = std::fs::File::open(&a.data).map_err(|e| Error::io(&a.data, e))?;
    let ds = FringeDataset::read_csv(std::io::BufReader::new(file), &a.data)?;
    let t1 = DutyCycleTable::load(&a.lut1)?;
    let t2 = match &a.lut2 {
        Some(p) => DutyCycleTable::load(p)?,
        None => t1.clone(),
    };
    let report = analyze(&ds, &t1, &t2)?;
    let json = to_json(&report);
    if let Some(path) = &a.out {
        write_atomic(path, |w| writeln!(w, "{json}"))?;
    }
    if a.json {
        return Ok(json + "\n");
    }
    let mut s = String::new();
    describe_fit(&mut s, "raw", &report.fit_raw);
    describe_fit(&mut s, "naive", &report.fit_naive);
    describe_fit(&mut s, "corrected", &report.fit_corrected);
    Ok(s)
}

fn generate_fringes(a: GenerateFringesArgs) -> CliResult<String> {
    let mut cfg = RunConfig::load(&a.config)?;
    cfg.seed = a.seed.or(cfg.seed);
    let seed = need(cfg.seed, "seed")?;
    let f = need(cfg.fringe.clone(), "[fringe] section")?;
    let ds = generate_fringe_dataset(
        &f.source,
        &cfg.params1(),
        &cfg.params2(),
        &f.angles,
        f.tau1,
        f.tau2,
        f.duration_per_angle,
        seed,
    )?;
    let prov = config_json(&cfg);
    write_atomic(&a.out, |w| {
        writeln!(w, "## config={prov}")?;
        ds.write_csv(w)
    })?;
    Ok(format!(
        "{} fringe points written to {}\n",
        ds.points.len(),
        a.out.display()
    ))
}

fn measure(a: MeasureArgs) -> CliResult<String> {
    let cfg = RunConfig::load(&a.config)?;
    let seed = need(a.seed.or(cfg.seed), "seed")?;
    let m = measure_accidentals(
        &cfg.params1(),
        &cfg.params2(),
        a.rate1,
        a.rate2,
        a.tau1,
        a.tau2,
        a.duration,
        seed,
    )?;
    let naive = crate::coincidence::accidentals_naive(m.s1, m.s2, a.tau1, a.tau2)?;
    if a.json {
        #[derive(Serialize)]
        struct Report {
            #[serde(flatten)]
            m: crate::experiment::AccidentalMeasurement,
            accidentals_naive: f64,
        }
        return Ok(to_json(&Report {
            m,
            accidentals_naive: naive,
        }) + "\n");
    }
    Ok(format!(
        "measured   {:.6e} +- {:.2e} Hz ({} coincidences)\nsingles    {:.6e} Hz, {:.6e} Hz\nnaive      {:.6e} Hz\n",
        m.measured_rate,
        m.stderr(),
        m.coincidences,
        m.s1,
        m.s2,
        naive
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_bias() {
        let cfg = RunConfig::parse("seed = 3\n[detector]\nbias = 40.0\nbreakdown = 26.0\n", Path::new("c")).unwrap();
        assert_eq!(cfg.params1().v_e_set, 14.0);
        assert_eq!(cfg.params2(), cfg.params1());
        let cfg = RunConfig::parse("", Path::new("c")).unwrap();
        assert_eq!(cfg.params1(), DetectorParams::reference());
    }

    #[test]
    fn config_rejections() {
        let bad = [
            "[detector]\nv_e_set = 15.0\nbias = 40.0\n",
            "[detector]\nv_cld = 50.0\n",
            "[detector]\nunknown = 1\n",
            "mystery = 2\n",
            "[lut]\nv_e = [15.0]\ninput_rates = { min = 1.0, max = 0.5, count = 3 }\n",
        ];
        for text in bad {
            let err = RunConfig::parse(text, Path::new("c")).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}: {err}");
        }
        let err = RunConfig::parse("seed = 1\nmystery = 2\n", Path::new("c")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn rate_grid_forms() {
        let cfg = RunConfig::parse(
            "[lut]\nv_e = [15.0]\ninput_rates = { min = 1e3, max = 1e5, count = 3 }\n",
            Path::new("c"),
        )
        .unwrap();
        let v = cfg.lut.unwrap().input_rate_values().unwrap();
        assert_eq!(v.len(), 3);
        assert!((v[1] - 1e4).abs() < 1e-9);
        let cfg = RunConfig::parse("[lut]\nv_e = [15.0]\ninput_rates = [1e3, 2e3]\n", Path::new("c")).unwrap();
        assert_eq!(cfg.lut.unwrap().input_rates, Some(RateGrid::List(vec![1e3, 2e3])));
        let lut = RunConfig::parse("[lut]\n", Path::new("c")).unwrap().lut.unwrap();
        assert_eq!(lut.v_e_values().len(), lut::DEFAULT_V_E_AXIS.len());
        assert_eq!(lut.input_rate_values().unwrap(), lut::default_input_rates());
    }

    #[test]
    fn exit_code_classes() {
        let range = CliError::Run(
            Error::OutOfRange {
                axis: "v_e",
                value: 1.0,
                min: 2.0,
                max: 3.0,
            }
            .for_arm("detector 1"),
        );
        assert_eq!(range.exit_code(), 3);
        assert_eq!(CliError::Run(Error::Fit("x".into())).exit_code(), 4);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    }
}
