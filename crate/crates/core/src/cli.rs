//! Command-line front end. Every subcommand computes all of its outputs in
//! memory, writes them, and then writes `<out>.manifest.json` describing the
//! run. Exit status: 0 success, 2 invalid input, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::density::{default_threshold, density_from_sweep, detect_support, linspace};
use crate::dyson::{
    continuation_sweep, default_eta_ladder, gram_sweep, SolverOptions, SpectralParameter,
};
use crate::error::{Error, Result};
use crate::profile::{build_block_profile, BlockSpec, Normalization, VarianceProfile};
use crate::rmt_lab::{
    ks_distance, local_law_check, sample_spectra, self_consistent_support, EntryDistribution,
    LocalLawOptions, SampleConfig,
};
use crate::singularity::{
    analyze_profile, cusp_scan, AnalyzeOptions, CuspScanOptions, FamilyParameter, ProfileFamily,
};
use crate::stability::{StabilityContext, StabilityOptions};

/// Version of the CSV and JSON output layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "gram-dyson",
    version,
    about = "Dyson equation solver and random Gram matrix lab"
)]
struct Cli {
    /// Progress events as JSON lines on stderr.
    #[arg(long, global = true)]
    json_logs: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the Gram Dyson equation along an energy grid.
    Solve(SolveArgs),
    /// Self-consistent density and its support.
    Density(DensityArgs),
    /// Support, edges and cusps with fitted exponents.
    Classify(ClassifyArgs),
    /// Stability operator diagnostics along z = E + iη of the embedded equation.
    Stability(StabilityArgs),
    /// Scan a block family for the parameter where two components touch.
    CuspScan(CuspScanArgs),
    /// Sample matrices and write the eigenvalues of XX* per trial.
    Sample(SampleArgs),
    /// Monte Carlo check of the local law and of the eigenvalue distribution.
    Verify(VerifyArgs),
    /// Report on the model assumptions of a profile.
    CheckAssumptions(CheckArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    profile: PathBuf,
    /// min:max:count
    #[arg(long)]
    energies: String,
    /// Final η, or a comma-separated decreasing ladder.
    #[arg(long, default_value = "1e-6")]
    eta: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DensityArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    energies: String,
    #[arg(long, default_value_t = 1e-6)]
    eta_floor: f64,
    /// Support is reported on [delta, ∞).
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 2000)]
    grid_points: usize,
    #[arg(long, default_value_t = 1e-6)]
    eta_floor: f64,
    /// Skip the direct-solve refinement of boundary points and fits.
    #[arg(long)]
    no_refine: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    energies: String,
    #[arg(long, default_value_t = 1e-3)]
    eta: f64,
    #[arg(long, default_value_t = 0.05)]
    eps_star: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CuspScanArgs {
    /// Family config (block profile plus the scanned parameter).
    #[arg(long)]
    family: PathBuf,
    /// Parameter grid min:max:count.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 1200)]
    grid_points: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = DistributionArg::ComplexGaussian)]
    distribution: DistributionArg,
    /// Output prefix; trial t goes to `<out>_trial_<t>.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Comma-separated E:eta pairs; defaults to E ∈ {1, 2, 3} at η = p^(-0.6).
    #[arg(long)]
    zeta_grid: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 10.0)]
    prefactor: f64,
    #[arg(long, value_enum, default_value_t = DistributionArg::ComplexGaussian)]
    distribution: DistributionArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[arg(long)]
    profile: PathBuf,
    #[arg(long, default_value_t = 8)]
    l_max: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum DistributionArg {
    RealGaussian,
    ComplexGaussian,
    RademacherScaled,
}

impl From<DistributionArg> for EntryDistribution {
    fn from(d: DistributionArg) -> Self {
        match d {
            DistributionArg::RealGaussian => EntryDistribution::RealGaussian,
            DistributionArg::ComplexGaussian => EntryDistribution::ComplexGaussian,
            DistributionArg::RademacherScaled => EntryDistribution::Rademacher,
        }
    }
}

/// Profile file schema (TOML). Either the block keys or `matrix_csv`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub p: Option<usize>,
    pub n: Option<usize>,
    /// Row-major block values.
    pub block_values: Option<Vec<Vec<f64>>>,
    pub row_fractions: Option<Vec<f64>>,
    pub col_fractions: Option<Vec<f64>>,
    /// "dimension" divides values by p + n; default "dimension" for blocks, "raw" for CSV.
    pub normalization: Option<Normalization>,
    /// Dense p×n CSV of variances, relative to the config file.
    pub matrix_csv: Option<PathBuf>,
    pub row_weights: Option<Vec<f64>>,
    pub col_weights: Option<Vec<f64>>,
}

impl ProfileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_error)
    }

    pub fn build(&self, base: &Path) -> Result<VarianceProfile> {
        match (&self.block_values, &self.matrix_csv) {
            (Some(_), Some(_)) => Err(Error::config(
                "matrix_csv",
                "give either block_values or matrix_csv, not both",
            )),
            (None, None) => Err(Error::config(
                "block_values",
                "missing; give block_values or matrix_csv",
            )),
            (Some(values), None) => {
                if self.row_weights.is_some() || self.col_weights.is_some() {
                    return Err(Error::config(
                        "row_weights",
                        "weights are only accepted together with matrix_csv",
                    ));
                }
                let p = self.p.ok_or_else(|| Error::config("p", "missing"))?;
                let n = self.n.ok_or_else(|| Error::config("n", "missing"))?;
                let mut spec =
                    BlockSpec::uniform(values.clone(), self.normalization.unwrap_or_default());
                if let Some(f) = &self.row_fractions {
                    spec.row_fractions = f.clone();
                }
                if let Some(f) = &self.col_fractions {
                    spec.col_fractions = f.clone();
                }
                build_block_profile(&spec, p, n)
            }
            (None, Some(file)) => {
                if self.row_fractions.is_some() || self.col_fractions.is_some() {
                    return Err(Error::config(
                        "row_fractions",
                        "fractions are only accepted together with block_values",
                    ));
                }
                let (p, n, mut s) = read_matrix_csv(&base.join(file))?;
                if self.p.is_some_and(|v| v != p) {
                    return Err(Error::config("p", format!("CSV has {p} rows")));
                }
                if self.n.is_some_and(|v| v != n) {
                    return Err(Error::config("n", format!("CSV has {n} columns")));
                }
                if self.normalization == Some(Normalization::Dimension) {
                    let f = 1.0 / (p + n) as f64;
                    s.iter_mut().for_each(|v| *v *= f);
                }
                let w1 = self.row_weights.clone().unwrap_or_else(|| vec![1.0; p]);
                let w2 = self.col_weights.clone().unwrap_or_else(|| vec![1.0; n]);
                if w1.len() != p {
                    return Err(Error::config(
                        "row_weights",
                        format!("expected {p} entries"),
                    ));
                }
                if w2.len() != n {
                    return Err(Error::config(
                        "col_weights",
                        format!("expected {n} entries"),
                    ));
                }
                VarianceProfile::with_weights(p, n, s, w1, w2)
            }
        }
    }
}

/// Family file schema: a block profile, its reference dimensions, the
/// scanned parameter, and optionally the energy the cusp is compared with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub p: f64,
    pub n: f64,
    pub block_values: Vec<Vec<f64>>,
    pub row_fractions: Option<Vec<f64>>,
    pub col_fractions: Option<Vec<f64>>,
    pub normalization: Option<Normalization>,
    pub parameter: FamilyParameter,
    pub reference_energy: Option<f64>,
}

impl FamilyConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_error)
    }

    pub fn family(&self) -> Result<ProfileFamily> {
        let mut spec = BlockSpec::uniform(
            self.block_values.clone(),
            self.normalization.unwrap_or_default(),
        );
        if let Some(f) = &self.row_fractions {
            spec.row_fractions = f.clone();
        }
        if let Some(f) = &self.col_fractions {
            spec.col_fractions = f.clone();
        }
        spec.validate()?;
        Ok(ProfileFamily {
            spec,
            p: self.p,
            n: self.n,
            parameter: self.parameter,
        })
    }
}

fn toml_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    // unknown or missing keys are named in backticks by serde
    let key = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<file>".into());
    Error::config(key, msg)
}

fn read_matrix_csv(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::config("matrix_csv", format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::config("matrix_csv", e.to_string()))?;
        let row = rec
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| {
                    Error::config(
                        "matrix_csv",
                        format!("row {}: `{v}` is not a number", i + 1),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let p = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if p == 0 || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(
            "matrix_csv",
            "rows must be non-empty and of equal length",
        ));
    }
    Ok((p, n, rows.concat()))
}

pub fn load_profile(path: &Path) -> Result<VarianceProfile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("profile", format!("{}: {e}", path.display())))?;
    ProfileConfig::parse(&text)?.build(path.parent().unwrap_or(Path::new(".")))
}

/// `min:max:count` with count ≥ 1 and min ≤ max.
pub fn parse_range(key: &str, text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::config(key, format!("expected min:max:count, got `{text}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 || !lo.is_finite() || !hi.is_finite() || lo > hi || (count > 1 && lo == hi) {
        return Err(bad());
    }
    Ok(if count == 1 {
        vec![lo]
    } else {
        linspace(lo, hi, count)
    })
}

fn parse_eta(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::config("eta", format!("`{v}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() == 1 {
        return default_eta_ladder(values[0]).map_err(|e| Error::config("eta", e.to_string()));
    }
    if values.iter().any(|v| !(*v > 0.0)) || values.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::config(
            "eta",
            "ladder must be positive and strictly decreasing",
        ));
    }
    Ok(values)
}

fn parse_zeta_grid(text: &str) -> Result<Vec<SpectralParameter>> {
    text.split(',')
        .map(|pair| {
            let bad = || Error::config("zeta_grid", format!("expected E:eta, got `{pair}`"));
            let (e, eta) = pair.split_once(':').ok_or_else(bad)?;
            let e: f64 = e.trim().parse().map_err(|_| bad())?;
            let eta: f64 = eta.trim().parse().map_err(|_| bad())?;
            SpectralParameter::new(e, eta)
                .map_err(|err| Error::config("zeta_grid", err.to_string()))
        })
        .collect()
}

/// Record of one CLI run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    /// Parsed arguments and every numerical default used by the run.
    pub config: Value,
    pub profile_hash: Option<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

/// Outputs of a subcommand, held until everything has been computed.
struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
    config: Value,
    profile_hash: Option<String>,
    seed: Option<u64>,
    manifest: PathBuf,
}

impl Artifacts {
    fn new(primary: &Path, config: Value) -> Self {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest.json");
        Self {
            files: Vec::new(),
            config,
            profile_hash: None,
            seed: None,
            manifest: PathBuf::from(name),
        }
    }

    fn add(&mut self, path: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    fn add_json<T: Serialize>(&mut self, path: impl Into<PathBuf>, value: &T) -> Result<()> {
        let mut bytes =
            serde_json::to_vec_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        bytes.push(b'\n');
        self.add(path, bytes);
        Ok(())
    }
}

struct Logger {
    json: bool,
}

impl Logger {
    fn event(&self, event: &str, detail: Value) {
        if self.json {
            eprintln!(
                "{}",
                json!({ "event": event, "time": now(), "detail": detail })
            );
        } else {
            eprintln!("[gram-dyson] {event} {detail}");
        }
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn csv_bytes(header: &[&str], rows: &[Vec<f64>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r.iter().map(|v| format!("{v:.17e}")))
            .map_err(io)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let log = Logger {
        json: cli.json_logs,
    };
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let started = now();
    let name = command_name(&cli.command);
    log.event("start", json!({ "command": name }));
    let result =
        dispatch(&cli.command, &log).and_then(|art| write_outputs(art, name, argv, started));
    match result {
        Ok(files) => {
            log.event("done", json!({ "command": name, "outputs": files }));
            0
        }
        Err(e) => {
            log.event(
                "error",
                json!({ "command": name, "message": e.to_string() }),
            );
            if !cli.json_logs {
                eprintln!("error: {e}");
            }
            if e.is_numerical() {
                3
            } else {
                2
            }
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("GRAM_DYSON_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
    {
        // the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Solve(_) => "solve",
        Command::Density(_) => "density",
        Command::Classify(_) => "classify",
        Command::Stability(_) => "stability",
        Command::CuspScan(_) => "cusp-scan",
        Command::Sample(_) => "sample",
        Command::Verify(_) => "verify",
        Command::CheckAssumptions(_) => "check-assumptions",
    }
}

fn write_outputs(
    art: Artifacts,
    command: &str,
    argv: Vec<String>,
    started: String,
) -> Result<Vec<PathBuf>> {
    for (path, bytes) in &art.files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, bytes)?;
    }
    let mut outputs: Vec<PathBuf> = art.files.iter().map(|(p, _)| p.clone()).collect();
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        argv,
        config: art.config,
        profile_hash: art.profile_hash,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: art.seed,
        threads: rayon::current_num_threads(),
        started,
        finished: now(),
        outputs: outputs.clone(),
    };
    let mut bytes =
        serde_json::to_vec_pretty(&manifest).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(&art.manifest, bytes)?;
    outputs.push(art.manifest);
    Ok(outputs)
}

fn dispatch(cmd: &Command, log: &Logger) -> Result<Artifacts> {
    match cmd {
        Command::Solve(a) => solve(a),
        Command::Density(a) => density(a),
        Command::Classify(a) => classify(a),
        Command::Stability(a) => stability(a),
        Command::CuspScan(a) => scan(a, log),
        Command::Sample(a) => sample(a),
        Command::Verify(a) => verify(a, log),
        Command::CheckAssumptions(a) => check(a),
    }
}

fn solver_with_floor(ladder: &[f64]) -> SolverOptions {
    let mut s = SolverOptions::default();
    s.eta_floor = s
        .eta_floor
        .min(ladder.iter().cloned().fold(f64::INFINITY, f64::min));
    s
}

fn solve(a: &SolveArgs) -> Result<Artifacts> {
    let profile = load_profile(&a.profile)?;
    let energies = parse_range("energies", &a.energies)?;
    let ladder = parse_eta(&a.eta)?;
    let solver = solver_with_floor(&ladder);
    let sweep = gram_sweep(&profile, &energies, &ladder, &solver)?;
    let sols = sweep.solutions()?;
    let rows: Vec<Vec<f64>> = sols
        .iter()
        .zip(&sweep.points)
        .map(|(s, pt)| {
            let iters: usize = pt.trace.iter().map(|t| t.iterations).sum();
            vec![
                s.zeta.re,
                s.zeta.im,
                s.avg_m.re,
                s.avg_m.im,
                s.residual,
                iters as f64,
            ]
        })
        .collect();
    let mut art = Artifacts::new(
        &a.out,
        json!({ "profile": a.profile, "energies": a.energies, "eta_ladder": ladder, "solver": solver }),
    );
    art.profile_hash = Some(profile.content_hash());
    let csv = csv_bytes(
        &["E", "eta", "re_avg_m", "im_avg_m", "residual", "iterations"],
        &rows,
    )?;
    art.add(&a.out, csv);
    Ok(art)
}

fn density(a: &DensityArgs) -> Result<Artifacts> {
    let profile = load_profile(&a.profile)?;
    let energies = parse_range("energies", &a.energies)?;
    let ladder =
        default_eta_ladder(a.eta_floor).map_err(|e| Error::config("eta_floor", e.to_string()))?;
    let solver = solver_with_floor(&ladder);
    let sweep = gram_sweep(&profile, &energies, &ladder, &solver)?;
    let curve = density_from_sweep(&profile, &sweep, true, true)?;
    let threshold = default_threshold(&curve);
    let support = detect_support(&curve, threshold, a.delta, 0.0);
    let comps = curve.per_component.as_ref();
    let rows: Vec<Vec<f64>> = (0..curve.len())
        .map(|i| {
            let (lo, hi) = comps.map_or((f64::NAN, f64::NAN), |c| {
                c.iter()
                    .take(curve.x1_len)
                    .map(|v| v[i].max(0.0))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    })
            });
            vec![curve.energies[i], curve.avg_density[i], lo, hi]
        })
        .collect();
    let mut art = Artifacts::new(
        &a.out,
        json!({ "profile": a.profile, "energies": a.energies, "eta_ladder": ladder,
                "delta": a.delta, "threshold": threshold, "solver": solver }),
    );
    art.profile_hash = Some(profile.content_hash());
    art.add(
        &a.out,
        csv_bytes(
            &["E", "avg_density", "min_component", "max_component"],
            &rows,
        )?,
    );
    let mut support_path = a.out.as_os_str().to_owned();
    support_path.push(".support.json");
    art.add_json(
        PathBuf::from(support_path),
        &json!({ "schema_version": SCHEMA_VERSION, "eta_used": curve.eta_used,
                 "extrapolated": curve.extrapolated, "support": support }),
    )?;
    Ok(art)
}

fn classify(a: &ClassifyArgs) -> Result<Artifacts> {
    let profile = load_profile(&a.profile)?;
    let mut opts = AnalyzeOptions {
        delta: a.delta,
        grid_points: a.grid_points,
        eta_floor: a.eta_floor,
        ..AnalyzeOptions::default()
    };
    opts.solver.eta_floor = opts.solver.eta_floor.min(a.eta_floor);
    if a.no_refine {
        opts.refine = None;
    }
    let (curve, report) = analyze_profile(&profile, &opts)?;
    let mut art = Artifacts::new(&a.out, json!({ "profile": a.profile, "options": opts }));
    art.profile_hash = Some(profile.content_hash());
    art.add_json(
        &a.out,
        &json!({ "schema_version": SCHEMA_VERSION, "eta_used": curve.eta_used,
                 "grid_spacing": curve.min_spacing(), "report": report }),
    )?;
    Ok(art)
}

fn stability(a: &StabilityArgs) -> Result<Artifacts> {
    let profile = load_profile(&a.profile)?;
    let energies = parse_range("energies", &a.energies)?;
    let ladder = default_eta_ladder(a.eta).map_err(|e| Error::config("eta", e.to_string()))?;
    let solver = solver_with_floor(&ladder);
    let opts = StabilityOptions {
        eps_star: a.eps_star,
        ..StabilityOptions::default()
    };
    let sweep = continuation_sweep(&profile, &energies, &ladder, &solver)?;
    let sols = sweep.solutions()?;
    // points outside the regime where b can be normalized get NaN diagnostics
    let reports: Vec<(f64, f64, Result<_>)> = sols
        .iter()
        .map(|q| {
            let r = StabilityContext::new(&profile, q, opts.compress).and_then(|c| c.report(&opts));
            (q.z.re, q.z.im, r)
        })
        .collect();
    if reports.iter().all(|(_, _, r)| r.is_err()) {
        if let Some((_, _, Err(e))) = reports.into_iter().next() {
            return Err(e);
        }
        return Err(Error::InvalidArgument("empty energy grid".into()));
    }
    let rows: Vec<Vec<f64>> = reports
        .iter()
        .map(|(e, eta, r)| match r {
            Ok(r) => vec![
                r.z.re,
                r.z.im,
                r.norm_f,
                r.gap_fft,
                r.beta.norm(),
                r.psi,
                r.sigma,
                r.alpha,
                r.psi_plus_sigma2,
                r.norm_binv,
                r.im_avg,
            ],
            Err(_) => {
                let mut row = vec![f64::NAN; 11];
                row[0] = *e;
                row[1] = *eta;
                row
            }
        })
        .collect();
    let warnings: Vec<Value> = reports
        .iter()
        .filter_map(|(e, _, r)| match r {
            Ok(r) if !r.warnings.is_empty() => Some(json!({ "E": e, "warnings": r.warnings })),
            Ok(_) => None,
            Err(err) => Some(json!({ "E": e, "error": err.to_string() })),
        })
        .collect();
    let mut art = Artifacts::new(
        &a.out,
        json!({ "profile": a.profile, "energies": a.energies, "eta_ladder": ladder,
                "stability": opts, "solver": solver, "warnings": warnings }),
    );
    art.profile_hash = Some(profile.content_hash());
    let header = [
        "E",
        "eta",
        "normF",
        "gapFFt",
        "|beta|",
        "psi",
        "sigma",
        "alpha",
        "psi_plus_sigma2",
        "normBinv",
        "imAvg",
    ];
    art.add(&a.out, csv_bytes(&header, &rows)?);
    Ok(art)
}

fn scan(a: &CuspScanArgs, log: &Logger) -> Result<Artifacts> {
    let text = std::fs::read_to_string(&a.family)
        .map_err(|e| Error::config("family", format!("{}: {e}", a.family.display())))?;
    let cfg = FamilyConfig::parse(&text)?;
    let family = cfg.family()?;
    let grid = parse_range("grid", &a.grid)?;
    let opts = CuspScanOptions {
        delta: a.delta,
        grid_points: a.grid_points,
        reference_energy: cfg.reference_energy,
        ..CuspScanOptions::default()
    };
    log.event("scan", json!({ "points": grid.len() }));
    let report = cusp_scan(&family, &grid, &opts)?;
    let mut art = Artifacts::new(
        &a.out,
        json!({ "family": cfg, "grid": grid, "options": opts }),
    );
    art.profile_hash = Some(family.build(report.parameter)?.content_hash());
    art.add_json(
        &a.out,
        &json!({ "schema_version": SCHEMA_VERSION, "scan": report }),
    )?;
    Ok(art)
}

fn sample(a: &SampleArgs) -> Result<Artifacts> {
    let profile = load_profile(&a.profile)?;
    let hash = profile.content_hash();
    let config = SampleConfig::new(profile, a.trials, a.seed, a.distribution.into())?;
    let spectra = sample_spectra(&config)?;
    let mut art = Artifacts::new(
        &a.out,
        json!({ "profile": a.profile, "trials": a.trials, "distribution": config.distribution }),
    );
    art.profile_hash = Some(hash);
    art.seed = Some(a.seed);
    let width = (a.trials.max(2) - 1).to_string().len();
    for s in &spectra {
        let rows: Vec<Vec<f64>> = s.eigenvalues.iter().map(|v| vec![*v]).collect();
        let mut path = a.out.as_os_str().to_owned();
        path.push(format!("_trial_{:0width$}.csv", s.trial.unwrap_or(0)));
        art.add(PathBuf::from(path), csv_bytes(&["eigenvalue"], &rows)?);
    }
    Ok(art)
}

fn verify(a: &VerifyArgs, log: &Logger) -> Result<Artifacts> {
    let profile = load_profile(&a.profile)?;
    let hash = profile.content_hash();
    let p = profile.p() as f64;
    let zetas = match &a.zeta_grid {
        Some(t) => parse_zeta_grid(t)?,
        None => [1.0, 2.0, 3.0]
            .iter()
            .map(|e| SpectralParameter::new(*e, p.powf(-0.6)))
            .collect::<Result<_>>()?,
    };
    let config = SampleConfig::new(profile, a.trials, a.seed, a.distribution.into())?;
    let opts = LocalLawOptions {
        epsilon: a.epsilon,
        prefactor: a.prefactor,
        delta: a.delta,
        ..LocalLawOptions::default()
    };
    let pp = config.profile.p();
    let ones = vec![1.0; pp];
    let alternating: Vec<f64> = (0..pp)
        .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    log.event(
        "local_law",
        json!({ "points": zetas.len(), "trials": a.trials }),
    );
    let law = local_law_check(&config, &zetas, a.gamma, &[ones, alternating], &opts)?;
    log.event("distribution", json!({ "trials": a.trials }));
    let (curve, _) = self_consistent_support(&config.profile, a.delta, 2000, &opts.solver)?;
    let spectra = sample_spectra(&config)?;
    let ks = ks_distance(&spectra, &curve, a.delta, 50)?;
    let mut art = Artifacts::new(
        &a.out,
        json!({ "profile": a.profile, "trials": a.trials, "gamma": a.gamma, "zeta_grid": zetas,
                "distribution": config.distribution, "test_vectors": ["ones", "alternating"],
                "local_law": opts }),
    );
    art.profile_hash = Some(hash);
    art.seed = Some(a.seed);
    art.add_json(
        &a.out,
        &json!({ "schema_version": SCHEMA_VERSION, "local_law": law, "kolmogorov": ks }),
    )?;
    Ok(art)
}

fn check(a: &CheckArgs) -> Result<Artifacts> {
    let profile = load_profile(&a.profile)?;
    let report = profile.check_assumptions(a.l_max);
    let mut art = Artifacts::new(&a.out, json!({ "profile": a.profile, "l_max": a.l_max }));
    art.profile_hash = Some(profile.content_hash());
    art.add_json(
        &a.out,
        &json!({ "schema_version": SCHEMA_VERSION, "assumptions": report }),
    )?;
    Ok(art)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(
            parse_range("energies", "0:1:3").unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(parse_range("energies", "2:2:1").unwrap(), vec![2.0]);
        for bad in ["0:1", "1:0:3", "0:1:0", "a:1:2"] {
            assert!(
                matches!(parse_range("energies", bad), Err(Error::Config { key, .. }) if key == "energies")
            );
        }
    }

    #[test]
    fn eta_forms() {
        assert_eq!(parse_eta("1e-2").unwrap(), vec![1.0, 0.1, 0.01]);
        assert_eq!(parse_eta("0.5,0.1").unwrap(), vec![0.5, 0.1]);
        assert!(parse_eta("0.1,0.5").is_err());
    }

    #[test]
    fn zeta_pairs() {
        let z = parse_zeta_grid("1:0.1, 2:0.2").unwrap();
        assert_eq!(z.len(), 2);
        assert_eq!(z[1].im, 0.2);
        assert!(parse_zeta_grid("1:-0.1").is_err());
    }

    #[test]
    fn profile_config_keys() {
        let cfg = ProfileConfig::parse("p = 4\nn = 6\nblock_values = [[2.0]]\n").unwrap();
        let prof = cfg.build(Path::new(".")).unwrap();
        assert_eq!((prof.p(), prof.n()), (4, 6));
        assert!((prof.s(0, 0) - 0.2).abs() < 1e-15);
        let err = ProfileConfig::parse("p = 4\nblok_values = [[1.0]]\n").unwrap_err();
        assert!(matches!(err, Error::Config { key, .. } if key == "blok_values"));
        let err = ProfileConfig::parse("p = 4\nblock_values = [[1.0]]\n")
            .unwrap()
            .build(Path::new("."))
            .unwrap_err();
        assert!(matches!(err, Error::Config { key, .. } if key == "n"));
    }

    #[test]
    fn family_config() {
        let cfg = FamilyConfig::parse(
            "p = 200.0\nn = 200.0\nblock_values = [[6.0, 4.0], [4.0, 3.0]]\nreference_energy = 8.0\n[parameter]\nkind = \"aspect\"\n",
        )
        .unwrap();
        assert_eq!(cfg.family().unwrap(), ProfileFamily::cusp_blocks(200.0));
    }

    #[test]
    fn manifest_round_trip() {
        let m = RunManifest {
            schema_version: SCHEMA_VERSION,
            command: "solve".into(),
            argv: vec!["gram-dyson".into(), "solve".into()],
            config: json!({ "eta": [1.0, 0.1] }),
            profile_hash: Some("ab".into()),
            tool_version: "0.1.0".into(),
            seed: Some(3),
            threads: 2,
            started: now(),
            finished: now(),
            outputs: vec![PathBuf::from("a.csv")],
        };
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<RunManifest>(&text).unwrap(), m);
    }
}
