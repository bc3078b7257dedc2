//! Command-line front end.
//!
//! Every run reads at most one flat TOML config (`schema = 1`), writes CSV or
//! JSON artifacts into `--out`, and stamps each artifact with a manifest
//! header: subcommand, SHA-256 of the config, seed and tool version. Wall
//! clock times go to a separate `manifest.json`, so the artifacts themselves
//! are byte-identical across repeated runs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{self, kernel_density_plugin, CovProbe, DensityOracle, Endpoint, Scale, StudyShape};
use crate::curves::{self, BinormalModel, CurveKind};
use crate::empirical_process::{MarkerSample, Prevalence, SequentialView};
use crate::error::{Error, Result};
use crate::gaussian_limits::{Construction, LimitSampler};
use crate::gs_design::{self, GsDesignSpec};
use crate::kde::BandwidthRule;
use crate::montecarlo::{self, SimScenario, COVERAGE_LEVELS};
use crate::stats::summarize;

pub const SCHEMA: i64 = 1;

#[derive(Debug, Parser)]
#[command(name = "seqcurve", version, about = "Sequential ROC/PPV/NPV estimation, limit theory and group-sequential design")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (flat TOML, `schema = 1`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, env = "SEQCURVE_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Empirical curve of a marker sample on a grid.
    Curve,
    /// Closed-form covariance matrix of a list of probes.
    Covariance,
    /// Draws from the Gaussian limit processes.
    SimulateLimits,
    /// Monte Carlo check of the ROC limit theory.
    #[command(name = "validate-table1")]
    ValidateTable1 {
        /// Overrides the number of replications.
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Group-sequential design: boundaries, fixed and maximum sample sizes.
    Design,
    /// Simulated operating characteristics of the design.
    OcSim {
        /// Overrides the number of replications per cell.
        #[arg(long)]
        reps: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Curve => "curve",
            Command::Covariance => "covariance",
            Command::SimulateLimits => "simulate-limits",
            Command::ValidateTable1 { .. } => "validate-table1",
            Command::Design => "design",
            Command::OcSim { .. } => "oc-sim",
        }
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("seqcurve: {e}");
            exit_code(&e)
        }
    }
}

/// 2 for bad input, 1 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) | Error::Domain(_) => 2,
        Error::Numeric(_) | Error::NoSolution { .. } => 1,
    }
}

struct Loaded {
    table: toml::Table,
    digest: String,
    dir: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<Loaded> {
    let Some(path) = path else {
        return Ok(Loaded { table: toml::Table::new(), digest: hex(&Sha256::digest(b"")), dir: PathBuf::from(".") });
    };
    let bytes = fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::Config(format!("{}: not valid UTF-8", path.display())))?;
    let mut table: toml::Table =
        text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    match table.remove("schema") {
        Some(toml::Value::Integer(SCHEMA)) => {}
        Some(other) => return Err(Error::Config(format!("unsupported schema {other}; expected {SCHEMA}"))),
        None => return Err(Error::Config(format!("{}: missing `schema = {SCHEMA}`", path.display()))),
    }
    Ok(Loaded {
        table,
        digest: hex(&Sha256::digest(&bytes)),
        dir: path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(".")),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn parse<T: DeserializeOwned>(table: toml::Table) -> Result<T> {
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
}

fn take<T: DeserializeOwned>(table: &mut toml::Table, key: &str) -> Result<Option<T>> {
    table
        .remove(key)
        .map(|v| v.try_into().map_err(|e: toml::de::Error| Error::Config(format!("`{key}`: {}", e.message()))))
        .transpose()
}

fn resolve(dir: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() { p.to_path_buf() } else { dir.join(p) }
}

#[derive(Debug, Clone, Serialize)]
struct Manifest {
    subcommand: String,
    config_sha256: String,
    seed: Option<u64>,
    version: String,
}

impl Manifest {
    fn csv_header(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "# subcommand: {}\n# config_sha256: {}\n# seed: {seed}\n# version: seqcurve {}\n",
            self.subcommand, self.config_sha256, self.version
        )
    }
}

struct Output {
    dir: PathBuf,
    manifest: Manifest,
    files: Vec<PathBuf>,
}

impl Output {
    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(name);
        fs::write(&path, body)?;
        self.files.push(path);
        Ok(())
    }

    fn csv(&mut self, name: &str, provenance: &[String], body: &str) -> Result<()> {
        let mut s = self.manifest.csv_header();
        for line in provenance {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str(body);
        self.write(name, &s)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            manifest: &'a Manifest,
            #[serde(flatten)]
            value: &'a T,
        }
        let text = serde_json::to_string_pretty(&Wrapped { manifest: &self.manifest, value })
            .map_err(|e| Error::Numeric(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    fn finish(mut self, started: f64) -> Result<Vec<PathBuf>> {
        #[derive(Serialize)]
        struct RunRecord<'a> {
            #[serde(flatten)]
            manifest: &'a Manifest,
            started_unix: f64,
            finished_unix: f64,
            artifacts: Vec<String>,
        }
        let artifacts = self.files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect();
        let record = RunRecord { manifest: &self.manifest, started_unix: started, finished_unix: now(), artifacts };
        let text = serde_json::to_string_pretty(&record).map_err(|e| Error::Numeric(e.to_string()))?;
        self.write("manifest.json", &(text + "\n"))?;
        Ok(self.files)
    }
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let started = now();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // a second build in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let loaded = load_config(cli.common.config.as_deref())?;
    let mut out = Output {
        dir: cli.common.out.clone(),
        manifest: Manifest {
            subcommand: cli.command.name().to_string(),
            config_sha256: loaded.digest.clone(),
            seed: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        files: Vec::new(),
    };
    match &cli.command {
        Command::Curve => curve(loaded, &mut out)?,
        Command::Covariance => covariance(loaded, &mut out)?,
        Command::SimulateLimits => simulate_limits(loaded, cli.common.seed, &mut out)?,
        Command::ValidateTable1 { reps } => validate_table1(loaded, cli.common.seed, *reps, &mut out)?,
        Command::Design => design(loaded, &mut out)?,
        Command::OcSim { reps } => oc_sim(loaded, cli.common.seed, *reps, &mut out)?,
    }
    out.finish(started)
}

fn read_sample(dir: &Path, path: &str) -> Result<MarkerSample> {
    let path = resolve(dir, path);
    let file = fs::File::open(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    MarkerSample::from_csv(file).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn view(r_case: f64, r_control: f64) -> Result<SequentialView> {
    SequentialView::new(r_case, r_control)
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CurveConfig {
    data: String,
    kind: String,
    #[serde(default)]
    rho: Option<f64>,
    #[serde(default = "one")]
    r_case: f64,
    #[serde(default = "one")]
    r_control: f64,
    grid: Vec<f64>,
}

fn curve(loaded: Loaded, out: &mut Output) -> Result<()> {
    let cfg: CurveConfig = parse(loaded.table)?;
    let kind: CurveKind = cfg.kind.parse()?;
    let sample = read_sample(&loaded.dir, &cfg.data)?;
    let needs_rho = !matches!(kind, CurveKind::Roc | CurveKind::RocInverse);
    let rho = match cfg.rho {
        Some(r) => Prevalence::new(r)?,
        None if needs_rho => return Err(Error::Config(format!("curve `{}` needs `rho`", cfg.kind))),
        None => Prevalence::new(0.5)?,
    };
    let v = view(cfg.r_case, cfg.r_control)?;
    let points = curves::empirical_curve(&sample, v, rho, kind, &cfg.grid)?;
    let mut body = String::from("index,estimate\n");
    for p in points {
        let _ = writeln!(body, "{},{}", p.index, p.value);
    }
    let provenance = vec![
        format!("curve: {}", cfg.kind),
        format!("data: {} cases, {} controls", sample.n_cases(), sample.n_controls()),
        format!("view: r_case={}, r_control={}", v.r_case, v.r_control),
        format!("rho: {}", if needs_rho { rho.value().to_string() } else { "unused".into() }),
        "source: empirical step-function estimate".into(),
    ];
    out.csv("curve.csv", &provenance, &body)
}

/// Probe list CSV: `index,kind,r_D,r_Dbar` with a header row.
pub fn read_probes(path: &Path) -> Result<Vec<CovProbe>> {
    let file = fs::File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut probes = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Config(format!("{}: line {line}: {e}", path.display())))?;
        if rec.len() != 4 {
            return Err(Error::Config(format!("{}: line {line}: expected 4 fields", path.display())));
        }
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Config(format!("{}: line {line}: bad number `{}`", path.display(), &rec[j])))
        };
        let endpoint: Endpoint = rec[1]
            .parse()
            .map_err(|e: Error| Error::Config(format!("{}: line {line}: {e}", path.display())))?;
        probes.push(CovProbe::new(endpoint, num(0)?, num(2)?, num(3)?)?);
    }
    if probes.is_empty() {
        return Err(Error::Config(format!("{}: no probes", path.display())));
    }
    Ok(probes)
}

fn probe_label(p: &CovProbe) -> String {
    let kind = serde_json::to_value(p.endpoint).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    format!("{kind}:{}:{}:{}", p.index, p.view.r_case, p.view.r_control)
}

fn default_probes() -> Vec<CovProbe> {
    SimScenario::table1(1, 2, 0).map(|s| s.probes).unwrap_or_default()
}

fn matrix_csv(labels: &[String], m: &nalgebra::DMatrix<f64>) -> String {
    let mut s = String::from("probe");
    for l in labels {
        let _ = write!(s, ",{l}");
    }
    s.push('\n');
    for (i, l) in labels.iter().enumerate() {
        s.push_str(l);
        for j in 0..m.ncols() {
            let _ = write!(s, ",{}", m[(i, j)]);
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CovarianceConfig {
    probes: String,
    #[serde(default = "default_rho")]
    rho: f64,
    #[serde(default)]
    mu_case: Option<f64>,
    #[serde(default)]
    sigma_case: Option<f64>,
    /// Marker data for a kernel plug-in oracle instead of a binormal model.
    #[serde(default)]
    data: Option<String>,
    #[serde(default)]
    bandwidth_case: Option<f64>,
    #[serde(default)]
    bandwidth_control: Option<f64>,
    n_case: Option<usize>,
    n_control: Option<usize>,
    #[serde(default = "default_scale")]
    scale: Scale,
}

fn default_rho() -> f64 {
    0.2
}

fn default_scale() -> Scale {
    Scale::Process
}

fn covariance(loaded: Loaded, out: &mut Output) -> Result<()> {
    let cfg: CovarianceConfig = parse(loaded.table)?;
    let probes = read_probes(&resolve(&loaded.dir, &cfg.probes))?;
    let rho = Prevalence::new(cfg.rho)?;
    let (oracle, shape) = match &cfg.data {
        Some(path) => {
            if cfg.mu_case.is_some() || cfg.sigma_case.is_some() {
                return Err(Error::Config("give either `data` or `mu_case`/`sigma_case`, not both".into()));
            }
            let sample = read_sample(&loaded.dir, path)?;
            let rule = match (cfg.bandwidth_case, cfg.bandwidth_control) {
                (None, None) => BandwidthRule::Silverman,
                (Some(case), Some(control)) => BandwidthRule::Fixed { case, control },
                _ => return Err(Error::Config("set both bandwidths or neither".into())),
            };
            let shape = StudyShape::new(
                cfg.n_case.unwrap_or(sample.n_cases()),
                cfg.n_control.unwrap_or(sample.n_controls()),
            )?;
            (kernel_density_plugin(&sample, SequentialView::full(), rule)?, shape)
        }
        None => {
            let model = BinormalModel::new(cfg.mu_case.unwrap_or(1.0), cfg.sigma_case.unwrap_or(1.0))?;
            let shape = StudyShape::new(
                cfg.n_case.ok_or_else(|| Error::Config("`n_case` is required".into()))?,
                cfg.n_control.ok_or_else(|| Error::Config("`n_control` is required".into()))?,
            )?;
            (DensityOracle::Binormal(model), shape)
        }
    };
    let m = match cfg.scale {
        Scale::Process => asymptotics::process_cov(&oracle, rho, &probes, shape.lambda())?,
        Scale::Estimator => asymptotics::estimator_cov(&oracle, rho, &probes, shape)?,
    };
    let labels: Vec<String> = probes.iter().map(probe_label).collect();
    let provenance = vec![
        format!("densities: {}", oracle.label()),
        format!("rho: {}", rho.value()),
        format!("n_case: {}, n_control: {}, lambda: {}", shape.n_case, shape.n_control, shape.lambda()),
        format!("scale: {}", match cfg.scale { Scale::Process => "process", Scale::Estimator => "estimator" }),
        "source: closed form".into(),
    ];
    out.csv("covariance.csv", &provenance, &matrix_csv(&labels, &m.matrix))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimitsConfig {
    #[serde(default = "one")]
    mu_case: f64,
    #[serde(default = "one")]
    sigma_case: f64,
    #[serde(default = "default_rho")]
    rho: f64,
    #[serde(default = "one")]
    lambda: f64,
    #[serde(default)]
    probes: Option<String>,
    #[serde(default = "default_draws")]
    draws: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    construction: Construction,
    /// Also write every draw.
    #[serde(default)]
    write_draws: bool,
}

fn default_draws() -> usize {
    20_000
}

fn simulate_limits(mut loaded: Loaded, seed: Option<u64>, out: &mut Output) -> Result<()> {
    let dir = loaded.dir.clone();
    let draws_override: Option<usize> = take(&mut loaded.table, "reps")?;
    let mut cfg: LimitsConfig = parse(loaded.table)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = draws_override {
        cfg.draws = d;
    }
    if cfg.draws < 2 {
        return Err(Error::Config("`draws` must be at least 2".into()));
    }
    out.manifest.seed = Some(cfg.seed);
    let model = BinormalModel::new(cfg.mu_case, cfg.sigma_case)?;
    let rho = Prevalence::new(cfg.rho)?;
    let probes = match &cfg.probes {
        Some(p) => read_probes(&resolve(&dir, p))?,
        None => default_probes(),
    };
    let sampler = LimitSampler::new(&model, rho, &probes, cfg.lambda, cfg.construction)?;
    let rows = sampler.draw_many(cfg.seed, cfg.draws);
    let summary = summarize(&rows);
    let exact = asymptotics::process_cov(&model, rho, &probes, cfg.lambda)?;
    let labels: Vec<String> = probes.iter().map(probe_label).collect();
    let mut body = String::from("probe_i,probe_j,closed_form,monte_carlo,monte_carlo_se\n");
    for i in 0..probes.len() {
        for j in i..probes.len() {
            let _ = writeln!(
                body,
                "{},{},{},{},{}",
                labels[i], labels[j], exact.get(i, j), summary.cov[(i, j)], summary.cov_se[(i, j)]
            );
        }
    }
    let provenance = vec![
        format!("model: binormal(mu_case={}, sigma_case={})", cfg.mu_case, cfg.sigma_case),
        format!("rho: {}, lambda: {}", cfg.rho, cfg.lambda),
        format!("construction: {:?}, draws: {}", cfg.construction, cfg.draws),
        format!("cholesky_jitter: {}", sampler.jitter().map_or("none".into(), |j| j.to_string())),
        "source: closed form vs Monte Carlo (process scale)".into(),
    ];
    out.csv("limits_summary.csv", &provenance, &body)?;
    if cfg.write_draws {
        let mut d = String::from("draw");
        for l in &labels {
            let _ = write!(d, ",{l}");
        }
        d.push('\n');
        for (k, row) in rows.iter().enumerate() {
            let _ = write!(d, "{k}");
            for v in row {
                let _ = write!(d, ",{v}");
            }
            d.push('\n');
        }
        out.csv("limits_draws.csv", &provenance, &d)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Table1Config {
    #[serde(default = "one")]
    mu_case: f64,
    #[serde(default = "one")]
    sigma_case: f64,
    #[serde(default = "default_rho")]
    rho: f64,
    #[serde(default = "default_n")]
    n_case: usize,
    #[serde(default = "default_n")]
    n_control: usize,
    #[serde(default)]
    probes: Option<String>,
    #[serde(default = "default_reps")]
    replications: usize,
    #[serde(default)]
    seed: u64,
}

fn default_n() -> usize {
    200
}

fn default_reps() -> usize {
    10_000
}

fn validate_table1(loaded: Loaded, seed: Option<u64>, reps: Option<usize>, out: &mut Output) -> Result<()> {
    let dir = loaded.dir.clone();
    let cfg: Table1Config = parse(loaded.table)?;
    let probes = match &cfg.probes {
        Some(p) => read_probes(&resolve(&dir, p))?,
        None => default_probes(),
    };
    let scenario = SimScenario {
        model: BinormalModel::new(cfg.mu_case, cfg.sigma_case)?,
        rho: Prevalence::new(cfg.rho)?,
        n_case: cfg.n_case,
        n_control: cfg.n_control,
        probes,
        replications: reps.unwrap_or(cfg.replications),
        seed: seed.unwrap_or(cfg.seed),
    };
    out.manifest.seed = Some(scenario.seed);
    let report = montecarlo::run_validation(&scenario)?;
    let labels: Vec<String> = scenario.probes.iter().map(probe_label).collect();
    let p = labels.len();

    let mut csv = String::from("probe,mean,mean_se");
    for l in COVERAGE_LEVELS {
        let _ = write!(csv, ",below_p{}", (l * 100.0).round());
    }
    for l in &labels {
        let _ = write!(csv, ",observed_cov[{l}],observed_cov_se[{l}],theoretical_cov[{l}]");
    }
    csv.push('\n');
    for i in 0..p {
        let _ = write!(csv, "{},{},{}", labels[i], report.mean[i], report.mean_se[i]);
        for c in report.coverage[i] {
            let _ = write!(csv, ",{c}");
        }
        for j in 0..p {
            let _ = write!(
                csv,
                ",{},{},{}",
                report.observed[(i, j)],
                report.observed_se[(i, j)],
                report.theoretical.get(i, j)
            );
        }
        csv.push('\n');
    }
    let provenance = vec![
        format!(
            "model: binormal(mu_case={}, sigma_case={}), rho: {}",
            cfg.mu_case,
            cfg.sigma_case,
            scenario.rho.value()
        ),
        format!("n_case: {}, n_control: {}, replications: {}", scenario.n_case, scenario.n_control, scenario.replications),
        "source: Monte Carlo (mean, coverage, observed covariance, with SEs); closed form (theoretical covariance)"
            .into(),
        "scale: n_case^{-1/2}[n_case r_case](estimate - truth)".into(),
    ];
    out.csv("table1.csv", &provenance, &csv)?;

    let mut md = String::new();
    let _ = writeln!(md, "<!-- {} -->", out.manifest.csv_header().trim_end().replace('\n', " | "));
    let _ = writeln!(
        md,
        "n_case = {}, n_control = {}, {} replications (Monte Carlo columns), theoretical covariance in closed form\n",
        scenario.n_case, scenario.n_control, scenario.replications
    );
    md.push_str("| Probe | Mean | 5th | 25th | 50th | 75th | 95th |");
    for _ in 0..p {
        md.push_str(" Obs |");
    }
    for _ in 0..p {
        md.push_str(" Theo |");
    }
    md.push('\n');
    md.push_str(&"|---".repeat(7 + 2 * p));
    md.push_str("|\n");
    for i in 0..p {
        let _ = write!(md, "| {} | {:.2} |", labels[i], report.mean[i]);
        for c in report.coverage[i] {
            let _ = write!(md, " {c:.2} |");
        }
        for j in 0..p {
            if j >= i {
                let _ = write!(md, " {:.3} |", report.observed[(i, j)]);
            } else {
                md.push_str("  |");
            }
        }
        for j in 0..p {
            if j >= i {
                let _ = write!(md, " {:.3} |", report.theoretical.get(i, j));
            } else {
                md.push_str("  |");
            }
        }
        md.push('\n');
    }
    out.write("table1.md", &md)
}

fn design_spec(table: toml::Table) -> Result<GsDesignSpec> {
    let spec: GsDesignSpec = parse(table)?;
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize)]
struct DesignReport {
    design: gs_design::DesignSummary,
    max_sample_sizes: Vec<gs_design::MaxSampleSize>,
}

fn design(loaded: Loaded, out: &mut Output) -> Result<()> {
    let spec = design_spec(loaded.table)?;
    let summary = gs_design::design(&spec)?;
    let max_sample_sizes = (1..=spec.looks)
        .map(|j| {
            let b = gs_design::boundaries_from_spending(&spec.with_looks(j))?;
            let n = summary.fixed_sample_size;
            Ok(gs_design::MaxSampleSize {
                looks: j,
                fixed: n,
                inflation_factor: b.inflation_factor,
                max: (n as f64 * b.inflation_factor - 1e-9).ceil() as usize,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut txt = String::new();
    let _ = writeln!(txt, "{}", out.manifest.csv_header().trim_end());
    let _ = writeln!(txt, "fixed-sample cases: {} (joint power {:.4}, alternative correlation {:.4})",
                     summary.fixed_sample_size, summary.fixed_power, summary.alt_correlation);
    let _ = writeln!(txt, "\nlooks  inflation  max cases");
    for m in &max_sample_sizes {
        let _ = writeln!(txt, "{:>5}  {:>9.5}  {:>9}", m.looks, m.inflation_factor, m.max);
    }
    let _ = writeln!(txt, "\nboundaries for {} look(s), drift {:.5}", spec.looks, summary.boundaries.drift);
    let _ = writeln!(txt, "look  fraction  cases  efficacy  futility");
    for k in 0..spec.looks {
        let b = &summary.boundaries;
        let _ = writeln!(txt, "{:>4}  {:>8.4}  {:>5}  {:>8.5}  {:>8.5}", k + 1, b.fractions[k], summary.look_sizes[k],
                         b.efficacy[k], b.futility[k]);
    }
    print!("{}", txt.lines().skip(4).collect::<Vec<_>>().join("\n") + "\n");
    out.json("design.json", &DesignReport { design: summary, max_sample_sizes })?;
    out.write("design.txt", &txt)
}

fn oc_sim(mut loaded: Loaded, seed: Option<u64>, reps: Option<usize>, out: &mut Output) -> Result<()> {
    let replications = reps.or(take(&mut loaded.table, "replications")?).unwrap_or(10_000);
    let cfg_seed: Option<u64> = take(&mut loaded.table, "seed")?;
    let seed = seed.or(cfg_seed).unwrap_or(0);
    let look_counts: Vec<usize> = take(&mut loaded.table, "look_counts")?.unwrap_or_else(|| vec![1, 2, 3, 4]);
    let cells: Vec<[f64; 2]> = take(&mut loaded.table, "cells")?
        .unwrap_or_else(|| vec![[0.90, 0.80], [0.95, 0.80], [0.90, 0.90], [0.95, 0.90]]);
    let spec = design_spec(loaded.table)?;
    out.manifest.seed = Some(seed);
    let mut csv = String::from(
        "looks,npv,ppv,max_cases,p_reject,p_reject_se,expected_cases,expected_cases_se,stop_reject_by_look,stop_futility_by_look\n",
    );
    for &j in &look_counts {
        let d = gs_design::design(&spec.with_looks(j))?;
        for &[npv, ppv] in &cells {
            let oc = gs_design::simulate_oc(&d, npv, ppv, replications, seed)?;
            let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
            let _ = writeln!(
                csv,
                "{j},{npv},{ppv},{},{},{},{},{},{},{}",
                oc.max_sample_size,
                oc.p_reject,
                oc.p_reject_se,
                oc.expected_n,
                oc.expected_n_se,
                join(&oc.stop_reject),
                join(&oc.stop_futility)
            );
        }
    }
    let provenance = vec![
        format!("replications per cell: {replications}"),
        format!("analysis densities: {:?}", spec.analysis_densities),
        "source: Monte Carlo (binomial and sample SEs alongside)".into(),
    ];
    out.csv("oc.csv", &provenance, &csv)
}
