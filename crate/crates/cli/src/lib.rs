//! Command-line front end: parse a run specification, dispatch to sampling,
//! oracle or verification code, and write deterministic reports.
//!
//! Exit codes: 0 success, 1 verification failure, 2 invalid input (bad
//! config, unknown suite, violated hypothesis, unwritable output), 3
//! numerical or truncation failure.

pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use tiltlab::error::Error;
use tiltlab::experiments::{self, CriterionReport, LongRun, Schedule};
use tiltlab::io::{self, ConfigJson, CounterJson, OracleReport, RunManifest};
use tiltlab::sampler::{self, SampleSet};
use tiltlab::stats;
use tiltlab::{EnsembleConfig, IncrementModel, OracleTable};

use svg::Series;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const SUITES: [&str; 14] = [
    "ballot",
    "tail",
    "monotone",
    "gibbs",
    "balance",
    "shift",
    "tilt",
    "drop",
    "envelope",
    "scaling",
    "fosd",
    "sampler",
    "stationarity",
    "concentration",
];

#[derive(Debug, Parser)]
#[command(name = "tiltlab", version, about = "Area-tilted line ensembles: sampling, exact oracles and verification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Glauber chains and write samples and a run manifest.
    Sample(RunArgs),
    /// Exact partition function and one-point marginals.
    Oracle(RunArgs),
    /// Run a verification suite.
    Verify(RunArgs),
    /// Re-render a saved verification report.
    Report(ReportArgs),
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// JSON run specification.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sweeps: Option<u64>,
    #[arg(long)]
    pub burnin: Option<u64>,
    #[arg(long)]
    pub thin: Option<u64>,
    #[arg(long)]
    pub chains: Option<u32>,
    /// Suite name (verify only).
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Output formats; repeat or comma-separate.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv, Format::Json])]
    pub format: Vec<Format>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct ReportArgs {
    /// Report JSON written by `verify`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Csv])]
    pub format: Vec<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

/// On-disk run specification.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    #[serde(default)]
    pub ensemble: Option<ConfigJson>,
    /// Lower configuration of a monotone pair.
    #[serde(default)]
    pub compare: Option<ConfigJson>,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub sweeps: Option<u64>,
    pub burnin: Option<u64>,
    pub thin: Option<u64>,
    pub chains: Option<u32>,
    /// Height cap of the oracle, in grid units.
    pub cap: Option<i32>,
    /// Heat-bath rounds of the warm start for long runs.
    pub warm_rounds: Option<usize>,
    /// Sweeps between heat-bath rounds in long runs (0: Glauber only).
    pub heat_bath_every: Option<u64>,
}

/// Fully resolved run: flags over file values over defaults.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub config: Option<EnsembleConfig>,
    pub compare: Option<EnsembleConfig>,
    pub seed: Option<u64>,
    pub sweeps: u64,
    pub burnin: u64,
    pub thin: u64,
    pub chains: u32,
    pub cap: Option<i32>,
    pub warm_rounds: usize,
    pub heat_bath_every: u64,
    pub suite: Option<String>,
    pub out: PathBuf,
    pub formats: Vec<Format>,
}

pub const DEFAULT_SWEEPS: u64 = 10_000;
pub const DEFAULT_THIN: u64 = 1;
pub const DEFAULT_CHAINS: u32 = 4;
pub const DEFAULT_WARM_ROUNDS: usize = 10;

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Numerical(_) | Error::TooLarge { .. } | Error::InsufficientData(_) => EXIT_NUMERICAL,
            _ => EXIT_INVALID,
        };
        Self { code, message: e.to_string() }
    }
}

fn invalid(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_INVALID, message: message.into() }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Build an ensemble from its JSON form, enforcing `a > 0`.
pub fn build_config(json: &ConfigJson) -> CliResult<EnsembleConfig> {
    if !(json.a > 0.0) {
        return Err(invalid(format!("invalid configuration: a = {} must be positive", json.a)));
    }
    Ok(json.build()?)
}

/// Read the spec file (if any) and merge it with the flags.
pub fn parse_config(args: &RunArgs) -> CliResult<RunSpec> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
            io::from_json_str::<SpecFile>(&text)?
        }
        None => SpecFile::default(),
    };
    let config = file.ensemble.as_ref().map(build_config).transpose()?;
    let compare = file.compare.as_ref().map(build_config).transpose()?;
    let run = &file.run;
    let sweeps = args.sweeps.or(run.sweeps).unwrap_or(DEFAULT_SWEEPS);
    let burnin = args.burnin.or(run.burnin).unwrap_or(sweeps / 5);
    let thin = args.thin.or(run.thin).unwrap_or(DEFAULT_THIN);
    let chains = args.chains.or(run.chains).unwrap_or(DEFAULT_CHAINS);
    if burnin > sweeps {
        return Err(invalid(format!("burnin {burnin} exceeds sweeps {sweeps}")));
    }
    if thin == 0 || chains == 0 {
        return Err(invalid("thin and chains must be at least 1"));
    }
    Ok(RunSpec {
        config,
        compare,
        seed: args.seed.or(run.seed),
        sweeps,
        burnin,
        thin,
        chains,
        cap: run.cap,
        warm_rounds: run.warm_rounds.unwrap_or(DEFAULT_WARM_ROUNDS),
        heat_bath_every: run.heat_bath_every.unwrap_or(0),
        suite: args.suite.clone(),
        out: args.out.clone(),
        formats: args.format.clone(),
    })
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Sample(a) => parse_config(&a).and_then(|s| cmd_sample(&s)),
        Command::Oracle(a) => parse_config(&a).and_then(|s| cmd_oracle(&s)),
        Command::Verify(a) => parse_config(&a).and_then(|s| cmd_verify(&s)),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn require_config(spec: &RunSpec) -> CliResult<&EnsembleConfig> {
    spec.config.as_ref().ok_or_else(|| invalid("the spec file needs an \"ensemble\" section"))
}

fn require_seed(spec: &RunSpec) -> CliResult<u64> {
    spec.seed.ok_or_else(|| invalid("a seed is required (--seed or run.seed)"))
}

fn short_hash(config: &EnsembleConfig) -> String {
    io::config_hash(config)[..12].to_string()
}

struct Outputs<'a> {
    dir: &'a Path,
    formats: &'a [Format],
}

impl Outputs<'_> {
    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        fs::create_dir_all(self.dir).map_err(|e| invalid(format!("{}: {e}", self.dir.display())))?;
        let path = self.dir.join(name);
        io::write_atomic(&path, bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serialises");
    v.push(b'\n');
    v
}

fn cmd_sample(spec: &RunSpec) -> CliResult<i32> {
    let config = require_config(spec)?;
    let seed = require_seed(spec)?;
    let samples = sampler::run_chains(config, seed, spec.chains, spec.sweeps, spec.burnin, spec.thin)?;
    let stem = format!("{}-s{seed}", short_hash(config));
    let out = Outputs { dir: &spec.out, formats: &spec.formats };
    if out.wants(Format::Csv) {
        out.write(&format!("samples-{stem}.csv"), io::samples_csv(&samples).as_bytes())?;
    }
    if out.wants(Format::Json) {
        let manifest = RunManifest {
            config_hash: io::config_hash(config),
            seed,
            sweeps: spec.sweeps,
            burnin: spec.burnin,
            thin: spec.thin,
            chains: spec.chains,
            samples: samples.len(),
            counters: samples.counters().iter().map(CounterJson::from).collect(),
        };
        out.write(&format!("run-{stem}.json"), &to_json(&manifest))?;
    }
    if out.wants(Format::Svg) && !samples.is_empty() {
        out.write(&format!("profile-{stem}.svg"), median_profile_svg(&samples)?.as_bytes())?;
    }
    Ok(EXIT_OK)
}

fn median_profile_svg(samples: &SampleSet) -> CliResult<String> {
    let mut series = Vec::new();
    for i in 0..samples.n() {
        let mut points = Vec::with_capacity(samples.width());
        for col in 0..samples.width() {
            let vals: Vec<i32> = (0..samples.len()).map(|k| samples.height(k, i, col)).collect();
            let m = stats::grouped_quantile(&vals, 0.5)? * samples.grid_step();
            points.push(((samples.left() + col as i64) as f64, m));
        }
        series.push(Series { label: format!("curve {}", i + 1), points });
    }
    Ok(svg::line_plot("median heights", "site", "height", &series, false))
}

fn cmd_oracle(spec: &RunSpec) -> CliResult<i32> {
    let config = require_config(spec)?;
    let table = OracleTable::build(config, spec.cap)?;
    let report = OracleReport::from_table(&table)?;
    if !(report.z > 0.0) {
        return Err(Error::Numerical("partition function vanishes inside the height window".into()).into());
    }
    let stem = short_hash(config);
    let out = Outputs { dir: &spec.out, formats: &spec.formats };
    if out.wants(Format::Json) {
        out.write(&format!("oracle-{stem}.json"), &to_json(&report))?;
    }
    let g = config.grid_step();
    if out.wants(Format::Csv) {
        let mut csv = String::from("curve,site,height,prob\n");
        for m in &report.marginals {
            for (&h, &p) in m.heights.iter().zip(&m.probs) {
                csv.push_str(&format!("{},{},{},{:e}\n", m.curve, m.site, h as f64 * g, p));
            }
        }
        out.write(&format!("marginals-{stem}.csv"), csv.as_bytes())?;
    }
    if out.wants(Format::Svg) {
        let mid = config.left() + config.len() as i64 / 2;
        let series: Vec<Series> = report
            .marginals
            .iter()
            .filter(|m| m.site == mid)
            .map(|m| Series {
                label: format!("curve {}", m.curve + 1),
                points: m.heights.iter().zip(&m.probs).map(|(&h, &p)| (h as f64 * g, p)).collect(),
            })
            .collect();
        out.write(&format!("marginals-{stem}.svg"), svg::line_plot("midpoint marginals", "height", "probability", &series, false).as_bytes())?;
    }
    Ok(EXIT_OK)
}

/// Saved verification output: the report plus optional tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOutput {
    pub suite: String,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    pub report: CriterionReport,
    /// Named tables of `(x, y)` rows, e.g. survival curves or profiles.
    pub tables: BTreeMap<String, Vec<(f64, f64)>>,
}

fn long_schedule(spec: &RunSpec) -> Schedule {
    Schedule { sweeps: spec.sweeps, burnin: spec.burnin, thin: spec.thin, warm_rounds: spec.warm_rounds, heat_bath_every: spec.heat_bath_every }
}

fn default_or(spec: &RunSpec, fallback: impl FnOnce() -> tiltlab::Result<EnsembleConfig>) -> CliResult<EnsembleConfig> {
    match &spec.config {
        Some(c) => Ok(c.clone()),
        None => Ok(fallback()?),
    }
}

/// Run one suite; the report plus any tables worth plotting.
pub fn run_suite(name: &str, spec: &RunSpec) -> CliResult<VerifyOutput> {
    if !SUITES.contains(&name) {
        return Err(invalid(format!("unknown suite {name:?}; expected one of {}", SUITES.join(", "))));
    }
    let needs_seed = !matches!(name, "ballot" | "gibbs" | "balance" | "tilt");
    let seed = if needs_seed { Some(require_seed(spec)?) } else { spec.seed };
    let s = seed.unwrap_or(0);
    let mut tables = BTreeMap::new();
    let mut used_config = spec.config.clone();
    let report = match name {
        "ballot" => experiments::ballot()?,
        "gibbs" => experiments::gibbs()?,
        "tilt" => experiments::tilt()?,
        "balance" => match &spec.config {
            Some(c) => experiments::balance_for(c, spec.cap.unwrap_or_else(|| tiltlab::oracle::default_cap(c)))?,
            None => experiments::balance()?,
        },
        "shift" => experiments::shift(50, s)?,
        "fosd" => match (&spec.config, &spec.compare) {
            (Some(up), Some(down)) => {
                let cap = spec.cap.unwrap_or_else(|| tiltlab::oracle::default_cap(up));
                let out = tiltlab::oracle::fosd_check(up, down, cap)?;
                let mut r = CriterionReport::new("fosd");
                r.metric("worst_margin", out.worst_margin);
                r.passed = out.worst_margin >= experiments::FOSD_TOLERANCE;
                r
            }
            _ => experiments::fosd(10, s)?,
        },
        "monotone" => match (&spec.config, &spec.compare) {
            (Some(up), Some(down)) => {
                let steps = spec.sweeps * 2 * (up.n() * up.width().saturating_sub(2)) as u64;
                experiments::monotone_pair(up, down, steps, s)?
            }
            (None, None) => experiments::monotone(20, spec.sweeps.max(1) * 10, s)?,
            _ => return Err(invalid("monotone needs both \"ensemble\" and \"compare\", or neither")),
        },
        "sampler" => {
            let c = default_or(spec, experiments::small_pair_config)?;
            let r = experiments::sampler_vs_oracle(&c, spec.sweeps, s)?;
            used_config = Some(c);
            r
        }
        "concentration" => {
            let model = spec.config.as_ref().map_or_else(IncrementModel::lazy_srw, |c| c.model().clone());
            experiments::concentration(&model, &[256, 1024], spec.sweeps.max(100) as usize, s)?
        }
        "tail" | "drop" => {
            let c = default_or(spec, || experiments::tail_config(4096))?;
            let run = experiments::long_run(&c, s, spec.chains, long_schedule(spec))?;
            let r = if name == "tail" {
                tables.insert("survival".into(), survival_table(&run, &c)?);
                experiments::tail(&run, &c, None)?
            } else {
                experiments::drop(&run, &c, 0.25, 4.0)?
            };
            used_config = Some(c);
            r
        }
        "scaling" | "stationarity" | "envelope" => {
            let c = default_or(spec, || experiments::scaling_config(4, 4.0, 4096))?;
            let run = experiments::long_run(&c, s, spec.chains, long_schedule(spec))?;
            let r = match name {
                "scaling" => experiments::scaling(&run.samples, &c)?,
                "stationarity" => {
                    let q = c.len() as i64 / 4;
                    let p = stats::stationarity_profile(&run.samples, (c.left() + q, c.right() - q))?;
                    tables.insert("median_profile".into(), p.points.iter().map(|p| (p.site as f64, p.median)).collect());
                    experiments::stationarity(&run.samples, &c)?
                }
                _ => experiments::envelope(&run.samples, &c, &[6.0, 8.0, 10.0], 10.0, 4.0)?,
            };
            used_config = Some(c);
            r
        }
        _ => unreachable!("suite list checked above"),
    };
    Ok(VerifyOutput {
        suite: name.to_string(),
        config_hash: used_config.as_ref().map(io::config_hash),
        seed,
        report,
        tables,
    })
}

fn survival_table(run: &LongRun, config: &EnsembleConfig) -> CliResult<Vec<(f64, f64)>> {
    let h = tiltlab::ensemble::fluctuation_scale(config.a(), config.tilt_normalizer());
    let rs = experiments::tail_levels();
    let levels: Vec<f64> = rs.iter().map(|r| r * h).collect();
    let curve = stats::survival_curve(&run.midpoint, &levels)?;
    Ok(rs.into_iter().zip(curve.probs).collect())
}

fn cmd_verify(spec: &RunSpec) -> CliResult<i32> {
    let name = spec.suite.as_deref().ok_or_else(|| invalid("verify needs --suite"))?;
    let output = run_suite(name, spec)?;
    println!("{}", output.report);
    emit(&output, &spec.out, &spec.formats)?;
    Ok(if output.report.passed { EXIT_OK } else { EXIT_FAILED })
}

fn stem(output: &VerifyOutput) -> String {
    let hash = output.config_hash.as_deref().map_or("builtin", |h| &h[..12]);
    match output.seed {
        Some(s) => format!("{}-{hash}-s{s}", output.suite),
        None => format!("{}-{hash}", output.suite),
    }
}

/// Write the report in the requested formats.
pub fn emit(output: &VerifyOutput, dir: &Path, formats: &[Format]) -> CliResult<()> {
    let out = Outputs { dir, formats };
    let stem = stem(output);
    if out.wants(Format::Json) {
        out.write(&format!("verify-{stem}.json"), &to_json(output))?;
    }
    if out.wants(Format::Csv) {
        let mut csv = String::from("metric,value\n");
        csv.push_str(&format!("passed,{}\n", output.report.passed as u8));
        for (k, v) in &output.report.metrics {
            csv.push_str(&format!("{k},{v:e}\n"));
        }
        out.write(&format!("verify-{stem}.csv"), csv.as_bytes())?;
        for (name, rows) in &output.tables {
            let mut t = String::from("x,y\n");
            for (x, y) in rows {
                t.push_str(&format!("{x:e},{y:e}\n"));
            }
            out.write(&format!("{name}-{stem}.csv"), t.as_bytes())?;
        }
    }
    if out.wants(Format::Svg) {
        for (name, rows) in &output.tables {
            let log_y = name == "survival";
            let series = [Series { label: name.clone(), points: rows.clone() }];
            out.write(&format!("{name}-{stem}.svg"), svg::line_plot(name, "x", "y", &series, log_y).as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> CliResult<i32> {
    let text = fs::read_to_string(&args.input).map_err(|e| invalid(format!("{}: {e}", args.input.display())))?;
    let output: VerifyOutput = io::from_json_str(&text)?;
    println!("{}", output.report);
    emit(&output, &args.out, &args.format)?;
    Ok(EXIT_OK)
}
