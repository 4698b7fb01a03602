//! Batch entry point. Every run writes `manifest.json` into the output
//! directory, also on failure, and exits 0 on success, 1 on configuration or
//! precondition errors and 2 on numeric failures.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{restricted_constants, run_rate_study, theory_checks, Scenario};
use crate::family::{FamilyDescriptor, FamilyKind, ModelFamily};
use crate::instances::shipped_families;
use crate::marginal::exact_posterior_table;
use crate::prior::{PriorConfig, PriorSampler};
use crate::rng::stream;
use crate::sampler::{run_chains, ChainConfig};

pub const DEFAULT_CAP: u64 = 1_000_000;

#[derive(Parser, Debug)]
#[command(name = "structbayes", version, about = "Bayesian model selection for structured linear models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Enumeration cap for exact posteriors.
    #[arg(long, global = true)]
    pub cap: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Draw (tau, Z, Q) from the prior; writes prior_draws.jsonl.
    SamplePrior,
    /// Enumerate the posterior; writes posterior_table.csv and index_posterior.csv.
    PosteriorExact,
    /// Collapsed Metropolis-Hastings; writes draws_chain<i>.jsonl and diagnostics.json.
    PosteriorMcmc,
    /// Rate-scaling study; writes replicates.csv, summary.csv and plot_data.json.
    RateStudy,
    /// Condition checks and Pythagorean residuals; writes theory_report.json.
    TheoryCheck,
    /// Exact restricted eigenvalue and compatibility constants; writes restricted_constants.json.
    RestrictedConstants,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SamplePrior => "sample-prior",
            Command::PosteriorExact => "posterior-exact",
            Command::PosteriorMcmc => "posterior-mcmc",
            Command::RateStudy => "rate-study",
            Command::TheoryCheck => "theory-check",
            Command::RestrictedConstants => "restricted-constants",
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorRun {
    family: FamilyDescriptor,
    #[serde(default)]
    prior: PriorConfig,
    draws: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExactRun {
    family: FamilyDescriptor,
    y: Vec<f64>,
    #[serde(default)]
    prior: PriorConfig,
    cap: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct McmcRun {
    family: FamilyDescriptor,
    y: Vec<f64>,
    chain: ChainConfig,
    #[serde(default = "one")]
    chains: usize,
}

fn one() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TheoryRun {
    #[serde(default)]
    families: Option<Vec<FamilyDescriptor>>,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantsRun {
    /// Row-major design; without it `n`, `p`, `design_kind` and `design_seed` generate one.
    design: Option<Vec<Vec<f64>>>,
    n: Option<usize>,
    p: Option<usize>,
    design_kind: Option<crate::family::DesignKind>,
    design_seed: Option<u64>,
    s_star: usize,
    #[serde(default = "half")]
    delta: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    version: &'static str,
    config_sha256: Option<String>,
    seed: Option<u64>,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    outputs: Vec<String>,
}

/// Exit code and manifest status for an error.
pub fn classify(err: &Error) -> (i32, &'static str) {
    match err {
        Error::Numeric(_) => (2, "numeric_failure"),
        Error::Io(_) => (1, "io_error"),
        _ => (1, "config_error"),
    }
}

struct Run {
    out: PathBuf,
    outputs: Vec<String>,
    seed: Option<u64>,
}

impl Run {
    fn create(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(fs::File::create(self.out.join(name))?))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

fn parse<T: for<'de> Deserialize<'de>>(text: Option<&str>) -> Result<T> {
    let text = text.ok_or_else(|| Error::config("--config is required for this subcommand"))?;
    Ok(serde_json::from_str(text)?)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value in {what}")));
    }
    Ok(())
}

fn dispatch(cli: &Cli, text: Option<&str>, run: &mut Run) -> Result<()> {
    match cli.command {
        Command::SamplePrior => {
            let mut cfg: PriorRun = parse(text)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            run.seed = Some(cfg.seed);
            let family = cfg.family.build()?;
            let mut sampler = PriorSampler::new(&family, cfg.prior)?;
            let mut rng = stream(cfg.seed);
            let mut w = run.create("prior_draws.jsonl")?;
            for i in 0..cfg.draws {
                let d = sampler.draw(&mut rng)?;
                check_finite(&d.q, &format!("prior draw {i}"))?;
                check_finite(&d.signal, &format!("prior draw {i}"))?;
                serde_json::to_writer(&mut w, &d)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        Command::PosteriorExact => {
            let cfg: ExactRun = parse(text)?;
            check_finite(&cfg.y, "y")?;
            let family = cfg.family.build()?;
            let cap = cli.cap.or(cfg.cap).unwrap_or(DEFAULT_CAP);
            let table = exact_posterior_table(&family, &cfg.y, &cfg.prior, cap)?;
            let mut w = run.create("posterior_table.csv")?;
            table.write_csv(&mut w)?;
            w.flush()?;
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(run.create("index_posterior.csv")?);
            w.write_record(["tau", "probability"])?;
            for (tau, p) in table.index_marginals() {
                w.write_record([tau.to_string(), p.to_string()])?;
            }
            w.flush()?;
        }
        Command::PosteriorMcmc => {
            let mut cfg: McmcRun = parse(text)?;
            check_finite(&cfg.y, "y")?;
            if cfg.chains == 0 {
                return Err(Error::config("chains must be at least 1"));
            }
            cfg.chain.seed = cli.seed.unwrap_or(cfg.chain.seed);
            run.seed = Some(cfg.chain.seed);
            let family = cfg.family.build()?;
            let outputs = run_chains(&family, &cfg.y, &cfg.chain, cfg.chains)?;
            for (c, o) in outputs.iter().enumerate() {
                let mut w = run.create(&format!("draws_chain{c}.jsonl"))?;
                o.write_jsonl(&mut w)?;
                w.flush()?;
            }
            let diags: Vec<_> = outputs.iter().map(|o| &o.diagnostics).collect();
            run.write_json("diagnostics.json", &diags)?;
        }
        Command::RateStudy => {
            let text = text.ok_or_else(|| Error::config("--config is required for this subcommand"))?;
            let mut scenario = Scenario::from_json(text)?;
            scenario.seed = cli.seed.unwrap_or(scenario.seed);
            scenario.cap = cli.cap.unwrap_or(scenario.cap);
            run.seed = Some(scenario.seed);
            let report = run_rate_study(&scenario)?;
            let mut w = run.create("replicates.csv")?;
            report.write_replicates_csv(&mut w)?;
            w.flush()?;
            let mut w = run.create("summary.csv")?;
            report.write_summary_csv(&mut w)?;
            w.flush()?;
            run.write_json("plot_data.json", &report.plot_data())?;
        }
        Command::TheoryCheck => {
            let cfg: TheoryRun = match text {
                Some(t) => serde_json::from_str(t)?,
                None => TheoryRun { families: None, seed: 0 },
            };
            let seed = cli.seed.unwrap_or(cfg.seed);
            run.seed = Some(seed);
            let families: Vec<ModelFamily> = match &cfg.families {
                Some(ds) => ds.iter().map(|d| d.build()).collect::<Result<_>>()?,
                None => shipped_families(),
            };
            let report = theory_checks(&families, seed)?;
            run.write_json("theory_report.json", &report)?;
            if !report.passed() {
                let failed: Vec<&str> = report.families.iter().filter(|f| !f.passed).map(|f| f.family).collect();
                return Err(Error::config(format!("theory checks failed for [{}]", failed.join(", "))));
            }
        }
        Command::RestrictedConstants => {
            let cfg: ConstantsRun = parse(text)?;
            let desc = FamilyDescriptor {
                family: Some(FamilyKind::SparseRegression),
                n: cfg.n,
                p: cfg.p,
                design: cfg.design,
                design_kind: cfg.design_kind,
                design_seed: cfg.design_seed,
                ..Default::default()
            };
            let ModelFamily::SparseRegression { design, .. } = desc.build()? else { unreachable!() };
            let r = restricted_constants(&design, cfg.s_star, cfg.delta)?;
            check_finite(&[r.kappa1, r.kappa2], "restricted constants")?;
            run.write_json("restricted_constants.json", &r)?;
        }
    }
    Ok(())
}

fn write_manifest(out: &Path, manifest: &Manifest<'_>) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(out.join("manifest.json"), text)
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// Run a parsed invocation and return the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let config = cli.config.as_ref().map(|p| fs::read(p).map_err(|e| Error::config(format!("{}: {e}", p.display()))));
    let config_sha256 = match &config {
        Some(Ok(bytes)) => Some(hex::encode(Sha256::digest(bytes))),
        _ => None,
    };
    let mut run = Run { out: cli.out.clone(), outputs: Vec::new(), seed: cli.seed };

    let result = (|| -> Result<()> {
        fs::create_dir_all(&cli.out)?;
        let text = match &config {
            Some(Ok(bytes)) => Some(String::from_utf8(bytes.clone()).map_err(|_| Error::config("config is not UTF-8"))?),
            Some(Err(e)) => return Err(e.clone()),
            None => None,
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| dispatch(cli, text.as_deref(), &mut run))
    })();

    let (code, status, message) = match &result {
        Ok(()) => (0, "ok", None),
        Err(e) => {
            let (code, status) = classify(e);
            (code, status, Some(one_line(&e.to_string())))
        }
    };
    let manifest = Manifest {
        subcommand: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256,
        seed: run.seed,
        status,
        message: message.clone(),
        outputs: run.outputs.clone(),
    };
    if let Err(e) = write_manifest(&cli.out, &manifest) {
        eprintln!("{{\"status\":\"io_error\",\"message\":{}}}", serde_json::Value::String(one_line(&e.to_string())));
        return 1;
    }
    if let Some(m) = message {
        eprintln!("{{\"status\":\"{status}\",\"message\":{}}}", serde_json::Value::String(m));
    }
    code
}

/// Parse arguments and run; clap usage errors exit 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
    }
}

