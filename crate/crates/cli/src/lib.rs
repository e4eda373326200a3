//! The `hbmlab` command line: config parsing, subcommand dispatch and
//! artifact directories with reproducibility manifests.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::{Action, Characterization, Failure};
use config::{Emit, ParseError};
use output::{Artifacts, Manifest, Versions};

#[derive(Debug, Parser)]
#[command(name = "hbmlab", version, about = "HBM2 read-disturbance simulator and characterization harness")]
pub struct Cli {
    /// Config file (`[section]` headers, `key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory; overrides `run.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Concurrent device instances; overrides `run.jobs`.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Use the full row counts instead of the desk-scale selection.
    #[arg(long, global = true)]
    pub paper_scale: bool,
    /// Keep the TRR configuration out of every log and manifest.
    #[arg(long, global = true)]
    pub trr_hidden: bool,
    /// Record timing violations instead of failing on them.
    #[arg(long, global = true)]
    pub permissive_timing: bool,
    /// Extra `section.key=value` override; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Run a command trace on the configured device.
    Simulate { trace: PathBuf },
    /// Run a characterization campaign.
    Characterize {
        #[arg(value_enum)]
        kind: Characterization,
    },
    /// Infer the TRR mechanism through the retention side channel.
    Probe,
    /// Dummy-row TRR bypass campaign.
    Bypass,
    /// Bitflips per ECC word.
    EccHist,
    /// Fit the fault profile to anchor statistics (rowhammer anchors by default).
    FitProfile { anchors: Option<PathBuf> },
    /// Check a command trace against the timing rules.
    ValidateTrace { trace: PathBuf },
}

impl Sub {
    fn action(&self) -> Action {
        match self {
            Sub::Simulate { trace } => Action::Simulate { trace: trace.clone() },
            Sub::Characterize { kind } => Action::Characterize(*kind),
            Sub::Probe => Action::Probe,
            Sub::Bypass => Action::Bypass,
            Sub::EccHist => Action::EccHist,
            Sub::FitProfile { anchors } => Action::FitProfile { anchors: anchors.clone() },
            Sub::ValidateTrace { trace } => Action::ValidateTrace { trace: trace.clone() },
        }
    }
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String, toml::Value)>, ParseError> {
    let mut out = cli.set.iter().map(|s| config::parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    let mut push = |sec: &str, key: &str, v: toml::Value| out.push((sec.into(), key.into(), v));
    if let Some(s) = cli.seed {
        let v = i64::try_from(s).map_err(|_| ParseError {
            file: None,
            line: None,
            msg: format!("seed {s} exceeds {}", i64::MAX),
        })?;
        push("run", "seed", toml::Value::Integer(v));
    }
    if let Some(o) = &cli.out {
        push("run", "out", toml::Value::String(o.display().to_string()));
    }
    if let Some(j) = cli.jobs {
        push("run", "jobs", toml::Value::Integer(j as i64));
    }
    if cli.paper_scale {
        push("run", "scale", toml::Value::String("paper".into()));
    }
    if cli.trr_hidden {
        push("run", "trr_hidden", toml::Value::Boolean(true));
    }
    if cli.permissive_timing {
        push("device", "strict_timing", toml::Value::Boolean(false));
    }
    Ok(out)
}

/// Runs the command line and returns the process exit status.
pub fn run(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let parsed = overrides(&cli).and_then(|ov| match &cli.config {
        Some(p) => config::parse_config_file(p, &ov),
        None => config::parse_config("", std::path::Path::new("."), &ov),
    });
    let parsed = match parsed {
        Ok(p) => p,
        Err(e) => {
            eprintln!("config error: {e}");
            return 2;
        }
    };
    match dispatch(&cli.command.action(), &parsed, &args) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}

/// Runs one action into the configured artifact directory, adds the manifest
/// and returns the directory. Nothing is left behind on failure.
pub fn dispatch(action: &Action, parsed: &config::Parsed, args: &[String]) -> Result<PathBuf, Failure> {
    let cfg = &parsed.config;
    let started = Instant::now();
    let mut art = Artifacts::create(&cfg.out)?;
    commands::execute(action, cfg, &mut art)?;
    let emit = Emit { inline_profile: true, hide_trr: cfg.trr_hidden, results_only: false };
    let text = config::serialize(cfg, emit);
    let hashed = config::serialize(cfg, Emit { results_only: true, ..emit });
    let manifest = Manifest {
        command: action.name(),
        args: args.to_vec(),
        seed: cfg.seed,
        config_sha256: output::sha256_hex(&hashed),
        defaults: config::default_values(cfg, &parsed.defaulted, emit),
        config: text,
        trr_hidden: cfg.trr_hidden,
        versions: Versions::current(),
        jobs: cfg.jobs,
        outputs: art.names(),
        wall_clock_s: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Campaign(e.to_string()))?;
    art.write("manifest.json", &(json + "\n"))?;
    let dir = art.dir().to_path_buf();
    art.commit();
    Ok(dir)
}
