//! `grflab` command-line driver.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grflab::io::pipeline::{
    estimate_passed, execute_run, load_run, monitor_suite, render_report, store_reports, verify_suite,
};
use grflab::io::{parse_config_with, read_metrics, Overrides, RunConfig, TEMPLATE};
use grflab::Error;

const EXIT_VERDICT: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DEGENERATE: u8 = 3;

#[derive(Parser)]
#[command(name = "grflab", version, about = "Numerical laboratory for the generalized Ricci flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Args)]
struct Opts {
    /// Run configuration file.
    #[arg(long, global = true, value_name = "PATH", default_value = "grflab.toml")]
    config: PathBuf,
    /// Keep every K-th step as a snapshot (0 keeps only the endpoints).
    #[arg(long, global = true, value_name = "K")]
    snapshot_every: Option<usize>,
    /// Replace grid.n from the configuration.
    #[arg(long, global = true, value_name = "N")]
    resolution_override: Option<usize>,
    /// Print only errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a template configuration.
    Init,
    /// Integrate the flow and write snapshots and metrics.
    Run,
    /// Evaluate the enabled residual checks on stored snapshots.
    Verify,
    /// Evaluate the enabled estimate monitors on stored snapshots.
    Monitor,
    /// Render a plain-text summary of stored metrics.
    Report,
}

/// Terminal outcome of a subcommand.
enum Failure {
    Verdict(String),
    Degenerate(String),
    Input(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Degenerate { .. } => Failure::Degenerate(e.to_string()),
            other => Failure::Input(other),
        }
    }
}

fn say(opts: &Opts, msg: impl AsRef<str>) {
    if !opts.quiet {
        println!("{}", msg.as_ref());
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("GRFLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Input(Error::Config {
            key: "GRFLAB_THREADS".into(),
            message: format!("expected a positive integer, got `{raw}`"),
        })
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Input(Error::Argument(e.to_string())))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn load_config(opts: &Opts) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(&opts.config).map_err(|e| {
        Failure::Input(Error::Config { key: "--config".into(), message: format!("{}: {e}", opts.config.display()) })
    })?;
    let overrides = Overrides { resolution: opts.resolution_override, snapshot_every: opts.snapshot_every };
    let mut cfg = parse_config_with(&text, overrides)?;
    let base = opts.config.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    cfg.resolve_paths(base);
    Ok(cfg)
}

fn init(opts: &Opts) -> Result<(), Failure> {
    if opts.config.exists() {
        return Err(Failure::Input(Error::Config {
            key: "--config".into(),
            message: format!("{} already exists", opts.config.display()),
        }));
    }
    fs::write(&opts.config, TEMPLATE).map_err(Error::from)?;
    say(opts, format!("wrote {}", opts.config.display()));
    Ok(())
}

fn run(opts: &Opts) -> Result<(), Failure> {
    let cfg = load_config(opts)?;
    fs::create_dir_all(&cfg.output.dir).map_err(Error::from)?;
    let traj = execute_run(&cfg)?;
    let last = traj.diagnostics.last();
    say(
        opts,
        format!(
            "{} steps to t = {}, {} snapshots in {}",
            last.map_or(0, |d| d.step),
            traj.last().time,
            traj.snapshots.len(),
            cfg.output.snapshots.display()
        ),
    );
    if let Some(d) = last {
        say(opts, format!("sup|Rm| {:.6e}  sup|H| {:.6e}  min eig g {:.6e}", d.sup_rm, d.sup_h, d.min_eig_g));
    }
    match traj.failure {
        Some(f) => Err(Failure::Degenerate(format!("step {} at t = {}: {}", f.step, f.time, f.message))),
        None => Ok(()),
    }
}

fn verify(opts: &Opts) -> Result<(), Failure> {
    let cfg = load_config(opts)?;
    let traj = load_run(&cfg)?;
    let reports = verify_suite(&cfg, &traj)?;
    store_reports(&cfg, Some(&reports), None)?;
    let mut failed = Vec::new();
    for r in &reports {
        say(
            opts,
            format!(
                "{:<20} {:<14} residual {:.3e}  tolerance {:.3e}",
                r.quantity.name(),
                format!("{:?}", r.verdict).to_lowercase(),
                r.sup_residual,
                r.tolerance
            ),
        );
        if !r.verdict.passed() {
            failed.push(r.quantity.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verdict(format!("failed checks: {}", failed.join(", "))))
    }
}

fn monitor(opts: &Opts) -> Result<(), Failure> {
    let cfg = load_config(opts)?;
    let traj = load_run(&cfg)?;
    let reports = monitor_suite(&cfg, &traj)?;
    store_reports(&cfg, None, Some(&reports))?;
    let mut failed = Vec::new();
    for r in &reports {
        let status = if !r.hypotheses_hold {
            "unjudged"
        } else if r.bound_satisfied {
            "pass"
        } else {
            "fail"
        };
        say(
            opts,
            format!("{:<20} {:<9} constant {:.3e}  margin {:.3e}", r.kind.name(), status, r.fitted_constant, r.margin),
        );
        if !estimate_passed(r) {
            failed.push(r.kind.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verdict(format!("failed monitors: {}", failed.join(", "))))
    }
}

fn report(opts: &Opts) -> Result<(), Failure> {
    let cfg = load_config(opts)?;
    let records = read_metrics(&cfg.output.metrics)?;
    let (text, pass) = render_report(&records);
    fs::write(&cfg.output.report, &text).map_err(Error::from)?;
    if !opts.quiet {
        print!("{text}");
    }
    if pass {
        Ok(())
    } else {
        Err(Failure::Verdict("stored verdicts include failures".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = &cli.opts;
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Init => init(opts),
        Command::Run => run(opts),
        Command::Verify => verify(opts),
        Command::Monitor => monitor(opts),
        Command::Report => report(opts),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verdict(msg)) => {
            eprintln!("error[verdict]: {msg}");
            ExitCode::from(EXIT_VERDICT)
        }
        Err(Failure::Degenerate(msg)) => {
            eprintln!("error[degenerate]: {msg}");
            ExitCode::from(EXIT_DEGENERATE)
        }
        Err(Failure::Input(Error::Config { key, message })) => {
            eprintln!("error[config]: {key}: {message}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error[input]: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
