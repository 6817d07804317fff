use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vince_core::runner::{self, ExperimentConfig, RunRecord};
use vince_core::Error;

/// Contrastive objectives as mutual-information estimators.
#[derive(Parser)]
#[command(name = "vince", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a config file.
    Run {
        /// Preset name or path to a config file.
        source: String,
        /// `key=value`, applied after the preset or file. Repeatable.
        #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Comma-separated seeds, replacing the configured list.
        #[arg(long)]
        seeds: Option<String>,
        /// Only run these variants. Repeatable.
        #[arg(long = "variant")]
        variants: Vec<String>,
        /// Output directory (default: `<output.dir>/<experiment>`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress per-run progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// List the built-in presets.
    ListPresets,
    /// Print every configuration key with its default.
    ListKeys,
    /// Print the resolved configuration in the config-file format.
    ShowConfig {
        source: String,
        #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run the fast invariant suite.
    Check,
}

fn resolve(source: &str, overrides: &[String], seeds: Option<&str>, variants: &[String]) -> Result<ExperimentConfig, Error> {
    let mut cfg = runner::load(source)?;
    for o in overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = seeds {
        cfg.set("seeds", s)?;
    }
    if !variants.is_empty() {
        for v in variants {
            if !cfg.variants.iter().any(|x| &x.label == v) {
                return Err(Error::Config(format!("`{}` has no variant `{v}`", cfg.name)));
            }
        }
        cfg.variants.retain(|x| variants.contains(&x.label));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn progress(r: &RunRecord) {
    eprintln!(
        "{:<24} seed {:<3} mi {:>10.6} knn {} logistic {} ({:.1}s)",
        r.variant,
        r.seed,
        r.final_mi,
        fmt_opt(r.knn_accuracy),
        fmt_opt(r.logistic_accuracy),
        r.wall_seconds
    );
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) => ExitCode::from(1),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::ListPresets => {
            for (name, about) in runner::PRESETS {
                println!("{name:<20} {about}");
            }
            ExitCode::SUCCESS
        }
        Command::ListKeys => {
            for (k, v) in ExperimentConfig::default().entries() {
                println!("{k} = {v}");
            }
            ExitCode::SUCCESS
        }
        Command::ShowConfig { source, overrides } => match resolve(&source, &overrides, None, &[]) {
            Ok(cfg) => {
                print!("{}", cfg.to_text());
                ExitCode::SUCCESS
            }
            Err(e) => exit_for(&e),
        },
        Command::Check => {
            let results = runner::run_checks();
            let mut ok = true;
            for c in &results {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Command::Run {
            source,
            overrides,
            seeds,
            variants,
            out,
            quiet,
        } => {
            let cfg = match resolve(&source, &overrides, seeds.as_deref(), &variants) {
                Ok(c) => c,
                Err(e) => return exit_for(&e),
            };
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir).join(&cfg.name));
            let mut report = |r: &RunRecord| {
                if !quiet {
                    progress(r);
                }
            };
            match runner::run_experiment(&cfg, Some(&dir), &mut report) {
                Ok(records) => {
                    println!("{} runs written to {}", records.len(), dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => exit_for(&e),
            }
        }
    }
}
