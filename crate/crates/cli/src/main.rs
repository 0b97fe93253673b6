use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tomor::config::{preset_text, RunConfig, PRESETS};
use tomor::driver::run_optimization;
use tomor::output::{summary_text, write_fields, RunFiles};

/// Largest final constraint value still counted as feasible.
const FEASIBILITY_TOL: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "tomor", version, about = "Thermal topology optimization with reduced-order models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an optimization and write fields, the iteration log and a summary.
    Run {
        /// Configuration file; `-` reads nothing and relies on --preset.
        config: String,
        #[arg(long)]
        preset: Option<String>,
        /// `section.key=value`, repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a configuration and print it fully resolved.
    Validate {
        config: String,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List the built-in presets, or print one.
    Presets { name: Option<String> },
}

fn load(config: &str, preset: Option<&str>, overrides: &[String]) -> Result<RunConfig> {
    let text = if config == "-" {
        String::new()
    } else {
        fs::read_to_string(config).with_context(|| format!("reading {config}"))?
    };
    RunConfig::load(&text, preset, overrides).with_context(|| format!("in {config}"))
}

fn run(config: &str, preset: Option<&str>, overrides: &[String], out: PathBuf) -> Result<bool> {
    let cfg = load(config, preset, overrides)?;
    let mut files = RunFiles::create(&out, cfg.checkpoint_interval)?;
    fs::write(out.join("config.toml"), cfg.render()).context("writing resolved config")?;
    let label = cfg.solver.label();
    eprintln!("running {label} for {} iterations into {}", cfg.max_iterations, out.display());
    let result = run_optimization(&cfg, &mut files)?;

    let grid = cfg.build_grid()?;
    write_fields(
        &out.join("final.vtk"),
        &grid,
        &[
            ("density", &result.filtered_design),
            ("design", &result.design),
            ("temperature", &result.temperature),
        ],
    )?;
    let volume = result.filtered_design.iter().sum::<f64>() / result.filtered_design.len() as f64;
    let summary = summary_text(&label, &result.history, volume);
    fs::write(out.join("summary.txt"), &summary).context("writing summary")?;
    print!("{summary}");

    let complete = result.history.len() == cfg.max_iterations;
    let feasible = result
        .history
        .last()
        .map_or(true, |r| r.constraint <= FEASIBILITY_TOL);
    if !feasible {
        eprintln!("final constraint exceeds {FEASIBILITY_TOL:e}");
    }
    Ok(complete && feasible)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            preset,
            overrides,
            out,
        } => run(&config, preset.as_deref(), &overrides, out),
        Command::Validate {
            config,
            preset,
            overrides,
        } => load(&config, preset.as_deref(), &overrides).map(|c| {
            print!("{}", c.render());
            true
        }),
        Command::Presets { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(true)
        }
        Command::Presets { name: Some(name) } => match preset_text(&name) {
            Some(text) => {
                print!("{}", text.trim_start());
                Ok(true)
            }
            None => Err(anyhow::anyhow!("unknown preset '{name}' (available: {})", PRESETS.join(", "))),
        },
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
