use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hhgcoh::runner::{run_scenario, RunOptions, StageStatus, OUT_DIR_ENV};
use hhgcoh::scenario::{list_presets, parse_config, preset, Pipeline, Scenario};

/// High-order harmonic generation in gas jets.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Scenario file (TOML); the reference scenario when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root [default: scenario `output_dir`, then $HHGCOH_OUT_DIR, then ./hhgcoh-out].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Accepted for interface stability; every pipeline is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-atom dipole table, transition intensity and phase slopes.
    Table,
    /// Conversion efficiency over jet positions and intensities.
    Scan,
    /// Exit near field, far field and virtual focus.
    Propagate,
    /// Degree of spatial coherence at the exit.
    Coherence,
    /// Temporal and spectral profiles.
    Spectrum,
    /// Pulse compression and transform limit.
    Compress,
    /// Adiabatic versus carrier-resolved single-atom harmonic pulse.
    Nonadiabatic,
    /// Run a figure preset.
    Preset {
        id: String,
        /// Print the preset document instead of running it.
        #[arg(long)]
        print: bool,
    },
    /// List the figure presets.
    ListPresets,
}

fn load(cli: &Cli) -> Result<Scenario> {
    match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config(&text).with_context(|| format!("in {}", path.display()))
        }
        None => Ok(Scenario::default()),
    }
}

fn out_root(cli: &Cli, scenario: &Scenario) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| scenario.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("hhgcoh-out"))
}

fn execute(cli: &Cli, scenario: Scenario) -> Result<ExitCode> {
    let options = RunOptions::new(out_root(cli, &scenario));
    let manifest = run_scenario(&scenario, &options)?;
    let dir = options.run_dir(&scenario);
    println!("{} ({}) -> {}", manifest.scenario, manifest.pipeline, dir.display());
    if let Some(t) = &manifest.table {
        println!(
            "  table {} ({})",
            &t.key[..12],
            if t.cache_hit { "cached" } else { "built" }
        );
    }
    println!("  {} files in {:.1} s", manifest.files.len(), manifest.wall_time_s);
    let failures = manifest.failures();
    for s in &failures {
        match &s.status {
            StageStatus::Failed(msg) => println!("  stage {} failed: {msg}", s.name),
            _ => println!("  stage {} skipped", s.name),
        }
    }
    Ok(if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    if let Some(seed) = cli.seed {
        log::debug!("seed {seed} ignored: pipelines are deterministic");
    }

    let pipeline = match &cli.command {
        Command::ListPresets => {
            for p in list_presets() {
                println!("{:<22} {}", p.id, p.summary());
            }
            return Ok(ExitCode::SUCCESS);
        }
        Command::Preset { id, print } => {
            let p = preset(id)?;
            if *print {
                print!("{}", p.document);
                return Ok(ExitCode::SUCCESS);
            }
            return execute(&cli, p.scenario()?);
        }
        Command::Table => Pipeline::Table,
        Command::Scan => Pipeline::Scan,
        Command::Propagate => Pipeline::Propagate,
        Command::Coherence => Pipeline::Coherence,
        Command::Spectrum => Pipeline::Spectrum,
        Command::Compress => Pipeline::Compress,
        Command::Nonadiabatic => Pipeline::Nonadiabatic,
    };
    let mut scenario = load(&cli)?;
    scenario.pipeline = pipeline;
    scenario.validate()?;
    execute(&cli, scenario)
}
