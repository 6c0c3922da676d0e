use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use metacell::driver::{self, DesignSpec, Mode};
use metacell::homogenize::engineering_moduli;
use metacell::optimizer::{evaluate_constraints, mass, CONSTRAINT_NAMES};

#[derive(Parser)]
#[command(name = "metacell", version, about = "Design periodic unit cells with prescribed homogenized stiffness and conductivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Adaptive,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// Run a design from a configuration file (or `preset:NAME`).
    Run {
        #[arg(long)]
        config: String,
        #[arg(long, value_enum)]
        mode: Option<CliMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Threshold an exported design and re-homogenize it on a fine grid.
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Homogenize a given mesh and nodal density.
    Homogenize {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        density: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        rho_min: f64,
    },
    /// Built-in design presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names.
    List,
    /// Print a preset's configuration text.
    Show { name: String },
}

fn load_spec(config: &str) -> metacell::Result<DesignSpec> {
    match config.strip_prefix("preset:") {
        Some(name) => DesignSpec::preset(name),
        None => DesignSpec::load(config.as_ref()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> metacell::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> metacell::Result<()> {
    match cli.command {
        Command::Run { config, mode, seed, out } => {
            let mut spec = load_spec(&config)?;
            if let Some(m) = mode {
                spec.mode = match m {
                    CliMode::Adaptive => Mode::Adaptive,
                    CliMode::Baseline => Mode::Baseline,
                };
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            log::info!("running {} ({} mode, seed {})", spec.name, spec.mode, spec.seed);
            match driver::run(&spec) {
                Ok(output) => {
                    let files = driver::export(&output, &out)?;
                    let r = &output.report;
                    println!("termination: {:?} after {} outer iterations", r.termination, r.history.len());
                    println!("mass: {:.6}", r.mass.unwrap_or(f64::NAN));
                    if let Some(c) = r.constraints {
                        for (i, name) in CONSTRAINT_NAMES.iter().enumerate() {
                            println!(
                                "{name:>12}: {:.6}  in [{}, {}]",
                                c[i], spec.bounds.lower[i], spec.bounds.upper[i]
                            );
                        }
                    }
                    println!("report: {}", files.report_json.display());
                    Ok(())
                }
                Err(failure) => {
                    let path = driver::write_report(&failure.report, &out)?;
                    eprintln!("partial report written to {}", path.display());
                    Err(failure.error)
                }
            }
        }
        Command::Verify { input } => {
            let (mesh, rho, report) = driver::load_design(&input)?;
            let v = driver::verify(&mesh, &rho, &report.spec)?;
            std::fs::write(input.join("verify.json"), serde_json::to_string_pretty(&v)? + "\n")?;
            print_json(&v)
        }
        Command::Homogenize { mesh, density, rho_min } => {
            let (mesh, rho) = driver::load_mesh_density(&mesh, &density, rho_min)?;
            let law = metacell::fem::MaterialLaw::default();
            let (c, t, _) = evaluate_constraints(&mesh, &rho, &law)?;
            print_json(&serde_json::json!({
                "mass": mass(&mesh, rho.values()),
                "constraints": c,
                "tensors": t,
                "moduli": engineering_moduli(&t)?,
            }))
        }
        Command::Presets { action } => {
            match action {
                PresetAction::List => {
                    for name in driver::preset_names() {
                        println!("{name}");
                    }
                }
                PresetAction::Show { name } => {
                    let text = driver::preset_text(&name)
                        .ok_or_else(|| metacell::Error::InvalidArgument(format!("unknown preset '{name}'")))?;
                    print!("{text}");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
