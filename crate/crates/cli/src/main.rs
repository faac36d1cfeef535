//! Command line runner for poroelastic LOD convergence experiments.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use porolod::lod::Localization;
use porolod::{preset, run_convergence, Error, ExperimentConfig, RunOptions, RunRecord};

/// Exit code for fatal errors (bad input, failed setup or fine solve).
const EXIT_ERROR: u8 = 1;
/// Exit code for command line usage errors.
const EXIT_USAGE: u8 = 2;
/// Exit code when the run finished but at least one level failed.
const EXIT_LEVEL_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "porolod",
    version,
    about = "Fine FEM and LOD multiscale solvers for linear poroelasticity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sweep a preset over coarse meshes with 2^k cells per side.
    Convergence {
        #[arg(long, value_parser = ["exp1", "exp2", "exp3", "exp3d"])]
        preset: String,
        /// Inclusive exponent range, e.g. `1..5` for coarse_cells 2, 4, .., 32.
        #[arg(long, value_parser = parse_levels)]
        levels: Option<(u32, u32)>,
        /// Fine mesh with 2^k cells per side.
        #[arg(long, value_name = "K")]
        fine: Option<u32>,
        /// Coefficient mesh with 2^k cells per side.
        #[arg(long, value_name = "K")]
        eps: Option<u32>,
        /// Patch layers, or `inf` for global correctors.
        #[arg(long, value_parser = parse_ell)]
        ell: Option<Option<usize>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_localization)]
        localization: Option<Localization>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Print a preset's config as JSON, as accepted by `run --config`.
    Preset {
        #[arg(value_parser = ["exp1", "exp2", "exp3", "exp3d"])]
        name: String,
    },
}

#[derive(Args)]
struct OutputArgs {
    /// Error table CSV; the run record goes next to it with a .json extension.
    #[arg(long)]
    out: PathBuf,
    /// Add a wall_time_s column to the CSV.
    #[arg(long)]
    timings: bool,
    /// Directory to write the bases of every level to.
    #[arg(long, value_name = "DIR", conflicts_with = "import_basis")]
    export_basis: Option<PathBuf>,
    /// Directory to read previously exported bases from.
    #[arg(long, value_name = "DIR")]
    import_basis: Option<PathBuf>,
}

fn parse_levels(s: &str) -> Result<(u32, u32), String> {
    let (a, b) = s.split_once("..").ok_or("expected K1..K2")?;
    let a: u32 = a.trim().parse().map_err(|e| format!("bad K1: {e}"))?;
    let b: u32 = b.trim().parse().map_err(|e| format!("bad K2: {e}"))?;
    if a > b || b > 20 {
        return Err(format!("need K1 <= K2 <= 20, got {a}..{b}"));
    }
    Ok((a, b))
}

fn parse_ell(s: &str) -> Result<Option<usize>, String> {
    match s {
        "inf" => Ok(None),
        _ => s
            .parse()
            .map(Some)
            .map_err(|e| format!("expected a layer count or 'inf': {e}")),
    }
}

fn parse_localization(s: &str) -> Result<Localization, String> {
    Localization::parse(s).map_err(|e| e.to_string())
}

fn pow2(k: u32) -> Result<usize, Error> {
    1usize
        .checked_shl(k)
        .filter(|_| k <= 20)
        .ok_or_else(|| Error::InvalidArgument(format!("exponent {k} too large")))
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", serde_json::json!({ "kind": kind, "message": message }));
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("POROLOD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(vec![format!("POROLOD_THREADS must be a positive integer, got '{v}'")]))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn execute(config: &ExperimentConfig, output: &OutputArgs) -> Result<RunRecord, Error> {
    config.validate()?;
    let opts = RunOptions {
        export_basis: output.export_basis.clone(),
        import_basis: output.import_basis.clone(),
    };
    let rec = run_convergence(config, &opts)?;
    let mut table = Vec::new();
    rec.report.write_csv(&mut table, output.timings)?;
    std::fs::write(&output.out, table)?;
    std::fs::write(sidecar_path(&output.out), serde_json::to_string_pretty(&rec)? + "\n")?;
    Ok(rec)
}

fn convergence_config(
    name: &str,
    levels: Option<(u32, u32)>,
    fine: Option<u32>,
    eps: Option<u32>,
    ell: Option<Option<usize>>,
    seed: Option<u64>,
    localization: Option<Localization>,
) -> Result<ExperimentConfig, Error> {
    let mut c = preset(name)?;
    if let Some((a, b)) = levels {
        c.coarse_cells = (a..=b).map(pow2).collect::<Result<_, _>>()?;
    }
    if let Some(k) = fine {
        c.fine_cells = pow2(k)?;
    }
    if let Some(k) = eps {
        c.eps_cells = pow2(k)?;
    }
    if let Some(l) = ell {
        c.ell = l;
    }
    if let Some(s) = seed {
        c.seed = s;
    }
    if let Some(l) = localization {
        c.localization = l;
    }
    Ok(c)
}

fn summarize(rec: &RunRecord, out: &Path) {
    for l in &rec.levels {
        match (&l.rel_error, &l.error) {
            (Some(e), _) => println!("coarse_cells={} H={:.6e} rel_error={e:.6e}", l.coarse_cells, l.h),
            (None, Some(err)) => println!("coarse_cells={} H={:.6e} failed: {}", l.coarse_cells, l.h, err.message),
            (None, None) => {}
        }
    }
    if let Some(s) = rec.slope {
        println!("slope={s:.6}");
    }
    println!("wrote {} and {}", out.display(), sidecar_path(out).display());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            error_line("usage", e.to_string().trim());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Preset { name } => {
            // A closed pipe (e.g. `| head`) is not an error worth reporting.
            let _ = writeln!(std::io::stdout(), "{}", preset(name)?.to_json());
            Ok(None)
        }
        Command::Run { config, output } => {
            let text = std::fs::read_to_string(config)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", config.display()))))?;
            let c = ExperimentConfig::from_json(&text)?;
            Ok(Some((execute(&c, output)?, &output.out)))
        }
        Command::Convergence {
            preset,
            levels,
            fine,
            eps,
            ell,
            seed,
            localization,
            output,
        } => {
            let c = convergence_config(preset, *levels, *fine, *eps, *ell, *seed, *localization)?;
            Ok(Some((execute(&c, output)?, &output.out)))
        }
    });
    match result {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some((rec, out))) => {
            summarize(&rec, out);
            for l in &rec.levels {
                if let Some(e) = &l.error {
                    error_line(
                        &e.kind,
                        &format!("level coarse_cells={}: {}", l.coarse_cells, e.message),
                    );
                }
            }
            if rec.failed_levels() > 0 {
                ExitCode::from(EXIT_LEVEL_FAILED)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            error_line(e.kind(), &e.to_string());
            ExitCode::from(EXIT_ERROR)
        }
    }
}
