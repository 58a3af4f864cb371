use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use primitect::bench::benchmark;
use primitect::compact::parse_model;
use primitect::config::PipelineConfig;
use primitect::stages::{
    evaluate_cloud, format_report, reconstruct, run_stage, thread_pool, write_atomic, Run, Stage,
};
use primitect::xyz::read_xyz;
use primitect::{Failure, Result};

#[derive(Parser)]
#[command(name = "primitect", version, about = "Compact models of curved buildings from point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Point cloud to compact model, mesh and report.
    Reconstruct {
        /// Plain-text XYZ cloud.
        #[arg(long)]
        input: PathBuf,
        /// Run only this stage on the previous stage's files.
        #[arg(long, value_enum)]
        stage: Option<Stage>,
        #[command(flatten)]
        common: Common,
    },
    /// Division grid and fixture reconstructions.
    Benchmark {
        /// Overrides the trials per grid cell.
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Traces contours only.
    Contour {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Scores a compact model against a cloud.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        /// Compact model file.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn init_log(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
}

fn converged(unconverged: usize) -> Result<()> {
    if unconverged > 0 {
        Err(Failure::NotConverged(unconverged))
    } else {
        Ok(())
    }
}

fn evaluate(input: &Path, model: &Path, cfg: &PipelineConfig, out_dir: &Path) -> Result<()> {
    let pc = read_xyz(input)?;
    let text = std::fs::read_to_string(model).map_err(|e| Failure::Input {
        path: model.to_path_buf(),
        msg: e.to_string(),
    })?;
    let m = parse_model(&text)?;
    let hash = cfg.hash();
    let rows = evaluate_cloud(&m, &pc, cfg.export_res(), cfg.evaluate.density, &hash)?;
    for r in &rows {
        println!("building {}: {} points, mean distance {:.4} m", r.id, r.n_points, r.mean_dist_m);
    }
    write_atomic(&out_dir.join(&cfg.output.report), format_report(&rows, &hash).as_bytes())
}

fn run(cmd: Command) -> Result<()> {
    let pool = thread_pool()?;
    match cmd {
        Command::Reconstruct { input, stage, common } => {
            let cfg = load(&common)?;
            let run = Run::new(input, common.out_dir, cfg);
            info!("config hash {}", run.hash);
            let o = pool.install(|| match stage {
                Some(s) => run_stage(&run, s),
                None => reconstruct(&run),
            })?;
            converged(o.unconverged)
        }
        Command::Benchmark { trials, common } => {
            let mut cfg = load(&common)?;
            if let Some(t) = trials {
                cfg.benchmark.trials = t;
            }
            cfg.validate().map_err(|msg| Failure::Config {
                path: common.config.clone().unwrap_or_default(),
                msg,
            })?;
            let s = pool.install(|| benchmark(&cfg, &common.out_dir))?;
            println!("{:>7} {:>15} {:>15} {:>15}", "sigma", "small pa/mpa", "medium pa/mpa", "heavy pa/mpa");
            for row in s.grid.chunks(3) {
                print!("{:>7.4}", row[0].sigma);
                for c in row {
                    print!(" {:>15}", format!("{:.2}/{:.2}", c.pa_percent(), c.mpa_percent()));
                }
                println!();
            }
            for f in &s.fixtures {
                for r in &f.report {
                    println!(
                        "{}: mean distance {:.4} m, {} of {} bytes ({:.1}%)",
                        r.id,
                        r.mean_dist_m,
                        r.compact_bytes,
                        r.mesh_bytes,
                        100.0 * r.ratio()
                    );
                }
            }
            let unconverged: usize = s.fixtures.iter().map(|f| f.unconverged).sum();
            if unconverged > 0 {
                warn!("{unconverged} fixture unit(s) did not converge");
            }
            Ok(())
        }
        Command::Contour { input, common } => {
            let cfg = load(&common)?;
            let run = Run::new(input, common.out_dir, cfg);
            pool.install(|| run_stage(&run, Stage::Contour)).map(|_| ())
        }
        Command::Evaluate { input, model, common } => {
            let cfg = load(&common)?;
            pool.install(|| evaluate(&input, &model, &cfg, &common.out_dir))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = match &cli.command {
        Command::Reconstruct { common, .. }
        | Command::Benchmark { common, .. }
        | Command::Contour { common, .. }
        | Command::Evaluate { common, .. } => common.verbose,
    };
    init_log(verbose);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
