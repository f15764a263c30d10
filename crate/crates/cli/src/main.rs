use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vpline_cli::commands::{
    cmd_ab_degeneracy, cmd_cluster, cmd_fim, cmd_simulate, cmd_simulate_pencils, cmd_solve, file_input, input_digests,
    prepare_output, read_segments, simulated_inputs, write_cost_csv, write_fim_csv, write_json, write_lines_csv,
    CliResult, InputDigest,
};
use vpline_cli::config::{ExperimentConfig, VpSource};

/// Line mapping with vanishing-point factors: synthetic experiments.
#[derive(Debug, Parser)]
#[command(name = "vpline", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run this seed only, instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Leave vanishing-point factors out.
    #[arg(long, global = true)]
    no_vp: bool,
    #[arg(long, global = true, value_enum)]
    vp_source: Option<VpSource>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one JSON-lines dataset per seed.
    Simulate {
        /// Write labeled 2D pencils for `cluster` instead.
        #[arg(long)]
        pencils: bool,
    },
    /// Sliding-window solve; writes solve.json and CSV tables.
    Solve {
        /// Solve this dataset instead of simulating one per seed.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Paired solves with and without VP factors on pure translation.
    AbDegeneracy,
    /// Information-matrix audit at ground truth.
    Fim {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// J-linkage clustering of a segments file.
    Cluster {
        #[arg(long)]
        segments: PathBuf,
    },
}

fn resolve(common: &Common) -> CliResult<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if common.no_vp {
        config.use_vp = false;
    }
    if let Some(source) = common.vp_source {
        config.vp_source = source;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> CliResult<()> {
    let config = resolve(&cli.common)?;
    let out = prepare_output(&config.output_dir)?;
    let inputs_for = |dataset: &Option<PathBuf>| match dataset {
        Some(path) => Ok(vec![file_input(path)?]),
        None => simulated_inputs(&config),
    };
    match cli.command {
        Command::Simulate { pencils } => {
            let report = if pencils { cmd_simulate_pencils(&config)? } else { cmd_simulate(&config)? };
            for f in &report.files {
                println!("{}  {}", f.sha256, f.name);
            }
        }
        Command::Solve { dataset } => {
            let inputs = inputs_for(&dataset)?;
            let report = cmd_solve(&config, &inputs)?;
            write_json(&out.join("solve.json"), "solve", &config, input_digests(&inputs), &report)?;
            let arm = if config.use_vp { "vp" } else { "no_vp" };
            write_lines_csv(&out.join("solve_lines.csv"), &[(arm, &report.seeds)])?;
            write_cost_csv(&out.join("solve_cost.csv"), &[(arm, &report.seeds)])?;
            let a = &report.aggregate;
            println!(
                "seeds {}  median direction error {:.4}°  median distance error {:.4} m  median pose rmse {:.4} m  median final cost {:.4e}",
                report.seeds.len(),
                a.median_direction_error.to_degrees(),
                a.median_distance_error,
                a.median_pose_rmse,
                a.median_final_cost
            );
        }
        Command::AbDegeneracy => {
            let inputs = simulated_inputs(&config)?;
            let report = cmd_ab_degeneracy(&config, &inputs)?;
            write_json(&out.join("ab_degeneracy.json"), "ab-degeneracy", &config, input_digests(&inputs), &report)?;
            let arms = [("vp", report.with_vp_seeds.as_slice()), ("no_vp", report.without_vp_seeds.as_slice())];
            write_lines_csv(&out.join("ab_lines.csv"), &arms)?;
            write_cost_csv(&out.join("ab_cost.csv"), &arms)?;
            println!(
                "degenerate lines {}  with VP median {:.4}°  without VP median {:.4}°  ratio {:.1}",
                report.with_vp.degenerate_lines,
                report.with_vp.median_direction_error_deg,
                report.without_vp.median_direction_error_deg,
                report.improvement_ratio
            );
            println!(
                "rank histogram (degenerate lines)  with VP {:?}  without VP {:?}",
                report.with_vp.rank_total_histogram, report.without_vp.rank_total_histogram
            );
        }
        Command::Fim { dataset } => {
            let inputs = inputs_for(&dataset)?;
            let report = cmd_fim(&config, &inputs)?;
            write_json(&out.join("fim.json"), "fim", &config, input_digests(&inputs), &report)?;
            write_fim_csv(&out.join("fim_lines.csv"), &report)?;
            let s = &report.summary;
            println!(
                "lines {}  rank 4: {}  rank 3: {}  rank ≤ 2: {}  slope-degenerate observations: {}",
                s.lines, s.lines_rank_4, s.lines_rank_3, s.lines_rank_le_2, s.slope_degenerate_observations
            );
        }
        Command::Cluster { segments } => {
            let (file, sha256) = read_segments(&segments)?;
            let report = cmd_cluster(&config, &file)?;
            let inputs = vec![InputDigest { name: segments.display().to_string(), sha256 }];
            write_json(&out.join("clusters.json"), "cluster", &config, inputs, &report)?;
            print!("clusters {}  outliers {}", report.result.clusters.len(), report.result.outliers.len());
            match report.accuracy {
                Some(acc) => println!("  accuracy {:.2}%", acc * 100.0),
                None => println!(),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

