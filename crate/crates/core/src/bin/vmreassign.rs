//! Command-line front end: run one experiment mode, compare modes over one
//! instance, export the MILP in LP format, or generate synthetic instances.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vmreassign::genepi::MetaConfig;
use vmreassign::harness::{self, ExperimentConfig, ExperimentReport, Mode};
use vmreassign::instance::{generate_synthetic, write_instance, GeneratorParams};
use vmreassign::objectives::weight_vectors;
use vmreassign::solver::export_lp;

#[derive(Parser)]
#[command(name = "vmreassign", version, about = "Multi-objective VM reassignment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Instance file in vmr format.
    #[arg(long)]
    instance: PathBuf,
    /// Relative optimality gap for the exact search.
    #[arg(long, default_value_t = 0.05)]
    gap: f64,
    /// Number of probing weight vectors (1..=7 from the spread list,
    /// larger counts from a simplex lattice).
    #[arg(long, default_value_t = 3)]
    vectors: usize,
    /// Wall-clock budget in seconds; defaults to the instance TIME_BUDGET.
    #[arg(long)]
    budget: Option<f64>,
    /// Repetitions for the stochastic modes.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    /// Base RNG seed; run i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for report.csv, fronts and config.echo.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Execute repetitions sequentially for bitwise-reproducible output.
    #[arg(long)]
    single_thread: bool,
    /// Stop each exact search after this many nodes (deterministic budget).
    #[arg(long)]
    node_limit: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mode: exact, meta, hybrid, gap-sweep or vector-sweep.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        mode: Mode,
    },
    /// Run several modes over one instance under a shared reference point.
    Compare {
        #[command(flatten)]
        common: CommonOpts,
        /// Comma-separated modes to compare.
        #[arg(long, value_delimiter = ',', default_values_t = [Mode::Exact, Mode::Meta, Mode::Hybrid])]
        modes: Vec<Mode>,
    },
    /// Export the weighted-sum MILP in LP format.
    ExportLp {
        #[arg(long)]
        instance: PathBuf,
        /// 1-based index into the probing vector list (1 = identity).
        #[arg(long, default_value_t = 1)]
        vector: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic instance and print it (or write it to --out).
    Generate {
        #[arg(long, default_value_t = 4)]
        machines: usize,
        #[arg(long, default_value_t = 20)]
        vms: usize,
        #[arg(long, default_value_t = 8)]
        services: usize,
        #[arg(long, default_value_t = 2)]
        resources: usize,
        #[arg(long, default_value_t = 2)]
        locations: usize,
        #[arg(long, default_value_t = 2)]
        neighborhoods: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn experiment_config(common: &CommonOpts, mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(&common.instance, mode, &common.out);
    cfg.gap = common.gap;
    cfg.k_vectors = common.vectors;
    cfg.budget_s = common.budget;
    cfg.runs = common.runs;
    cfg.single_thread = common.single_thread;
    cfg.node_limit = common.node_limit;
    cfg.meta = MetaConfig { seed: common.seed, ..MetaConfig::default() };
    cfg
}

fn with_instance_scaled_mutation(mut cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    let (inst, _) = harness::load_instance(&cfg.instance_path)?;
    cfg.meta = MetaConfig { seed: cfg.meta.seed, ..MetaConfig::for_instance(&inst, cfg.meta.seed) };
    Ok(cfg)
}

fn print_report(report: &ExperimentReport) {
    let p = report.reference_point.point;
    println!("reference point: ({}, {}, {})", p[0], p[1], p[2]);
    println!("mode          mean_hv       median_hv     mean_sol  mean_s");
    for a in &report.aggregates {
        println!(
            "{:<13} {:<13.6} {:<13.6} {:<9.2} {:.3}",
            a.mode.to_string(),
            a.mean_hypervolume,
            a.median_hypervolume,
            a.mean_solutions,
            a.mean_elapsed_s
        );
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { common, mode } => {
            let cfg = with_instance_scaled_mutation(experiment_config(&common, mode))?;
            let report = harness::run(&cfg).context("experiment failed")?;
            print_report(&report);
            println!("wrote {}", cfg.out_dir.display());
        }
        Command::Compare { common, modes } => {
            if modes.is_empty() {
                bail!("--modes needs at least one mode");
            }
            let cfgs: Vec<ExperimentConfig> = modes
                .iter()
                .map(|&m| with_instance_scaled_mutation(experiment_config(&common, m)))
                .collect::<Result<_>>()?;
            let report = harness::compare(&cfgs).context("comparison failed")?;
            print_report(&report);
            println!("wrote {}", common.out.display());
        }
        Command::ExportLp { instance, vector, out } => {
            let (inst, _) = harness::load_instance(&instance)?;
            if vector == 0 {
                bail!("--vector is 1-based");
            }
            let w = weight_vectors(vector)
                .pop()
                .expect("weight_vectors returns `vector` entries");
            let text = export_lp(&inst, &w);
            std::fs::write(&out, text).with_context(|| format!("cannot write {}", out.display()))?;
            println!("wrote {}", out.display());
        }
        Command::Generate {
            machines,
            vms,
            services,
            resources,
            locations,
            neighborhoods,
            seed,
            out,
        } => {
            let inst = generate_synthetic(&GeneratorParams {
                n_machines: machines,
                n_vms: vms,
                n_services: services,
                n_resources: resources,
                n_locations: locations,
                n_neighborhoods: neighborhoods,
                seed,
            })?;
            let text = write_instance(&inst);
            match out {
                Some(path) => {
                    std::fs::write(&path, text)
                        .with_context(|| format!("cannot write {}", path.display()))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}
