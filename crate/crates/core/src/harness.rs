//! Experiment runner: executes the exact, metaheuristic and hybrid modes
//! plus gap and vector sweeps under per-instance wall-clock budgets, and
//! emits machine-readable reports (CSV rows, serialized fronts, a config
//! echo) with one shared reference point per invocation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::genepi::{hybrid_pipeline_with_deadline, MetaConfig};
use crate::instance::{self, Instance, ParseError};
use crate::objectives::{weight_vectors, WeightVector};
use crate::pareto::{self, MetricsError, ParetoArchive, ReferencePoint};
use crate::solver::{multi_vector_run, solve_weighted, SolverConfig};

/// Optimality gaps probed by the gap-sweep mode, loosest first.
pub const GAP_LADDER: [f64; 7] = [0.5, 0.2, 0.1, 0.05, 0.01, 0.005, 0.001];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Exact,
    Meta,
    Hybrid,
    GapSweep,
    VectorSweep,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Exact => "exact",
            Mode::Meta => "meta",
            Mode::Hybrid => "hybrid",
            Mode::GapSweep => "gap_sweep",
            Mode::VectorSweep => "vector_sweep",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Mode::Exact),
            "meta" => Ok(Mode::Meta),
            "hybrid" => Ok(Mode::Hybrid),
            "gap_sweep" | "gap-sweep" => Ok(Mode::GapSweep),
            "vector_sweep" | "vector-sweep" => Ok(Mode::VectorSweep),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub instance_path: PathBuf,
    pub mode: Mode,
    pub gap: f64,
    pub k_vectors: usize,
    pub meta: MetaConfig,
    /// Wall-clock budget; defaults to the instance's TIME_BUDGET field.
    pub budget_s: Option<f64>,
    /// Repetitions for the stochastic modes; the exact mode runs once.
    pub runs: usize,
    pub out_dir: PathBuf,
    pub single_thread: bool,
    /// Deterministic stand-in for the wall clock in tests.
    pub node_limit: Option<u64>,
}

impl ExperimentConfig {
    pub fn new(instance_path: impl Into<PathBuf>, mode: Mode, out_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            instance_path: instance_path.into(),
            mode,
            gap: 0.05,
            k_vectors: 3,
            meta: MetaConfig::default(),
            budget_s: None,
            runs: 10,
            out_dir: out_dir.into(),
            single_thread: false,
            node_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub mode: Mode,
    pub run: usize,
    pub hypervolume: f64,
    pub solutions: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeAggregate {
    pub mode: Mode,
    pub mean_hypervolume: f64,
    pub median_hypervolume: f64,
    pub mean_solutions: f64,
    pub median_solutions: f64,
    pub mean_elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<ModeAggregate>,
    pub reference_point: ReferencePoint,
    pub config_echo: String,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: ParseError,
    },
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Parse and validate an instance file; the returned name is the file stem.
pub fn load_instance(path: &Path) -> Result<(Instance, String), HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let inst = instance::parse_instance(&text).map_err(|source| HarnessError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "instance".to_string());
    Ok((inst, name))
}

/// One archive produced by a mode, with sweep coordinates where relevant.
#[derive(Debug, Clone)]
struct Outcome {
    mode: Mode,
    run: usize,
    archive: ParetoArchive,
    elapsed_s: f64,
    gap: Option<f64>,
    nodes: Option<u64>,
    vectors: Option<usize>,
}

fn solver_config(cfg: &ExperimentConfig, budget: f64) -> SolverConfig {
    SolverConfig {
        gap: cfg.gap,
        time_limit_s: budget,
        pool_all_feasible: true,
        node_limit: cfg.node_limit,
    }
}

fn exact_outcome(cfg: &ExperimentConfig, inst: &Instance, budget: f64) -> (ParetoArchive, f64) {
    let start = Instant::now();
    let (archive, _) = multi_vector_run(inst, cfg.k_vectors, &solver_config(cfg, budget), budget);
    (archive, start.elapsed().as_secs_f64())
}

fn meta_runs(
    cfg: &ExperimentConfig,
    inst: &Instance,
    budget: f64,
    bootstrap: &ParetoArchive,
    base_elapsed: f64,
    mode: Mode,
) -> Vec<Outcome> {
    let one = |run: usize| {
        let meta = MetaConfig {
            seed: cfg.meta.seed.wrapping_add(run as u64),
            ..cfg.meta
        };
        let start = Instant::now();
        let deadline = Some(start + Duration::from_secs_f64(budget));
        let archive = hybrid_pipeline_with_deadline(inst, bootstrap, &meta, deadline);
        Outcome {
            mode,
            run,
            archive,
            elapsed_s: base_elapsed + start.elapsed().as_secs_f64(),
            gap: None,
            nodes: None,
            vectors: None,
        }
    };
    if cfg.single_thread {
        (0..cfg.runs).map(one).collect()
    } else {
        let mut outcomes: Vec<Outcome> = (0..cfg.runs).into_par_iter().map(one).collect();
        outcomes.sort_by_key(|o| o.run);
        outcomes
    }
}

fn execute(cfg: &ExperimentConfig, inst: &Instance) -> Result<Vec<Outcome>, HarnessError> {
    let budget = cfg.budget_s.unwrap_or(inst.time_budget_s);
    if !(budget > 0.0) {
        return Err(HarnessError::Config("budget must be positive".to_string()));
    }
    if cfg.runs == 0 {
        return Err(HarnessError::Config("runs must be at least 1".to_string()));
    }
    let outcomes = match cfg.mode {
        Mode::Exact => {
            let (archive, elapsed) = exact_outcome(cfg, inst, budget);
            vec![Outcome {
                mode: Mode::Exact,
                run: 0,
                archive,
                elapsed_s: elapsed,
                gap: Some(cfg.gap),
                nodes: None,
                vectors: Some(cfg.k_vectors),
            }]
        }
        Mode::Meta => meta_runs(cfg, inst, budget, &ParetoArchive::new(), 0.0, Mode::Meta),
        Mode::Hybrid => {
            let (bootstrap, exact_elapsed) = exact_outcome(cfg, inst, budget);
            meta_runs(cfg, inst, budget, &bootstrap, exact_elapsed, Mode::Hybrid)
        }
        Mode::GapSweep => {
            let identity = WeightVector::identity();
            GAP_LADDER
                .iter()
                .enumerate()
                .map(|(i, &gap)| {
                    let solver = SolverConfig {
                        gap,
                        ..solver_config(cfg, budget)
                    };
                    let report = solve_weighted(inst, &identity, &solver);
                    let mut archive = ParetoArchive::new();
                    for (a, o) in &report.pool {
                        archive.insert(a.clone(), *o);
                    }
                    Outcome {
                        mode: Mode::GapSweep,
                        run: i,
                        archive,
                        elapsed_s: report.elapsed_s,
                        gap: Some(gap),
                        nodes: Some(report.nodes_explored),
                        vectors: None,
                    }
                })
                .collect()
        }
        Mode::VectorSweep => {
            // Cumulative archive snapshots after each additional vector.
            let start = Instant::now();
            let mut archive = ParetoArchive::new();
            let mut outcomes = Vec::new();
            for (i, w) in weight_vectors(cfg.k_vectors.max(1)).into_iter().enumerate() {
                let remaining = budget - start.elapsed().as_secs_f64();
                if remaining > 0.0 {
                    let solver = SolverConfig {
                        time_limit_s: remaining,
                        ..solver_config(cfg, budget)
                    };
                    let report = solve_weighted(inst, &w, &solver);
                    for (a, o) in &report.pool {
                        archive.insert(a.clone(), *o);
                    }
                }
                outcomes.push(Outcome {
                    mode: Mode::VectorSweep,
                    run: i,
                    archive: archive.clone(),
                    elapsed_s: start.elapsed().as_secs_f64(),
                    gap: Some(cfg.gap),
                    nodes: None,
                    vectors: Some(i + 1),
                });
            }
            outcomes
        }
    };
    Ok(outcomes)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

fn aggregate(records: &[RunRecord]) -> Vec<ModeAggregate> {
    let mut modes: Vec<Mode> = Vec::new();
    for r in records {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    modes
        .into_iter()
        .map(|mode| {
            let hv: Vec<f64> = records.iter().filter(|r| r.mode == mode).map(|r| r.hypervolume).collect();
            let sol: Vec<f64> = records
                .iter()
                .filter(|r| r.mode == mode)
                .map(|r| r.solutions as f64)
                .collect();
            let el: Vec<f64> = records.iter().filter(|r| r.mode == mode).map(|r| r.elapsed_s).collect();
            ModeAggregate {
                mode,
                mean_hypervolume: mean(&hv),
                median_hypervolume: median(&hv),
                mean_solutions: mean(&sol),
                median_solutions: median(&sol),
                mean_elapsed_s: mean(&el),
            }
        })
        .collect()
}

fn shared_reference(outcomes: &[Outcome]) -> ReferencePoint {
    let archives: Vec<&ParetoArchive> = outcomes.iter().map(|o| &o.archive).collect();
    // An all-empty union has nothing to enclose; any positive corner works
    // and every empty front scores zero.
    pareto::reference_point(&archives).unwrap_or(ReferencePoint { point: [1.0, 1.0, 1.0] })
}

fn config_echo(cfg: &ExperimentConfig, budget: f64) -> String {
    format!(
        "instance={}\nmode={}\ngap={}\nvectors={}\nbudget_s={}\nruns={}\nseed={}\n\
         population_size={}\ngenerations={}\npls_targets={}\nmutation_rate={}\ncrossover_rate={}\n\
         single_thread={}\nnode_limit={}\n",
        cfg.instance_path.display(),
        cfg.mode,
        cfg.gap,
        cfg.k_vectors,
        budget,
        cfg.runs,
        cfg.meta.seed,
        cfg.meta.population_size,
        cfg.meta.generations,
        cfg.meta.pls_targets,
        cfg.meta.mutation_rate,
        cfg.meta.crossover_rate,
        cfg.single_thread,
        cfg.node_limit.map_or("none".to_string(), |n| n.to_string()),
    )
}

fn write_outputs(
    out_dir: &Path,
    instance_name: &str,
    outcomes: &[Outcome],
    records: &[RunRecord],
    reference: &ReferencePoint,
    echo: &str,
) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io { path: out_dir.to_path_buf(), source };
    fs::create_dir_all(out_dir).map_err(io_err)?;

    let mut csv = String::from("mode,run,hypervolume,solutions,elapsed_s\n");
    for r in records {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.mode, r.run, r.hypervolume, r.solutions, r.elapsed_s
        ));
    }
    fs::write(out_dir.join("report.csv"), csv).map_err(io_err)?;

    for o in outcomes {
        let text = pareto::write_archive(&o.archive, instance_name, Some(reference));
        let name = format!("front_{}_{}.txt", o.mode, o.run);
        fs::write(out_dir.join(name), text).map_err(io_err)?;
    }

    let sweeps: Vec<&Outcome> = outcomes
        .iter()
        .filter(|o| matches!(o.mode, Mode::GapSweep | Mode::VectorSweep))
        .collect();
    if !sweeps.is_empty() {
        let mut sweep = String::from("mode,gap,vectors,hypervolume,solutions,elapsed_s,nodes\n");
        for o in &sweeps {
            let record = records
                .iter()
                .find(|r| r.mode == o.mode && r.run == o.run)
                .expect("every outcome has a record");
            sweep.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                o.mode,
                o.gap.map_or(String::new(), |g| g.to_string()),
                o.vectors.map_or(String::new(), |k| k.to_string()),
                record.hypervolume,
                record.solutions,
                o.elapsed_s,
                o.nodes.map_or(String::new(), |n| n.to_string()),
            ));
        }
        fs::write(out_dir.join("sweep.csv"), sweep).map_err(io_err)?;
    }

    fs::write(out_dir.join("config.echo"), echo).map_err(io_err)?;
    Ok(())
}

fn report_from_outcomes(
    outcomes: &[Outcome],
    reference: ReferencePoint,
    echo: String,
) -> Result<ExperimentReport, HarnessError> {
    let mut records = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let hv = pareto::hypervolume(&o.archive, &reference)?;
        records.push(RunRecord {
            mode: o.mode,
            run: o.run,
            hypervolume: hv,
            solutions: pareto::count_solutions(&o.archive),
            elapsed_s: o.elapsed_s,
        });
    }
    let aggregates = aggregate(&records);
    Ok(ExperimentReport {
        records,
        aggregates,
        reference_point: reference,
        config_echo: echo,
    })
}

/// Run one experiment mode and write `report.csv`, per-run front files and
/// `config.echo` (plus `sweep.csv` for the sweep modes) into the output
/// directory.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport, HarnessError> {
    let (inst, name) = load_instance(&cfg.instance_path)?;
    let budget = cfg.budget_s.unwrap_or(inst.time_budget_s);
    let outcomes = execute(cfg, &inst)?;
    let reference = shared_reference(&outcomes);
    let echo = config_echo(cfg, budget);
    let report = report_from_outcomes(&outcomes, reference, echo)?;
    write_outputs(&cfg.out_dir, &name, &outcomes, &report.records, &reference, &report.config_echo)?;
    Ok(report)
}

/// Run several configs over one instance and score every mode against a
/// single reference point built from the union of all resulting fronts.
/// Outputs land in the first config's directory.
pub fn compare(cfgs: &[ExperimentConfig]) -> Result<ExperimentReport, HarnessError> {
    let first = cfgs
        .first()
        .ok_or_else(|| HarnessError::Config("compare needs at least one config".to_string()))?;
    if cfgs.iter().any(|c| c.instance_path != first.instance_path) {
        return Err(HarnessError::Config(
            "compare requires all configs to share one instance".to_string(),
        ));
    }
    let (inst, name) = load_instance(&first.instance_path)?;
    let mut outcomes = Vec::new();
    let mut echo = String::new();
    for cfg in cfgs {
        let budget = cfg.budget_s.unwrap_or(inst.time_budget_s);
        outcomes.extend(execute(cfg, &inst)?);
        echo.push_str(&format!("[{}]\n{}\n", cfg.mode, config_echo(cfg, budget)));
    }
    let reference = shared_reference(&outcomes);
    let report = report_from_outcomes(&outcomes, reference, echo)?;
    write_outputs(&first.out_dir, &name, &outcomes, &report.records, &reference, &report.config_echo)?;
    Ok(report)
}

/// Parse `report.csv` back into run records.
pub fn read_report_csv(text: &str) -> Result<Vec<RunRecord>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty report")?;
    if header != "mode,run,hypervolume,solutions,elapsed_s" {
        return Err(format!("unexpected header `{header}`"));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(format!("line {}: expected 5 fields", i + 2));
        }
        records.push(RunRecord {
            mode: fields[0].parse()?,
            run: fields[1].parse().map_err(|_| format!("line {}: bad run", i + 2))?,
            hypervolume: fields[2].parse().map_err(|_| format!("line {}: bad hypervolume", i + 2))?,
            solutions: fields[3].parse().map_err(|_| format!("line {}: bad solutions", i + 2))?,
            elapsed_s: fields[4].parse().map_err(|_| format!("line {}: bad elapsed", i + 2))?,
        });
    }
    Ok(records)
}
