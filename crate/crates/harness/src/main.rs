//! `dropcast` — command-line front end for cascade simulation, parameter
//! sweeps, block-matrix estimation, controlled runs, the fit-and-replay
//! pipeline, dataset fabrication, and the extinction-bound check.
//!
//! Exit codes: 0 on success, 2 when a sweep was infeasible at every grid
//! cell, 3 on I/O or schema errors (including bad command lines).

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

use dropcast_core::{
    cascade_statistics, estimate_block_matrices, lemma1_bound, merge_small_partitions,
    run_algorithm1, run_algorithm2, run_cascade, CascadeRecord, ContentModelPair,
    ControlConfig, ControlledRunRecord, SbmModel, SolverChoice, SquareMatrix,
};
use dropcast_harness::config::{self, DatasetGenConfig, NamedPolicy, SyntheticConfig};
use dropcast_harness::dataset::{
    generate_dataset, read_labeled_jsonl, remap_record, run_dataset_pipeline,
    write_labeled_jsonl,
};
use dropcast_harness::output;
use dropcast_harness::sweep::{derive_seed, run_sweep, synthetic_matrices, uniform_seeds};

#[derive(Parser)]
#[command(
    name = "dropcast",
    version,
    about = "Cascade control on stochastic block model networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Jsonl,
    Svg,
}

#[derive(Args)]
struct OutArgs {
    /// Directory for output files (created if absent).
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Run uncontrolled cascades on one block-model network and report
    /// summary statistics.
    Simulate {
        /// Partition file: JSON with "sizes" or "class_of".
        #[arg(long)]
        partition: PathBuf,
        /// Block matrix file: JSON with "block".
        #[arg(long)]
        block: PathBuf,
        /// Number of uniformly seeded initial spreaders per trial.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Number of independent cascades.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Master seed for reproducibility.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Sweep the (x, y) alteration grid described by a config file.
    Sweep {
        /// Sweep config, TOML or JSON.
        #[arg(long)]
        config: PathBuf,
        /// Scale to the full 50x50 grid with 50 trials per cell.
        #[arg(long, default_value_t = false)]
        full: bool,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override trials per grid cell.
        #[arg(long)]
        trials: Option<usize>,
        /// Switch the sweep to controlled runs at this growth cap.
        #[arg(long)]
        alpha: Option<f64>,
        /// Tradeoff weight used when a step has no feasible hard cap.
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Estimate per-class-pair transmission probabilities from a labeled
    /// cascade dataset.
    Fit {
        /// Labeled cascades, one JSON object per line.
        #[arg(long)]
        dataset: PathBuf,
        /// Partition file for the dataset's user classes.
        #[arg(long)]
        partition: PathBuf,
        /// Classes smaller than this fraction of all users are merged.
        #[arg(long, default_value_t = 0.01)]
        merge_fraction: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run dropout-controlled cascades against a known model pair.
    Control {
        /// Partition file.
        #[arg(long)]
        partition: PathBuf,
        /// Amplified ("true"-content) block matrix file.
        #[arg(long)]
        block_plus: PathBuf,
        /// Suppressed ("false"-content) block matrix file.
        #[arg(long)]
        block_minus: PathBuf,
        /// Which matrix generates the real cascade: plus or minus.
        #[arg(long, default_value = "minus")]
        real: RealSide,
        /// Growth cap per step.
        #[arg(long, default_value_t = 1.5)]
        alpha: f64,
        /// Soft-objective tradeoff weight.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Per-step solver.
        #[arg(long, value_enum, default_value = "lp")]
        solver: SolverArg,
        /// Use the forced-linear-program loop instead of the configured one.
        #[arg(long, default_value_t = false)]
        forced_lp: bool,
        /// Number of controlled runs.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Initial spreaders per run.
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit a dataset, then replay sampled cascades under dropout policies
    /// and tabulate mean final size and small-cascade probability.
    Pipeline {
        /// Labeled cascades, one JSON object per line (with transfer logs).
        #[arg(long)]
        dataset: PathBuf,
        /// Partition file for the dataset's user classes.
        #[arg(long)]
        partition: PathBuf,
        /// Growth cap for the controlled policy.
        #[arg(long, default_value_t = 1.5)]
        alpha: f64,
        /// Tradeoff weight for the controlled policy.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Replays drawn per content label; 0 replays the whole pool once.
        #[arg(long, default_value_t = 0)]
        samples: usize,
        /// Cascades with final size below this count as "low".
        #[arg(long, default_value_t = 5)]
        low_threshold: usize,
        /// Classes smaller than this fraction of all users are merged.
        #[arg(long, default_value_t = 0.01)]
        merge_fraction: f64,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fabricate a labeled cascade corpus from configurable ground-truth
    /// block matrices.
    GenerateDataset {
        /// Generator config, TOML or JSON; omitted = balanced two-class
        /// defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of cascades.
        #[arg(long)]
        trials: Option<usize>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Compare the empirical extinction frequency of controlled runs with
    /// the analytic upper bound at several bound parameters.
    BoundCheck {
        /// Number of controlled runs.
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        /// Step horizon at which survival is measured.
        #[arg(long, default_value_t = 5)]
        horizon: usize,
        /// Growth cap per step.
        #[arg(long, default_value_t = 1.5)]
        alpha: f64,
        /// Comma-separated bound parameters to evaluate.
        #[arg(long, default_value = "0.1,1,10", value_delimiter = ',')]
        lambdas: Vec<f64>,
        /// Diagonal amplification applied to the base matrix.
        #[arg(long, default_value_t = 0.005)]
        x: f64,
        /// Off-diagonal suppression applied to the base matrix.
        #[arg(long, default_value_t = 0.0005)]
        y: f64,
        /// Initial spreaders per run.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RealSide {
    Plus,
    Minus,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverArg {
    Convex,
    Lp,
}

impl From<SolverArg> for SolverChoice {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Convex => SolverChoice::Convex,
            SolverArg::Lp => SolverChoice::Lp,
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(3);
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn forbid_svg(out: &OutArgs, what: &str) -> Result<()> {
    if out.format == OutputFormat::Svg {
        bail!("svg output is only available for `sweep`; use csv or jsonl for {what}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Simulate {
            partition,
            block,
            seeds,
            trials,
            seed,
            out,
        } => cmd_simulate(&partition, &block, seeds, trials, seed, &out),
        Command::Sweep {
            config,
            full,
            seed,
            trials,
            alpha,
            lambda,
            out,
        } => cmd_sweep(&config, full, seed, trials, alpha, lambda, &out),
        Command::Fit {
            dataset,
            partition,
            merge_fraction,
            out,
        } => cmd_fit(&dataset, &partition, merge_fraction, &out),
        Command::Control {
            partition,
            block_plus,
            block_minus,
            real,
            alpha,
            lambda,
            solver,
            forced_lp,
            trials,
            seeds,
            seed,
            out,
        } => cmd_control(
            &partition,
            &block_plus,
            &block_minus,
            real,
            alpha,
            lambda,
            solver,
            forced_lp,
            trials,
            seeds,
            seed,
            &out,
        ),
        Command::Pipeline {
            dataset,
            partition,
            alpha,
            lambda,
            samples,
            low_threshold,
            merge_fraction,
            seed,
            out,
        } => cmd_pipeline(
            &dataset,
            &partition,
            alpha,
            lambda,
            samples,
            low_threshold,
            merge_fraction,
            seed,
            &out,
        ),
        Command::GenerateDataset {
            config,
            seed,
            trials,
            out,
        } => cmd_generate_dataset(config.as_deref(), seed, trials, &out),
        Command::BoundCheck {
            trials,
            horizon,
            alpha,
            lambdas,
            x,
            y,
            seeds,
            seed,
            out,
        } => cmd_bound_check(trials, horizon, alpha, &lambdas, x, y, seeds, seed, &out),
    }
}

fn cmd_simulate(
    partition_path: &Path,
    block_path: &Path,
    n_seeds: usize,
    trials: usize,
    master_seed: u64,
    out: &OutArgs,
) -> Result<i32> {
    forbid_svg(out, "simulate")?;
    let partition = config::load_partition(partition_path)?;
    let block = config::load_block(block_path)?;
    let model = SbmModel::new(partition.clone(), block)?;
    if n_seeds == 0 || n_seeds > partition.n_total() {
        bail!("--seeds must be in 1..={}", partition.n_total());
    }
    let mut records: Vec<CascadeRecord> = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, 0, t as u64));
        let seeds = uniform_seeds(partition.n_total(), n_seeds, &mut rng);
        records.push(run_cascade(&model, &seeds, 1, &mut rng)?);
    }
    ensure_out_dir(&out.out_dir)?;
    match out.format {
        OutputFormat::Jsonl => {
            let path = out.out_dir.join("simulate.jsonl");
            output::write_records_jsonl(&records, &path)?;
            println!("wrote {}", path.display());
        }
        OutputFormat::Csv => {
            let stats = cascade_statistics(&records, partition.n_total())?;
            let comments = vec![
                format!("uncontrolled cascades on one block model"),
                format!("n_total: {}", partition.n_total()),
                format!("trials: {trials}"),
                format!("n_seeds: {n_seeds}"),
                format!("master_seed: {master_seed}"),
                format!(
                    "mean_normalized: {} (se {})",
                    stats.mean_normalized, stats.se_normalized
                ),
                format!(
                    "low_fraction: {} (se {})",
                    stats.low_fraction, stats.se_low
                ),
            ];
            let rows: Vec<Vec<String>> = records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    vec![
                        i.to_string(),
                        r.r_inf.to_string(),
                        r.terminated_at().to_string(),
                    ]
                })
                .collect();
            let path = out.out_dir.join("simulate.csv");
            output::write_table_csv(&comments, &["trial", "r_inf", "steps"], &rows, &path)?;
            println!("wrote {}", path.display());
        }
        OutputFormat::Svg => unreachable!(),
    }
    Ok(0)
}

fn cmd_sweep(
    config_path: &Path,
    full: bool,
    seed: Option<u64>,
    trials: Option<usize>,
    alpha: Option<f64>,
    lambda: Option<f64>,
    out: &OutArgs,
) -> Result<i32> {
    let mut cfg: SyntheticConfig = config::load_config(config_path)?;
    if full {
        cfg = cfg.at_full_scale();
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(t) = trials {
        cfg.trials_per_cell = t;
    }
    if alpha.is_some() || lambda.is_some() {
        let mut ctl = cfg.control.as_config().cloned().unwrap_or_default();
        if let Some(a) = alpha {
            ctl.alpha = a;
        }
        if let Some(l) = lambda {
            ctl.lambda = l;
        }
        cfg.control = config::ControlSpec::Controlled(ctl);
    }
    let result = run_sweep(&cfg)?;
    ensure_out_dir(&out.out_dir)?;
    let path = match out.format {
        OutputFormat::Csv => {
            let p = out.out_dir.join("sweep.csv");
            output::write_sweep_csv(&result, &p)?;
            p
        }
        OutputFormat::Jsonl => {
            let p = out.out_dir.join("sweep.jsonl");
            output::write_sweep_jsonl(&result, &p)?;
            p
        }
        OutputFormat::Svg => {
            let p = out.out_dir.join("sweep.svg");
            output::write_sweep_svg(&result, &p)?;
            p
        }
    };
    println!("wrote {}", path.display());
    if result.all_skipped() {
        eprintln!("warning: every grid cell was infeasible or skipped");
        return Ok(2);
    }
    Ok(0)
}

fn cmd_fit(
    dataset_path: &Path,
    partition_path: &Path,
    merge_fraction: f64,
    out: &OutArgs,
) -> Result<i32> {
    forbid_svg(out, "fit")?;
    let partition = config::load_partition(partition_path)?;
    let cascades = read_labeled_jsonl(dataset_path)?;
    for (i, c) in cascades.iter().enumerate() {
        c.record
            .validate(partition.num_classes())
            .with_context(|| format!("cascade {i} does not match the partition"))?;
    }
    let (merged, remap) = merge_small_partitions(&partition, merge_fraction)?;
    let k = merged.num_classes();
    let remapped: Vec<_> = cascades
        .iter()
        .map(|c| dropcast_core::LabeledCascade {
            label: c.label,
            record: remap_record(&c.record, &remap, k),
        })
        .collect();
    let estimate = estimate_block_matrices(&remapped, &merged)?;
    let to_rows = |m: &SquareMatrix| m.rows();
    let diag_json = |d: &dropcast_core::EstimationDiag| {
        serde_json::json!({
            "opportunities": to_rows(&d.opportunities),
            "successes": to_rows(&d.successes),
            "unobserved": d.unobserved,
        })
    };
    let payload = serde_json::json!({
        "cascades": cascades.len(),
        "classes_before_merge": partition.num_classes(),
        "classes_after_merge": k,
        "merged_sizes": merged.sizes(),
        "plus": {
            "block": to_rows(estimate.models.plus().block()),
            "diagnostics": diag_json(&estimate.plus),
        },
        "minus": {
            "block": to_rows(estimate.models.minus().block()),
            "diagnostics": diag_json(&estimate.minus),
        },
    });
    ensure_out_dir(&out.out_dir)?;
    let path = out.out_dir.join("fit.json");
    std::fs::write(&path, serde_json::to_string_pretty(&payload)?)
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_control(
    partition_path: &Path,
    plus_path: &Path,
    minus_path: &Path,
    real: RealSide,
    alpha: f64,
    lambda: f64,
    solver: SolverArg,
    forced_lp: bool,
    trials: usize,
    n_seeds: usize,
    master_seed: u64,
    out: &OutArgs,
) -> Result<i32> {
    forbid_svg(out, "control")?;
    let partition = config::load_partition(partition_path)?;
    let b_plus = config::load_block(plus_path)?;
    let b_minus = config::load_block(minus_path)?;
    let models = ContentModelPair::new(partition.clone(), b_plus, b_minus)?;
    let config = ControlConfig {
        alpha,
        lambda,
        solver: solver.into(),
        max_steps: 200,
        seed: master_seed,
    };
    config.validate()?;
    if n_seeds == 0 || n_seeds > partition.n_total() {
        bail!("--seeds must be in 1..={}", partition.n_total());
    }
    let real_model = match real {
        RealSide::Plus => models.plus(),
        RealSide::Minus => models.minus(),
    };
    let mut runs: Vec<ControlledRunRecord> = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, 7, t as u64));
        let seeds = uniform_seeds(partition.n_total(), n_seeds, &mut rng);
        let run = if forced_lp {
            run_algorithm2(&models, real_model, &seeds, &config, &mut rng)?
        } else {
            run_algorithm1(&models, real_model, &seeds, &config, &mut rng)?
        };
        runs.push(run);
    }
    ensure_out_dir(&out.out_dir)?;
    match out.format {
        OutputFormat::Jsonl => {
            let path = out.out_dir.join("control.jsonl");
            output::write_records_jsonl(&runs, &path)?;
            println!("wrote {}", path.display());
        }
        OutputFormat::Csv => {
            let records: Vec<CascadeRecord> = runs.iter().map(|r| r.record.clone()).collect();
            let stats = cascade_statistics(&records, partition.n_total())?;
            let comments = vec![
                "dropout-controlled cascades".to_string(),
                format!("n_total: {}", partition.n_total()),
                format!("trials: {trials}"),
                format!("n_seeds: {n_seeds}"),
                format!("master_seed: {master_seed}"),
                format!(
                    "alpha: {alpha}, lambda: {lambda}, solver: {:?}, forced_lp: {forced_lp}",
                    config.solver
                ),
                format!("real side: {}", match real {
                    RealSide::Plus => "plus",
                    RealSide::Minus => "minus",
                }),
                format!(
                    "mean_normalized: {} (se {})",
                    stats.mean_normalized, stats.se_normalized
                ),
            ];
            let rows: Vec<Vec<String>> = runs
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let fallbacks = r
                        .reports
                        .iter()
                        .filter(|rep| rep.branch == dropcast_core::SolverBranch::SoftLp)
                        .count();
                    vec![
                        i.to_string(),
                        r.record.r_inf.to_string(),
                        r.record.terminated_at().to_string(),
                        fallbacks.to_string(),
                    ]
                })
                .collect();
            let path = out.out_dir.join("control.csv");
            output::write_table_csv(
                &comments,
                &["trial", "r_inf", "steps", "soft_fallback_steps"],
                &rows,
                &path,
            )?;
            println!("wrote {}", path.display());
        }
        OutputFormat::Svg => unreachable!(),
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_pipeline(
    dataset_path: &Path,
    partition_path: &Path,
    alpha: f64,
    lambda: f64,
    samples: usize,
    low_threshold: usize,
    merge_fraction: f64,
    master_seed: u64,
    out: &OutArgs,
) -> Result<i32> {
    forbid_svg(out, "pipeline")?;
    let partition = config::load_partition(partition_path)?;
    let cascades = read_labeled_jsonl(dataset_path)?;
    let policies = vec![
        NamedPolicy::baseline(),
        NamedPolicy::controlled(alpha, lambda, SolverChoice::Lp, master_seed),
    ];
    let report = run_dataset_pipeline(
        &cascades,
        &partition,
        &policies,
        samples,
        low_threshold as f64,
        merge_fraction,
        master_seed,
    )?;
    ensure_out_dir(&out.out_dir)?;
    let path = match out.format {
        OutputFormat::Csv => {
            let p = out.out_dir.join("pipeline.csv");
            output::write_pipeline_csv(&report, &p)?;
            p
        }
        OutputFormat::Jsonl => {
            let p = out.out_dir.join("pipeline.jsonl");
            output::write_pipeline_jsonl(&report, &p)?;
            p
        }
        OutputFormat::Svg => unreachable!(),
    };
    println!("wrote {}", path.display());
    Ok(0)
}

fn cmd_generate_dataset(
    config_path: Option<&Path>,
    seed: Option<u64>,
    trials: Option<usize>,
    out: &OutArgs,
) -> Result<i32> {
    forbid_svg(out, "generate-dataset")?;
    let mut cfg: DatasetGenConfig = match config_path {
        Some(p) => config::load_config(p)?,
        None => DatasetGenConfig::balanced_two_class(),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(t) = trials {
        cfg.cascades = t;
    }
    let (partition, models, cascades) = generate_dataset(&cfg)?;
    ensure_out_dir(&out.out_dir)?;
    let dataset_path = out.out_dir.join("dataset.jsonl");
    write_labeled_jsonl(&dataset_path, &cascades)?;
    let partition_path = out.out_dir.join("partition.json");
    std::fs::write(
        &partition_path,
        serde_json::to_string_pretty(&serde_json::json!({ "sizes": partition.sizes() }))?,
    )?;
    let truth_path = out.out_dir.join("truth.json");
    std::fs::write(
        &truth_path,
        serde_json::to_string_pretty(&serde_json::json!({
            "plus": { "block": models.plus().block().rows() },
            "minus": { "block": models.minus().block().rows() },
        }))?,
    )?;
    println!(
        "wrote {} ({} cascades), {}, {}",
        dataset_path.display(),
        cascades.len(),
        partition_path.display(),
        truth_path.display()
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bound_check(
    trials: usize,
    horizon: usize,
    alpha: f64,
    lambdas: &[f64],
    x: f64,
    y: f64,
    n_seeds: usize,
    master_seed: u64,
    out: &OutArgs,
) -> Result<i32> {
    forbid_svg(out, "bound-check")?;
    if trials == 0 || horizon == 0 {
        bail!("--trials and --horizon must be positive");
    }
    if lambdas.is_empty() {
        bail!("--lambdas must list at least one value");
    }
    let cfg = SyntheticConfig::balanced_two_class();
    let partition = cfg.partition()?;
    let (b_plus, b_minus) = synthetic_matrices(&cfg.base()?, x, y)?;
    let models = ContentModelPair::new(partition.clone(), b_plus, b_minus)?;
    let control = ControlConfig {
        alpha,
        lambda: 1.0,
        solver: SolverChoice::Lp,
        max_steps: horizon,
        seed: master_seed,
    };
    control.validate()?;
    let mut final_infected = Vec::with_capacity(trials);
    let mut fallback_runs = 0usize;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, 11, t as u64));
        let seeds = uniform_seeds(partition.n_total(), n_seeds, &mut rng);
        // The amplified matrix drives the real cascade here: the bound is a
        // statement about runs on the amplified network itself.
        let run = run_algorithm1(&models, models.plus(), &seeds, &control, &mut rng)?;
        if run
            .reports
            .iter()
            .any(|r| r.branch == dropcast_core::SolverBranch::SoftLp)
        {
            fallback_runs += 1;
        }
        final_infected.push(run.record.infected_at(horizon));
    }
    let extinct = final_infected.iter().filter(|&&n| n == 0).count();
    let freq = extinct as f64 / trials as f64;
    let freq_se = (freq * (1.0 - freq) / trials as f64).sqrt();
    let mut rows = Vec::new();
    for &lam in lambdas {
        let (bound, bound_se) = lemma1_bound(&final_infected, alpha, lam, horizon)?;
        let combined_se = (bound_se * bound_se + freq_se * freq_se).sqrt();
        let satisfied = freq <= bound + 2.0 * combined_se;
        rows.push(vec![
            lam.to_string(),
            bound.to_string(),
            bound_se.to_string(),
            freq.to_string(),
            freq_se.to_string(),
            satisfied.to_string(),
        ]);
    }
    ensure_out_dir(&out.out_dir)?;
    let comments = vec![
        "empirical extinction frequency vs analytic upper bound".to_string(),
        format!("trials: {trials}, horizon: {horizon}, alpha: {alpha}"),
        format!("n_seeds: {n_seeds}, master_seed: {master_seed}"),
        format!("grid point: x={x}, y={y} on the balanced two-class base"),
        format!("runs with soft fallback steps: {fallback_runs}"),
    ];
    let header = [
        "lambda",
        "bound",
        "bound_se",
        "extinction_freq",
        "extinction_se",
        "within_bound",
    ];
    match out.format {
        OutputFormat::Csv => {
            let path = out.out_dir.join("bound_check.csv");
            output::write_table_csv(&comments, &header, &rows, &path)?;
            println!("wrote {}", path.display());
        }
        OutputFormat::Jsonl => {
            let path = out.out_dir.join("bound_check.jsonl");
            let objects: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "lambda": r[0].parse::<f64>().unwrap(),
                        "bound": r[1].parse::<f64>().unwrap(),
                        "bound_se": r[2].parse::<f64>().unwrap(),
                        "extinction_freq": r[3].parse::<f64>().unwrap(),
                        "extinction_se": r[4].parse::<f64>().unwrap(),
                        "within_bound": r[5] == "true",
                    })
                })
                .collect();
            output::write_records_jsonl(&objects, &path)?;
            println!("wrote {}", path.display());
        }
        OutputFormat::Svg => unreachable!(),
    }
    Ok(0)
}
