//! Command line driver: `generate` training data, `train` the closure
//! model, `predict` out-of-sample trajectories, and `report` the
//! delimited-text tables.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qmcl_core::pipeline::{self, PredictionReport, RunConfig};

#[derive(Parser)]
#[command(name = "qmcl", version, about = "Quantum mechanical closure of coarsened shallow-water dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the training trajectories and persist resolved-state and
    /// subgrid-flux samples under <run-dir>/data.
    Generate(GenerateArgs),
    /// Run the offline stage on the generated data; writes the model
    /// bundle under <run-dir>/model.
    Train {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Spin up a test initial condition, run the online stage against the
    /// truth and zero-closure baselines, and save the raw report.
    Predict {
        #[arg(long)]
        run_dir: PathBuf,
        /// Initial-condition parameter(s); defaults to the config's test list.
        #[arg(long, value_delimiter = ',')]
        delta: Vec<f64>,
        /// Coarse steps to integrate (default: config).
        #[arg(long)]
        horizon: Option<usize>,
        /// Condition the densities every K coarse steps (default: config).
        #[arg(long)]
        conditioning_period: Option<usize>,
    },
    /// Export delimited-text tables for a saved prediction.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
        /// Prediction(s) to export; defaults to the config's test list.
        #[arg(long, value_delimiter = ',')]
        delta: Vec<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Reference configuration (fine grid 1920, three trajectories, L=6144).
    Full,
    /// CI-sized configuration (fine grid 480, two trajectories, L=256).
    Desk,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Start from a named preset instead of the full-scale defaults.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Load a TOML configuration file (fields then overridable by flags).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

/// Optional per-field overrides mirroring the run configuration.
#[derive(Args)]
struct ConfigOverrides {
    #[arg(long)]
    fine_cells: Option<usize>,
    #[arg(long)]
    coarsen_ratio: Option<usize>,
    #[arg(long)]
    domain_min: Option<f64>,
    #[arg(long)]
    domain_max: Option<f64>,
    #[arg(long)]
    gravity: Option<f64>,
    #[arg(long)]
    froude: Option<f64>,
    #[arg(long)]
    cfl_factor: Option<f64>,
    #[arg(long)]
    spinup_steps: Option<usize>,
    #[arg(long)]
    sample_steps: Option<usize>,
    #[arg(long)]
    sample_stride: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    train_deltas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    test_deltas: Option<Vec<f64>>,
    #[arg(long)]
    delays: Option<usize>,
    #[arg(long)]
    stencil_width: Option<usize>,
    #[arg(long)]
    basis_size: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    per_trajectory_l: Option<Vec<usize>>,
    #[arg(long)]
    cholesky_rank: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    per_trajectory_rank: Option<Vec<usize>>,
    #[arg(long)]
    randomized_pivoting: bool,
    /// Disable the variable-bandwidth conditioning kernel.
    #[arg(long)]
    fixed_bandwidth: bool,
    #[arg(long)]
    max_tuning_pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    conditioning_period: Option<usize>,
    #[arg(long)]
    prediction_horizon: Option<usize>,
    /// Store the two observables as 32-bit floats on disk.
    #[arg(long)]
    observables_f32: bool,
}

impl ConfigOverrides {
    fn apply(&self, config: &mut RunConfig) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(value) = self.$field.clone() {
                    config.$field = value;
                }
            };
        }
        set!(fine_cells);
        set!(coarsen_ratio);
        set!(domain_min);
        set!(domain_max);
        set!(gravity);
        set!(cfl_factor);
        set!(spinup_steps);
        set!(sample_steps);
        set!(train_deltas);
        set!(test_deltas);
        set!(delays);
        set!(stencil_width);
        set!(basis_size);
        set!(cholesky_rank);
        set!(max_tuning_pairs);
        set!(seed);
        set!(conditioning_period);
        set!(prediction_horizon);
        if let Some(froude) = self.froude {
            config.froude = Some(froude);
        }
        if let Some(stride) = self.sample_stride {
            config.sample_stride = Some(stride);
        }
        if let Some(per) = self.per_trajectory_l.clone() {
            config.per_trajectory_l = Some(per);
        }
        if let Some(per) = self.per_trajectory_rank.clone() {
            config.per_trajectory_rank = Some(per);
        }
        if self.randomized_pivoting {
            config.randomized_pivoting = true;
        }
        if self.fixed_bandwidth {
            config.variable_bandwidth = false;
        }
        if self.observables_f32 {
            config.observables_f32 = true;
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), qmcl_core::Error> {
    match cli.command {
        Command::Generate(args) => {
            let mut config = match (&args.config, args.preset) {
                (Some(path), _) => RunConfig::from_toml(&std::fs::read_to_string(path)?)?,
                (None, Some(Preset::Desk)) => RunConfig::desk(),
                (None, Some(Preset::Full)) | (None, None) => RunConfig::default(),
            };
            args.overrides.apply(&mut config);
            config.validate()?;
            let set = pipeline::run_generate(&config, &args.run_dir)?;
            for traj in &set.trajectories {
                println!(
                    "generated delta={}: {} resolved samples ({} outlier flux values)",
                    traj.delta,
                    traj.resolved.len(),
                    traj.flux_outlier_count
                );
            }
            Ok(())
        }
        Command::Train { run_dir } => {
            let (bundle, diagnostics) = pipeline::run_train(&run_dir)?;
            println!(
                "trained: {} samples, {} basis functions (per trajectory: {:?})",
                bundle.basis.num_samples(),
                bundle.basis.num_columns(),
                diagnostics.kept_columns
            );
            println!(
                "bandwidths: basis eps={:.6e}, conditioning eps={:.6e}",
                diagnostics.basis_epsilon, diagnostics.conditioning_epsilon
            );
            println!(
                "cholesky trace residuals: {:?}; sinkhorn iterations: {:?}",
                diagnostics.cholesky_trace_residuals, diagnostics.sinkhorn_iterations
            );
            Ok(())
        }
        Command::Predict {
            run_dir,
            delta,
            horizon,
            conditioning_period,
        } => {
            let deltas = resolve_deltas(&run_dir, delta)?;
            for d in deltas {
                let report = pipeline::run_predict(&run_dir, d, horizon, conditioning_period)?;
                print_summary(d, &report);
            }
            Ok(())
        }
        Command::Report { run_dir, delta } => {
            let deltas = resolve_deltas(&run_dir, delta)?;
            for d in deltas {
                let files = pipeline::run_report(&run_dir, d)?;
                println!(
                    "delta={d}: wrote {} files under {}",
                    files.len(),
                    pipeline::report_dir(&run_dir, d).display()
                );
            }
            Ok(())
        }
    }
}

fn resolve_deltas(run_dir: &std::path::Path, explicit: Vec<f64>) -> Result<Vec<f64>, qmcl_core::Error> {
    if explicit.is_empty() {
        Ok(pipeline::load_config(run_dir)?.test_deltas)
    } else {
        Ok(explicit)
    }
}

fn print_summary(delta: f64, report: &PredictionReport) {
    println!(
        "predicted delta={delta}: {} coarse steps, conditioning every {}",
        report.horizon(),
        report.conditioning_period
    );
    if let Some(truth) = &report.truth {
        let nrmse = PredictionReport::normalized_rmse;
        println!(
            "  h: nrmse qmcl={:.4} zero-closure={:.4}",
            nrmse(&report.predicted.h, &truth.h),
            nrmse(&report.zero_closure.h, &truth.h)
        );
        println!(
            "  q: nrmse qmcl={:.4} zero-closure={:.4}",
            nrmse(&report.predicted.q, &truth.q),
            nrmse(&report.zero_closure.q, &truth.q)
        );
    }
    if !report.skipped_conditioning.is_empty() {
        println!(
            "  conditioning kept the prior at {} (step, cell) pairs",
            report.skipped_conditioning.len()
        );
    }
    println!(
        "  wall clock: {:.2}s total, {:.2}s conditioning",
        report.timings.total_seconds, report.timings.conditioning_seconds
    );
}
