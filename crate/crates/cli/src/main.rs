use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use owalloc::allocator::{
    solve_dual, solve_exhaustive, uniform_allocation, AllocationProblem, AllocationSolution,
    Method, MultiplierUpdate,
};
use owalloc::bia::{build_supersymbol, random_decoding_trial};
use owalloc::config::Config;
use owalloc::dataset::{
    derive_seed, generate_dataset, read_dataset, sample_scenario, split_dataset, write_dataset,
    GenConfig, ProblemFile, SolutionFile,
};
use owalloc::harness::{
    emit_report, run_beamwaist_sweep, run_cdf_experiment, run_training_curves, training_pool,
    write_csv,
};
use owalloc::surrogate::{parse_arch, predict_and_repair, Normalizers, SurrogateModel};

#[derive(Parser)]
#[command(
    name = "owalloc",
    version,
    about = "Optical wireless resource allocation experiments"
)]
struct Cli {
    /// TOML file with [room], [channel], [solver], [surrogate] and [experiments] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; defaults to the first configured experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to experiments.out_dir.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a solver-labelled dataset CSV.
    GenDataset {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Defaults to <out-dir>/dataset.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a surrogate on a dataset CSV.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to <out-dir>/model.txt.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve one allocation problem.
    Solve {
        /// Problem TOML; a scenario is sampled from the config and seed when omitted.
        #[arg(long)]
        problem: Option<PathBuf>,
        /// dual, exhaustive, uniform or surrogate.
        #[arg(long, default_value = "dual")]
        method: Method,
        /// Required for --method surrogate.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Multiplier update for the dual method: newton or subgradient.
        #[arg(long)]
        update: Option<String>,
        /// Constraint-violation tolerance relative to max(rho); overrides solver.tol.
        #[arg(long)]
        tol: Option<f64>,
        /// Overrides solver.max_iters.
        #[arg(long)]
        max_iters: Option<usize>,
        /// Grid step for --method exhaustive.
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
    },
    /// Surrogate allocation for one problem.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        problem: Option<PathBuf>,
        /// Refinement iterations; defaults to surrogate.refine.
        #[arg(long)]
        refine: Option<usize>,
    },
    /// Check BIA decoding on random channels.
    VerifyBia {
        #[arg(long)]
        aps: usize,
        #[arg(long)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
    },
    /// Sum rate against beam waist.
    SweepBeamwaist {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Sum-rate samples over random user drops.
    Cdf {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Training and validation MSE for each configured dataset size.
    TrainingCurves {
        /// Labelled pool to draw nested subsets from; generated when omitted.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// SVG plots for experiment CSVs.
    Report {
        /// Defaults to the experiment CSVs present in <out-dir>.
        csv: Vec<PathBuf>,
    },
}

const CURVES_CSV: &str = "training_curves.csv";
const SWEEP_CSV: &str = "beamwaist_sweep.csv";
const CDF_CSV: &str = "sum_rate_cdf.csv";

struct Ctx {
    cfg: Config,
    seed: Option<u64>,
    out_dir: PathBuf,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.cfg.experiments.seeds[0])
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn problem(&self, path: Option<&Path>) -> Result<AllocationProblem> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                ProblemFile::from_toml(&text).with_context(|| format!("parsing {}", p.display()))
            }
            None => {
                let seed = derive_seed(self.seed(), 0);
                Ok(sample_scenario(seed, &GenConfig::from_config(&self.cfg))?.problem)
            }
        }
    }
}

fn load_model(path: &Path) -> Result<SurrogateModel> {
    SurrogateModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn write_solution(ctx: &Ctx, sol: &AllocationSolution, problem: &AllocationProblem) -> Result<()> {
    std::fs::create_dir_all(&ctx.out_dir)?;
    let file = SolutionFile::from_solution(sol, problem);
    std::fs::write(ctx.out("solution.toml"), file.to_toml())?;
    std::fs::write(ctx.out("trace.csv"), sol.trace_csv())?;
    println!(
        "method {} utility {:.6} sum rate {:.6} feasible {} iterations {}",
        sol.method, sol.utility, file.sum_rate, sol.feasible, sol.iterations
    );
    if let Some(d) = &sol.diagnostic {
        println!("note: {d}");
    }
    println!(
        "wrote {} and {}",
        ctx.out("solution.toml").display(),
        ctx.out("trace.csv").display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let out_dir = cli
        .out_dir
        .clone()
        .unwrap_or_else(|| cfg.experiments.out_dir.clone());
    let ctx = Ctx {
        cfg,
        seed: cli.seed,
        out_dir,
    };
    let cfg = &ctx.cfg;

    match cli.command {
        Command::GenDataset { samples, output } => {
            let path = output.unwrap_or_else(|| ctx.out("dataset.csv"));
            let ds = generate_dataset(
                samples,
                ctx.seed(),
                &GenConfig::from_config(cfg),
                &cfg.solver,
            )?;
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            write_dataset(&ds, &path)?;
            println!(
                "wrote {} samples ({} dropped) to {}",
                ds.len(),
                ds.dropped,
                path.display()
            );
        }
        Command::Train { dataset, output } => {
            let ds =
                read_dataset(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
            let seed = ctx.seed();
            let (train, val) =
                split_dataset(&ds, cfg.experiments.train_fraction, derive_seed(seed, 1))?;
            let norm = Normalizers::fit(&ds, cfg.surrogate.output)?;
            let arch = parse_arch(&cfg.surrogate.arch)?;
            let mut model = SurrogateModel::init(
                &arch,
                ds.layout,
                cfg.surrogate.output,
                norm,
                derive_seed(seed, 2),
            )?;
            model.train(&train, &val, &cfg.surrogate, derive_seed(seed, 3))?;
            let path = output.unwrap_or_else(|| ctx.out("model.txt"));
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            model.save(&path)?;
            let mut history = String::from("epoch,train_mse,val_mse\n");
            for h in &model.history {
                history.push_str(&format!("{},{},{}\n", h.epoch, h.train_mse, h.val_mse));
            }
            let hist_path = write_csv(&ctx.out_dir, "train_history.csv", &history)?;
            if let Some(last) = model.history.last() {
                println!(
                    "epoch {}: train mse {:.6}, val mse {:.6}",
                    last.epoch, last.train_mse, last.val_mse
                );
            }
            println!("wrote {} and {}", path.display(), hist_path.display());
        }
        Command::Solve {
            problem,
            method,
            model,
            update,
            tol,
            max_iters,
            grid_step,
        } => {
            let p = ctx.problem(problem.as_deref())?;
            let mut solver = cfg.solver.clone();
            if let Some(u) = update {
                solver.update = match u.as_str() {
                    "newton" => MultiplierUpdate::Newton,
                    "subgradient" => MultiplierUpdate::Subgradient,
                    other => bail!(
                        "unknown multiplier update {other:?} (expected newton or subgradient)"
                    ),
                };
            }
            if let Some(t) = tol {
                solver.tol = t;
            }
            if let Some(n) = max_iters {
                solver.max_iters = n;
            }
            let sol = match method {
                Method::Dual => solve_dual(&p, &solver)?,
                Method::Exhaustive => solve_exhaustive(&p, grid_step)?,
                Method::Uniform => uniform_allocation(&p),
                Method::Surrogate => {
                    let Some(m) = model else {
                        bail!("--method surrogate needs --model");
                    };
                    predict_and_repair(&load_model(&m)?, &p, cfg.surrogate.refine, &solver)?
                }
            };
            write_solution(&ctx, &sol, &p)?;
        }
        Command::Predict {
            model,
            problem,
            refine,
        } => {
            let p = ctx.problem(problem.as_deref())?;
            let m = load_model(&model)?;
            let sol =
                predict_and_repair(&m, &p, refine.unwrap_or(cfg.surrogate.refine), &cfg.solver)?;
            write_solution(&ctx, &sol, &p)?;
        }
        Command::VerifyBia {
            aps,
            users,
            draws,
            noise_std,
        } => {
            let plan = build_supersymbol(aps, users)?;
            plan.check_invariants()?;
            let mut worst: f64 = 0.0;
            for d in 0..draws {
                let report = random_decoding_trial(
                    aps,
                    users,
                    noise_std,
                    derive_seed(ctx.seed(), d as u64),
                )?;
                worst = worst.max(report.residual);
            }
            let path = write_csv(&ctx.out_dir, "bia_plan.txt", &plan.to_text())?;
            println!(
                "L={aps} K={users}: supersymbol length {}, {} symbols per user, worst residual over {draws} draws {worst:.3e}",
                plan.len(),
                plan.symbols_per_user()
            );
            println!("wrote {}", path.display());
        }
        Command::SweepBeamwaist { model } => {
            let m = model.as_deref().map(load_model).transpose()?;
            let sweep = run_beamwaist_sweep(cfg, ctx.seed(), m.as_ref())?;
            let path = write_csv(&ctx.out_dir, SWEEP_CSV, &sweep.to_csv())?;
            print!("{}", sweep.to_csv());
            println!("wrote {}", path.display());
        }
        Command::Cdf { model } => {
            let m = model.as_deref().map(load_model).transpose()?;
            let cdf = run_cdf_experiment(cfg, ctx.seed(), m.as_ref())?;
            let path = write_csv(&ctx.out_dir, CDF_CSV, &cdf.to_csv())?;
            println!(
                "wrote {} drops x {} methods to {}",
                cdf.drops.len(),
                cdf.methods().len(),
                path.display()
            );
        }
        Command::TrainingCurves { pool } => {
            let seeds = match ctx.seed {
                Some(s) => vec![s],
                None => cfg.experiments.seeds.clone(),
            };
            let given = pool
                .as_deref()
                .map(|p| read_dataset(p).with_context(|| format!("reading {}", p.display())))
                .transpose()?;
            std::fs::create_dir_all(&ctx.out_dir)?;
            let mut all = owalloc::harness::TrainingCurves::default();
            for seed in seeds {
                let pool = match &given {
                    Some(ds) => ds.clone(),
                    None => training_pool(cfg, seed)?,
                };
                let curves = run_training_curves(cfg, seed, &pool)?;
                for run in &curves.runs {
                    run.model.save(
                        &ctx.out(&format!("model_seed{}_n{}.txt", run.seed, run.dataset_size)),
                    )?;
                }
                all.extend(curves);
            }
            let path = write_csv(&ctx.out_dir, CURVES_CSV, &all.to_csv())?;
            println!("wrote {} rows to {}", all.rows.len(), path.display());
        }
        Command::Report { csv } => {
            let paths = if csv.is_empty() {
                [CURVES_CSV, SWEEP_CSV, CDF_CSV]
                    .iter()
                    .map(|n| ctx.out(n))
                    .filter(|p| p.exists())
                    .collect()
            } else {
                csv
            };
            if paths.is_empty() {
                bail!("no experiment CSVs found in {}", ctx.out_dir.display());
            }
            for p in emit_report(&paths, &ctx.out_dir)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
