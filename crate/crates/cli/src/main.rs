use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};

use qratio::checkpoint;
use qratio::config::{self, ConfigOverrides};
use qratio::experiment;
use qratio::{config_err, CliError};
use qratio_core::eval::run_eval;
use qratio_core::trainer::{configure_run, lr_for_k, RunSpec, Trainer};

#[derive(Parser)]
#[command(
    name = "qratio",
    version,
    about = "Deep Q-learning sweeps over the learning-step ratio with a coupled learning-rate grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the full (ratio, k, seed) sweep and write CSV outputs.
    Run(RunArgs),
    /// Train one (ratio, k, seed) cell and print its final scores.
    Single(SingleArgs),
    /// Greedily evaluate a saved agent checkpoint.
    Eval(EvalArgs),
    /// Print the learning-rate grid a ratio trains over.
    Grid(GridArgs),
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct SingleArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// update:step ratio for this run.
    #[arg(long, default_value = "1:1")]
    ratio: String,
    /// Learning-rate grid exponent; ignored when --learning-rate is given.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    k: i32,
    /// Seed id, combined with the base seed into the run seed.
    #[arg(long, default_value_t = 0)]
    seed_id: u64,
    /// Write the trained agent here.
    #[arg(long, value_name = "PATH")]
    save_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Agent checkpoint from `single --save-checkpoint`.
    #[arg(long, value_name = "PATH")]
    checkpoint: PathBuf,
    /// Greedy episodes to average (default: the config's eval_episodes).
    #[arg(long)]
    episodes: Option<usize>,
    /// Base seed; episode i resets from eval_seed + i.
    #[arg(long, default_value_t = 0)]
    eval_seed: u64,
}

#[derive(Args)]
struct GridArgs {
    /// update:step ratio whose grid to print.
    #[arg(long, default_value = "1:1")]
    ratio: String,
    /// Grid exponents to include.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-2,-1,0,1,2"
    )]
    k_values: Vec<i32>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            process::exit(code);
        }
    };
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Single(args) => cmd_single(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Grid(args) => cmd_grid(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let cfg = config::resolve(&args.overrides)?;
    let runs = cfg.ratios.len() * cfg.k_values.len() * cfg.train.seeds.len();
    eprintln!(
        "sweep: {} ratios x {} lrs x {} seeds = {} runs -> {}",
        cfg.ratios.len(),
        cfg.k_values.len(),
        cfg.train.seeds.len(),
        runs,
        cfg.output_dir.display()
    );
    let report = experiment::run_experiment(&cfg)?;
    for (i, ratio) in report.grid.ratios.iter().enumerate() {
        let best = report.grid.best_k_index[i];
        let k = report.grid.k_values[best];
        println!(
            "ratio={ratio} best_k={k} lr={} final_score={}",
            lr_for_k(*ratio, k),
            report.grid.scores[i][best]
        );
    }
    eprintln!(
        "done: {} runs, {} diverged",
        report.rows.len(),
        report.diverged_runs
    );
    Ok(())
}

fn cmd_single(args: SingleArgs) -> Result<(), CliError> {
    let cfg = config::resolve(&args.overrides)?;
    let ratio = config::parse_ratio(&args.ratio)?;
    let spec = RunSpec {
        ratio,
        k: args.k,
        seed_id: args.seed_id,
    };
    let (mut train_cfg, run_seed) = configure_run(&cfg.train, cfg.base_seed, spec);
    if let Some(lr) = args.overrides.learning_rate {
        train_cfg.learning_rate = lr;
    }
    let mut trainer = Trainer::new(train_cfg.clone(), run_seed).map_err(config_err)?;
    trainer.run_to_completion().map_err(config_err)?;
    if let Some(path) = &args.save_checkpoint {
        checkpoint::save(path, trainer.agent())?;
        eprintln!("checkpoint -> {}", path.display());
    }
    let result = trainer.finish();
    println!(
        "ratio={} k={} lr={} seed_id={} run_seed={} final_score={} final_reward={} diverged={}",
        ratio,
        args.k,
        train_cfg.learning_rate,
        args.seed_id,
        run_seed,
        result.final_score,
        result.final_reward,
        result.diverged
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = config::resolve(&args.overrides)?;
    let agent = checkpoint::load(&args.checkpoint)?;
    let mut env = cfg
        .train
        .env
        .build(cfg.train.frame_skip)
        .map_err(config_err)?;
    let episodes = args.episodes.unwrap_or(cfg.train.eval_episodes);
    let point = run_eval(
        &agent.online,
        env.as_mut(),
        episodes,
        args.eval_seed,
        agent.learn_steps_done,
    )
    .map_err(config_err)?;
    println!(
        "episodes={episodes} mean_score={} mean_reward={}",
        point.mean_score, point.mean_reward
    );
    Ok(())
}

fn cmd_grid(args: GridArgs) -> Result<(), CliError> {
    let ratio = config::parse_ratio(&args.ratio)?;
    println!("k,lr");
    for &k in &args.k_values {
        println!("{k},{}", lr_for_k(ratio, k));
    }
    Ok(())
}
