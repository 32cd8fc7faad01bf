use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hgda::data::{load_features, load_labeled, load_labels, write_features, write_matrix};
use hgda::eval::{accuracy, knn_predict, run_benchmark, BenchmarkFile};
use hgda::solver::{admm_lp, linear_cost, marginals};
use hgda::{adapt, AdaptationConfig, Error};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "hgda", version, about = "Domain adaptation by class-regularized hyper-graph matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Move a labelled source towards a target and write the result.
    Adapt(AdaptArgs),
    /// 1-NN predictions, with accuracy when test labels are given.
    Evaluate(EvaluateArgs),
    /// Run every task listed in a TOML benchmark file.
    Benchmark(BenchmarkArgs),
    /// Compare the ADMM linear oracle with brute force over permutations.
    LpCheck(LpCheckArgs),
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    source_features: PathBuf,
    #[arg(long)]
    source_labels: PathBuf,
    #[arg(long)]
    target_features: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda2: f64,
    #[arg(long, default_value_t = 0.01)]
    lambda3: f64,
    #[arg(long, default_value_t = 0.01)]
    lambdag: f64,
    #[arg(long, default_value_t = 1)]
    nt_outer: usize,
    #[arg(long, default_value_t = 20)]
    cg_iters: usize,
    #[arg(long, default_value_t = 300)]
    admm_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    train_features: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_features: PathBuf,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Where to write predictions, one label per line.
    #[arg(long, default_value = "predictions.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the CSV table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LpCheckArgs {
    /// Matrix side, 1 to 8.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 300)]
    admm_iters: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Adapt(a) => run_adapt(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Benchmark(a) => run_benchmark_cmd(a),
        Command::LpCheck(a) => run_lp_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn create_dir(path: &Path) -> hgda::Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> hgda::Result<()> {
    fs::write(path, text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn run_adapt(args: AdaptArgs) -> hgda::Result<()> {
    let source = load_labeled(&args.source_features, &args.source_labels)?;
    let target = load_features(&args.target_features)?;
    let mut cfg = AdaptationConfig {
        eta: args.eta,
        lambda2: args.lambda2,
        lambda3: args.lambda3,
        lambda_g: args.lambdag,
        nt_outer: args.nt_outer,
        seed: args.seed,
        ..AdaptationConfig::default()
    };
    cfg.solver.cg_iters = args.cg_iters;
    cfg.solver.admm_iters = args.admm_iters;

    let out = adapt(&source, &target, &cfg)?;
    create_dir(&args.out)?;
    write_features(args.out.join("adapted.csv"), &out.adapted)?;
    write_matrix(args.out.join("matching.csv"), out.matching.values().view())?;
    let report = json!({
        "config": cfg,
        "source_rows": source.len(),
        "target_rows": target.nrows(),
        "source_exemplars": out.source_exemplars,
        "target_exemplars": out.target_exemplars,
        "final_feasibility": out.matching.feasibility(),
        "rounds": out.rounds,
    });
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_text(&args.out.join("report.json"), &text)?;
    if let Some(last) = out.rounds.last() {
        println!(
            "{} rounds, {} x {} exemplars, final objective {:.6e}",
            out.rounds.len(),
            last.source_exemplars,
            last.target_exemplars,
            last.solver.final_objective()
        );
    }
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> hgda::Result<()> {
    let train = load_labeled(&args.train_features, &args.train_labels)?;
    let test = load_features(&args.test_features)?;
    let predicted = knn_predict(&train, &test)?;
    let mut text = String::with_capacity(predicted.len() * 3);
    for p in &predicted {
        let _ = writeln!(text, "{p}");
    }
    write_text(&args.out, &text)?;
    if let Some(path) = &args.test_labels {
        let (truth, _) = load_labels(path, test.nrows())?;
        println!("accuracy {:.6}", accuracy(&predicted, &truth)?);
    }
    Ok(())
}

fn run_benchmark_cmd(args: BenchmarkArgs) -> hgda::Result<()> {
    let (file, specs) = BenchmarkFile::load(&args.spec)?;
    let table = run_benchmark(&specs, args.seed.unwrap_or(file.seed))?;
    eprint!("{}", table.to_text());
    let csv = table.to_csv();
    match &args.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    if table.rows.iter().all(|r| r.result.is_err()) {
        return Err(Error::InvalidInput("every task failed".into()));
    }
    Ok(())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn run_lp_check(args: LpCheckArgs) -> hgda::Result<()> {
    if !(1..=8).contains(&args.n) {
        return Err(Error::InvalidInput(format!("n = {} outside 1..=8", args.n)));
    }
    if args.trials == 0 || args.admm_iters == 0 {
        return Err(Error::InvalidInput("trials and admm-iters must be at least 1".into()));
    }
    let n = args.n;
    let perms = permutations(n);
    let (a, b) = marginals(n, n);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..args.trials {
        let g = Array2::from_shape_fn((n, n), |_| rng.random::<f64>());
        let z = admm_lp(&g, &a, &b, args.admm_iters)?;
        let best = perms
            .iter()
            .map(|p| (0..n).map(|i| g[[i, p[i]]]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max((linear_cost(&g, z.values()) - best).abs());
    }
    println!("max deviation {worst:.6e} over {} trials (n = {n})", args.trials);
    Ok(())
}
