use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairexp::harness::{
    evaluate_offline, prepare_data, run_experiment, sweep, write_outputs, ExperimentConfig,
    SweepGrid,
};
use fairexp::ranker::read_checkpoint;
use fairexp::{Error, Result};

#[derive(Parser)]
#[command(name = "fairexp", version, about = "Fair online learning to rank simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv and summary.txt.
    Run(CommonArgs),
    /// Grid-search lambda, alpha and lambda_f on validation NDCG.
    Sweep(CommonArgs),
    /// Evaluate a saved checkpoint on the validation and test splits.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint file written by `run` with checkpoint=true.
        #[arg(long)]
        from: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// key=value configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<String>,
    /// SVMLight training file (needs --set group_feature=<id>).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Use generated data (the default when no dataset is given).
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    click_model: Option<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Threshold; `inf` disables the constraint.
    #[arg(long)]
    epsilon: Option<String>,
    /// Number or `auto`.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write fairswap.log.
    #[arg(long)]
    diagnostics: bool,
    /// Write the final ranker state to `checkpoint`.
    #[arg(long)]
    checkpoint: bool,
    /// Shuffle blocks uniformly instead of following certain orders.
    #[arg(long)]
    no_heuristic: bool,
    /// Any other configuration key, e.g. --set eval_stride=10.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if self.synthetic {
            cfg.set("synthetic", "true")?;
        }
        if let Some(p) = &self.dataset {
            cfg.set("dataset", &p.to_string_lossy())?;
        }
        for entry in &self.set {
            let (key, value) = entry
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{entry}'")))?;
            cfg.set(key.trim(), value.trim())?;
        }
        let flags: [(&str, Option<String>); 11] = [
            ("algorithm", self.algo.clone()),
            ("click_model", self.click_model.clone()),
            ("rounds", self.rounds.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
            ("epsilon", self.epsilon.clone()),
            ("beta", self.beta.clone()),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("out", self.out.as_ref().map(|p| p.to_string_lossy().into_owned())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if self.diagnostics {
            cfg.diagnostics = true;
        }
        if self.checkpoint {
            cfg.checkpoint = true;
        }
        if self.no_heuristic {
            cfg.heuristic = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn cmd_run(args: &CommonArgs) -> Result<ExitCode> {
    let cfg = args.build()?;
    let result = run_experiment(&cfg)?;
    let dir = out_dir(&cfg);
    write_outputs(&result, &dir)?;
    let s = &result.summary;
    println!(
        "{} rounds: offline_ndcg={:.4} cumulative_ndcg={:.2} |UF_T|={:.4} violations={} added_regret={}",
        s.rounds_completed,
        s.final_offline_ndcg,
        s.cumulative_ndcg,
        s.final_unfairness,
        s.violations,
        s.total_added_regret
    );
    println!("outputs written to {}", dir.display());
    if let Some(msg) = &result.aborted {
        eprintln!("run aborted at {msg}; partial trace written");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(args: &CommonArgs) -> Result<ExitCode> {
    let cfg = args.build()?;
    let (points, best) = sweep(&cfg, &SweepGrid::default())?;
    let dir = out_dir(&cfg);
    std::fs::create_dir_all(&dir)?;
    let mut out = BufWriter::new(File::create(dir.join("sweep.csv"))?);
    writeln!(out, "# fairexp sweep v1")?;
    writeln!(out, "lambda,alpha,lambda_f,validation_ndcg,final_offline_ndcg,cumulative_ndcg,final_unfairness")?;
    for p in &points {
        writeln!(
            out,
            "{},{},{},{:.10},{:.10},{:.10},{:.10}",
            p.config.lambda,
            p.config.alpha,
            p.config.lambda_f,
            p.validation_ndcg,
            p.summary.final_offline_ndcg,
            p.summary.cumulative_ndcg,
            p.summary.final_unfairness
        )?;
    }
    out.flush()?;
    let chosen = &points[best];
    std::fs::write(dir.join("best.conf"), chosen.config.to_kv_string())?;
    println!(
        "best: lambda={} alpha={} lambda_f={} validation_ndcg={:.4} ({} points, see {})",
        chosen.config.lambda,
        chosen.config.alpha,
        chosen.config.lambda_f,
        chosen.validation_ndcg,
        points.len(),
        dir.join("sweep.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: &CommonArgs, checkpoint: &Path) -> Result<ExitCode> {
    let cfg = args.build()?;
    let data = prepare_data(&cfg)?;
    let state = read_checkpoint(BufReader::new(File::open(checkpoint)?))?;
    println!("validation_ndcg={:.6}", evaluate_offline(&state, &data.validation)?);
    println!("test_ndcg={:.6}", evaluate_offline(&state, &data.test)?);
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Eval { common, from } => cmd_eval(common, from),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
