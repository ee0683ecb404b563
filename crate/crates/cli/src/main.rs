use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use skillcalc::ctcs::{run_curriculum, Curriculum};
use skillcalc::expr::{generate_samples, write_dataset, TaskSpec};
use skillcalc::harness::{self, RunConfig, Tracer};
use skillcalc::ism::scripted::ScriptedSkill;
use skillcalc::ism::IsmConfig;
use skillcalc::nn::check_all;

/// Exit status for a wrong answer, a failed gradient check or an accuracy
/// below the requested floor.
const MISMATCH: u8 = 1;
const ERROR: u8 = 2;

#[derive(Parser)]
#[command(
    name = "skillcalc",
    version,
    about = "Hierarchical skill-module arithmetic calculator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated dataset, one `input<TAB>answer` line per sample.
    Generate {
        /// Task id such as S+S, M*S or expr+-*/().
        #[arg(long)]
        task: String,
        /// Exact input length; otherwise the task's curriculum settings.
        #[arg(long)]
        length: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the curriculum and write checkpoints, curves and a summary.
    Train {
        /// TOML run configuration; defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        no_curriculum: bool,
        #[arg(long)]
        no_difficulty_sampling: bool,
        #[arg(long)]
        no_parameter_adjustment: bool,
        /// Entropy coefficient used with --no-parameter-adjustment.
        #[arg(long)]
        fixed_alpha: Option<f64>,
    },
    /// Greedy exact-match accuracy grid over tasks and input lengths.
    Eval {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', default_value = "M+M,M*S,expr+-*/()")]
        tasks: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the grid here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit with status 1 if any cell falls below this accuracy.
        #[arg(long)]
        min_accuracy: Option<f64>,
    },
    /// Step-by-step execution of one expression.
    Trace {
        #[command(flatten)]
        source: Source,
        /// Module to run; the full expression task by default.
        #[arg(long, default_value = "expr+-*/()")]
        task: String,
        expression: String,
    },
    /// Finite-difference check of every differentiable substrate op.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb analytic gradients; the check must then fail.
        #[arg(long, hide = true)]
        corrupt: bool,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Use hand-written policies over exact sub-skills.
    #[arg(long)]
    scripted: bool,
    /// Use the modules trained into this run directory.
    #[arg(long)]
    run: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(ERROR)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Generate {
            task,
            length,
            count,
            seed,
            out,
        } => generate(&task, length, count, seed, out),
        Command::Train {
            config,
            seed,
            output_dir,
            no_curriculum,
            no_difficulty_sampling,
            no_parameter_adjustment,
            fixed_alpha,
        } => {
            let mut rc = match &config {
                Some(p) => {
                    RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?
                }
                None => RunConfig::default(),
            };
            if let Some(s) = seed {
                rc.seed = s;
            }
            rc.ablation.no_curriculum |= no_curriculum;
            rc.ablation.no_difficulty_sampling |= no_difficulty_sampling;
            rc.ablation.no_parameter_adjustment |= no_parameter_adjustment;
            if let Some(a) = fixed_alpha {
                rc.ablation.fixed_alpha = a;
            }
            let dir = output_dir.unwrap_or_else(|| rc.resolved_output_dir());
            train(&rc, dir)
        }
        Command::Eval {
            source,
            tasks,
            lengths,
            n,
            seed,
            out,
            min_accuracy,
        } => {
            let registry = match &source.run {
                Some(dir) => harness::load_registry(dir)?,
                None => harness::scripted_registry()?,
            };
            let report = harness::evaluate(&registry, &tasks, &lengths, n, seed)?;
            let tsv = report.to_tsv();
            print!("{tsv}");
            if let Some(p) = out {
                fs::write(&p, &tsv).with_context(|| format!("writing {}", p.display()))?;
                fs::write(
                    p.with_extension("json"),
                    serde_json::to_string_pretty(&report)?,
                )?;
            }
            let low =
                min_accuracy.is_some_and(|floor| report.min_accuracy().is_some_and(|m| m < floor));
            Ok(if low { MISMATCH } else { 0 })
        }
        Command::Trace {
            source,
            task,
            expression,
        } => {
            let tracer = match &source.run {
                Some(dir) => Tracer::Learned(harness::load_interactive(dir, &task)?),
                None => Tracer::Scripted(ScriptedSkill::new(
                    &task,
                    harness::scripted_registry()?,
                    IsmConfig::default(),
                )?),
            };
            let report = harness::trace(&tracer, &expression)?;
            print!("{}", report.render());
            Ok(if report.matched { 0 } else { MISMATCH })
        }
        Command::Gradcheck { seed, corrupt } => {
            let reports = check_all(seed, corrupt);
            for r in &reports {
                println!(
                    "{}\t{}\t{:.3e}\t{}",
                    r.op,
                    r.checked,
                    r.max_rel_error,
                    if r.passed { "ok" } else { "FAIL" }
                );
            }
            Ok(if reports.iter().all(|r| r.passed) {
                0
            } else {
                MISMATCH
            })
        }
    }
}

fn generate(
    task: &str,
    length: Option<usize>,
    count: usize,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<u8> {
    let spec: TaskSpec = match length {
        Some(l) => match harness::eval_spec(task, l) {
            Some(s) => s,
            None => bail!("task {task} has no inputs of length {l}"),
        },
        None => match Curriculum::default_list()
            .tasks
            .into_iter()
            .find(|t| t.spec.id == task)
        {
            Some(t) => t.spec,
            None => bail!("unknown task {task}; pass --length to derive one"),
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = generate_samples(&spec, count, &mut rng)?;
    match out {
        Some(p) => write_dataset(&samples, &p)?,
        None => {
            for s in &samples {
                println!("{}\t{}", s.input, s.truth);
            }
        }
    }
    Ok(0)
}

fn train(rc: &RunConfig, dir: PathBuf) -> Result<u8> {
    let curriculum = rc.load_curriculum()?;
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), rc.to_toml()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rc.seed);
    let outcome = run_curriculum(
        &curriculum,
        &rc.curriculum_config(),
        &mut rng,
        Some(&dir),
        |task, p| {
            log::info!("{task}\t{}", p.tsv());
        },
    )?;
    let mut summary = String::from("task\tkind\tmastered\twork\tholdout_accuracy\n");
    for l in &outcome.logs {
        summary.push_str(&format!(
            "{}\t{:?}\t{}\t{}\t{:.4}\n",
            l.task, l.kind, l.mastered, l.work, l.holdout_accuracy
        ));
    }
    fs::write(dir.join("summary.tsv"), &summary)?;
    print!("{summary}");
    outcome.ensure_complete()?;
    Ok(0)
}
