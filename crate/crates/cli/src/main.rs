use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bikd::config::{ResolvedRun, RunConfig};
use bikd::data::{prepare_cohort, read_dataset, split_by_time, write_dataset, SubjectDataset};
use bikd::eval::{
    ablate, compute_metrics, emit_ablation, emit_report, parse_report_csv, predict_samples, rows_markdown, AblationAxis,
    LooContext, ReportFormat,
};
use bikd::losses::DivergenceKind;
use bikd::models::{load_checkpoint, save_checkpoint};
use bikd::trainer::{distill, pretrain_pool, PassiveRule};
use bikd::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Pool pretraining and bi-directional distillation for per-subject
/// seizure prediction.
#[derive(Parser, Debug)]
#[command(name = "bikd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the cohort and of training.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Read subject datasets from this directory instead of generating them.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// mse, kl or logistic.
    #[arg(long)]
    divergence: Option<String>,
    /// damped, ema or literal.
    #[arg(long)]
    passive_rule: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic cohort and write one dataset file per subject.
    Generate(Common),
    /// Pretrain the pool model on the training splits of every subject but one.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Subject left out of pretraining.
        #[arg(long)]
        exclude: Option<u32>,
    },
    /// Distill a customized model for one subject from a pool checkpoint.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        subject: u32,
    },
    /// Score a checkpoint on a subject's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        subject: u32,
    },
    /// Leave-one-subject-out comparison of baseline and distilled models.
    Loo(Common),
    /// Leave-one-out over the cells of one ablation axis.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// loss, divergence or temperature.
        #[arg(long)]
        axis: String,
    },
    /// Render a CSV report as a markdown table.
    Report {
        /// CSV written by `loo`.
        #[arg(long)]
        input: PathBuf,
        /// Markdown destination; stdout if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_run(c: &Common) -> Result<ResolvedRun> {
    let mut run = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        run.set_seed(seed);
    }
    let d = &mut run.distill;
    if let Some(t) = c.temperature {
        d.temperature = t;
    }
    if let Some(m) = c.momentum {
        d.momentum = m;
    }
    if let Some(s) = &c.divergence {
        d.divergence = s.parse::<DivergenceKind>()?;
    }
    if let Some(s) = &c.passive_rule {
        d.passive_rule = s.parse::<PassiveRule>()?;
    }
    run.validate()?;
    Ok(run)
}

fn subject_file(dir: &Path, subject: u32) -> PathBuf {
    dir.join(format!("subject_{subject:03}.dbds"))
}

fn load_cohort(c: &Common, run: &ResolvedRun) -> Result<Vec<SubjectDataset>> {
    let Some(dir) = &c.data else {
        return prepare_cohort(&run.cohort.to_spec()?);
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "dbds"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .dbds files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let samples = read_dataset(p)?;
            let subject = samples
                .first()
                .map(|s| s.subject)
                .ok_or_else(|| Error::Data(format!("{} holds no windows", p.display())))?;
            if samples.iter().any(|s| s.subject != subject) {
                return Err(Error::Data(format!("{} mixes several subjects", p.display())));
            }
            Ok(SubjectDataset { subject, samples })
        })
        .collect()
}

fn find_subject(cohort: &[SubjectDataset], subject: u32) -> Result<&SubjectDataset> {
    cohort
        .iter()
        .find(|d| d.subject == subject)
        .ok_or_else(|| Error::Parameter(format!("subject {subject} is not in the cohort")))
}

fn out_dir(c: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&c.out)?;
    Ok(&c.out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(c) => {
            let run = load_run(&c)?;
            let cohort = prepare_cohort(&run.cohort.to_spec()?)?;
            let out = out_dir(&c)?;
            for d in &cohort {
                let path = subject_file(out, d.subject);
                write_dataset(&path, &d.samples)?;
                println!("{}: {} windows", path.display(), d.samples.len());
            }
        }
        Command::Pretrain { common: c, exclude } => {
            let run = load_run(&c)?;
            let cohort = load_cohort(&c, &run)?;
            if let Some(s) = exclude {
                find_subject(&cohort, s)?;
            }
            let train = cohort
                .iter()
                .filter(|d| Some(d.subject) != exclude)
                .map(|d| {
                    let s = split_by_time(d.subject, &d.samples, run.split)?;
                    Ok(SubjectDataset { subject: d.subject, samples: s.train })
                })
                .collect::<Result<Vec<_>>>()?;
            let pool = pretrain_pool(&run.model, &train, &run.distill)?;
            let path = out_dir(&c)?.join("pool.ckpt");
            save_checkpoint(&pool.model, &path)?;
            let last = pool.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!("{}: {} subjects, final epoch loss {last:.4}", path.display(), train.len());
        }
        Command::Distill { common: c, pool, subject } => {
            let run = load_run(&c)?;
            let cohort = load_cohort(&c, &run)?;
            let d = find_subject(&cohort, subject)?;
            let splits = split_by_time(subject, &d.samples, run.split)?;
            let pool = load_checkpoint(&pool)?;
            let outcome = distill(&pool, &SubjectDataset { subject, samples: splits.train }, &run.distill)?;
            let out = out_dir(&c)?;
            save_checkpoint(&outcome.cus, out.join("cus.ckpt"))?;
            save_checkpoint(&outcome.pool, out.join("pool_prime.ckpt"))?;
            outcome.log.save_csv(out.join("trainlog.csv"))?;
            let m = compute_metrics(&predict_samples(&outcome.cus, &splits.test)?, &splits.test, run.cohort.timeline.window_s)?;
            println!(
                "subject {subject}: accuracy {:.3}%, fpr {:.3}/h, checkpoints in {}",
                100.0 * m.accuracy,
                m.fpr_per_hour,
                out.display()
            );
        }
        Command::Evaluate { common: c, checkpoint, subject } => {
            let run = load_run(&c)?;
            let cohort = load_cohort(&c, &run)?;
            let d = find_subject(&cohort, subject)?;
            let test = split_by_time(subject, &d.samples, run.split)?.test;
            let model = load_checkpoint(&checkpoint)?;
            let m = compute_metrics(&predict_samples(&model, &test)?, &test, run.cohort.timeline.window_s)?;
            let sens = m.sensitivity.map_or_else(|| "n/a".to_string(), |s| format!("{:.3}%", 100.0 * s));
            println!(
                "subject {subject}: accuracy {:.3}%, sensitivity {sens}, fpr {:.3}/h over {} windows",
                100.0 * m.accuracy,
                m.fpr_per_hour,
                test.len()
            );
        }
        Command::Loo(c) => {
            let run = load_run(&c)?;
            let cohort = load_cohort(&c, &run)?;
            let mut ctx = LooContext::new(&cohort, &run.model, run.split, run.cohort.timeline.window_s)?;
            let result = ctx.evaluate(&run.distill)?;
            let out = out_dir(&c)?;
            std::fs::write(out.join("report.csv"), emit_report(&result, ReportFormat::Csv)?)?;
            let md = emit_report(&result, ReportFormat::Markdown)?;
            std::fs::write(out.join("report.md"), &md)?;
            print!("{md}");
        }
        Command::Ablate { common: c, axis } => {
            let axis: AblationAxis = axis.parse()?;
            let run = load_run(&c)?;
            let cohort = load_cohort(&c, &run)?;
            let mut ctx = LooContext::new(&cohort, &run.model, run.split, run.cohort.timeline.window_s)?;
            let table = ablate(&mut ctx, &run.distill, axis)?;
            let out = out_dir(&c)?;
            let stem = format!("ablation_{}", axis.name());
            std::fs::write(out.join(format!("{stem}.csv")), emit_ablation(&table, ReportFormat::Csv)?)?;
            let md = emit_ablation(&table, ReportFormat::Markdown)?;
            std::fs::write(out.join(format!("{stem}.md")), &md)?;
            print!("{md}");
        }
        Command::Report { input, output } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| Error::Data(format!("cannot read {}: {e}", input.display())))?;
            let md = rows_markdown(&parse_report_csv(&text)?);
            match output {
                Some(p) => std::fs::write(p, md)?,
                None => print!("{md}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
