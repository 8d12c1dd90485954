//! Command-line surface.

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use coind_core::composition::{compile, CompositionExpr};
use coind_core::{CoindError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{preset, ExperimentConfig, Task, PRESETS};
use crate::pipeline::{samples_csv, Experiment};

#[derive(Debug, Parser)]
#[command(name = "coind", version, about = "Compositional diffusion experiments on the blob world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Config file or preset name.
    #[arg(long, short)]
    pub config: String,
    /// Overrides the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a preset's configuration as JSON.
    Preset {
        /// Omit to list preset names.
        name: Option<String>,
    },
    /// Generate and save the dataset.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one run (or every run) and save checkpoints and loss logs.
    Train {
        #[command(flatten)]
        common: Common,
        /// Run label; trains all runs when omitted.
        #[arg(long)]
        run: Option<String>,
        /// Continue from a saved optimizer state.
        #[arg(long)]
        resume: bool,
    },
    /// Compile an expression and sample from a trained run.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Composition expression, e.g. "c1=1 & !c2=0".
        #[arg(long)]
        expr: String,
        #[arg(long, default_value = "coind")]
        run: String,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        /// Output CSV; defaults to <output_dir>/<run>/samples.csv.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Print the compiled plan and stop.
        #[arg(long)]
        plan_only: bool,
    },
    /// Evaluate trained runs and write metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: Option<String>,
        /// Comma-separated subset of and, not, joint.
        #[arg(long)]
        tasks: Option<String>,
    },
    /// Collect saved metrics into report.md and pairs.csv.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Generate data, train and evaluate every run, then report.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
}

/// 2 for usage, parse and configuration errors, 1 otherwise.
pub fn exit_code(e: &CoindError) -> u8 {
    match e {
        CoindError::Parse { .. } | CoindError::Config(_) | CoindError::UnsupportedFragment { .. } => 2,
        _ => 1,
    }
}

fn experiment(common: &Common) -> Result<Experiment> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Experiment::new(cfg)
}

fn labels(exp: &Experiment, run: &Option<String>) -> Result<Vec<String>> {
    match run {
        Some(l) => Ok(vec![exp.cfg.run(l)?.label.clone()]),
        None => Ok(exp.cfg.runs.iter().map(|r| r.label.clone()).collect()),
    }
}

pub fn parse_tasks(s: &str) -> Result<Vec<Task>> {
    let tasks = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(Task::parse)
        .collect::<Result<Vec<_>>>()?;
    if tasks.is_empty() {
        return Err(CoindError::Config("task list is empty".into()));
    }
    Ok(tasks)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preset { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Command::Preset { name: Some(name) } => {
            let cfg = preset(&name).ok_or_else(|| {
                CoindError::Config(format!("unknown preset '{name}' ({})", PRESETS.join(", ")))
            })?;
            println!("{}", cfg.to_json()?);
        }
        Command::GenData { common } => {
            let exp = experiment(&common)?;
            let data = exp.gen_data()?;
            eprintln!("wrote {} samples to {}", data.len(), exp.data_path().display());
        }
        Command::Train { common, run, resume } => {
            if resume {
                return Err(CoindError::Config(
                    "--resume is not supported: checkpoints store weights only, not optimizer state".into(),
                ));
            }
            let exp = experiment(&common)?;
            let (train, _) = exp.split(&exp.data()?);
            for label in labels(&exp, &run)? {
                let steps = exp.cfg.training.steps;
                let out = exp.train_and_save(&train, &label, |row| {
                    if (row.step + 1) % 1000 == 0 || row.step + 1 == steps {
                        eprintln!("[{label}] step {} score {:.4} ci {:.5}", row.step + 1, row.score_loss, row.ci_loss);
                    }
                })?;
                eprintln!(
                    "[{label}] saved {} after {} steps",
                    exp.checkpoint_path(&label).display(),
                    out.log.len()
                );
            }
        }
        Command::Sample {
            common,
            expr,
            run,
            count,
            output,
            plan_only,
        } => {
            let exp = experiment(&common)?;
            let parsed = CompositionExpr::parse(&expr)?;
            let plan = compile(&parsed, &exp.world.space)?;
            let plan_json = plan.to_json()?;
            if plan_only {
                println!("{plan_json}");
                return Ok(());
            }
            exp.cfg.run(&run)?;
            let model = exp.load_model(&exp.checkpoint_path(&run))?;
            let mut rng = ChaCha8Rng::seed_from_u64(exp.cfg.seed_for(&format!("sample/{run}/{parsed}")));
            let x = exp.sample(&model, &plan, count, &mut rng)?;
            let labels: Vec<_> = x.outer_iter().map(|r| exp.classify(&r.to_vec())).collect();
            let path = output.unwrap_or_else(|| exp.run_dir(&run).join("samples.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CoindError::io(dir, e))?;
            }
            fs::write(&path, samples_csv(&x, &labels)).map_err(|e| CoindError::io(&path, e))?;
            let plan_path = path.with_extension("plan.json");
            fs::write(&plan_path, &plan_json).map_err(|e| CoindError::io(&plan_path, e))?;
            let allowed = parsed.relation_set(&exp.world.space);
            let hits = labels.iter().filter(|c| allowed.contains(c)).count();
            eprintln!(
                "wrote {count} samples to {}; {hits}/{count} satisfy {parsed}",
                path.display()
            );
        }
        Command::Eval { common, run, tasks } => {
            let exp = experiment(&common)?;
            let tasks = match tasks {
                Some(t) => parse_tasks(&t)?,
                None => exp.cfg.diagnostics.tasks.clone(),
            };
            let (_, test) = exp.split(&exp.data()?);
            for label in labels(&exp, &run)? {
                let model = exp.load_model(&exp.checkpoint_path(&label))?;
                let report = exp.evaluate(&model, &test, &label, &tasks)?;
                exp.save_metrics(&label, &report)?;
                eprintln!("[{label}] jsd {:.5} cs {:?}", report.jsd.unwrap_or(f64::NAN), report.cs);
            }
        }
        Command::Report { common } => {
            let exp = experiment(&common)?;
            let reports = exp
                .cfg
                .runs
                .iter()
                .map(|r| Ok((r.label.clone(), exp.load_metrics(&r.label)?)))
                .collect::<Result<Vec<_>>>()?;
            print!("{}", exp.report(&reports)?);
        }
        Command::RunAll { common } => {
            let exp = experiment(&common)?;
            exp.run_all(|msg| eprintln!("{msg}"))?;
            print!("{}", fs::read_to_string(exp.cfg.output_dir.join("report.md")).unwrap_or_default());
        }
    }
    Ok(())
}
