//! Data generation, training, sampling, evaluation and reporting for one
//! experiment configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use coind_core::attribute_space::{build_support, unseen_compositions, Composition, SupportPattern};
use coind_core::composition::{
    compile, sample_langevin, sample_reverse, CompositionExpr, GuidancePlan, LangevinConfig,
};
use coind_core::diagnostics::{
    conformity_score, diversity_entropy, jsd_violation, render_markdown, pairs_csv, ConformityReport,
    MetricsReport, RunSummary,
};
use coind_core::diffusion::{checkpoint, ConditionVector, EpsScoreField, NoiseSchedule, ScoreNet};
use coind_core::synth_world::{classify, generate_dataset, Dataset, WorldConfig};
use coind_core::training::{train_with_observer, write_log_csv, LogRow, TrainOutcome};
use coind_core::{CoindError, Result};
use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{ExperimentConfig, RunSpec, SamplerKind, Task};

/// A validated configuration with its derived world, support and schedule.
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub world: WorldConfig,
    pub support: SupportPattern,
    pub schedule: NoiseSchedule,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CoindError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CoindError::io(path, e))
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoindError::io(dir, e))
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let world = cfg.world.build()?;
        let support = build_support(world.space.clone(), cfg.support.clone())?;
        let schedule = cfg.schedule.build()?;
        Ok(Self {
            cfg,
            world,
            support,
            schedule,
        })
    }

    pub fn data_path(&self) -> PathBuf {
        self.cfg.output_dir.join("data.csv")
    }

    pub fn run_dir(&self, label: &str) -> PathBuf {
        self.cfg.output_dir.join(label)
    }

    pub fn checkpoint_path(&self, label: &str) -> PathBuf {
        self.run_dir(label).join("model.ckpt")
    }

    pub fn metrics_path(&self, label: &str) -> PathBuf {
        self.run_dir(label).join("metrics.json")
    }

    pub fn generate_data(&self) -> Result<Dataset> {
        generate_dataset(
            &self.world,
            &self.support,
            self.cfg.dataset.count,
            self.cfg.seed_for("data"),
        )
    }

    /// Generates the dataset and writes the CSV plus its JSON sidecar.
    pub fn gen_data(&self) -> Result<Dataset> {
        mkdir(&self.cfg.output_dir)?;
        let data = self.generate_data()?;
        data.save(&self.data_path())?;
        Ok(data)
    }

    /// Loads the saved dataset, generating it first when absent.
    pub fn data(&self) -> Result<Dataset> {
        let path = self.data_path();
        if !path.exists() {
            return self.gen_data();
        }
        let data = Dataset::load(&path)?;
        if data.world != self.world || data.support.kind() != self.support.kind() {
            return Err(CoindError::Config(format!(
                "{} was generated for a different world or support",
                path.display()
            )));
        }
        Ok(data)
    }

    /// Training and held-out parts.
    pub fn split(&self, data: &Dataset) -> (Dataset, Dataset) {
        data.split(self.cfg.dataset.test_fraction)
    }

    pub fn train_run(
        &self,
        train: &Dataset,
        run: &RunSpec,
        observer: impl FnMut(&LogRow),
    ) -> Result<TrainOutcome> {
        let arch = self.cfg.network.architecture(&self.cfg.world.cardinalities);
        let model = ScoreNet::new(arch, self.cfg.seed_for(&format!("init/{}", run.label)))?;
        let tc = self.cfg.training_for(run, self.cfg.seed_for(&format!("train/{}", run.label)));
        train_with_observer(train, &self.schedule, model, &tc, observer)
    }

    /// Trains one run and writes its checkpoint, loss log and effective
    /// training config.
    pub fn train_and_save(&self, train: &Dataset, label: &str, observer: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
        let run = self.cfg.run(label)?.clone();
        let out = self.train_run(train, &run, observer)?;
        let dir = self.run_dir(label);
        mkdir(&dir)?;
        checkpoint::save(&self.checkpoint_path(label), &out.model, &self.schedule)?;
        write_log_csv(&dir.join("train_log.csv"), &out.log)?;
        let tc = self.cfg.training_for(&run, self.cfg.seed_for(&format!("train/{label}")));
        write(&dir.join("training.json"), &serde_json::to_string_pretty(&tc)?)?;
        Ok(out)
    }

    pub fn load_model(&self, path: &Path) -> Result<ScoreNet> {
        let (model, schedule) = checkpoint::load(path)?;
        if schedule != self.schedule {
            return Err(CoindError::Checkpoint(format!(
                "{} was trained with a different noise schedule",
                path.display()
            )));
        }
        if model.architecture().cardinalities != self.cfg.world.cardinalities {
            return Err(CoindError::Checkpoint(format!(
                "{} was trained on a different attribute space",
                path.display()
            )));
        }
        Ok(model)
    }

    /// Draws `count` samples from a plan with the configured sampler.
    pub fn sample(&self, model: &ScoreNet, plan: &GuidancePlan, count: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
        match self.cfg.sampler.method {
            SamplerKind::Ddim { steps } => sample_reverse(plan, model, &self.schedule, steps, count, rng),
            SamplerKind::Langevin { steps_per_level, eta } => {
                let field = EpsScoreField {
                    predictor: model,
                    schedule: &self.schedule,
                };
                let lc = LangevinConfig { steps_per_level, eta };
                sample_langevin(plan, &field, &self.schedule, &lc, count, rng)
            }
        }
    }

    pub fn classify(&self, x: &[f64]) -> Composition {
        classify(&self.world, x)
    }

    /// Unseen compositions (all of them for a full support), evenly thinned
    /// to `max_relations`.
    pub fn targets(&self) -> Vec<Composition> {
        let unseen = unseen_compositions(&self.support);
        let all: Vec<Composition> = if unseen.is_empty() {
            self.world.space.compositions().collect()
        } else {
            unseen.into_iter().collect()
        };
        match self.cfg.sampler.max_relations {
            Some(m) if m < all.len() => (0..m).map(|k| all[k * all.len() / m].clone()).collect(),
            _ => all,
        }
    }

    pub fn relations(&self, task: Task) -> Vec<(CompositionExpr, Vec<Composition>)> {
        let (i, j) = self.cfg.diagnostics.pair;
        self.targets()
            .into_iter()
            .map(|c| {
                let expr = match task {
                    Task::And | Task::Joint => CompositionExpr::all_of(&c),
                    Task::Not => CompositionExpr::and(vec![
                        CompositionExpr::lit(i, c[i]),
                        CompositionExpr::not(CompositionExpr::lit(j, c[j])),
                    ]),
                };
                let allowed = expr.relation_set(&self.world.space);
                (expr, allowed)
            })
            .collect()
    }

    /// Conformity of samples drawn for each relation of a task.
    pub fn conformity(&self, model: &ScoreNet, task: Task, seed: u64) -> Result<ConformityReport> {
        let relations = self.relations(task);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.world.space.n_attributes();
        let sampler = |expr: &CompositionExpr, k: usize| {
            let plan = match task {
                Task::Joint => {
                    let cells = expr.relation_set(&self.world.space);
                    GuidancePlan::single(&ConditionVector::full(&cells[0]))
                }
                _ => compile(expr, &self.world.space)?,
            };
            debug_assert_eq!(plan.n_attributes(), n);
            self.sample(model, &plan, k, &mut rng)
        };
        conformity_score(sampler, &relations, |x| self.classify(x), self.cfg.sampler.samples_per_relation)
    }

    /// Entropy (bits) of the second pair attribute when conditioning on each
    /// value of the first alone. Values never observed in training are
    /// skipped.
    pub fn entropies(&self, model: &ScoreNet, seed: u64) -> Result<BTreeMap<String, f64>> {
        let (i, j) = self.cfg.diagnostics.pair;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let marginal = self.support.attribute_marginal(i);
        let card = self.world.space.cardinality(j);
        let mut out = BTreeMap::new();
        let mut values = Vec::new();
        for (v, &p) in marginal.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let plan = compile(&CompositionExpr::lit(i, v), &self.world.space)?;
            let x = self.sample(model, &plan, self.cfg.diagnostics.entropy_samples, &mut rng)?;
            let h = diversity_entropy(x.view(), |x| self.classify(x), j, card)?;
            out.insert(format!("c{}|c{}={v}", j + 1, i + 1), h);
            values.push(h);
        }
        if !values.is_empty() {
            out.insert(
                entropy_key(self.cfg.diagnostics.pair),
                values.iter().sum::<f64>() / values.len() as f64,
            );
        }
        Ok(out)
    }

    /// Independence violation on held-out points, conformity for each task
    /// and single-attribute entropy.
    pub fn evaluate(&self, model: &ScoreNet, test: &Dataset, label: &str, tasks: &[Task]) -> Result<MetricsReport> {
        if tasks.is_empty() {
            return Err(CoindError::Config("task list is empty".into()));
        }
        let d = &self.cfg.diagnostics;
        let points = test.x_matrix();
        let rows = d.eval_points.min(points.nrows());
        let jsd = jsd_violation(
            model,
            &self.schedule,
            &self.world.space,
            points.slice(s![..rows, ..]),
            d.pair,
            &d.implicit,
        )?;
        let mut report = MetricsReport {
            jsd: Some(jsd),
            ..MetricsReport::default()
        };
        report.sample_counts.insert("jsd_points".into(), rows);
        for &task in tasks {
            let cr = self.conformity(model, task, self.cfg.seed_for(&format!("eval/{label}/{}", task.name())))?;
            if let Some(cs) = cr.cs {
                report.cs.insert(task.name().into(), cs);
            }
            let total: usize = cr.relations.iter().map(|r| r.samples).sum();
            report.sample_counts.insert(task.name().into(), total);
        }
        report.entropy = self.entropies(model, self.cfg.seed_for(&format!("eval/{label}/entropy")))?;
        report.config = json!({
            "experiment": self.cfg.name,
            "run": self.cfg.run(label).ok(),
            "support": self.support.kind(),
            "sampler": self.cfg.sampler,
            "diagnostics": self.cfg.diagnostics,
        });
        Ok(report)
    }

    pub fn save_metrics(&self, label: &str, report: &MetricsReport) -> Result<()> {
        write(&self.metrics_path(label), &report.to_json()?)?;
        write(&self.run_dir(label).join("metrics.csv"), &report.to_csv()?)
    }

    pub fn load_metrics(&self, label: &str) -> Result<MetricsReport> {
        let path = self.metrics_path(label);
        let text = fs::read_to_string(&path).map_err(|e| CoindError::io(&path, e))?;
        MetricsReport::from_json(&text)
    }

    pub fn summary(&self, label: &str, report: &MetricsReport) -> Result<RunSummary> {
        let jsd = report
            .jsd
            .ok_or_else(|| CoindError::Config(format!("run '{label}' has no JSD")))?;
        let cs = report
            .cs
            .get("and")
            .or_else(|| report.cs.values().next())
            .copied()
            .ok_or_else(|| CoindError::Config(format!("run '{label}' has no conformity score")))?;
        Ok(RunSummary {
            support: self.support.kind().name().to_string(),
            objective: label.to_string(),
            jsd,
            cs,
            entropy: report.entropy.get(&entropy_key(self.cfg.diagnostics.pair)).copied(),
        })
    }

    /// Writes `report.md` and `pairs.csv`; returns the Markdown.
    pub fn report(&self, reports: &[(String, MetricsReport)]) -> Result<String> {
        let rows = reports
            .iter()
            .map(|(l, r)| self.summary(l, r))
            .collect::<Result<Vec<_>>>()?;
        let mut md = format!("# {}\n\nJSD in nats, CS from AND plans on target compositions.\n\n", self.cfg.name);
        md.push_str(&render_markdown(&rows));
        let with_h: Vec<_> = rows.iter().filter_map(|r| r.entropy.map(|h| (r, h))).collect();
        if !with_h.is_empty() {
            md.push_str(&format!(
                "\nMean entropy (bits) of {} under single-attribute conditioning:\n\n",
                entropy_key(self.cfg.diagnostics.pair)
            ));
            for (r, h) in with_h {
                md.push_str(&format!("- {}: {h:.3}\n", r.objective));
            }
        }
        write(&self.cfg.output_dir.join("report.md"), &md)?;
        write(&self.cfg.output_dir.join("pairs.csv"), &pairs_csv(&rows)?)?;
        Ok(md)
    }

    /// Data, every run's training and evaluation, then the report.
    pub fn run_all(&self, mut progress: impl FnMut(&str)) -> Result<Vec<(String, MetricsReport)>> {
        let data = self.gen_data()?;
        progress(&format!("generated {} samples", data.len()));
        let (train, test) = self.split(&data);
        let mut reports = Vec::new();
        for run in &self.cfg.runs {
            let steps = self.cfg.training.steps;
            let out = self.train_and_save(&train, &run.label, |row| {
                if (row.step + 1) % 1000 == 0 || row.step + 1 == steps {
                    progress(&format!(
                        "[{}] step {} score {:.4} ci {:.5}",
                        run.label,
                        row.step + 1,
                        row.score_loss,
                        row.ci_loss
                    ));
                }
            })?;
            let report = self.evaluate(&out.model, &test, &run.label, &self.cfg.diagnostics.tasks)?;
            self.save_metrics(&run.label, &report)?;
            progress(&format!(
                "[{}] jsd {:.5} cs {:?}",
                run.label,
                report.jsd.unwrap_or(f64::NAN),
                report.cs
            ));
            reports.push((run.label.clone(), report));
        }
        self.report(&reports)?;
        Ok(reports)
    }
}

pub fn entropy_key(pair: (usize, usize)) -> String {
    format!("c{}|c{}", pair.1 + 1, pair.0 + 1)
}

/// Sample rows followed by their classified labels.
pub fn samples_csv(x: &Array2<f64>, labels: &[Composition]) -> String {
    let mut w = String::new();
    let n = labels.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..x.ncols())
        .map(|k| format!("x{k}"))
        .chain((0..n).map(|k| format!("c{k}")))
        .collect();
    w.push_str(&header.join(","));
    w.push('\n');
    for (row, c) in x.outer_iter().zip(labels) {
        let fields: Vec<String> = row
            .iter()
            .map(|v| v.to_string())
            .chain(c.iter().map(|v| v.to_string()))
            .collect();
        w.push_str(&fields.join(","));
        w.push('\n');
    }
    w
}
