//! Experiment configuration, shipped presets and seed derivation.

use std::fs;
use std::path::{Path, PathBuf};

use coind_core::attribute_space::{AttributeSpace, SupportKind};
use coind_core::diagnostics::ImplicitClassifierConfig;
use coind_core::diffusion::{Architecture, ScheduleConfig};
use coind_core::synth_world::WorldConfig;
use coind_core::training::{Objective, TrainingConfig};
use coind_core::{CoindError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSection {
    pub cardinalities: Vec<usize>,
    pub sigma: f64,
    /// Evenly spaced on `[-1, 1]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<Vec<f64>>>,
}

impl WorldSection {
    pub fn build(&self) -> Result<WorldConfig> {
        let space = AttributeSpace::new(self.cardinalities.clone())?;
        match &self.embeddings {
            Some(e) => WorldConfig::new(space, e.clone(), self.sigma),
            None => WorldConfig::evenly_spaced(space, self.sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub count: usize,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub embedding_width: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let a = Architecture::desk_default(vec![2, 2]);
        Self {
            hidden: a.hidden,
            time_features: a.time_features,
            embedding_width: a.embedding_width,
        }
    }
}

impl NetworkSection {
    pub fn architecture(&self, cardinalities: &[usize]) -> Architecture {
        Architecture {
            cardinalities: cardinalities.to_vec(),
            hidden: self.hidden.clone(),
            time_features: self.time_features,
            embedding_width: self.embedding_width,
        }
    }
}

/// One trained model: its objective and penalty weight override the
/// `training` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub label: String,
    pub objective: Objective,
    pub lambda: f64,
}

impl RunSpec {
    pub fn vanilla() -> Self {
        Self {
            label: "vanilla".into(),
            objective: Objective::Vanilla,
            lambda: 0.0,
        }
    }

    pub fn coind(lambda: f64) -> Self {
        Self {
            label: if lambda == 1.0 { "coind".into() } else { format!("coind-l{lambda}") },
            objective: Objective::CoInD,
            lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerKind {
    Ddim { steps: usize },
    Langevin { steps_per_level: usize, eta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub method: SamplerKind,
    pub samples_per_relation: usize,
    /// Caps the number of target compositions per task (evenly thinned).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_relations: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Conjunction of one literal per attribute, compiled into marginal terms.
    And,
    /// `c1 = v & !c2 = u`.
    Not,
    /// The full condition as a single joint term.
    Joint,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::And => "and",
            Task::Not => "not",
            Task::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "and" => Ok(Task::And),
            "not" => Ok(Task::Not),
            "joint" => Ok(Task::Joint),
            other => Err(CoindError::Config(format!(
                "unknown task '{other}' (expected and, not, joint)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub implicit: ImplicitClassifierConfig,
    /// Held-out points used for the independence violation.
    pub eval_points: usize,
    pub pair: (usize, usize),
    pub tasks: Vec<Task>,
    /// Samples per value when conditioning on the first attribute alone.
    pub entropy_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub world: WorldSection,
    pub support: SupportKind,
    pub dataset: DatasetSection,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub network: NetworkSection,
    /// Shared optimizer settings; `seed`, `objective` and `lambda` are
    /// replaced per run.
    pub training: TrainingConfig,
    pub runs: Vec<RunSpec>,
    pub sampler: SamplerSection,
    pub diagnostics: DiagnosticsSection,
}

pub const PRESETS: [&str; 5] = [
    "gaussian2d-orthogonal",
    "grid10-diagonal",
    "grid10-nonuniform",
    "grid10-uniform",
    "grid4x4x4-orthogonal",
];

/// Grid10 blob noise: neighbouring embeddings are 2/9 apart, so this keeps
/// the separation-to-noise ratio near the 2x2 world's.
pub const GRID10_SIGMA: f64 = 0.035;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let world = self.world.build()?;
        coind_core::attribute_space::build_support(world.space.clone(), self.support.clone())?;
        self.schedule.build()?;
        self.network.architecture(&self.world.cardinalities).validate()?;
        self.training.validate()?;
        if self.dataset.count < 2 || !(0.0 < self.dataset.test_fraction && self.dataset.test_fraction < 1.0) {
            return Err(CoindError::Config("dataset needs count >= 2 and test_fraction in (0, 1)".into()));
        }
        if self.runs.is_empty() {
            return Err(CoindError::Config("no runs configured".into()));
        }
        let mut labels: Vec<&str> = self.runs.iter().map(|r| r.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.runs.len() {
            return Err(CoindError::Config("run labels must be unique".into()));
        }
        for r in &self.runs {
            if r.label.is_empty() || r.label.contains(['/', '\\']) {
                return Err(CoindError::Config(format!("bad run label '{}'", r.label)));
            }
            self.training_for(r, 0).validate()?;
        }
        match self.sampler.method {
            SamplerKind::Ddim { steps } if steps == 0 || steps > self.schedule.steps => {
                return Err(CoindError::Config(format!("ddim steps {steps} outside 1..={}", self.schedule.steps)));
            }
            SamplerKind::Langevin { eta, .. } if !(eta > 0.0) => {
                return Err(CoindError::Config("langevin eta must be > 0".into()));
            }
            _ => {}
        }
        self.diagnostics.implicit.validate()?;
        let n = self.world.cardinalities.len();
        let (i, j) = self.diagnostics.pair;
        if i >= n || j >= n || i == j {
            return Err(CoindError::Config(format!("diagnostics pair ({i}, {j}) invalid for {n} attributes")));
        }
        if self.diagnostics.tasks.is_empty() {
            return Err(CoindError::Config("task list is empty".into()));
        }
        Ok(())
    }

    pub fn training_for(&self, run: &RunSpec, seed: u64) -> TrainingConfig {
        TrainingConfig {
            objective: run.objective,
            lambda: run.lambda,
            seed,
            ..self.training.clone()
        }
    }

    pub fn run(&self, label: &str) -> Result<&RunSpec> {
        self.runs
            .iter()
            .find(|r| r.label == label)
            .ok_or_else(|| CoindError::Config(format!("no run labelled '{label}'")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a JSON file, or falls back to a preset of that name.
    pub fn load(path_or_preset: &str) -> Result<Self> {
        let path = Path::new(path_or_preset);
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| CoindError::io(path, e))?;
            return Self::from_json(&text);
        }
        preset(path_or_preset).ok_or_else(|| {
            CoindError::Config(format!(
                "'{path_or_preset}' is neither a config file nor a preset ({})",
                PRESETS.join(", ")
            ))
        })
    }

    pub fn seed_for(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }
}

/// Per-stage seed: the first eight bytes (little endian) of
/// `SHA-256("coind:" || stage || ":" || master_le_bytes)`.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(b"coind:");
    h.update(stage.as_bytes());
    h.update(b":");
    h.update(master.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn base(name: &str, cardinalities: Vec<usize>, sigma: f64, support: SupportKind) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        seed: 0,
        output_dir: PathBuf::from("runs").join(name),
        world: WorldSection {
            cardinalities,
            sigma,
            embeddings: None,
        },
        support,
        dataset: DatasetSection {
            count: 20_000,
            test_fraction: 0.1,
        },
        schedule: ScheduleConfig::default(),
        network: NetworkSection::default(),
        training: TrainingConfig::default(),
        runs: vec![RunSpec::vanilla(), RunSpec::coind(1.0)],
        sampler: SamplerSection {
            method: SamplerKind::Ddim { steps: 100 },
            samples_per_relation: 1000,
            max_relations: None,
        },
        diagnostics: DiagnosticsSection {
            implicit: ImplicitClassifierConfig::default(),
            eval_points: 200,
            pair: (0, 1),
            tasks: vec![Task::And, Task::Not, Task::Joint],
            entropy_samples: 200,
        },
    }
}

fn grid10(name: &str, support: SupportKind) -> ExperimentConfig {
    let mut cfg = base(name, vec![10, 10], GRID10_SIGMA, support);
    cfg.training.steps = 8_000;
    cfg.sampler.samples_per_relation = 100;
    cfg
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "gaussian2d-orthogonal" => base(name, vec![2, 2], 0.3, SupportKind::OrthogonalPartial),
        "grid10-diagonal" => {
            let mut c = grid10(name, SupportKind::DiagonalPartial);
            c.runs.push(RunSpec::coind(50.0));
            c
        }
        "grid10-nonuniform" => grid10(
            name,
            SupportKind::NonUniform {
                a: 1.0 / 38.0,
                b: 1.0 / 162.0,
            },
        ),
        "grid10-uniform" => grid10(name, SupportKind::Uniform),
        "grid4x4x4-orthogonal" => {
            let mut c = base(name, vec![4, 4, 4], 0.1, SupportKind::OrthogonalPartial);
            c.training.steps = 5_000;
            c.sampler.samples_per_relation = 50;
            c.sampler.max_relations = Some(12);
            c
        }
        _ => return None,
    };
    Some(cfg)
}
