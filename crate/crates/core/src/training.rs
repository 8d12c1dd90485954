//! Score matching plus the conditional-independence penalty, and the training
//! loop that optimizes them.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attribute_space::Composition;
use crate::diffusion::adam::{Adam, AdamConfig};
use crate::diffusion::{mask_condition, ConditionVector, Conditioning, NoisePredictor, NoiseSchedule, ScoreNet};
use crate::error::{CoindError, Result};
use crate::synth_world::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
pub enum Objective {
    Vanilla,
    CoInD,
    /// `K1 sqrt(L_score) + K2 sqrt(L_CI)`.
    TheoreticalBound { k1: f64, k2: f64 },
}

/// Which independence statements the penalty enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CiMode {
    /// `C_i ⫫ C_j | X` for one random pair per sample.
    #[default]
    Pairwise,
    /// `C_i ⫫ C_{-i} | X` for one random attribute per sample.
    OneVsRest,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub lambda: f64,
    pub p_uncond: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub objective: Objective,
    pub seed: u64,
    /// Weight each sample's penalty by `1 / (1 - abar_t)`, i.e. measure it
    /// between scores rather than noise predictions. Off by default.
    #[serde(default)]
    pub ci_weighting: bool,
    #[serde(default)]
    pub ci_mode: CiMode,
    /// Measure the penalty even when the objective ignores it.
    #[serde(default = "default_true")]
    pub monitor_ci: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            p_uncond: 0.2,
            steps: 20_000,
            batch_size: 256,
            learning_rate: 2e-4,
            objective: Objective::CoInD,
            seed: 0,
            ci_weighting: false,
            ci_mode: CiMode::Pairwise,
            monitor_ci: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CoindError::Config(format!("lambda must be >= 0 (got {})", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(CoindError::Config(format!("p_uncond {} outside [0, 1]", self.p_uncond)));
        }
        if self.batch_size == 0 {
            return Err(CoindError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CoindError::Config("learning_rate must be > 0".into()));
        }
        if let Objective::TheoreticalBound { k1, k2 } = self.objective {
            if !(k1 > 0.0 && k2 > 0.0) {
                return Err(CoindError::Config(format!(
                    "TheoreticalBound needs K1, K2 > 0 (got {k1}, {k2})"
                )));
            }
        }
        Ok(())
    }

    fn needs_ci_grad(&self) -> bool {
        match self.objective {
            Objective::Vanilla => false,
            Objective::CoInD => self.lambda > 0.0,
            Objective::TheoreticalBound { .. } => true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub score_loss: f64,
    pub ci_loss: f64,
    pub total: f64,
    pub step: usize,
}

/// `(total, d total / d score, d total / d ci)`.
pub fn combine(objective: Objective, lambda: f64, score: f64, ci: f64) -> (f64, f64, f64) {
    match objective {
        Objective::Vanilla => (score, 1.0, 0.0),
        Objective::CoInD => (score + lambda * ci, 1.0, lambda),
        Objective::TheoreticalBound { k1, k2 } => {
            let (rs, rc) = (score.sqrt(), ci.sqrt());
            let ds = if rs > 0.0 { k1 / (2.0 * rs) } else { 0.0 };
            let dc = if rc > 0.0 { k2 / (2.0 * rc) } else { 0.0 };
            (k1 * rs + k2 * rc, ds, dc)
        }
    }
}

/// A mini-batch of clean samples with their raw labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x0: Array2<f64>,
    pub labels: Vec<Composition>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn draw<R: Rng + ?Sized>(dataset: &Dataset, size: usize, rng: &mut R) -> Self {
        let n = dataset.world.dim();
        let mut x0 = Array2::zeros((size, n));
        let mut labels = Vec::with_capacity(size);
        for r in 0..size {
            let s = &dataset.samples[rng.gen_range(0..dataset.len())];
            for k in 0..n {
                x0[[r, k]] = s.x[k];
            }
            labels.push(s.c.clone());
        }
        Self { x0, labels }
    }
}

/// The four conditioning groups of the penalty, one entry per sample:
/// `c^i`, `c^j`, `c^{ij}`, `c^∅`.
#[derive(Debug, Clone)]
pub struct CiConditions {
    pub first: Vec<Conditioning>,
    pub second: Vec<Conditioning>,
    pub both: Vec<Conditioning>,
    pub null: Vec<Conditioning>,
}

impl CiConditions {
    /// Builds one random group per label; needs at least two attributes.
    pub fn draw<R: Rng + ?Sized>(labels: &[Composition], mode: CiMode, rng: &mut R) -> Result<Self> {
        let mut out = Self {
            first: Vec::with_capacity(labels.len()),
            second: Vec::with_capacity(labels.len()),
            both: Vec::with_capacity(labels.len()),
            null: Vec::with_capacity(labels.len()),
        };
        for c in labels {
            let n = c.len();
            if n < 2 {
                return Err(CoindError::Config(
                    "the independence penalty needs at least two attributes".into(),
                ));
            }
            let i = rng.gen_range(0..n);
            let (a, b): (Vec<usize>, Vec<usize>) = match mode {
                CiMode::Pairwise => {
                    let mut j = rng.gen_range(0..n - 1);
                    if j >= i {
                        j += 1;
                    }
                    (vec![i], vec![j])
                }
                CiMode::OneVsRest => (vec![i], (0..n).filter(|&k| k != i).collect()),
            };
            let ab: Vec<usize> = a.iter().chain(&b).copied().collect();
            out.first.push(ConditionVector::keep(c, &a).into());
            out.second.push(ConditionVector::keep(c, &b).into());
            out.both.push(ConditionVector::keep(c, &ab).into());
            out.null.push(ConditionVector::null(n).into());
        }
        Ok(out)
    }

    pub fn from_pairs(labels: &[Composition], pairs: &[(usize, usize)]) -> Self {
        let mut out = Self {
            first: vec![],
            second: vec![],
            both: vec![],
            null: vec![],
        };
        for (c, &(i, j)) in labels.iter().zip(pairs) {
            out.first.push(ConditionVector::keep(c, &[i]).into());
            out.second.push(ConditionVector::keep(c, &[j]).into());
            out.both.push(ConditionVector::keep(c, &[i, j]).into());
            out.null.push(ConditionVector::null(c.len()).into());
        }
        out
    }

    /// The same groups with the roles of the two attributes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            first: self.second.clone(),
            second: self.first.clone(),
            both: self.both.clone(),
            null: self.null.clone(),
        }
    }
}

/// Everything random about one optimization step.
#[derive(Debug, Clone)]
pub struct StepDraws {
    pub t: Vec<usize>,
    pub eps: Array2<f64>,
    /// Perturbed inputs shared by the score term and the penalty.
    pub x_t: Array2<f64>,
    /// Null-masked conditions for the score term.
    pub score_cond: Vec<Conditioning>,
    pub ci: Option<CiConditions>,
}

fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn perturb_batch(schedule: &NoiseSchedule, x0: &Array2<f64>, t: &[usize], eps: &Array2<f64>) -> Array2<f64> {
    let mut x_t = x0.clone();
    for (r, mut row) in x_t.axis_iter_mut(Axis(0)).enumerate() {
        let ab = schedule.alpha_bar(t[r]);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (k, v) in row.iter_mut().enumerate() {
            *v = a * *v + b * eps[[r, k]];
        }
    }
    x_t
}

impl StepDraws {
    pub fn draw<R: Rng + ?Sized>(
        batch: &Batch,
        schedule: &NoiseSchedule,
        p_uncond: f64,
        ci_mode: Option<CiMode>,
        rng: &mut R,
    ) -> Result<Self> {
        if batch.is_empty() {
            return Err(CoindError::InvalidParam("empty batch".into()));
        }
        let rows = batch.len();
        let t: Vec<usize> = (0..rows).map(|_| rng.gen_range(1..=schedule.steps())).collect();
        let eps = standard_normal(rows, batch.x0.ncols(), rng);
        let x_t = perturb_batch(schedule, &batch.x0, &t, &eps);
        let score_cond = batch
            .labels
            .iter()
            .map(|c| mask_condition(&ConditionVector::full(c), p_uncond, rng).into())
            .collect();
        let ci = ci_mode
            .map(|mode| CiConditions::draw(&batch.labels, mode, rng))
            .transpose()?;
        Ok(Self {
            t,
            eps,
            x_t,
            score_cond,
            ci,
        })
    }
}

fn ci_weights(schedule: &NoiseSchedule, t: &[usize], weighted: bool) -> Vec<f64> {
    t.iter()
        .map(|&t| if weighted { 1.0 / (1.0 - schedule.alpha_bar(t)) } else { 1.0 })
        .collect()
}

fn mean_sq_err(pred: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let rows = pred.nrows() as f64;
    pred.iter().zip(target.iter()).map(|(p, e)| (p - e).powi(2)).sum::<f64>() / rows
}

/// Batch mean of `w_r |e_i + e_j - e_ij - e_0|^2`.
fn ci_from_outputs(
    e_i: ArrayView2<f64>,
    e_j: ArrayView2<f64>,
    e_ij: ArrayView2<f64>,
    e_0: ArrayView2<f64>,
    weights: &[f64],
) -> f64 {
    let rows = e_i.nrows();
    let mut total = 0.0;
    for r in 0..rows {
        let mut sq = 0.0;
        for k in 0..e_i.ncols() {
            let v = e_i[[r, k]] + e_j[[r, k]] - e_ij[[r, k]] - e_0[[r, k]];
            sq += v * v;
        }
        total += weights[r] * sq;
    }
    total / rows as f64
}

/// Score-matching loss on pre-drawn noise.
pub fn score_loss_with<P: NoisePredictor + ?Sized>(model: &P, draws: &StepDraws) -> f64 {
    let pred = model.predict_eps(draws.x_t.view(), &draws.t, &draws.score_cond);
    mean_sq_err(pred.view(), draws.eps.view())
}

/// Independence penalty on pre-drawn inputs and condition groups.
pub fn ci_loss_with<P: NoisePredictor + ?Sized>(
    model: &P,
    x_t: ArrayView2<f64>,
    t: &[usize],
    groups: &CiConditions,
    weights: &[f64],
) -> f64 {
    let e_i = model.predict_eps(x_t, t, &groups.first);
    let e_j = model.predict_eps(x_t, t, &groups.second);
    let e_ij = model.predict_eps(x_t, t, &groups.both);
    let e_0 = model.predict_eps(x_t, t, &groups.null);
    ci_from_outputs(e_i.view(), e_j.view(), e_ij.view(), e_0.view(), weights)
}

/// `mean |eps - eps_theta(x_t, t, c)|^2` with fresh `eps` and `t` per sample.
/// Conditions are used as given (mask them beforehand).
pub fn loss_score<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    x0: ArrayView2<f64>,
    cond: &[ConditionVector],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    if x0.nrows() == 0 || x0.nrows() != cond.len() {
        return Err(CoindError::Shape("batch empty or condition count mismatch".into()));
    }
    let rows = x0.nrows();
    let t: Vec<usize> = (0..rows).map(|_| rng.gen_range(1..=schedule.steps())).collect();
    let eps = standard_normal(rows, x0.ncols(), rng);
    let x_t = perturb_batch(schedule, &x0.to_owned(), &t, &eps);
    let cond: Vec<Conditioning> = cond.iter().map(Conditioning::from).collect();
    let pred = model.predict_eps(x_t.view(), &t, &cond);
    Ok(mean_sq_err(pred.view(), eps.view()))
}

/// Pairwise independence penalty with one random pair per sample, built from
/// the raw labels.
pub fn loss_ci<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    x0: ArrayView2<f64>,
    labels: &[Composition],
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    let batch = Batch {
        x0: x0.to_owned(),
        labels: labels.to_vec(),
    };
    let draws = StepDraws::draw(&batch, schedule, 0.0, Some(CiMode::Pairwise), rng)?;
    let groups = draws.ci.as_ref().expect("requested");
    Ok(ci_loss_with(model, draws.x_t.view(), &draws.t, groups, &vec![1.0; batch.len()]))
}

/// Both losses on one shared perturbation, combined per the objective.
pub fn loss_total<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    batch: &Batch,
    schedule: &NoiseSchedule,
    config: &TrainingConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    config.validate()?;
    let want_ci = config.needs_ci_grad() || config.monitor_ci;
    let want_ci = want_ci && batch.x0.ncols() >= 2;
    let draws = StepDraws::draw(batch, schedule, config.p_uncond, want_ci.then_some(config.ci_mode), rng)?;
    Ok(evaluate(model, &draws, schedule, config, 0))
}

/// Losses for fixed draws, without gradients.
pub fn evaluate<P: NoisePredictor + ?Sized>(
    model: &P,
    draws: &StepDraws,
    schedule: &NoiseSchedule,
    config: &TrainingConfig,
    step: usize,
) -> LossBreakdown {
    let score = score_loss_with(model, draws);
    let ci = draws.ci.as_ref().map_or(0.0, |g| {
        let w = ci_weights(schedule, &draws.t, config.ci_weighting);
        ci_loss_with(model, draws.x_t.view(), &draws.t, g, &w)
    });
    let (total, _, _) = combine(config.objective, config.lambda, score, ci);
    LossBreakdown {
        score_loss: score,
        ci_loss: ci,
        total,
        step,
    }
}

/// Loss and parameter gradient (accumulated into `grad`) for fixed draws.
///
/// When the penalty contributes to the objective, all five conditioning
/// groups go through one stacked forward/backward pass. Otherwise the penalty
/// is only measured with a forward pass.
pub fn loss_and_grad(
    net: &ScoreNet,
    draws: &StepDraws,
    schedule: &NoiseSchedule,
    config: &TrainingConfig,
    step: usize,
    grad: &mut [f64],
) -> LossBreakdown {
    let rows = draws.t.len();
    let n = draws.eps.ncols();
    let bf = rows as f64;
    let weights = ci_weights(schedule, &draws.t, config.ci_weighting);
    let ci_grad = config.needs_ci_grad() && draws.ci.is_some();

    if !ci_grad {
        let cache = net.forward(draws.x_t.view(), &draws.t, &draws.score_cond);
        let score = mean_sq_err(cache.output.view(), draws.eps.view());
        let ci = draws
            .ci
            .as_ref()
            .map_or(0.0, |g| ci_loss_with(net, draws.x_t.view(), &draws.t, g, &weights));
        let (total, ds, _) = combine(config.objective, config.lambda, score, ci);
        let d_out = (&cache.output - &draws.eps) * (2.0 * ds / bf);
        net.backward(&cache, &d_out, grad);
        return LossBreakdown {
            score_loss: score,
            ci_loss: ci,
            total,
            step,
        };
    }

    let groups = draws.ci.as_ref().expect("checked");
    let mut x = Array2::zeros((5 * rows, n));
    for g in 0..5 {
        x.slice_mut(s![g * rows..(g + 1) * rows, ..]).assign(&draws.x_t);
    }
    let t: Vec<usize> = (0..5).flat_map(|_| draws.t.iter().copied()).collect();
    let cond: Vec<Conditioning> = draws
        .score_cond
        .iter()
        .chain(&groups.first)
        .chain(&groups.second)
        .chain(&groups.both)
        .chain(&groups.null)
        .cloned()
        .collect();
    let cache = net.forward(x.view(), &t, &cond);
    let out = &cache.output;
    let block = |g: usize| out.slice(s![g * rows..(g + 1) * rows, ..]);
    let score = mean_sq_err(block(0), draws.eps.view());
    let ci = ci_from_outputs(block(1), block(2), block(3), block(4), &weights);
    let (total, ds, dc) = combine(config.objective, config.lambda, score, ci);

    let mut d_out = Array2::zeros(out.raw_dim());
    for r in 0..rows {
        for k in 0..n {
            d_out[[r, k]] = 2.0 * ds / bf * (out[[r, k]] - draws.eps[[r, k]]);
            let resid = out[[rows + r, k]] + out[[2 * rows + r, k]]
                - out[[3 * rows + r, k]]
                - out[[4 * rows + r, k]];
            let g = 2.0 * dc * weights[r] / bf * resid;
            d_out[[rows + r, k]] = g;
            d_out[[2 * rows + r, k]] = g;
            d_out[[3 * rows + r, k]] = -g;
            d_out[[4 * rows + r, k]] = -g;
        }
    }
    net.backward(&cache, &d_out, grad);
    LossBreakdown {
        score_loss: score,
        ci_loss: ci,
        total,
        step,
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub score_loss: f64,
    pub ci_loss: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

impl LogRow {
    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            score_loss: self.score_loss,
            ci_loss: self.ci_loss,
            total: self.total,
            step: self.step,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ScoreNet,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn history(&self) -> Vec<LossBreakdown> {
        self.log.iter().map(LogRow::breakdown).collect()
    }
}

/// Runs the optimization loop; deterministic for a fixed `config.seed`.
pub fn train(
    dataset: &Dataset,
    schedule: &NoiseSchedule,
    model: ScoreNet,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    train_with_observer(dataset, schedule, model, config, |_| {})
}

pub fn train_with_observer(
    dataset: &Dataset,
    schedule: &NoiseSchedule,
    mut model: ScoreNet,
    config: &TrainingConfig,
    mut observer: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(CoindError::InvalidParam("empty dataset".into()));
    }
    if model.architecture().cardinalities != dataset.world.space.cardinalities() {
        return Err(CoindError::Shape("model and dataset attribute spaces differ".into()));
    }
    let n = dataset.world.dim();
    if config.needs_ci_grad() && n < 2 {
        return Err(CoindError::Config(
            "the independence penalty needs at least two attributes".into(),
        ));
    }
    let ci_mode = (config.needs_ci_grad() || (config.monitor_ci && n >= 2)).then_some(config.ci_mode);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.param_count(),
    );
    let mut grad = vec![0.0; model.param_count()];
    let mut log = Vec::with_capacity(config.steps);
    let start = Instant::now();
    for step in 0..config.steps {
        let batch = Batch::draw(dataset, config.batch_size, &mut rng);
        let draws = StepDraws::draw(&batch, schedule, config.p_uncond, ci_mode, &mut rng)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let lb = loss_and_grad(&model, &draws, schedule, config, step, &mut grad);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(lb.score_loss.is_finite() && lb.ci_loss.is_finite() && lb.total.is_finite() && grad_norm.is_finite()) {
            return Err(CoindError::NonFinite {
                step,
                score_loss: lb.score_loss,
                ci_loss: lb.ci_loss,
                grad_norm,
            });
        }
        adam.step(model.params_mut(), &grad);
        let row = LogRow {
            step,
            score_loss: lb.score_loss,
            ci_loss: lb.ci_loss,
            total: lb.total,
            grad_norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observer(&row);
        log.push(row);
    }
    Ok(TrainOutcome { model, log })
}

pub fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CoindError::io(path, e))
}

pub fn read_log_csv(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CoindError::from)).collect()
}

pub fn load_config(path: &Path) -> Result<TrainingConfig> {
    let text = fs::read_to_string(path).map_err(|e| CoindError::io(path, e))?;
    TrainingConfig::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSuggestion {
    pub lambda: f64,
    /// The penalty was already negligible; `lambda` is 0.
    pub already_independent: bool,
}

/// `lambda = L_score / L_CI` over the last tenth of a vanilla run.
pub fn suggest_lambda(history: &[LossBreakdown]) -> Result<LambdaSuggestion> {
    if history.is_empty() {
        return Err(CoindError::InvalidParam("empty history".into()));
    }
    let tail = history.len().div_ceil(10);
    let last = &history[history.len() - tail..];
    let mean = |f: fn(&LossBreakdown) -> f64| last.iter().map(f).sum::<f64>() / tail as f64;
    let score = mean(|h| h.score_loss);
    let ci = mean(|h| h.ci_loss);
    if ci < 1e-12 {
        return Ok(LambdaSuggestion {
            lambda: 0.0,
            already_independent: true,
        });
    }
    Ok(LambdaSuggestion {
        lambda: score / ci,
        already_independent: false,
    })
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (k, v) in values.iter().enumerate() {
        acc += v;
        if k >= window {
            acc -= values[k - window];
        }
        out.push(acc / (k + 1).min(window) as f64);
    }
    out
}
