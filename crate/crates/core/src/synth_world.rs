//! The blob world: one coordinate per attribute, Gaussian noise around the
//! attribute-indexed mean. Everything here has a closed form, so these
//! functions double as ground-truth oracles for the trained models.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attribute_space::{AttributeSpace, Composition, SupportPattern};
use crate::diffusion::{ConditionVector, NoiseSchedule, ScoreField};
use crate::error::{CoindError, Result};

const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub space: AttributeSpace,
    /// `embeddings[i][j]` is the coordinate of value `j` of attribute `i`.
    pub embeddings: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl WorldConfig {
    pub fn new(space: AttributeSpace, embeddings: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        let world = Self {
            space,
            embeddings,
            sigma,
        };
        world.validate()?;
        Ok(world)
    }

    /// Embeddings evenly spaced on `[-1, 1]`.
    pub fn evenly_spaced(space: AttributeSpace, sigma: f64) -> Result<Self> {
        let embeddings = space
            .cardinalities()
            .iter()
            .map(|&m| (0..m).map(|j| -1.0 + 2.0 * j as f64 / (m - 1) as f64).collect())
            .collect();
        Self::new(space, embeddings, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(CoindError::Constraint(format!("sigma > 0 violated ({})", self.sigma)));
        }
        if self.embeddings.len() != self.space.n_attributes() {
            return Err(CoindError::Shape(format!(
                "{} embedding lists for {} attributes",
                self.embeddings.len(),
                self.space.n_attributes()
            )));
        }
        for (i, e) in self.embeddings.iter().enumerate() {
            if e.len() != self.space.cardinality(i) {
                return Err(CoindError::Shape(format!(
                    "attribute {i}: {} embeddings for cardinality {}",
                    e.len(),
                    self.space.cardinality(i)
                )));
            }
            if e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(CoindError::Constraint(format!(
                    "attribute {i}: embeddings must be strictly increasing"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.space.n_attributes()
    }

    /// Blob mean `(e_{1,c_1}, ..., e_{n,c_n})`.
    pub fn mean(&self, c: &[usize]) -> Vec<f64> {
        c.iter().enumerate().map(|(i, &v)| self.embeddings[i][v]).collect()
    }

    /// Smallest gap between neighbouring embeddings over all attributes.
    pub fn min_separation(&self) -> f64 {
        self.embeddings
            .iter()
            .flat_map(|e| e.windows(2).map(|w| w[1] - w[0]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub c: Composition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub world: WorldConfig,
    pub support: SupportPattern,
    pub samples: Vec<LabeledSample>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub world: WorldConfig,
    pub support: SupportPattern,
    pub seed: u64,
    pub count: usize,
}

/// i.i.d. draws `c ~ support`, `x ~ N(mu_c, sigma^2 I)`; deterministic in `seed`.
pub fn generate_dataset(
    world: &WorldConfig,
    support: &SupportPattern,
    count: usize,
    seed: u64,
) -> Result<Dataset> {
    if support.space() != &world.space {
        return Err(CoindError::Shape(format!(
            "support space {:?} does not match world space {:?}",
            support.space().cardinalities(),
            world.space.cardinalities()
        )));
    }
    if count == 0 {
        return Err(CoindError::InvalidParam("dataset count must be >= 1".into()));
    }
    world.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|_| {
            let c = support.sample(&mut rng);
            let x = world
                .mean(&c)
                .into_iter()
                .map(|m| m + world.sigma * rng.sample_normal())
                .collect();
            LabeledSample { x, c }
        })
        .collect();
    Ok(Dataset {
        world: world.clone(),
        support: support.clone(),
        samples,
        seed,
    })
}

trait SampleNormal {
    fn sample_normal(&mut self) -> f64;
}

impl<R: rand::Rng> SampleNormal for R {
    fn sample_normal(&mut self) -> f64 {
        StandardNormal.sample(self)
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the trailing `test_fraction` of samples as a held-out set.
    pub fn split(&self, test_fraction: f64) -> (Dataset, Dataset) {
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.clamp(1, self.len().saturating_sub(1).max(1));
        let cut = self.len() - n_test;
        let mk = |samples: Vec<LabeledSample>| Dataset {
            world: self.world.clone(),
            support: self.support.clone(),
            samples,
            seed: self.seed,
        };
        (mk(self.samples[..cut].to_vec()), mk(self.samples[cut..].to_vec()))
    }

    pub fn x_matrix(&self) -> Array2<f64> {
        let n = self.world.dim();
        let mut out = Array2::zeros((self.len(), n));
        for (r, s) in self.samples.iter().enumerate() {
            for k in 0..n {
                out[[r, k]] = s.x[k];
            }
        }
        out
    }

    pub fn sidecar(&self) -> DatasetSidecar {
        DatasetSidecar {
            world: self.world.clone(),
            support: self.support.clone(),
            seed: self.seed,
            count: self.len(),
        }
    }

    /// Header `x0..x{n-1},c0..c{n-1}`, floats in shortest round-trip form.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.world.dim();
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (0..n)
            .map(|k| format!("x{k}"))
            .chain((0..n).map(|k| format!("c{k}")))
            .collect();
        w.write_record(&header)?;
        for s in &self.samples {
            let rec: Vec<String> = s
                .x
                .iter()
                .map(|v| format!("{v:?}"))
                .chain(s.c.iter().map(|v| v.to_string()))
                .collect();
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| CoindError::io(path, e))?;
        Ok(())
    }

    /// Writes `<stem>.csv` and `<stem>.json`.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        self.write_csv(csv_path)?;
        let side = csv_path.with_extension("json");
        let text = serde_json::to_string_pretty(&self.sidecar())?;
        fs::write(&side, text).map_err(|e| CoindError::io(&side, e))
    }

    pub fn load(csv_path: &Path) -> Result<Self> {
        let side = csv_path.with_extension("json");
        let text = fs::read_to_string(&side).map_err(|e| CoindError::io(&side, e))?;
        let meta: DatasetSidecar = serde_json::from_str(&text)?;
        let n = meta.world.dim();
        let mut r = csv::Reader::from_path(csv_path)?;
        let mut samples = Vec::with_capacity(meta.count);
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 2 * n {
                return Err(CoindError::Shape(format!(
                    "row has {} fields, expected {}",
                    rec.len(),
                    2 * n
                )));
            }
            let parse_err = |e: String| CoindError::Config(format!("{}: {e}", csv_path.display()));
            let x = (0..n)
                .map(|k| rec[k].parse::<f64>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let c = (0..n)
                .map(|k| rec[n + k].parse::<usize>().map_err(|e| parse_err(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            samples.push(LabeledSample { x, c });
        }
        if samples.len() != meta.count {
            return Err(CoindError::Shape(format!(
                "{} rows but sidecar says {}",
                samples.len(),
                meta.count
            )));
        }
        Ok(Dataset {
            world: meta.world,
            support: meta.support,
            samples,
            seed: meta.seed,
        })
    }
}

/// Mixture weights over compositions, normalized.
pub type CompositionWeights = Vec<(Composition, f64)>;

fn check_weights(world: &WorldConfig, weights: &CompositionWeights) -> Result<()> {
    let sum: f64 = weights.iter().map(|w| w.1).sum();
    if (sum - 1.0).abs() > WEIGHT_TOL || weights.iter().any(|w| w.1 < 0.0) {
        return Err(CoindError::Unnormalized { sum });
    }
    for (c, _) in weights {
        if !world.space.contains(c) {
            return Err(CoindError::Shape(format!("composition {c:?} outside world space")));
        }
    }
    Ok(())
}

/// `(scale, variance)` of each perturbed mixture component at level `t`.
fn component_moments(world: &WorldConfig, noise: Option<(usize, &NoiseSchedule)>) -> Result<(f64, f64)> {
    let s2 = world.sigma * world.sigma;
    match noise {
        None => Ok((1.0, s2)),
        Some((t, schedule)) => {
            schedule.check_t(t)?;
            let ab = schedule.alpha_bar(t);
            Ok((ab.sqrt(), ab * s2 + 1.0 - ab))
        }
    }
}

struct Mixture {
    means: Vec<Vec<f64>>,
    log_w: Vec<f64>,
    var: f64,
}

impl Mixture {
    fn new(
        world: &WorldConfig,
        weights: &CompositionWeights,
        noise: Option<(usize, &NoiseSchedule)>,
    ) -> Result<Self> {
        check_weights(world, weights)?;
        let (scale, var) = component_moments(world, noise)?;
        let (means, log_w) = weights
            .iter()
            .filter(|w| w.1 > 0.0)
            .map(|(c, w)| (world.mean(c).into_iter().map(|m| scale * m).collect(), w.ln()))
            .unzip();
        Ok(Self { means, log_w, var })
    }

    fn log_terms(&self, x: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.log_w)
            .map(|(mu, lw)| {
                let d2: f64 = mu.iter().zip(x).map(|(m, xi)| (m - xi).powi(2)).sum();
                lw - d2 / (2.0 * self.var)
            })
            .collect()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let terms = self.log_terms(x);
        let n = x.len() as f64;
        log_sum_exp(&terms) - 0.5 * n * (2.0 * std::f64::consts::PI * self.var).ln()
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let terms = self.log_terms(x);
        let lse = log_sum_exp(&terms);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (mu, lt) in self.means.iter().zip(&terms) {
            let r = (lt - lse).exp();
            for k in 0..x.len() {
                out[k] += r * (mu[k] - x[k]) / self.var;
            }
        }
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Score of `sum_c w_c N(x; s mu_c, (s^2 sigma^2 + 1 - abar_t) I)` with
/// `s = sqrt(abar_t)`; the clean mixture when `noise` is `None`.
pub fn analytic_score(
    world: &WorldConfig,
    weights: &CompositionWeights,
    x: &[f64],
    noise: Option<(usize, &NoiseSchedule)>,
) -> Result<Vec<f64>> {
    if x.len() != world.dim() {
        return Err(CoindError::Shape(format!("x has length {}, world dim {}", x.len(), world.dim())));
    }
    let mix = Mixture::new(world, weights, noise)?;
    let mut out = vec![0.0; x.len()];
    mix.score_into(x, &mut out);
    Ok(out)
}

/// Log-density of the same mixture [`analytic_score`] differentiates.
pub fn analytic_log_density(
    world: &WorldConfig,
    weights: &CompositionWeights,
    x: &[f64],
    noise: Option<(usize, &NoiseSchedule)>,
) -> Result<f64> {
    let mix = Mixture::new(world, weights, noise)?;
    Ok(mix.log_density(x))
}

/// Restricts `base` to compositions matching `cond` and renormalizes.
pub fn restrict_weights(base: &CompositionWeights, cond: &ConditionVector) -> Result<CompositionWeights> {
    let kept: CompositionWeights = base
        .iter()
        .filter(|(c, w)| *w > 0.0 && cond.matches(c))
        .cloned()
        .collect();
    let mass: f64 = kept.iter().map(|w| w.1).sum();
    if mass <= 0.0 {
        if let Some(i) = cond.set_attributes().first() {
            return Err(CoindError::UnobservedValue {
                attribute: *i,
                value: cond.0[*i].expect("set"),
            });
        }
        return Err(CoindError::Unnormalized { sum: 0.0 });
    }
    Ok(kept.into_iter().map(|(c, w)| (c, w / mass)).collect())
}

/// Mixture weights of `p_train(X | C_i = v)`: the support restricted to the
/// slice `c_i = v`, renormalized.
pub fn train_marginal_weights(
    support: &SupportPattern,
    attribute: usize,
    value: usize,
) -> Result<CompositionWeights> {
    let space = support.space();
    if attribute >= space.n_attributes() || value >= space.cardinality(attribute) {
        return Err(CoindError::Shape(format!(
            "attribute {attribute} value {value} outside space"
        )));
    }
    let base: CompositionWeights = support.support().collect();
    restrict_weights(
        &base,
        &ConditionVector::only(space.n_attributes(), attribute, value),
    )
    .map_err(|_| CoindError::UnobservedValue { attribute, value })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Composition,
    /// `posteriors[i][j] = p(C_i = j | x)` under a uniform prior.
    pub posteriors: Vec<Vec<f64>>,
}

/// Per-attribute Gaussian posterior over embedding values; ties go to the
/// smaller index.
pub fn analytic_classifier(world: &WorldConfig, x: &[f64]) -> Classification {
    let s2 = world.sigma * world.sigma;
    let mut labels = Vec::with_capacity(world.dim());
    let posteriors = world
        .embeddings
        .iter()
        .zip(x)
        .map(|(emb, &xi)| {
            let logits: Vec<f64> = emb.iter().map(|e| -(xi - e).powi(2) / (2.0 * s2)).collect();
            let mut best = 0;
            for (j, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = j;
                }
            }
            labels.push(best);
            let lse = log_sum_exp(&logits);
            logits.iter().map(|l| (l - lse).exp()).collect()
        })
        .collect();
    Classification { labels, posteriors }
}

/// Hard labels only.
pub fn classify(world: &WorldConfig, x: &[f64]) -> Composition {
    analytic_classifier(world, x).labels
}

/// Exact conditional score field of a blob mixture. A condition restricts the
/// base weights to matching compositions.
#[derive(Debug, Clone)]
pub struct AnalyticField {
    pub world: WorldConfig,
    pub base: CompositionWeights,
    /// `None` evaluates the clean-data score at every `t`.
    pub schedule: Option<NoiseSchedule>,
}

impl AnalyticField {
    /// What a perfectly trained vanilla model learns on `support`.
    pub fn train(world: &WorldConfig, support: &SupportPattern, schedule: Option<NoiseSchedule>) -> Self {
        Self {
            world: world.clone(),
            base: support.support().collect(),
            schedule,
        }
    }

    /// Independent attributes, uniform over the full grid.
    pub fn true_uniform(world: &WorldConfig, schedule: Option<NoiseSchedule>) -> Self {
        let total = world.space.total() as f64;
        Self {
            world: world.clone(),
            base: world.space.compositions().map(|c| (c, 1.0 / total)).collect(),
            schedule,
        }
    }

    pub fn weights_for(&self, cond: &ConditionVector) -> Result<CompositionWeights> {
        cond.validate(&self.world.space)?;
        restrict_weights(&self.base, cond)
    }
}

impl ScoreField for AnalyticField {
    fn dim(&self) -> usize {
        self.world.dim()
    }

    fn score_batch(&self, x: ArrayView2<f64>, t: usize, cond: &ConditionVector) -> Result<Array2<f64>> {
        let weights = self.weights_for(cond)?;
        let noise = self.schedule.as_ref().map(|s| (t, s));
        let mix = Mixture::new(&self.world, &weights, noise)?;
        let mut out = Array2::zeros(x.raw_dim());
        let mut buf = vec![0.0; x.ncols()];
        for (r, row) in x.outer_iter().enumerate() {
            let xr: Vec<f64> = row.to_vec();
            mix.score_into(&xr, &mut buf);
            for k in 0..buf.len() {
                out[[r, k]] = buf[k];
            }
        }
        Ok(out)
    }
}
