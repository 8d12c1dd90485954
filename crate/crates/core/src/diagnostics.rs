//! Implicit classifiers read off a noise predictor, the conditional
//! independence violation they expose, and sample-quality metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attribute_space::{AttributeSpace, Composition};
use crate::composition::CompositionExpr;
use crate::diffusion::{ConditionVector, Conditioning, NoisePredictor, NoiseSchedule};
use crate::error::{CoindError, Result};
use crate::synth_world::log_sum_exp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImplicitClassifierConfig {
    pub timestep_count: usize,
    /// Fractions of `T` bounding the timestep draws.
    pub timestep_band: (f64, f64),
    pub noise_draws_per_t: usize,
    pub seed: u64,
}

impl Default for ImplicitClassifierConfig {
    fn default() -> Self {
        Self {
            timestep_count: 5,
            timestep_band: (0.3, 0.6),
            noise_draws_per_t: 8,
            seed: 0,
        }
    }
}

impl ImplicitClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.timestep_band;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(CoindError::Config(format!(
                "timestep band ({lo}, {hi}) must lie within (0, 1)"
            )));
        }
        if self.timestep_count == 0 || self.noise_draws_per_t == 0 {
            return Err(CoindError::Config("timestep and noise draw counts must be >= 1".into()));
        }
        Ok(())
    }

    fn band(&self, steps: usize) -> (usize, usize) {
        let lo = ((self.timestep_band.0 * steps as f64).round() as usize).max(1);
        let hi = ((self.timestep_band.1 * steps as f64).round() as usize).clamp(lo, steps);
        (lo, hi)
    }
}

/// `(t, eps)` pairs shared by every hypothesis scored at one point.
#[derive(Debug, Clone)]
pub struct SharedDraws {
    pub t: Vec<usize>,
    pub eps: Array2<f64>,
}

impl SharedDraws {
    pub fn draw<R: Rng + ?Sized>(
        cfg: &ImplicitClassifierConfig,
        schedule: &NoiseSchedule,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let (lo, hi) = cfg.band(schedule.steps());
        let mut t = Vec::with_capacity(cfg.timestep_count * cfg.noise_draws_per_t);
        for _ in 0..cfg.timestep_count {
            let tk = rng.gen_range(lo..=hi);
            t.extend(std::iter::repeat(tk).take(cfg.noise_draws_per_t));
        }
        let eps = Array2::from_shape_simple_fn((t.len(), dim), || rng.sample(StandardNormal));
        Self { t, eps }
    }

    /// Deterministic draws for the `index`-th evaluation point.
    pub fn for_point(cfg: &ImplicitClassifierConfig, schedule: &NoiseSchedule, dim: usize, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index);
        Self::draw(cfg, schedule, dim, &mut rng)
    }

    fn len(&self) -> usize {
        self.t.len()
    }
}

/// Mean `|eps - eps_theta(x_t, t, c)|^2` per hypothesis, one batched call.
pub fn energies<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    x: &[f64],
    hypotheses: &[Conditioning],
    draws: &SharedDraws,
) -> Vec<f64> {
    let d = draws.len();
    let n = x.len();
    let rows = d * hypotheses.len();
    let mut x_t = Array2::zeros((d, n));
    for r in 0..d {
        let ab = schedule.alpha_bar(draws.t[r]);
        for k in 0..n {
            x_t[[r, k]] = ab.sqrt() * x[k] + (1.0 - ab).sqrt() * draws.eps[[r, k]];
        }
    }
    let mut xs = Array2::zeros((rows, n));
    let mut ts = Vec::with_capacity(rows);
    let mut conds = Vec::with_capacity(rows);
    for (h, cond) in hypotheses.iter().enumerate() {
        xs.slice_mut(ndarray::s![h * d..(h + 1) * d, ..]).assign(&x_t);
        ts.extend_from_slice(&draws.t);
        conds.extend(std::iter::repeat(cond.clone()).take(d));
    }
    let pred = model.predict_eps(xs.view(), &ts, &conds);
    (0..hypotheses.len())
        .map(|h| {
            let mut acc = 0.0;
            for r in 0..d {
                for k in 0..n {
                    acc += (draws.eps[[r, k]] - pred[[h * d + r, k]]).powi(2);
                }
            }
            acc / d as f64
        })
        .collect()
}

/// Softmax of negated energies under a uniform prior.
pub fn softmax_neg(energies: &[f64]) -> Vec<f64> {
    let logits: Vec<f64> = energies.iter().map(|e| -e).collect();
    let lse = log_sum_exp(&logits);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

fn single_hypotheses(n: usize, i: usize, m: usize) -> Vec<Conditioning> {
    (0..m).map(|v| ConditionVector::only(n, i, v).to_conditioning()).collect()
}

fn pair_hypotheses(n: usize, (i, j): (usize, usize), mi: usize, mj: usize) -> Vec<Conditioning> {
    let mut out = Vec::with_capacity(mi * mj);
    for v in 0..mi {
        for u in 0..mj {
            let mut c = ConditionVector::null(n);
            c.0[i] = Some(v);
            c.0[j] = Some(u);
            out.push(c.to_conditioning());
        }
    }
    out
}

fn check_attribute(space: &AttributeSpace, i: usize) -> Result<()> {
    if i >= space.n_attributes() {
        return Err(CoindError::Shape(format!(
            "attribute {i} outside {} attributes",
            space.n_attributes()
        )));
    }
    Ok(())
}

/// `p(C_i = v | x)` from the model's noise-prediction errors.
pub fn implicit_marginal_pmf<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    space: &AttributeSpace,
    x: &[f64],
    attribute: usize,
    draws: &SharedDraws,
) -> Result<Vec<f64>> {
    check_attribute(space, attribute)?;
    let hyps = single_hypotheses(space.n_attributes(), attribute, space.cardinality(attribute));
    Ok(softmax_neg(&energies(model, schedule, x, &hyps, draws)))
}

/// `p(C_i = v, C_j = u | x)` as an `m_i x m_j` table.
pub fn implicit_joint_pmf<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    space: &AttributeSpace,
    x: &[f64],
    pair: (usize, usize),
    draws: &SharedDraws,
) -> Result<Array2<f64>> {
    check_attribute(space, pair.0)?;
    check_attribute(space, pair.1)?;
    if pair.0 == pair.1 {
        return Err(CoindError::InvalidParam("joint pmf needs two distinct attributes".into()));
    }
    let (mi, mj) = (space.cardinality(pair.0), space.cardinality(pair.1));
    let hyps = pair_hypotheses(space.n_attributes(), pair, mi, mj);
    let p = softmax_neg(&energies(model, schedule, x, &hyps, draws));
    Ok(Array2::from_shape_vec((mi, mj), p).expect("shape"))
}

/// `KL(p || q)` in nats with `0 log 0 = 0`.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats; bounded by `ln 2`.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(p, &m) + 0.5 * kl(q, &m)).max(0.0)
}

pub fn outer(a: &[f64], b: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(r, c)| a[r] * b[c])
}

/// JSD between the implicit joint over `pair` and the product of the
/// implicit marginals at one point.
pub fn pointwise_violation<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    space: &AttributeSpace,
    x: &[f64],
    pair: (usize, usize),
    draws: &SharedDraws,
) -> Result<f64> {
    check_attribute(space, pair.0)?;
    check_attribute(space, pair.1)?;
    if pair.0 == pair.1 {
        return Err(CoindError::InvalidParam("pair must use two distinct attributes".into()));
    }
    let n = space.n_attributes();
    let (mi, mj) = (space.cardinality(pair.0), space.cardinality(pair.1));
    // one forward call for all three hypothesis families
    let mut hyps = pair_hypotheses(n, pair, mi, mj);
    hyps.extend(single_hypotheses(n, pair.0, mi));
    hyps.extend(single_hypotheses(n, pair.1, mj));
    let e = energies(model, schedule, x, &hyps, draws);
    let joint = softmax_neg(&e[..mi * mj]);
    let pi = softmax_neg(&e[mi * mj..mi * mj + mi]);
    let pj = softmax_neg(&e[mi * mj + mi..]);
    let prod = outer(&pi, &pj);
    Ok(jsd(&joint, prod.as_slice().expect("contiguous")))
}

/// Mean pointwise violation over the rows of `points`.
pub fn jsd_violation<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    space: &AttributeSpace,
    points: ArrayView2<f64>,
    pair: (usize, usize),
    cfg: &ImplicitClassifierConfig,
) -> Result<f64> {
    cfg.validate()?;
    if points.nrows() == 0 {
        return Err(CoindError::InvalidParam("no evaluation points".into()));
    }
    let mut total = 0.0;
    for (k, row) in points.outer_iter().enumerate() {
        let draws = SharedDraws::for_point(cfg, schedule, points.ncols(), k as u64);
        let x = row.to_vec();
        total += pointwise_violation(model, schedule, space, &x, pair, &draws)?;
    }
    Ok(total / points.nrows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationOutcome {
    pub relation: String,
    pub samples: usize,
    pub conforming: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RelationOutcome {
    pub fn score(&self) -> Option<f64> {
        (self.error.is_none() && self.samples > 0).then(|| self.conforming as f64 / self.samples as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformityReport {
    /// Mean over relations that sampled successfully; `None` if none did.
    pub cs: Option<f64>,
    pub relations: Vec<RelationOutcome>,
}

/// Fraction of classified samples landing in each relation's allowed set,
/// averaged over relations. Relations whose sampler fails are reported and
/// skipped.
pub fn conformity_score<S, C>(
    mut sampler: S,
    relations: &[(CompositionExpr, Vec<Composition>)],
    classifier: C,
    samples_per_relation: usize,
) -> Result<ConformityReport>
where
    S: FnMut(&CompositionExpr, usize) -> Result<Array2<f64>>,
    C: Fn(&[f64]) -> Composition,
{
    let mut outcomes = Vec::with_capacity(relations.len());
    for (expr, allowed) in relations {
        if allowed.is_empty() {
            return Err(CoindError::InvalidParam(format!("relation {expr} has an empty allowed set")));
        }
        let outcome = match sampler(expr, samples_per_relation) {
            Ok(x) => {
                let conforming = x
                    .outer_iter()
                    .filter(|row| allowed.contains(&classifier(&row.to_vec())))
                    .count();
                RelationOutcome {
                    relation: expr.to_string(),
                    samples: x.nrows(),
                    conforming,
                    error: None,
                }
            }
            Err(e) => RelationOutcome {
                relation: expr.to_string(),
                samples: 0,
                conforming: 0,
                error: Some(e.to_string()),
            },
        };
        outcomes.push(outcome);
    }
    let scores: Vec<f64> = outcomes.iter().filter_map(RelationOutcome::score).collect();
    let cs = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    Ok(ConformityReport {
        cs,
        relations: outcomes,
    })
}

/// Shannon entropy (bits) of a count vector.
pub fn entropy_bits(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Entropy of the classified values of `attribute` over the sample rows.
pub fn diversity_entropy<C>(samples: ArrayView2<f64>, classifier: C, attribute: usize, cardinality: usize) -> Result<f64>
where
    C: Fn(&[f64]) -> Composition,
{
    if samples.nrows() == 0 {
        return Err(CoindError::InvalidParam("no samples".into()));
    }
    let mut counts = vec![0usize; cardinality];
    for row in samples.outer_iter() {
        let c = classifier(&row.to_vec());
        let v = *c
            .get(attribute)
            .ok_or_else(|| CoindError::Shape(format!("classifier returned {} attributes", c.len())))?;
        if v >= cardinality {
            return Err(CoindError::Shape(format!("class {v} outside cardinality {cardinality}")));
        }
        counts[v] += 1;
    }
    Ok(entropy_bits(&counts))
}

/// Pearson correlation coefficient; `None` for fewer than two points or a
/// constant series.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Nats.
    pub jsd: Option<f64>,
    pub cs: BTreeMap<String, f64>,
    /// Bits, keyed by task.
    pub entropy: BTreeMap<String, f64>,
    pub sample_counts: BTreeMap<String, usize>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Long format: `metric,key,value`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "key", "value"])?;
        if let Some(j) = self.jsd {
            w.write_record(["jsd", "", &j.to_string()])?;
        }
        for (k, v) in &self.cs {
            w.write_record(["cs", k, &v.to_string()])?;
        }
        for (k, v) in &self.entropy {
            w.write_record(["entropy", k, &v.to_string()])?;
        }
        for (k, v) in &self.sample_counts {
            w.write_record(["samples", k, &v.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| CoindError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("utf8"))
    }
}

/// One (support, objective) row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub support: String,
    pub objective: String,
    pub jsd: f64,
    pub cs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
}

/// Markdown table with one row per support and a JSD/CS column pair per
/// objective.
pub fn render_markdown(runs: &[RunSummary]) -> String {
    let mut supports: Vec<&str> = Vec::new();
    let mut objectives: Vec<&str> = Vec::new();
    for r in runs {
        if !supports.contains(&r.support.as_str()) {
            supports.push(&r.support);
        }
        if !objectives.contains(&r.objective.as_str()) {
            objectives.push(&r.objective);
        }
    }
    let mut out = String::from("| Support |");
    for o in &objectives {
        let _ = write!(out, " {o} JSD | {o} CS |");
    }
    out.push_str("\n|---|");
    for _ in &objectives {
        out.push_str("---:|---:|");
    }
    out.push('\n');
    for s in &supports {
        let _ = write!(out, "| {s} |");
        for o in &objectives {
            match runs.iter().find(|r| r.support == *s && r.objective == *o) {
                Some(r) => {
                    let _ = write!(out, " {:.4} | {:.3} |", r.jsd, r.cs);
                }
                None => out.push_str(" - | - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// `support,objective,jsd,cs` rows for the correlation plot.
pub fn pairs_csv(runs: &[RunSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["support", "objective", "jsd", "cs"])?;
    for r in runs {
        w.write_record([r.support.clone(), r.objective.clone(), r.jsd.to_string(), r.cs.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| CoindError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("utf8"))
}
