//! Composed scores and the two samplers that consume them.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::plan::GuidancePlan;
use crate::diffusion::{Conditioning, NoisePredictor, NoiseSchedule, ScoreField};
use crate::error::{CoindError, Result};

/// Rows whose norm exceeds this abort sampling.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// `sum_k coeff_k * field(x, t, cond_k)`.
pub fn composed_score<F: ScoreField + ?Sized>(
    plan: &GuidancePlan,
    field: &F,
    x: ArrayView2<f64>,
    t: usize,
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(x.raw_dim());
    for (cond, w) in plan.float_terms() {
        out.scaled_add(w, &field.score_batch(x, t, &cond)?);
    }
    Ok(out)
}

/// The same combination carried out on noise predictions.
pub fn composed_eps<P: NoisePredictor + ?Sized>(
    terms: &[(Conditioning, f64)],
    model: &P,
    x: ArrayView2<f64>,
    t: usize,
) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (cond, w) in terms {
        out.scaled_add(*w, &model.predict_eps_shared(x, t, cond));
    }
    out
}

/// `(1 - gamma) * uncond + gamma * cond`.
pub fn cfg_mix(uncond: &[f64], cond: &[f64], gamma: f64) -> Vec<f64> {
    uncond
        .iter()
        .zip(cond)
        .map(|(u, c)| (1.0 - gamma) * u + gamma * c)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinConfig {
    pub steps_per_level: usize,
    /// Base step size; level `t` uses `eta * (1 - abar_t)`.
    pub eta: f64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            steps_per_level: 5,
            eta: 1.0,
        }
    }
}

fn check_rows(x: &Array2<f64>, t: usize) -> Result<()> {
    for row in x.axis_iter(Axis(0)) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(CoindError::Divergence { t, norm });
        }
    }
    Ok(())
}

fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Annealed Langevin dynamics on the composed score, from `t = T` down to 1.
pub fn sample_langevin<F: ScoreField + ?Sized, R: Rng + ?Sized>(
    plan: &GuidancePlan,
    field: &F,
    schedule: &NoiseSchedule,
    cfg: &LangevinConfig,
    count: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if !(cfg.eta > 0.0 && cfg.eta.is_finite()) {
        return Err(CoindError::InvalidParam(format!("eta must be > 0 (got {})", cfg.eta)));
    }
    let dim = field.dim();
    let mut x = standard_normal(count, dim, rng);
    if count == 0 {
        return Ok(x);
    }
    for t in (1..=schedule.steps()).rev() {
        let eta_t = cfg.eta * (1.0 - schedule.alpha_bar(t));
        let noise_scale = eta_t.sqrt();
        for _ in 0..cfg.steps_per_level {
            let score = composed_score(plan, field, x.view(), t)?;
            let z = standard_normal(count, dim, rng);
            Zip::from(&mut x).and(&score).and(&z).for_each(|x, &s, &z| {
                *x += 0.5 * eta_t * s + noise_scale * z;
            });
        }
        check_rows(&x, t)?;
    }
    Ok(x)
}

/// Decreasing timestep sequence of length `steps`, evenly strided over `1..=T`
/// and always starting at `T`.
pub fn strided_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(CoindError::InvalidParam(format!(
            "sampler steps must lie in 1..={total} (got {steps})"
        )));
    }
    let mut ts: Vec<usize> = (1..=steps)
        .map(|k| (k * total).div_ceil(steps))
        .collect();
    ts.dedup();
    ts.reverse();
    Ok(ts)
}

/// Deterministic reverse diffusion (`eta = 0`) on composed noise predictions.
pub fn sample_reverse<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    plan: &GuidancePlan,
    model: &P,
    schedule: &NoiseSchedule,
    steps: usize,
    count: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    sample_reverse_terms(&plan.conditioning_terms(), model, schedule, steps, count, rng)
}

/// [`sample_reverse`] on explicit conditioning terms, e.g. interpolated ones.
pub fn sample_reverse_terms<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    terms: &[(Conditioning, f64)],
    model: &P,
    schedule: &NoiseSchedule,
    steps: usize,
    count: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let ts = strided_timesteps(schedule.steps(), steps)?;
    let mut x = standard_normal(count, model.dim(), rng);
    if count == 0 {
        return Ok(x);
    }
    for (k, &t) in ts.iter().enumerate() {
        let eps = composed_eps(terms, model, x.view(), t);
        let ab = schedule.alpha_bar(t);
        let ab_next = ts.get(k + 1).map_or(1.0, |&s| schedule.alpha_bar(s));
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (na, nb) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
        Zip::from(&mut x).and(&eps).for_each(|x, &e| {
            let x0 = (*x - sb * e) / sa;
            *x = na * x0 + nb * e;
        });
        check_rows(&x, t)?;
    }
    Ok(x)
}
