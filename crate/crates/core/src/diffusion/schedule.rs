use serde::{Deserialize, Serialize};

use crate::error::{CoindError, Result};

/// Linear-beta DDPM schedule. Timesteps are 1-based: `t` in `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    /// The 1000-step `[1e-4, 0.02]` schedule rescaled to 200 steps.
    fn default() -> Self {
        let scale = 1000.0 / 200.0;
        Self {
            steps: 200,
            beta_start: 1e-4 * scale,
            beta_end: 0.02 * scale,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(CoindError::InvalidParam(format!("schedule needs T >= 2, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(CoindError::InvalidParam(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|k| beta_start + (beta_end - beta_start) * k as f64 / (steps - 1) as f64)
            .collect();
        let alpha_bars = betas
            .iter()
            .scan(1.0, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            beta_start,
            beta_end,
            betas,
            alpha_bars,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.steps(),
            beta_start: self.beta_start,
            beta_end: self.beta_end,
        }
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps(), "timestep {t} outside 1..={}", self.steps());
        self.alpha_bars[t - 1]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t >= 1 && t <= self.steps() {
            Ok(())
        } else {
            Err(CoindError::InvalidParam(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )))
        }
    }

    /// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
    pub fn perturb(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_t(t)?;
        if x0.len() != eps.len() {
            return Err(CoindError::Shape(format!(
                "x0 has length {}, eps has length {}",
                x0.len(),
                eps.len()
            )));
        }
        let ab = self.alpha_bar(t);
        Ok(perturb_with(ab, x0, eps))
    }

    /// Noise prediction to score: `-eps / sqrt(1 - abar_t)`.
    pub fn eps_to_score(&self, eps_hat: &[f64], t: usize) -> Vec<f64> {
        let s = (1.0 - self.alpha_bar(t)).sqrt();
        eps_hat.iter().map(|e| -e / s).collect()
    }

    pub fn score_to_eps(&self, score: &[f64], t: usize) -> Vec<f64> {
        let s = (1.0 - self.alpha_bar(t)).sqrt();
        score.iter().map(|g| -g * s).collect()
    }
}

pub fn perturb_with(alpha_bar: f64, x0: &[f64], eps: &[f64]) -> Vec<f64> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}
