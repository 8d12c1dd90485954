//! Noise schedule, conditioning, the noise-prediction contract and a small
//! trainable network that satisfies it.

pub mod adam;
pub mod checkpoint;
pub mod condition;
pub mod network;
pub mod schedule;

use ndarray::{Array2, ArrayView2};

pub use condition::{interpolate_condition, mask_condition, ConditionVector, Conditioning, Slot};
pub use network::{Architecture, ScoreNet};
pub use schedule::{NoiseSchedule, ScheduleConfig};

use crate::error::Result;

/// Conditional noise prediction `eps_theta(x_t, t, c)`, one row per sample.
pub trait NoisePredictor {
    fn dim(&self) -> usize;

    fn predict_eps(&self, x: ArrayView2<f64>, t: &[usize], cond: &[Conditioning]) -> Array2<f64>;

    /// Same timestep and conditioning for every row.
    fn predict_eps_shared(&self, x: ArrayView2<f64>, t: usize, cond: &Conditioning) -> Array2<f64> {
        let rows = x.nrows();
        self.predict_eps(x, &vec![t; rows], &vec![cond.clone(); rows])
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn predict_eps(&self, x: ArrayView2<f64>, t: &[usize], cond: &[Conditioning]) -> Array2<f64> {
        (**self).predict_eps(x, t, cond)
    }
}

/// A conditional score field `grad_x log p_t(x | c)` evaluated on a batch at a
/// shared noise level.
pub trait ScoreField {
    fn dim(&self) -> usize;

    fn score_batch(&self, x: ArrayView2<f64>, t: usize, cond: &ConditionVector) -> Result<Array2<f64>>;
}

/// Views a noise predictor as a score field through `-eps / sqrt(1 - abar_t)`.
pub struct EpsScoreField<'a, P: ?Sized> {
    pub predictor: &'a P,
    pub schedule: &'a NoiseSchedule,
}

impl<P: NoisePredictor + ?Sized> ScoreField for EpsScoreField<'_, P> {
    fn dim(&self) -> usize {
        self.predictor.dim()
    }

    fn score_batch(&self, x: ArrayView2<f64>, t: usize, cond: &ConditionVector) -> Result<Array2<f64>> {
        self.schedule.check_t(t)?;
        let scale = -1.0 / (1.0 - self.schedule.alpha_bar(t)).sqrt();
        Ok(self.predictor.predict_eps_shared(x, t, &cond.to_conditioning()) * scale)
    }
}

/// Views a score field as a noise predictor through `-sqrt(1 - abar_t) s`.
///
/// Blended slots are not meaningful for analytic fields and panic.
pub struct ScoreFieldEps<'a, F: ?Sized> {
    pub field: &'a F,
    pub schedule: &'a NoiseSchedule,
}

impl<F: ScoreField + ?Sized> NoisePredictor for ScoreFieldEps<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn predict_eps(&self, x: ArrayView2<f64>, t: &[usize], cond: &[Conditioning]) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for r in 0..x.nrows() {
            let row = x.slice(ndarray::s![r..r + 1, ..]);
            let e = self.predict_eps_shared(row, t[r], &cond[r]);
            out.row_mut(r).assign(&e.row(0));
        }
        out
    }

    fn predict_eps_shared(&self, x: ArrayView2<f64>, t: usize, cond: &Conditioning) -> Array2<f64> {
        let cv = ConditionVector(
            cond.0
                .iter()
                .map(|s| match *s {
                    Slot::Null => None,
                    Slot::Value(v) => Some(v),
                    Slot::Blend { .. } => panic!("analytic fields do not support blended slots"),
                })
                .collect(),
        );
        let score = self
            .field
            .score_batch(x, t, &cv)
            .expect("analytic score field evaluation");
        score * -(1.0 - self.schedule.alpha_bar(t)).sqrt()
    }
}
