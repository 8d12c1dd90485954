//! Conditional noise-prediction MLP with hand-derived backward pass.
//!
//! Input row: `[x | sinusoidal(t) | emb_1(c_1) | ... | emb_n(c_n)]`. Each
//! attribute owns an embedding table with `m_i + 1` rows; the last row is the
//! learned null token.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::condition::{Conditioning, Slot};
use super::NoisePredictor;
use crate::error::{CoindError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub cardinalities: Vec<usize>,
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub embedding_width: usize,
}

impl Architecture {
    /// Three hidden layers of 128, 32 time features, 16-wide embeddings.
    pub fn desk_default(cardinalities: Vec<usize>) -> Self {
        Self {
            cardinalities,
            hidden: vec![128, 128, 128],
            time_features: 32,
            embedding_width: 16,
        }
    }

    pub fn dim(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn input_width(&self) -> usize {
        self.dim() + self.time_features + self.dim() * self.embedding_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.cardinalities.is_empty() || self.cardinalities.iter().any(|&m| m < 2) {
            return Err(CoindError::Config(format!(
                "bad cardinalities {:?}",
                self.cardinalities
            )));
        }
        if self.time_features == 0 || self.time_features % 2 != 0 {
            return Err(CoindError::Config("time_features must be even and > 0".into()));
        }
        if self.embedding_width == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(CoindError::Config("zero-width layer".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    embeddings: Vec<usize>,
    layers: Vec<Dense>,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut off = 0;
        let embeddings = arch
            .cardinalities
            .iter()
            .map(|&m| {
                let start = off;
                off += (m + 1) * arch.embedding_width;
                start
            })
            .collect();
        let mut widths = vec![arch.input_width()];
        widths.extend(&arch.hidden);
        widths.push(arch.dim());
        let layers = widths
            .windows(2)
            .map(|w| {
                let d = Dense {
                    w: off,
                    b: off + w[0] * w[1],
                    fan_in: w[0],
                    fan_out: w[1],
                };
                off += w[0] * w[1] + w[1];
                d
            })
            .collect();
        Self {
            embeddings,
            layers,
            total: off,
        }
    }
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    /// Input to each dense layer (`inputs[0]` is the assembled feature row).
    inputs: Vec<Array2<f64>>,
    /// SiLU derivative at each hidden pre-activation.
    dact: Vec<Array2<f64>>,
    cond: Vec<Conditioning>,
    pub output: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ScoreNet {
    arch: Architecture,
    layout: Layout,
    params: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

/// `(silu(z), silu'(z))` sharing one exponential.
fn silu_and_grad(z: f64) -> (f64, f64) {
    let s = sigmoid(z);
    (z * s, s * (1.0 + z * (1.0 - s)))
}

/// Fixed sinusoidal time features, `[sin(t f_k) | cos(t f_k)]`.
pub fn time_features(t: usize, width: usize, out: &mut [f64]) {
    let half = width / 2;
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
}

impl ScoreNet {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let emb_end = layout.layers[0].w;
        for p in &mut params[..emb_end] {
            *p = rng.sample::<f64, _>(StandardNormal);
        }
        for d in &layout.layers {
            let bound = 1.0 / (d.fan_in as f64).sqrt();
            for p in &mut params[d.w..d.b + d.fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self {
            arch,
            layout,
            params,
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(CoindError::Checkpoint(format!(
                "architecture expects {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            arch,
            layout,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn embedding_row(&self, attribute: usize, row: usize) -> &[f64] {
        let e = self.arch.embedding_width;
        let start = self.layout.embeddings[attribute] + row * e;
        &self.params[start..start + e]
    }

    fn slot_row(&self, attribute: usize, slot: Slot) -> usize {
        match slot {
            Slot::Null => self.arch.cardinalities[attribute],
            Slot::Value(v) => v,
            Slot::Blend { .. } => unreachable!("blend handled separately"),
        }
    }

    fn check_slots(&self, cond: &Conditioning) {
        assert_eq!(cond.0.len(), self.arch.dim(), "conditioning length");
        for (i, slot) in cond.0.iter().enumerate() {
            let m = self.arch.cardinalities[i];
            match *slot {
                Slot::Value(v) => assert!(v < m, "value {v} out of range for attribute {i}"),
                Slot::Blend { from, to, .. } => assert!(from < m && to < m),
                Slot::Null => {}
            }
        }
    }

    fn assemble(&self, x: ArrayView2<f64>, t: &[usize], cond: &[Conditioning]) -> Array2<f64> {
        let n = self.arch.dim();
        let tf = self.arch.time_features;
        let e = self.arch.embedding_width;
        let rows = x.nrows();
        assert_eq!(x.ncols(), n, "input dimension");
        assert_eq!(t.len(), rows);
        assert_eq!(cond.len(), rows);
        // Batches reuse a handful of timesteps many times over.
        let max_t = t.iter().copied().max().unwrap_or(0);
        let mut seen = vec![None; max_t + 1];
        let mut table = Vec::new();
        let mut input = Array2::zeros((rows, self.arch.input_width()));
        for (r, mut row) in input.axis_iter_mut(Axis(0)).enumerate() {
            let row = row.as_slice_mut().expect("row-major");
            for k in 0..n {
                row[k] = x[[r, k]];
            }
            let at = *seen[t[r]].get_or_insert_with(|| {
                let at = table.len();
                table.resize(at + tf, 0.0);
                time_features(t[r], tf, &mut table[at..]);
                at
            });
            row[n..n + tf].copy_from_slice(&table[at..at + tf]);
            self.check_slots(&cond[r]);
            for (i, slot) in cond[r].0.iter().enumerate() {
                let dst = &mut row[n + tf + i * e..n + tf + (i + 1) * e];
                match *slot {
                    Slot::Blend { from, to, alpha } => {
                        let a = self.embedding_row(i, from);
                        let b = self.embedding_row(i, to);
                        for k in 0..e {
                            dst[k] = (1.0 - alpha) * a[k] + alpha * b[k];
                        }
                    }
                    other => dst.copy_from_slice(self.embedding_row(i, self.slot_row(i, other))),
                }
            }
        }
        input
    }

    fn weights(&self, d: &Dense) -> (ArrayView2<'_, f64>, &[f64]) {
        let w = ArrayView2::from_shape((d.fan_in, d.fan_out), &self.params[d.w..d.b])
            .expect("layout");
        (w, &self.params[d.b..d.b + d.fan_out])
    }

    /// Forward pass keeping activations for [`ScoreNet::backward`].
    pub fn forward(&self, x: ArrayView2<f64>, t: &[usize], cond: &[Conditioning]) -> ForwardCache {
        let mut h = self.assemble(x, t, cond);
        let mut inputs = Vec::with_capacity(self.layout.layers.len());
        let mut dact = Vec::with_capacity(self.layout.layers.len() - 1);
        let last = self.layout.layers.len() - 1;
        for (l, d) in self.layout.layers.iter().enumerate() {
            let (w, b) = self.weights(d);
            let mut z = h.dot(&w);
            let bias = ArrayView2::from_shape((1, d.fan_out), b).expect("bias");
            z += &bias;
            inputs.push(h);
            if l == last {
                h = z;
            } else {
                let mut g = Array2::zeros(z.raw_dim());
                Zip::from(&mut z).and(&mut g).for_each(|z, g| {
                    let (a, da) = silu_and_grad(*z);
                    *z = a;
                    *g = da;
                });
                h = z;
                dact.push(g);
            }
        }
        ForwardCache {
            inputs,
            dact,
            cond: cond.to_vec(),
            output: h,
        }
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Array2<f64>, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let mut delta = d_output.clone();
        for (l, d) in self.layout.layers.iter().enumerate().rev() {
            let h_in = &cache.inputs[l];
            {
                let (gw, rest) = grad[d.w..].split_at_mut(d.b - d.w);
                let mut gw = ArrayViewMut2::from_shape((d.fan_in, d.fan_out), gw).expect("layout");
                general_mat_mul(1.0, &h_in.t(), &delta, 1.0, &mut gw);
                let gb = &mut rest[..d.fan_out];
                for row in delta.axis_iter(Axis(0)) {
                    for (g, v) in gb.iter_mut().zip(row.iter()) {
                        *g += v;
                    }
                }
            }
            let (w, _) = self.weights(d);
            if l > 0 {
                let mut d_in = delta.dot(&w.t());
                d_in *= &cache.dact[l - 1];
                delta = d_in;
            } else {
                // Only the embedding columns of the input carry parameters.
                let skip = self.arch.dim() + self.arch.time_features;
                let d_emb = delta.dot(&w.slice(s![skip.., ..]).t());
                self.scatter_embedding_grad(&cache.cond, &d_emb, grad);
            }
        }
    }

    fn scatter_embedding_grad(&self, cond: &[Conditioning], d_emb: &Array2<f64>, grad: &mut [f64]) {
        let e = self.arch.embedding_width;
        for (r, c) in cond.iter().enumerate() {
            for (i, slot) in c.0.iter().enumerate() {
                let src = d_emb.slice(s![r, i * e..(i + 1) * e]);
                let base = self.layout.embeddings[i];
                let mut add = |row: usize, scale: f64| {
                    let g = &mut grad[base + row * e..base + (row + 1) * e];
                    for (gk, sk) in g.iter_mut().zip(src.iter()) {
                        *gk += scale * sk;
                    }
                };
                match *slot {
                    Slot::Blend { from, to, alpha } => {
                        add(from, 1.0 - alpha);
                        add(to, alpha);
                    }
                    other => add(self.slot_row(i, other), 1.0),
                }
            }
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>, t: &[usize], cond: &[Conditioning]) -> Array2<f64> {
        // Inference path without the cache bookkeeping.
        let mut h = self.assemble(x, t, cond);
        let last = self.layout.layers.len() - 1;
        for (l, d) in self.layout.layers.iter().enumerate() {
            let (w, b) = self.weights(d);
            let mut z = h.dot(&w);
            z += &Array1::from(b.to_vec());
            if l != last {
                z.mapv_inplace(silu);
            }
            h = z;
        }
        h
    }
}

impl NoisePredictor for ScoreNet {
    fn dim(&self) -> usize {
        self.arch.dim()
    }

    fn predict_eps(&self, x: ArrayView2<f64>, t: &[usize], cond: &[Conditioning]) -> Array2<f64> {
        self.predict(x, t, cond)
    }
}
