//! Sine-activated fully connected networks (SIREN) with exact spatial
//! gradients and exact parameter gradients of losses that depend on both the
//! field value and its spatial gradient.
//!
//! Parameter layout (one flat `Vec<f64>`, layer-major): for every sine layer
//! `l = 1..=hidden_layers` the weight matrix `W_l` (row-major, `out × in`)
//! followed by its bias `b_l`; then the linear output layer's weights
//! (`hidden_dim`) and its scalar bias. A sine layer computes
//! `sin(ω₀ · (W h + b))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Number of samples per parallel work unit. Reductions always run in chunk
/// order, so results do not depend on the thread count.
const CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub omega0: f64,
}

impl Architecture {
    pub fn new(hidden_dim: usize, hidden_layers: usize) -> Self {
        Self {
            input_dim: 3,
            hidden_dim,
            hidden_layers,
            omega0: 30.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != 3 {
            return Err(Error::InvalidArgument(format!(
                "input_dim must be 3, got {}",
                self.input_dim
            )));
        }
        if self.hidden_dim == 0 || self.hidden_layers == 0 {
            return Err(Error::InvalidArgument(
                "hidden_dim and hidden_layers must be at least 1".into(),
            ));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::InvalidArgument("omega0 must be positive".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let d = self.hidden_dim;
        let first = self.input_dim * d + d;
        let hidden = (self.hidden_layers - 1) * (d * d + d);
        first + hidden + d + 1
    }

    fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::with_capacity(self.hidden_layers);
        let mut offset = 0;
        for l in 0..self.hidden_layers {
            let fan_in = if l == 0 { self.input_dim } else { self.hidden_dim };
            let w = offset;
            let b = w + fan_in * self.hidden_dim;
            offset = b + self.hidden_dim;
            out.push(Layer {
                w,
                b,
                fan_in,
                fan_out: self.hidden_dim,
            });
        }
        out
    }

    fn output_offset(&self) -> usize {
        self.parameter_count() - self.hidden_dim - 1
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Value and spatial gradient of a scalar field at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: Vec3,
}

/// Per-sample loss contribution and its adjoints with respect to the field
/// value and the field's spatial gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleAdjoint {
    pub loss: f64,
    pub d_value: f64,
    pub d_gradient: Vec3,
}

impl SampleAdjoint {
    pub const ZERO: SampleAdjoint = SampleAdjoint {
        loss: 0.0,
        d_value: 0.0,
        d_gradient: Vec3::new(0.0, 0.0, 0.0),
    };
}

/// Anything that can be evaluated as a differentiable scalar field on `Ω`.
pub trait ScalarField: Sync {
    fn value(&self, x: &Vec3) -> f64;

    fn sample(&self, x: &Vec3) -> FieldSample;

    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        points.iter().map(|p| self.value(p)).collect()
    }

    fn samples(&self, points: &[Vec3]) -> Vec<FieldSample> {
        points.iter().map(|p| self.sample(p)).collect()
    }
}

impl<F: ScalarField + ?Sized> ScalarField for &F {
    fn value(&self, x: &Vec3) -> f64 {
        (**self).value(x)
    }
    fn sample(&self, x: &Vec3) -> FieldSample {
        (**self).sample(x)
    }
    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        (**self).values(points)
    }
    fn samples(&self, points: &[Vec3]) -> Vec<FieldSample> {
        (**self).samples(points)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralField {
    pub architecture: Architecture,
    pub parameters: Vec<f64>,
    pub seed: u64,
}

impl NeuralField {
    /// SIREN initialization: first-layer weights uniform in `±1/fan_in`,
    /// deeper weights (including the output layer) uniform in
    /// `±sqrt(6/fan_in)/ω₀`, zero biases.
    pub fn init_siren(architecture: Architecture, seed: u64) -> Result<Self> {
        architecture.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parameters = vec![0.0; architecture.parameter_count()];
        for (l, layer) in architecture.layers().iter().enumerate() {
            let bound = if l == 0 {
                1.0 / layer.fan_in as f64
            } else {
                (6.0 / layer.fan_in as f64).sqrt() / architecture.omega0
            };
            for w in &mut parameters[layer.w..layer.b] {
                *w = rng.random_range(-bound..=bound);
            }
        }
        let out = architecture.output_offset();
        let bound = (6.0 / architecture.hidden_dim as f64).sqrt() / architecture.omega0;
        for w in &mut parameters[out..out + architecture.hidden_dim] {
            *w = rng.random_range(-bound..=bound);
        }
        Ok(Self {
            architecture,
            parameters,
            seed,
        })
    }

    pub fn zeros(architecture: Architecture) -> Result<Self> {
        architecture.validate()?;
        Ok(Self {
            parameters: vec![0.0; architecture.parameter_count()],
            architecture,
            seed: 0,
        })
    }

    /// A field that is identically `c`: all weights zero, output bias `c`.
    pub fn constant(architecture: Architecture, c: f64) -> Result<Self> {
        let mut f = Self::zeros(architecture)?;
        let n = f.parameters.len();
        f.parameters[n - 1] = c;
        Ok(f)
    }

    pub fn from_parameters(architecture: Architecture, parameters: Vec<f64>, seed: u64) -> Result<Self> {
        architecture.validate()?;
        if parameters.len() != architecture.parameter_count() {
            return Err(Error::ShapeMismatch {
                expected: architecture.parameter_count(),
                found: parameters.len(),
            });
        }
        Ok(Self {
            architecture,
            parameters,
            seed,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters.len()
    }

    pub fn eval(&self, x: &Vec3) -> f64 {
        let mut ws = Workspace::new(&self.architecture);
        self.forward(x, &mut ws, false)
    }

    pub fn eval_with_gradient(&self, x: &Vec3) -> FieldSample {
        let mut ws = Workspace::new(&self.architecture);
        let value = self.forward(x, &mut ws, true);
        FieldSample {
            value,
            gradient: self.output_gradient(&ws),
        }
    }

    pub fn eval_batch(&self, points: &[Vec3]) -> Vec<f64> {
        points
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| {
                let mut ws = Workspace::new(&self.architecture);
                chunk
                    .iter()
                    .map(|x| self.forward(x, &mut ws, false))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn eval_with_gradient_batch(&self, points: &[Vec3]) -> Vec<FieldSample> {
        points
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| {
                let mut ws = Workspace::new(&self.architecture);
                chunk
                    .iter()
                    .map(|x| {
                        let value = self.forward(x, &mut ws, true);
                        FieldSample {
                            value,
                            gradient: self.output_gradient(&ws),
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Parameter gradient of `L = Σ_i (a_i · value_i + b_i · ∇value_i)`.
    pub fn backprop_parameter_gradients(
        &self,
        points: &[Vec3],
        value_adjoints: &[f64],
        gradient_adjoints: &[Vec3],
    ) -> Result<Vec<f64>> {
        for len in [value_adjoints.len(), gradient_adjoints.len()] {
            if len != points.len() {
                return Err(Error::ShapeMismatch {
                    expected: points.len(),
                    found: len,
                });
            }
        }
        let (_, grad) = self.accumulate(points, |i, _| SampleAdjoint {
            loss: 0.0,
            d_value: value_adjoints[i],
            d_gradient: gradient_adjoints[i],
        });
        Ok(grad)
    }

    /// Runs the forward pass (with spatial gradients) at every point, asks
    /// `per_sample` for the loss contribution and adjoints, and accumulates
    /// the exact parameter gradient. Returns `(Σ loss, ∂(Σ loss)/∂θ)`.
    pub fn accumulate<F>(&self, points: &[Vec3], per_sample: F) -> (f64, Vec<f64>)
    where
        F: Fn(usize, &FieldSample) -> SampleAdjoint + Sync,
    {
        self.reduce_chunks(points, |offset, chunk, ws, grad| {
            let mut loss = 0.0;
            for (k, x) in chunk.iter().enumerate() {
                let value = self.forward(x, ws, true);
                let sample = FieldSample {
                    value,
                    gradient: self.output_gradient(ws),
                };
                let adj = per_sample(offset + k, &sample);
                loss += adj.loss;
                if adj.d_value != 0.0 || adj.d_gradient != Vec3::zeros() {
                    self.backward(x, ws, adj.d_value, Some(adj.d_gradient), grad);
                }
            }
            loss
        })
    }

    /// Like [`accumulate`](Self::accumulate) for losses that only depend on
    /// field values; skips the tangent computation. `per_sample` returns
    /// `(loss, d_value)`.
    pub fn accumulate_values<F>(&self, points: &[Vec3], per_sample: F) -> (f64, Vec<f64>)
    where
        F: Fn(usize, f64) -> (f64, f64) + Sync,
    {
        self.reduce_chunks(points, |offset, chunk, ws, grad| {
            let mut loss = 0.0;
            for (k, x) in chunk.iter().enumerate() {
                let value = self.forward(x, ws, false);
                let (l, a) = per_sample(offset + k, value);
                loss += l;
                if a != 0.0 {
                    self.backward(x, ws, a, None, grad);
                }
            }
            loss
        })
    }

    fn reduce_chunks<F>(&self, points: &[Vec3], work: F) -> (f64, Vec<f64>)
    where
        F: Fn(usize, &[Vec3], &mut Workspace, &mut [f64]) -> f64 + Sync,
    {
        let n = self.parameters.len();
        let partials: Vec<(f64, Vec<f64>)> = points
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut ws = Workspace::new(&self.architecture);
                let mut grad = vec![0.0; n];
                let loss = work(c * CHUNK, chunk, &mut ws, &mut grad);
                (loss, grad)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; n];
        for (l, g) in partials {
            loss += l;
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        (loss, grad)
    }

    fn forward(&self, x: &Vec3, ws: &mut Workspace, tangents: bool) -> f64 {
        let arch = &self.architecture;
        let omega = arch.omega0;
        let p = &self.parameters;
        for l in 0..ws.layers.len() {
            let layer = ws.layers[l];
            let (prev, cur) = ws.split(l);
            for i in 0..layer.fan_out {
                let row = &p[layer.w + i * layer.fan_in..layer.w + (i + 1) * layer.fan_in];
                let pre = match prev {
                    None => row[0] * x[0] + row[1] * x[1] + row[2] * x[2],
                    Some(prev) => dot(row, &prev.h),
                };
                let z = omega * (pre + p[layer.b + i]);
                let (s, c) = z.sin_cos();
                cur.h[i] = s;
                cur.cos[i] = c;
                if tangents {
                    for k in 0..3 {
                        let dz = match prev {
                            None => row[k],
                            Some(prev) => dot(row, &prev.ht[k]),
                        } * omega;
                        cur.zt[k][i] = dz;
                        cur.ht[k][i] = c * dz;
                    }
                }
            }
        }
        let out = arch.output_offset();
        let last = ws.acts.last().expect("at least one layer");
        dot(&p[out..out + arch.hidden_dim], &last.h) + p[out + arch.hidden_dim]
    }

    fn output_gradient(&self, ws: &Workspace) -> Vec3 {
        let arch = &self.architecture;
        let out = arch.output_offset();
        let w = &self.parameters[out..out + arch.hidden_dim];
        let last = ws.acts.last().expect("at least one layer");
        Vec3::new(dot(w, &last.ht[0]), dot(w, &last.ht[1]), dot(w, &last.ht[2]))
    }

    /// Reverse sweep through the value (and, when `d_gradient` is given, the
    /// tangent) computation of the last forward pass stored in `ws`.
    fn backward(&self, x: &Vec3, ws: &mut Workspace, d_value: f64, d_gradient: Option<Vec3>, grad: &mut [f64]) {
        let arch = &self.architecture;
        let omega = arch.omega0;
        let p = &self.parameters;
        let d = arch.hidden_dim;
        let out = arch.output_offset();
        let wo = &p[out..out + d];

        {
            let last = ws.acts.last().expect("at least one layer");
            let g = &mut grad[out..out + d];
            for i in 0..d {
                g[i] += d_value * last.h[i];
            }
            if let Some(b) = d_gradient {
                for k in 0..3 {
                    axpy(b[k], &last.ht[k], g);
                }
            }
            grad[out + d] += d_value;
        }
        for i in 0..d {
            ws.hbar[i] = d_value * wo[i];
        }
        if let Some(b) = d_gradient {
            for k in 0..3 {
                for i in 0..d {
                    ws.htbar[k][i] = b[k] * wo[i];
                }
            }
        }

        for l in (0..ws.layers.len()).rev() {
            let layer = ws.layers[l];
            let act = &ws.acts[l];
            // zbar = cos ⊙ hbar − sin ⊙ Σ_k htbar_k ⊙ zt_k ; ztbar_k = cos ⊙ htbar_k
            for i in 0..layer.fan_out {
                let mut zb = act.cos[i] * ws.hbar[i];
                if d_gradient.is_some() {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        acc += ws.htbar[k][i] * act.zt[k][i];
                        ws.ztbar[k][i] = act.cos[i] * ws.htbar[k][i];
                    }
                    zb -= act.h[i] * acc;
                }
                ws.zbar[i] = zb;
            }

            let tangents = d_gradient.is_some();
            if l == 0 {
                for i in 0..layer.fan_out {
                    let g = &mut grad[layer.w + i * 3..layer.w + (i + 1) * 3];
                    let zb = omega * ws.zbar[i];
                    for j in 0..3 {
                        g[j] += zb * x[j];
                    }
                    if tangents {
                        for j in 0..3 {
                            g[j] += omega * ws.ztbar[j][i];
                        }
                    }
                    grad[layer.b + i] += zb;
                }
                break;
            }

            let prev = &ws.acts[l - 1];
            ws.hbar_prev[..layer.fan_in].iter_mut().for_each(|v| *v = 0.0);
            if tangents {
                for k in 0..3 {
                    ws.htbar_prev[k][..layer.fan_in].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            for i in 0..layer.fan_out {
                let row = &p[layer.w + i * layer.fan_in..layer.w + (i + 1) * layer.fan_in];
                let g = &mut grad[layer.w + i * layer.fan_in..layer.w + (i + 1) * layer.fan_in];
                let zb = omega * ws.zbar[i];
                axpy(zb, &prev.h, g);
                axpy(zb, row, &mut ws.hbar_prev[..layer.fan_in]);
                grad[layer.b + i] += zb;
                if tangents {
                    for k in 0..3 {
                        let tb = omega * ws.ztbar[k][i];
                        let g = &mut grad[layer.w + i * layer.fan_in..layer.w + (i + 1) * layer.fan_in];
                        axpy(tb, &prev.ht[k], g);
                        axpy(tb, row, &mut ws.htbar_prev[k][..layer.fan_in]);
                    }
                }
            }
            std::mem::swap(&mut ws.hbar, &mut ws.hbar_prev);
            if tangents {
                std::mem::swap(&mut ws.htbar, &mut ws.htbar_prev);
            }
        }
    }
}

impl ScalarField for NeuralField {
    fn value(&self, x: &Vec3) -> f64 {
        self.eval(x)
    }
    fn sample(&self, x: &Vec3) -> FieldSample {
        self.eval_with_gradient(x)
    }
    fn values(&self, points: &[Vec3]) -> Vec<f64> {
        self.eval_batch(points)
    }
    fn samples(&self, points: &[Vec3]) -> Vec<FieldSample> {
        self.eval_with_gradient_batch(points)
    }
}

#[derive(Clone)]
struct Activations {
    h: Vec<f64>,
    cos: Vec<f64>,
    zt: [Vec<f64>; 3],
    ht: [Vec<f64>; 3],
}

struct Workspace {
    layers: Vec<Layer>,
    acts: Vec<Activations>,
    hbar: Vec<f64>,
    hbar_prev: Vec<f64>,
    htbar: [Vec<f64>; 3],
    htbar_prev: [Vec<f64>; 3],
    zbar: Vec<f64>,
    ztbar: [Vec<f64>; 3],
}

impl Workspace {
    fn new(arch: &Architecture) -> Self {
        let d = arch.hidden_dim;
        let v = || vec![0.0; d];
        let act = Activations {
            h: v(),
            cos: v(),
            zt: [v(), v(), v()],
            ht: [v(), v(), v()],
        };
        Self {
            layers: arch.layers(),
            acts: vec![act; arch.hidden_layers],
            hbar: v(),
            hbar_prev: v(),
            htbar: [v(), v(), v()],
            htbar_prev: [v(), v(), v()],
            zbar: v(),
            ztbar: [v(), v(), v()],
        }
    }

    fn split(&mut self, l: usize) -> (Option<&Activations>, &mut Activations) {
        if l == 0 {
            (None, &mut self.acts[0])
        } else {
            let (a, b) = self.acts.split_at_mut(l);
            (Some(&a[l - 1]), &mut b[0])
        }
    }
}

/// Dot product with four independent partial sums (fixed order).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
