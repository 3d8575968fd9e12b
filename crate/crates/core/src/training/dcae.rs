//! Trainable autoencoder over flat batches, generic in the scalar type so the
//! same graph runs in `f32` for training and `f64` for gradient checks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, pool_out, ConvGeom, Real};
use crate::layers::{Architecture, BnParams, DecoderParams};
use crate::training::Mode;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

/// One trainable tensor. `binarized` weights are used through `sign` in the
/// forward pass (the stored values are the latent shadow weights).
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub binarized: bool,
}

/// Running batch-norm statistics of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub name: String,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sign,
    HardTanh,
}

#[derive(Debug, Clone)]
enum Op {
    Conv { w: usize, bias: Option<usize>, g: ConvGeom, pad: f64 },
    Fc { w: usize, inp: usize, out: usize },
    Bn { gamma: usize, beta: usize, stats: usize, channels: usize, spatial: usize },
    Act(Activation),
    Logistic,
    Pool { c: usize, h: usize, w: usize },
    Resize { c: usize, from: usize, to: usize },
}

impl Op {
    fn out_len(&self, in_len: usize) -> usize {
        match *self {
            Op::Conv { g, .. } => g.out_len(),
            Op::Fc { out, .. } => out,
            Op::Pool { c, h, w } => c * pool_out(h) * pool_out(w),
            Op::Resize { c, to, .. } => c * to * to,
            _ => in_len,
        }
    }
}

#[derive(Debug)]
enum Saved<T> {
    Conv { cols: Vec<T>, w_eff: Vec<T> },
    Fc { x: Vec<T>, w_eff: Vec<T> },
    Bn { xhat: Vec<T>, inv_std: Vec<T>, mean: Vec<T>, var: Vec<T> },
    Act { x: Vec<T> },
    Logistic { y: Vec<T> },
    Pool { argmax: Vec<u32> },
    Resize,
}

/// Forward intermediates of one batch, consumed by [`Dcae::backward`].
#[derive(Debug)]
pub struct Tape<T> {
    generation: u64,
    batch: usize,
    saved: Vec<Saved<T>>,
    features: Vec<T>,
    output: Vec<T>,
}

impl<T: Real> Tape<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }
    /// Encoder outputs, `[batch, feature_dim]`.
    pub fn features(&self) -> &[T] {
        &self.features
    }
    /// Reconstructions in `[0, 1]`, `[batch, c, s, s]`.
    pub fn output(&self) -> &[T] {
        &self.output
    }
    pub fn generation(&self) -> u64 {
        self.generation
    }
    /// Pre-binarization inputs of every `sign` activation, in graph order.
    pub fn sign_inputs(&self) -> Vec<&[T]> {
        self.saved
            .iter()
            .filter_map(|s| match s {
                Saved::Act { x } => Some(&x[..]),
                _ => None,
            })
            .collect()
    }
}

/// Base point for the linearized forward: the parameter values and tape of
/// an ordinary forward pass.
pub struct Anchor<'a, T> {
    pub params: &'a [Param<T>],
    pub tape: &'a Tape<T>,
}

enum Run<'a, T> {
    Train,
    Eval,
    Linearized(&'a Anchor<'a, T>),
}

/// Gradients aligned with [`Dcae::params`].
pub type Grads<T> = Vec<Vec<T>>;

/// The autoencoder: binarizable encoder, mirrored decoder.
#[derive(Debug, Clone)]
pub struct Dcae<T> {
    arch: Architecture,
    mode: Mode,
    params: Vec<Param<T>>,
    stats: Vec<RunningStats<T>>,
    ops: Vec<Op>,
    encoder_ops: usize,
    generation: u64,
}

struct Builder<'r, T, R> {
    params: Vec<Param<T>>,
    stats: Vec<RunningStats<T>>,
    ops: Vec<Op>,
    rng: &'r mut R,
}

impl<T: Real, R: Rng> Builder<'_, T, R> {
    fn weight(&mut self, name: String, shape: Vec<usize>, binarized: bool) -> usize {
        let fan_in: usize = shape[1..].iter().product();
        let fan_out = shape[0] * shape[2..].iter().product::<usize>();
        let n: usize = shape.iter().product();
        let data = if binarized {
            // Small shadow weights so signs can flip early in training.
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt().min(0.5);
            (0..n).map(|_| T::from_f64(self.rng.random_range(-a..a))).collect()
        } else {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| T::from_f64(d.sample(self.rng))).collect()
        };
        self.params.push(Param { name, shape, data, binarized });
        self.params.len() - 1
    }

    fn vector(&mut self, name: String, n: usize, value: f64) -> usize {
        self.params.push(Param { name, shape: vec![n], data: vec![T::from_f64(value); n], binarized: false });
        self.params.len() - 1
    }

    fn bn(&mut self, name: &str, channels: usize, spatial: usize) {
        let gamma = self.vector(format!("{name}.bn.gamma"), channels, 1.0);
        let beta = self.vector(format!("{name}.bn.beta"), channels, 0.0);
        self.stats.push(RunningStats {
            name: name.to_string(),
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        });
        let stats = self.stats.len() - 1;
        self.ops.push(Op::Bn { gamma, beta, stats, channels, spatial });
    }

    fn conv(&mut self, name: &str, g: ConvGeom, pad: f64, binarized: bool, bias: bool) {
        let w = self.weight(format!("{name}.weight"), vec![g.out_ch, g.in_ch, 3, 3], binarized);
        let bias = bias.then(|| self.vector(format!("{name}.bias"), g.out_ch, 0.0));
        self.ops.push(Op::Conv { w, bias, g, pad });
    }

    fn fc(&mut self, name: &str, inp: usize, out: usize, binarized: bool) {
        let w = self.weight(format!("{name}.weight"), vec![out, inp], binarized);
        self.ops.push(Op::Fc { w, inp, out });
    }
}

fn act_of(binary: bool) -> Activation {
    if binary {
        Activation::Sign
    } else {
        Activation::HardTanh
    }
}

impl<T: Real> Dcae<T> {
    pub fn new(arch: Architecture, mode: Mode, rng: &mut impl Rng) -> Result<Self> {
        arch.validate()?;
        let (eb, db) = (mode.binary_encoder(), mode.binary_decoder());
        let (ea, da) = (act_of(eb), act_of(db));
        let (epad, dpad) = (if eb { -1.0 } else { 0.0 }, if db { -1.0 } else { 0.0 });
        let mut b = Builder { params: Vec::new(), stats: Vec::new(), ops: Vec::new(), rng };
        let sizes = arch.conv_sizes();
        let ins = arch.conv_in_channels();
        for i in 0..4 {
            let name = format!("enc.conv{}", i + 1);
            let (c, s) = (arch.conv_channels[i], sizes[i]);
            let g = ConvGeom { in_ch: ins[i], out_ch: c, height: s, width: s };
            b.conv(&name, g, if i == 0 { 0.0 } else { epad }, eb, false);
            b.bn(&name, c, s * s);
            b.ops.push(Op::Act(ea));
            b.ops.push(Op::Pool { c, h: s, w: s });
        }
        for (i, (inp, out)) in [(arch.flat_dim(), arch.fc_hidden), (arch.fc_hidden, arch.feature_dim)].into_iter().enumerate() {
            let name = format!("enc.fc{}", i + 1);
            b.fc(&name, inp, out, eb);
            b.bn(&name, out, 1);
            b.ops.push(Op::Act(ea));
        }
        let encoder_ops = b.ops.len();
        for (i, (inp, out)) in [(arch.feature_dim, arch.fc_hidden), (arch.fc_hidden, arch.flat_dim())].into_iter().enumerate() {
            let name = format!("dec.fc{}", i + 1);
            b.fc(&name, inp, out, db);
            b.bn(&name, out, 1);
            b.ops.push(Op::Act(da));
        }
        let stage = DecoderParams::stage_sizes(&arch);
        let mut from = arch.pool_sizes()[3];
        for (i, (out, inp)) in DecoderParams::conv_shapes(&arch).into_iter().enumerate() {
            let name = format!("dec.conv{}", i + 1);
            let to = stage[i];
            b.ops.push(Op::Resize { c: inp, from, to });
            let g = ConvGeom { in_ch: inp, out_ch: out, height: to, width: to };
            let last = i == 3;
            b.conv(&name, g, dpad, db, last);
            if last {
                b.ops.push(Op::Logistic);
            } else {
                b.bn(&name, out, to * to);
                b.ops.push(Op::Act(da));
            }
            from = to;
        }
        Ok(Dcae { arch, mode, params: b.params, stats: b.stats, ops: b.ops, encoder_ops, generation: 0 })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }
    pub fn stats(&self) -> &[RunningStats<T>] {
        &self.stats
    }
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        self.generation += 1;
        &mut self.params
    }

    pub fn stats_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.stats
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Names of parameters used through `sign`.
    pub fn binarized_param_names(&self) -> Vec<&str> {
        self.params.iter().filter(|p| p.binarized).map(|p| p.name.as_str()).collect()
    }

    /// Number of `sign` activations in the graph.
    pub fn sign_activation_count(&self) -> usize {
        self.ops.iter().filter(|o| matches!(o, Op::Act(Activation::Sign))).count()
    }

    pub fn input_len(&self) -> usize {
        let a = &self.arch;
        a.input_channels * a.input_size * a.input_size
    }

    /// Copies parameters and statistics from another model of the same layout.
    pub fn load_state(&mut self, params: Vec<Param<T>>, stats: Vec<RunningStats<T>>) -> Result<()> {
        let same = params.len() == self.params.len()
            && params.iter().zip(&self.params).all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.len() == b.data.len())
            && stats.len() == self.stats.len()
            && stats.iter().zip(&self.stats).all(|(a, b)| a.name == b.name && a.mean.len() == b.mean.len() && a.var.len() == b.var.len());
        if !same {
            return shape_err("checkpoint layout does not match the model");
        }
        for (dst, src) in self.params.iter_mut().zip(params) {
            dst.data = src.data;
        }
        self.stats = stats;
        self.generation += 1;
        Ok(())
    }

    fn check_batch(&self, x: &[T], n: usize) -> Result<()> {
        if n == 0 || x.len() != n * self.input_len() {
            return shape_err(format!("batch of {n} needs {} values, got {}", n * self.input_len(), x.len()));
        }
        Ok(())
    }

    /// Training-mode forward (batch statistics); updates running statistics.
    pub fn forward_train(&mut self, x: &[T], n: usize) -> Result<Tape<T>> {
        self.check_batch(x, n)?;
        self.generation += 1;
        let tape = self.run(x, n, Run::Train, self.ops.len())?;
        let m = T::from_f64(BN_MOMENTUM);
        let one_m = T::one() - m;
        for (op, saved) in self.ops.iter().zip(&tape.saved) {
            if let (Op::Bn { stats, spatial, .. }, Saved::Bn { mean, var, .. }) = (op, saved) {
                let count = (n * spatial) as f64;
                let unbias = T::from_f64(if count > 1.0 { count / (count - 1.0) } else { 1.0 });
                let s = &mut self.stats[*stats];
                for c in 0..mean.len() {
                    s.mean[c] = m * s.mean[c] + one_m * mean[c];
                    s.var[c] = m * s.var[c] + one_m * var[c] * unbias;
                }
            }
        }
        Ok(tape)
    }

    /// Training-mode forward with every `sign` (activation and weight),
    /// hard tanh and pool selection replaced by its first-order expansion at
    /// `anchor`. Equal to the ordinary forward at the anchor; its exact
    /// gradient there is the straight-through gradient.
    pub fn forward_linearized(&self, x: &[T], n: usize, anchor: &Anchor<'_, T>) -> Result<Tape<T>> {
        self.check_batch(x, n)?;
        if anchor.tape.batch != n || anchor.params.len() != self.params.len() {
            return shape_err("anchor does not match this batch");
        }
        self.run(x, n, Run::Linearized(anchor), self.ops.len())
    }

    /// Inference-mode reconstruction (running statistics).
    pub fn reconstruct(&self, x: &[T], n: usize) -> Result<Vec<T>> {
        self.check_batch(x, n)?;
        Ok(self.run(x, n, Run::Eval, self.ops.len())?.output)
    }

    /// Inference-mode encoder features, `[n, feature_dim]`.
    pub fn encode(&self, x: &[T], n: usize) -> Result<Vec<T>> {
        self.check_batch(x, n)?;
        Ok(self.run(x, n, Run::Eval, self.encoder_ops)?.features)
    }

    fn weight_eff(&self, w: usize, run: &Run<'_, T>) -> Vec<T> {
        let p = &self.params[w];
        if !p.binarized {
            return p.data.clone();
        }
        match run {
            Run::Linearized(a) => p
                .data
                .iter()
                .zip(&a.params[w].data)
                .map(|(&v, &v0)| sign(v0) + (v - v0))
                .collect(),
            _ => p.data.iter().map(|&v| sign(v)).collect(),
        }
    }

    fn run(&self, x: &[T], n: usize, run: Run<'_, T>, upto: usize) -> Result<Tape<T>> {
        let mut cur = x.to_vec();
        let mut in_len = self.input_len();
        let mut saved = Vec::with_capacity(upto);
        let mut features = Vec::new();
        let record = !matches!(run, Run::Eval);
        for (k, op) in self.ops[..upto].iter().enumerate() {
            let out_len = op.out_len(in_len);
            let mut out = vec![T::zero(); n * out_len];
            let anchor = match &run {
                Run::Linearized(a) => Some(&a.tape.saved[k]),
                _ => None,
            };
            let s = match *op {
                Op::Conv { w, bias, g, pad } => {
                    let w_eff = self.weight_eff(w, &run);
                    let bias = bias.map(|b| &self.params[b].data[..]);
                    let mut cols = Vec::new();
                    let mut all_cols = Vec::new();
                    for s in 0..n {
                        let o = &mut out[s * out_len..][..out_len];
                        kernels::conv3x3_forward(&g, &cur[s * in_len..][..in_len], &w_eff, bias, T::from_f64(pad), o, &mut cols);
                        if record {
                            all_cols.extend_from_slice(&cols);
                        }
                    }
                    Saved::Conv { cols: all_cols, w_eff }
                }
                Op::Fc { w, inp, out: o } => {
                    let w_eff = self.weight_eff(w, &run);
                    kernels::matmul_bt(n, inp, o, &cur, &w_eff, &mut out, false);
                    Saved::Fc { x: if record { std::mem::take(&mut cur) } else { Vec::new() }, w_eff }
                }
                Op::Bn { gamma, beta, stats, channels, spatial } => {
                    let (g, b) = (&self.params[gamma].data, &self.params[beta].data);
                    let eps = T::from_f64(BN_EPS);
                    let (mean, var) = match run {
                        Run::Eval => (self.stats[stats].mean.clone(), self.stats[stats].var.clone()),
                        _ => batch_moments(&cur, n, channels, spatial),
                    };
                    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                    let mut xhat = if record { vec![T::zero(); cur.len()] } else { Vec::new() };
                    for s in 0..n {
                        for c in 0..channels {
                            let at = s * in_len + c * spatial;
                            if record {
                                for i in at..at + spatial {
                                    let h = (cur[i] - mean[c]) * inv_std[c];
                                    xhat[i] = h;
                                    out[i] = g[c] * h + b[c];
                                }
                            } else {
                                // Same expression as the inference-side batch norm.
                                let d = (var[c] + eps).sqrt();
                                for i in at..at + spatial {
                                    out[i] = g[c] * (cur[i] - mean[c]) / d + b[c];
                                }
                            }
                        }
                    }
                    Saved::Bn { xhat, inv_std, mean, var }
                }
                Op::Act(a) => {
                    let x0 = match anchor {
                        Some(Saved::Act { x }) => Some(x),
                        _ => None,
                    };
                    for (i, (o, &v)) in out.iter_mut().zip(&cur).enumerate() {
                        *o = match (a, x0) {
                            (Activation::Sign, None) => sign(v),
                            (Activation::HardTanh, None) => clamp1(v),
                            (Activation::Sign, Some(x0)) => sign(x0[i]) + pass(x0[i]) * (v - x0[i]),
                            (Activation::HardTanh, Some(x0)) => clamp1(x0[i]) + pass(x0[i]) * (v - x0[i]),
                        };
                    }
                    Saved::Act { x: if record { std::mem::take(&mut cur) } else { Vec::new() } }
                }
                Op::Logistic => {
                    out.iter_mut().zip(&cur).for_each(|(o, &v)| *o = kernels::logistic(v));
                    Saved::Logistic { y: if record { out.clone() } else { Vec::new() } }
                }
                Op::Pool { c, h, w } => {
                    let mut argmax = vec![0u32; n * out_len];
                    match anchor {
                        Some(Saved::Pool { argmax: a0 }) => {
                            for s in 0..n {
                                for i in 0..out_len {
                                    let j = s * out_len + i;
                                    argmax[j] = a0[j];
                                    out[j] = cur[s * in_len + a0[j] as usize];
                                }
                            }
                        }
                        _ => {
                            for s in 0..n {
                                let (o, a) = (&mut out[s * out_len..][..out_len], &mut argmax[s * out_len..][..out_len]);
                                kernels::maxpool3s2_forward(c, h, w, &cur[s * in_len..][..in_len], o, a);
                            }
                        }
                    }
                    Saved::Pool { argmax }
                }
                Op::Resize { c, from, to } => {
                    for s in 0..n {
                        let o = &mut out[s * out_len..][..out_len];
                        kernels::resize_nearest_forward(c, from, to, &cur[s * in_len..][..in_len], o);
                    }
                    Saved::Resize
                }
            };
            if record {
                saved.push(s);
            }
            cur = out;
            in_len = out_len;
            if k + 1 == self.encoder_ops {
                features = cur.clone();
            }
        }
        if let Some(i) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Tape { generation: self.generation, batch: n, saved, features, output: cur })
    }

    /// Reverse pass from `d_output` (gradient w.r.t. the reconstruction).
    /// Binarized weights receive the gradient of their sign unchanged
    /// (shadow weights stay within `[-1, 1]`); `sign` activations pass it
    /// only where the cached input has `|x| < 1`.
    pub fn backward(&self, tape: Tape<T>, d_output: &[T]) -> Result<Grads<T>> {
        if tape.generation != self.generation {
            return Err(Error::StaleTape { tape: tape.generation, current: self.generation });
        }
        if tape.saved.len() != self.ops.len() {
            return Err(Error::InvalidValue("tape was recorded without intermediates".into()));
        }
        if d_output.len() != tape.output.len() {
            return shape_err(format!("output gradient has {} values, expected {}", d_output.len(), tape.output.len()));
        }
        let n = tape.batch;
        let mut grads: Grads<T> = self.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        let mut in_lens = Vec::with_capacity(self.ops.len());
        let mut len = self.input_len();
        for op in &self.ops {
            in_lens.push(len);
            len = op.out_len(len);
        }
        let mut dcur = d_output.to_vec();
        let mut dcols = Vec::new();
        for (k, (op, saved)) in self.ops.iter().zip(tape.saved).enumerate().rev() {
            let in_len = in_lens[k];
            let out_len = op.out_len(in_len);
            let mut dx = vec![T::zero(); n * in_len];
            match (op, saved) {
                (Op::Conv { w, bias, g, .. }, Saved::Conv { cols, w_eff }) => {
                    let cl = g.in_ch * 9 * g.height * g.width;
                    let mut dw = std::mem::take(&mut grads[*w]);
                    let mut db = bias.map(|b| std::mem::take(&mut grads[b]));
                    let need_dx = k > 0;
                    for s in 0..n {
                        kernels::conv3x3_backward(
                            g,
                            &cols[s * cl..][..cl],
                            &w_eff,
                            &dcur[s * out_len..][..out_len],
                            &mut dw,
                            db.as_deref_mut(),
                            if need_dx { Some(&mut dx[s * in_len..][..in_len]) } else { None },
                            &mut dcols,
                        );
                    }
                    grads[*w] = dw;
                    if let (Some(b), Some(db)) = (bias, db) {
                        grads[*b] = db;
                    }
                }
                (Op::Fc { w, inp, out }, Saved::Fc { x, w_eff }) => {
                    kernels::matmul_at(*out, n, *inp, &dcur, &x, &mut grads[*w], true);
                    kernels::matmul(n, *out, *inp, &dcur, &w_eff, &mut dx, false);
                }
                (Op::Bn { gamma, beta, channels, spatial, .. }, Saved::Bn { xhat, inv_std, .. }) => {
                    let g = &self.params[*gamma].data;
                    let m = T::from_f64((n * spatial) as f64);
                    for c in 0..*channels {
                        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
                        for s in 0..n {
                            let at = s * in_len + c * spatial;
                            for i in at..at + spatial {
                                sum_dy += dcur[i];
                                sum_dy_xhat += dcur[i] * xhat[i];
                            }
                        }
                        grads[*gamma][c] += sum_dy_xhat;
                        grads[*beta][c] += sum_dy;
                        let k1 = g[c] * inv_std[c] / m;
                        for s in 0..n {
                            let at = s * in_len + c * spatial;
                            for i in at..at + spatial {
                                dx[i] = k1 * (m * dcur[i] - sum_dy - xhat[i] * sum_dy_xhat);
                            }
                        }
                    }
                }
                (Op::Act(_), Saved::Act { x }) => {
                    for ((d, &g), &v) in dx.iter_mut().zip(&dcur).zip(&x) {
                        *d = pass(v) * g;
                    }
                }
                (Op::Logistic, Saved::Logistic { y }) => {
                    for ((d, &g), &v) in dx.iter_mut().zip(&dcur).zip(&y) {
                        *d = g * v * (T::one() - v);
                    }
                }
                (Op::Pool { .. }, Saved::Pool { argmax }) => {
                    for s in 0..n {
                        let a = &argmax[s * out_len..][..out_len];
                        kernels::maxpool_backward(a, &dcur[s * out_len..][..out_len], &mut dx[s * in_len..][..in_len]);
                    }
                }
                (Op::Resize { c, from, to }, Saved::Resize) => {
                    for s in 0..n {
                        let d = &mut dx[s * in_len..][..in_len];
                        kernels::resize_nearest_backward(*c, *from, *to, &dcur[s * out_len..][..out_len], d);
                    }
                }
                _ => return Err(Error::InvalidValue("tape does not match the graph".into())),
            }
            dcur = dx;
        }
        Ok(grads)
    }

    /// Replaces running statistics with population statistics of `batches`
    /// (training-mode forward, fixed weights).
    pub fn finalize_bn(&mut self, batches: &[(&[T], usize)]) -> Result<()> {
        if batches.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut sums: Vec<(Vec<f64>, Vec<f64>)> =
            self.stats.iter().map(|s| (vec![0.0; s.mean.len()], vec![0.0; s.var.len()])).collect();
        let mut weight = vec![0.0f64; self.stats.len()];
        for &(x, n) in batches {
            self.check_batch(x, n)?;
            let tape = self.run(x, n, Run::Train, self.ops.len())?;
            for (op, saved) in self.ops.iter().zip(&tape.saved) {
                if let (Op::Bn { stats, spatial, .. }, Saved::Bn { mean, var, .. }) = (op, saved) {
                    let count = (n * spatial) as f64;
                    let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                    for c in 0..mean.len() {
                        sums[*stats].0[c] += n as f64 * mean[c].to_f64();
                        sums[*stats].1[c] += n as f64 * var[c].to_f64() * unbias;
                    }
                    weight[*stats] += n as f64;
                }
            }
        }
        for (s, ((m, v), w)) in self.stats.iter_mut().zip(sums.into_iter().zip(weight)) {
            s.mean = m.iter().map(|x| T::from_f64(x / w)).collect();
            s.var = v.iter().map(|x| T::from_f64(x / w)).collect();
        }
        Ok(())
    }

    /// Inference-side batch-norm parameters of layer `name` (`f32`).
    pub fn bn_params(&self, name: &str) -> Result<BnParams> {
        let s = self
            .stats
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::InvalidValue(format!("no batch norm named {name}")))?;
        let get = |suffix: &str| -> Result<Vec<f32>> {
            let i = self
                .param_index(&format!("{name}.bn.{suffix}"))
                .ok_or_else(|| Error::InvalidValue(format!("missing {name}.bn.{suffix}")))?;
            Ok(self.params[i].data.iter().map(|v| v.to_f32()).collect())
        };
        BnParams::new(
            get("gamma")?,
            get("beta")?,
            s.mean.iter().map(|v| v.to_f32()).collect(),
            s.var.iter().map(|v| v.to_f32()).collect(),
            BN_EPS as f32,
        )
    }
}

fn batch_moments<T: Real>(x: &[T], n: usize, channels: usize, spatial: usize) -> (Vec<T>, Vec<T>) {
    let per = channels * spatial;
    let count = T::from_f64((n * spatial) as f64);
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    for c in 0..channels {
        let mut s = T::zero();
        for b in 0..n {
            s += x[b * per + c * spatial..][..spatial].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut q = T::zero();
        for b in 0..n {
            for &v in &x[b * per + c * spatial..][..spatial] {
                q += (v - m) * (v - m);
            }
        }
        mean[c] = m;
        var[c] = q / count;
    }
    (mean, var)
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one()
    } else {
        -T::one()
    }
}

#[inline]
fn clamp1<T: Real>(v: T) -> T {
    if v > T::one() {
        T::one()
    } else if v < -T::one() {
        -T::one()
    } else {
        v
    }
}

/// Straight-through mask: 1 where `|x| < 1`.
#[inline]
fn pass<T: Real>(v: T) -> T {
    if v.abs() < T::one() {
        T::one()
    } else {
        T::zero()
    }
}

/// Mean squared error between two equally shaped buffers.
pub fn mse<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() || a.is_empty() {
        return shape_err(format!("mse over {} and {} values", a.len(), b.len()));
    }
    let s: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Ok(s / T::from_f64(a.len() as f64))
}

/// Gradient of [`mse`] with respect to `recon`.
pub fn mse_grad<T: Real>(img: &[T], recon: &[T]) -> Vec<T> {
    let k = T::from_f64(2.0 / img.len() as f64);
    recon.iter().zip(img).map(|(&r, &x)| k * (r - x)).collect()
}
