//! Teacher-forced and free-running rollouts, the three sequence losses and
//! backprop through time over both rollouts at once.
//!
//! Step `k` maps input `u_k` and state `S_k` to output `Y_{k+1}` and state
//! `S_{k+1}`. Index 0 is the seed: `Y_0 = x_0` and `S_0 = 0`, so the loss
//! terms at index 0 vanish.

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, Real};
use crate::seqmodel::lstm::{cell_backward, CellCache, LstmParams, LstmState, RolloutResult};

/// Weights of the combined loss `α·L_m + β·L_s + γ·L_h`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.1, beta: 1.0, gamma: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma].iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Individual and combined loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct LossParts {
    pub multi: f64,
    pub single: f64,
    pub state: f64,
    pub combined: f64,
}

/// Splits a flat `[n, dim]` buffer into per-step rows.
pub fn split_steps<T: Copy>(x: &[T], dim: usize) -> Result<Vec<Vec<T>>> {
    if dim == 0 || x.is_empty() || x.len() % dim != 0 {
        return shape_err(format!("{} values do not form rows of {dim}", x.len()));
    }
    Ok(x.chunks(dim).map(|c| c.to_vec()).collect())
}

struct Trace<T> {
    outputs: Vec<Vec<T>>,
    states: Vec<LstmState<T>>,
    caches: Vec<Vec<CellCache<T>>>,
}

/// Rolls `b` sequences forward. With `teacher`, step `k` reads `xs[k]`;
/// otherwise it reads its own previous output.
fn rollout_batch<T: Real>(p: &LstmParams<T>, b: usize, xs: &[Vec<T>], n: usize, teacher: bool) -> Trace<T> {
    let mut outputs = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut caches = Vec::with_capacity(n.saturating_sub(1));
    outputs.push(xs[0].clone());
    states.push(p.batch_state(b));
    for k in 0..n.saturating_sub(1) {
        let u = if teacher { &xs[k] } else { &outputs[k] };
        let (y, s, c) = p.step_cached(b, u, &states[k]);
        outputs.push(y);
        states.push(s);
        caches.push(c);
    }
    Trace { outputs, states, caches }
}

/// Backprop through one rollout. `dy[t]` and `ds[t]` are loss gradients
/// w.r.t. output and state at index `t`; with `feedback`, input gradients
/// flow into the previous output.
fn backprop<T: Real>(
    p: &LstmParams<T>,
    b: usize,
    trace: &Trace<T>,
    dy: &[Vec<T>],
    ds: &[LstmState<T>],
    feedback: bool,
    g: &mut LstmParams<T>,
) {
    let layers = p.layers.len();
    let dim = p.dim();
    let top = p.top_hidden();
    let mut carry_h: Vec<Vec<T>> = p.layers.iter().map(|l| vec![T::zero(); b * l.hidden]).collect();
    let mut carry_c = carry_h.clone();
    let mut fed_back: Option<Vec<T>> = None;
    for k in (0..trace.caches.len()).rev() {
        let t = k + 1;
        let mut d_out = dy[t].clone();
        if let Some(f) = fed_back.take() {
            d_out.iter_mut().zip(f).for_each(|(a, v)| *a += v);
        }
        let h_top = &trace.states[t].h[layers - 1];
        kernels::matmul_at(dim, b, top, &d_out, h_top, &mut g.fc_w, true);
        for row in d_out.chunks(dim) {
            g.fc_b.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
        }
        let mut dh: Vec<Vec<T>> = (0..layers)
            .map(|l| carry_h[l].iter().zip(&ds[t].h[l]).map(|(&a, &v)| a + v).collect())
            .collect();
        let mut from_fc = vec![T::zero(); b * top];
        kernels::matmul(b, dim, top, &d_out, &p.fc_w, &mut from_fc, false);
        dh[layers - 1].iter_mut().zip(from_fc).for_each(|(a, v)| *a += v);
        for l in (0..layers).rev() {
            let dc: Vec<T> = carry_c[l].iter().zip(&ds[t].c[l]).map(|(&a, &v)| a + v).collect();
            let (dx, dh_prev, dc_prev) = cell_backward(&p.layers[l], b, &trace.caches[k][l], &dh[l], &dc, &mut g.layers[l]);
            if l > 0 {
                dh[l - 1].iter_mut().zip(dx).for_each(|(a, v)| *a += v);
            } else if feedback && k > 0 {
                fed_back = Some(dx);
            }
            carry_h[l] = dh_prev;
            carry_c[l] = dc_prev;
        }
    }
}

fn to_result<T: Real>(trace: Trace<T>) -> RolloutResult<T> {
    RolloutResult { outputs: trace.outputs, states: trace.states }
}

/// Teacher forcing over a flat `[n, dim]` sequence.
pub fn single_step_rollout<T: Real>(x: &[T], p: &LstmParams<T>) -> Result<RolloutResult<T>> {
    p.validate()?;
    let xs = split_steps(x, p.dim())?;
    let n = xs.len();
    Ok(to_result(rollout_batch(p, 1, &xs, n, true)))
}

/// Free-running rollout of `n` steps seeded with `x1`.
pub fn multi_step_rollout<T: Real>(x1: &[T], n: usize, p: &LstmParams<T>) -> Result<RolloutResult<T>> {
    p.validate()?;
    if x1.len() != p.dim() {
        return shape_err(format!("seed has {} values, expected {}", x1.len(), p.dim()));
    }
    if n == 0 {
        return shape_err("rollout length must be positive");
    }
    Ok(to_result(rollout_batch(p, 1, &[x1.to_vec()], n, false)))
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&u, &v)| (u.to_f64() - v.to_f64()).powi(2)).sum()
}

fn sequence_loss<T: Real>(x: &[Vec<T>], y: &[Vec<T>]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return shape_err(format!("sequence loss over {} and {} steps", x.len(), y.len()));
    }
    let mut s = 0.0;
    for (a, b) in x.iter().zip(y) {
        if a.len() != b.len() {
            return shape_err("sequence loss: step widths differ");
        }
        s += sq_dist(a, b);
    }
    Ok(s / (2.0 * x.len() as f64))
}

/// `(1/2N) Σ_t ‖x_t − y_t‖²` for the free-running outputs.
pub fn loss_multi<T: Real>(x: &[Vec<T>], ym: &[Vec<T>]) -> Result<f64> {
    sequence_loss(x, ym)
}

/// `(1/2N) Σ_t ‖x_t − y_t‖²` for the teacher-forced outputs.
pub fn loss_single<T: Real>(x: &[Vec<T>], ys: &[Vec<T>]) -> Result<f64> {
    sequence_loss(x, ys)
}

/// `(1/2N) Σ_t ‖S^s_t − S^m_t‖²` over `h` and `c` of every layer.
pub fn loss_state<T: Real>(hs: &[LstmState<T>], hm: &[LstmState<T>]) -> Result<f64> {
    let a: Vec<Vec<T>> = hs.iter().map(|s| s.flatten()).collect();
    let b: Vec<Vec<T>> = hm.iter().map(|s| s.flatten()).collect();
    sequence_loss(&a, &b)
}

pub fn loss_combined(lm: f64, ls: f64, lh: f64, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    Ok(w.alpha * lm + w.beta * ls + w.gamma * lh)
}

/// Stacks equal-length flat sequences into per-step `[b, dim]` rows.
fn stack<T: Real>(seqs: &[&[T]], dim: usize) -> Result<(usize, Vec<Vec<T>>)> {
    let first = seqs.first().ok_or(Error::EmptyDataset)?;
    if dim == 0 || first.len() % dim != 0 || first.is_empty() {
        return shape_err(format!("sequence of {} values is not a whole number of {dim}-wide steps", first.len()));
    }
    let n = first.len() / dim;
    if seqs.iter().any(|s| s.len() != first.len()) {
        return shape_err("sequences in a batch must have equal length");
    }
    let xs = (0..n)
        .map(|t| seqs.iter().flat_map(|s| s[t * dim..][..dim].iter().copied()).collect())
        .collect();
    Ok((n, xs))
}

fn batch_losses<T: Real>(xs: &[Vec<T>], s: &Trace<T>, m: &Trace<T>, b: usize, w: &LossWeights) -> LossParts {
    let n = xs.len() as f64;
    let scale = 1.0 / (2.0 * n * b as f64);
    let (mut lm, mut ls, mut lh) = (0.0, 0.0, 0.0);
    for t in 0..xs.len() {
        lm += sq_dist(&xs[t], &m.outputs[t]);
        ls += sq_dist(&xs[t], &s.outputs[t]);
        lh += sq_dist(&s.states[t].flatten(), &m.states[t].flatten());
    }
    let (multi, single, state) = (lm * scale, ls * scale, lh * scale);
    LossParts { multi, single, state, combined: w.alpha * multi + w.beta * single + w.gamma * state }
}

/// Combined loss averaged over a batch of equal-length sequences.
pub fn combined_loss<T: Real>(p: &LstmParams<T>, seqs: &[&[T]], w: &LossWeights) -> Result<LossParts> {
    p.validate()?;
    w.validate()?;
    let (n, xs) = stack(seqs, p.dim())?;
    let b = seqs.len();
    let s = rollout_batch(p, b, &xs, n, true);
    let m = rollout_batch(p, b, &xs, n, false);
    Ok(batch_losses(&xs, &s, &m, b, w))
}

/// Combined loss and its exact gradient (backprop through both rollouts).
pub fn combined_loss_grad<T: Real>(p: &LstmParams<T>, seqs: &[&[T]], w: &LossWeights) -> Result<(LossParts, LstmParams<T>)> {
    p.validate()?;
    w.validate()?;
    let (n, xs) = stack(seqs, p.dim())?;
    let b = seqs.len();
    let s = rollout_batch(p, b, &xs, n, true);
    let m = rollout_batch(p, b, &xs, n, false);
    let parts = batch_losses(&xs, &s, &m, b, w);
    let k = 1.0 / (n as f64 * b as f64);
    let diff = |a: &[T], c: &[T], scale: f64| -> Vec<T> {
        let f = T::from_f64(scale);
        a.iter().zip(c).map(|(&u, &v)| f * (u - v)).collect()
    };
    let dys: Vec<Vec<T>> = (0..n).map(|t| diff(&s.outputs[t], &xs[t], w.beta * k)).collect();
    let dym: Vec<Vec<T>> = (0..n).map(|t| diff(&m.outputs[t], &xs[t], w.alpha * k)).collect();
    let state_grad = |a: &LstmState<T>, c: &LstmState<T>| LstmState {
        h: a.h.iter().zip(&c.h).map(|(u, v)| diff(u, v, w.gamma * k)).collect(),
        c: a.c.iter().zip(&c.c).map(|(u, v)| diff(u, v, w.gamma * k)).collect(),
    };
    let dss: Vec<LstmState<T>> = (0..n).map(|t| state_grad(&s.states[t], &m.states[t])).collect();
    let dsm: Vec<LstmState<T>> = (0..n).map(|t| state_grad(&m.states[t], &s.states[t])).collect();
    let mut g = p.zeros_like();
    backprop(p, b, &s, &dys, &dss, false, &mut g);
    backprop(p, b, &m, &dym, &dsm, true, &mut g);
    Ok((parts, g))
}
