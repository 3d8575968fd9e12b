use rand::Rng;

use crate::error::{shape_err, Result};
use crate::kernels::{self, logistic, Real};

/// Gate blocks in weight rows: input, forget, cell, output.
pub const GATES: usize = 4;

/// One LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams<T = f32> {
    pub input: usize,
    pub hidden: usize,
    /// `[4·hidden, input]`, row-major.
    pub w_x: Vec<T>,
    /// `[4·hidden, hidden]`.
    pub w_h: Vec<T>,
    /// `[4·hidden]` input-side and recurrent-side biases (only their sum
    /// matters; both are kept so the parameter layout matches the usual
    /// two-bias convention).
    pub b_x: Vec<T>,
    pub b_h: Vec<T>,
}

/// Stacked LSTM with a linear read-out back to the input width.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T = f32> {
    pub layers: Vec<LstmCellParams<T>>,
    /// `[dim, hidden]`.
    pub fc_w: Vec<T>,
    /// `[dim]`.
    pub fc_b: Vec<T>,
}

/// Per-layer hidden and cell vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T = f32> {
    pub h: Vec<Vec<T>>,
    pub c: Vec<Vec<T>>,
}

/// Outputs and states of a rollout; index 0 is the seed step.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult<T = f32> {
    pub outputs: Vec<Vec<T>>,
    pub states: Vec<LstmState<T>>,
}

impl<T: Real> LstmCellParams<T> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCellParams {
            input,
            hidden,
            w_x: vec![T::zero(); GATES * hidden * input],
            w_h: vec![T::zero(); GATES * hidden * hidden],
            b_x: vec![T::zero(); GATES * hidden],
            b_h: vec![T::zero(); GATES * hidden],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = GATES * self.hidden;
        if self.hidden == 0 || self.input == 0 {
            return shape_err("LSTM widths must be positive");
        }
        if self.w_x.len() != g * self.input || self.w_h.len() != g * self.hidden || self.b_x.len() != g || self.b_h.len() != g {
            return shape_err(format!("LSTM cell {}->{} has mis-sized tensors", self.input, self.hidden));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.w_x.len() + self.w_h.len() + self.b_x.len() + self.b_h.len()
    }
}

/// Saved activations of one cell step over a batch (row per item).
#[derive(Debug, Clone)]
pub(crate) struct CellCache<T> {
    pub x: Vec<T>,
    pub h_prev: Vec<T>,
    pub c_prev: Vec<T>,
    /// Post-nonlinearity gates, `[batch, 4·hidden]` in `i, f, g, o` blocks.
    pub gates: Vec<T>,
    pub tanh_c: Vec<T>,
}

/// One step for `b` rows; returns the new `(h, c)` and the backprop cache.
pub(crate) fn cell_step<T: Real>(p: &LstmCellParams<T>, b: usize, x: &[T], h: &[T], c: &[T]) -> (Vec<T>, Vec<T>, CellCache<T>) {
    let n = p.hidden;
    let g4 = GATES * n;
    let mut z = Vec::with_capacity(b * g4);
    for _ in 0..b {
        z.extend(p.b_x.iter().zip(&p.b_h).map(|(&u, &v)| u + v));
    }
    kernels::matmul_bt(b, p.input, g4, x, &p.w_x, &mut z, true);
    kernels::matmul_bt(b, n, g4, h, &p.w_h, &mut z, true);
    for (r, v) in z.iter_mut().enumerate() {
        *v = if (r % g4) / n == 2 { v.tanh() } else { logistic(*v) };
    }
    let mut c_new = vec![T::zero(); b * n];
    let mut h_new = vec![T::zero(); b * n];
    let mut tanh_c = vec![T::zero(); b * n];
    for s in 0..b {
        let zs = &z[s * g4..][..g4];
        for j in 0..n {
            let (i, f, g, o) = (zs[j], zs[n + j], zs[2 * n + j], zs[3 * n + j]);
            let k = s * n + j;
            c_new[k] = f * c[k] + i * g;
            tanh_c[k] = c_new[k].tanh();
            h_new[k] = o * tanh_c[k];
        }
    }
    let cache = CellCache { x: x.to_vec(), h_prev: h.to_vec(), c_prev: c.to_vec(), gates: z, tanh_c };
    (h_new, c_new, cache)
}

/// Standard gated update: `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_cell_forward<T: Real>(x: &[T], h: &[T], c: &[T], p: &LstmCellParams<T>) -> Result<(Vec<T>, Vec<T>)> {
    p.validate()?;
    if x.len() != p.input || h.len() != p.hidden || c.len() != p.hidden {
        return shape_err(format!(
            "LSTM cell {}->{} given x {}, h {}, c {}",
            p.input,
            p.hidden,
            x.len(),
            h.len(),
            c.len()
        ));
    }
    let (h, c, _) = cell_step(p, 1, x, h, c);
    Ok((h, c))
}

/// Backprop through one batched step: accumulates into `g`, returns
/// `(dx, dh_prev, dc_prev)`.
pub(crate) fn cell_backward<T: Real>(
    p: &LstmCellParams<T>,
    b: usize,
    cache: &CellCache<T>,
    dh: &[T],
    dc: &[T],
    g: &mut LstmCellParams<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = p.hidden;
    let g4 = GATES * n;
    let mut dz = vec![T::zero(); b * g4];
    let mut dc_prev = vec![T::zero(); b * n];
    let one = T::one();
    for s in 0..b {
        let z = &cache.gates[s * g4..][..g4];
        let d = &mut dz[s * g4..][..g4];
        for j in 0..n {
            let k = s * n + j;
            let (i, f, gg, o) = (z[j], z[n + j], z[2 * n + j], z[3 * n + j]);
            let tc = cache.tanh_c[k];
            let dct = dc[k] + dh[k] * o * (one - tc * tc);
            d[j] = dct * gg * i * (one - i);
            d[n + j] = dct * cache.c_prev[k] * f * (one - f);
            d[2 * n + j] = dct * i * (one - gg * gg);
            d[3 * n + j] = dh[k] * tc * o * (one - o);
            dc_prev[k] = dct * f;
        }
    }
    for row in dz.chunks(g4) {
        for (r, &d) in row.iter().enumerate() {
            g.b_x[r] += d;
            g.b_h[r] += d;
        }
    }
    kernels::matmul_at(g4, b, p.input, &dz, &cache.x, &mut g.w_x, true);
    kernels::matmul_at(g4, b, n, &dz, &cache.h_prev, &mut g.w_h, true);
    let mut dx = vec![T::zero(); b * p.input];
    let mut dh_prev = vec![T::zero(); b * n];
    kernels::matmul(b, g4, p.input, &dz, &p.w_x, &mut dx, false);
    kernels::matmul(b, g4, n, &dz, &p.w_h, &mut dh_prev, false);
    (dx, dh_prev, dc_prev)
}

impl<T: Real> LstmState<T> {
    pub fn zeros(hidden: &[usize]) -> Self {
        LstmState {
            h: hidden.iter().map(|&n| vec![T::zero(); n]).collect(),
            c: hidden.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// `h` then `c` of every layer, concatenated.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = Vec::new();
        for (h, c) in self.h.iter().zip(&self.c) {
            v.extend_from_slice(h);
            v.extend_from_slice(c);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).flatten().all(|v| v.is_finite())
    }
}

impl<T: Real> LstmParams<T> {
    /// Zero weights; `layers` hidden widths, input and read-out width `dim`.
    pub fn zeros(dim: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::new();
        let mut input = dim;
        for &h in hidden {
            layers.push(LstmCellParams::zeros(input, h));
            input = h;
        }
        LstmParams { layers, fc_w: vec![T::zero(); dim * input], fc_b: vec![T::zero(); dim] }
    }

    /// Uniform `±1/√hidden` weights; forget-gate biases start at 1.
    pub fn random(dim: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(dim, hidden);
        for l in &mut p.layers {
            let a = 1.0 / (l.hidden as f64).sqrt();
            for v in l.w_x.iter_mut().chain(&mut l.w_h).chain(&mut l.b_x).chain(&mut l.b_h) {
                *v = T::from_f64(rng.random_range(-a..a));
            }
            for v in &mut l.b_x[l.hidden..2 * l.hidden] {
                *v += T::one();
            }
        }
        let a = 1.0 / (p.top_hidden() as f64).sqrt();
        for v in p.fc_w.iter_mut().chain(&mut p.fc_b) {
            *v = T::from_f64(rng.random_range(-a..a));
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.fc_b.len()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.hidden).collect()
    }

    pub(crate) fn top_hidden(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return shape_err("LSTM needs at least one layer");
        }
        let mut input = self.dim();
        for (k, l) in self.layers.iter().enumerate() {
            l.validate()?;
            if l.input != input {
                return shape_err(format!("LSTM layer {} expects input {}, previous width is {input}", k + 1, l.input));
            }
            input = l.hidden;
        }
        if self.fc_w.len() != self.dim() * input {
            return shape_err("LSTM read-out has the wrong size");
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum::<usize>() + self.fc_w.len() + self.fc_b.len()
    }

    /// All tensors in a fixed order (per layer `w_x`, `w_h`, `b_x`, `b_h`; then read-out).
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = Vec::new();
        for l in &self.layers {
            v.extend([&l.w_x[..], &l.w_h[..], &l.b_x[..], &l.b_h[..]]);
        }
        v.extend([&self.fc_w[..], &self.fc_b[..]]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = Vec::new();
        for l in &mut self.layers {
            v.push(&mut l.w_x[..]);
            v.push(&mut l.w_h[..]);
            v.push(&mut l.b_x[..]);
            v.push(&mut l.b_h[..]);
        }
        v.push(&mut self.fc_w[..]);
        v.push(&mut self.fc_b[..]);
        v
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim(), &self.hidden_sizes())
    }

    pub fn cast<U: Real>(&self) -> LstmParams<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.to_f64())).collect();
        LstmParams {
            layers: self
                .layers
                .iter()
                .map(|l| LstmCellParams {
                    input: l.input,
                    hidden: l.hidden,
                    w_x: c(&l.w_x),
                    w_h: c(&l.w_h),
                    b_x: c(&l.b_x),
                    b_h: c(&l.b_h),
                })
                .collect(),
            fc_w: c(&self.fc_w),
            fc_b: c(&self.fc_b),
        }
    }

    pub fn initial_state(&self) -> LstmState<T> {
        LstmState::zeros(&self.hidden_sizes())
    }

    /// One prediction from input `x` and `state`.
    pub fn step(&self, x: &[T], state: &LstmState<T>) -> Result<(Vec<T>, LstmState<T>)> {
        self.validate()?;
        self.check_input(x)?;
        if state.h.len() != self.layers.len() || state.c.len() != self.layers.len() {
            return shape_err("state layer count differs from the model");
        }
        for (l, (h, c)) in self.layers.iter().zip(state.h.iter().zip(&state.c)) {
            if h.len() != l.hidden || c.len() != l.hidden {
                return shape_err("state width differs from the model");
            }
        }
        let (y, s, _) = self.step_cached(1, x, state);
        Ok((y, s))
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return shape_err(format!("LSTM input has {} values, expected {}", x.len(), self.dim()));
        }
        Ok(())
    }

    /// One step for `b` rows; `state` holds `[b, hidden]` per layer.
    pub(crate) fn step_cached(&self, b: usize, x: &[T], state: &LstmState<T>) -> (Vec<T>, LstmState<T>, Vec<CellCache<T>>) {
        let mut next = LstmState { h: Vec::with_capacity(self.layers.len()), c: Vec::with_capacity(self.layers.len()) };
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut input = x.to_vec();
        for (k, l) in self.layers.iter().enumerate() {
            let (h, c, cache) = cell_step(l, b, &input, &state.h[k], &state.c[k]);
            input = h.clone();
            next.h.push(h);
            next.c.push(c);
            caches.push(cache);
        }
        let dim = self.dim();
        let mut y = Vec::with_capacity(b * dim);
        for _ in 0..b {
            y.extend_from_slice(&self.fc_b);
        }
        kernels::matmul_bt(b, self.top_hidden(), dim, &input, &self.fc_w, &mut y, true);
        (y, next, caches)
    }

    /// Zero state for `b` rows.
    pub(crate) fn batch_state(&self, b: usize) -> LstmState<T> {
        let hs: Vec<usize> = self.hidden_sizes().iter().map(|h| h * b).collect();
        LstmState::zeros(&hs)
    }
}
