use crate::error::{shape_err, Result};
use crate::kernels::Real;
use crate::training::Param;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer state over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    /// State for tensors of the given lengths.
    pub fn new(config: AdamConfig, lens: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = lens.into_iter().map(|n| (vec![T::zero(); n], vec![T::zero(); n])).unzip();
        Adam { config, step: 0, m, v }
    }

    pub fn for_params(config: AdamConfig, params: &[Param<T>]) -> Self {
        Self::new(config, params.iter().map(|p| p.data.len()))
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `tensors[i] -= lr·m̂/(√v̂ + ε)`; tensors flagged in
    /// `clip` are then clamped to `[-1, 1]`.
    pub fn step(&mut self, tensors: &mut [&mut [T]], grads: &[&[T]], clip: &[bool]) -> Result<()> {
        if tensors.len() != self.m.len() || grads.len() != self.m.len() || clip.len() != self.m.len() {
            return shape_err("optimizer tensor count mismatch");
        }
        for (i, (t, g)) in tensors.iter().zip(grads).enumerate() {
            if t.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return shape_err(format!("optimizer tensor {i}: length mismatch"));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let t = self.step as i32;
        let lr_t = T::from_f64(c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t)));
        let eps = T::from_f64(c.eps * (1.0 - c.beta2.powi(t)).sqrt());
        for (i, (tensor, g)) in tensors.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                tensor[j] -= lr_t * m[j] / (v[j].sqrt() + eps);
                if clip[i] {
                    if tensor[j] > T::one() {
                        tensor[j] = T::one();
                    } else if tensor[j] < -T::one() {
                        tensor[j] = -T::one();
                    }
                }
            }
        }
        Ok(())
    }

    /// Steps a parameter list, clipping binarized (shadow) weights.
    pub fn step_params(&mut self, params: &mut [Param<T>], grads: &[Vec<T>]) -> Result<()> {
        let clip: Vec<bool> = params.iter().map(|p| p.binarized).collect();
        let mut ts: Vec<&mut [T]> = params.iter_mut().map(|p| &mut p.data[..]).collect();
        let gs: Vec<&[T]> = grads.iter().map(|g| &g[..]).collect();
        self.step(&mut ts, &gs, &clip)
    }
}
