use crate::error::{shape_err, Error, Result};
use crate::tensor::DenseTensor;

/// Per-channel batch normalization `γ·(x − μ)/√(σ² + ε) + β`.
#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BnParams {
    pub fn new(gamma: Vec<f32>, beta: Vec<f32>, mean: Vec<f32>, var: Vec<f32>, eps: f32) -> Result<Self> {
        let p = BnParams { gamma, beta, mean, var, eps };
        p.validate()?;
        Ok(p)
    }

    /// γ = 1, β = 0, μ = 0, σ² = 1.
    pub fn identity(channels: usize, eps: f32) -> Self {
        BnParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.mean.len() != c || self.var.len() != c {
            return shape_err("batch-norm parameter vectors differ in length");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidValue(format!("batch-norm epsilon must be positive, got {}", self.eps)));
        }
        for v in [&self.gamma, &self.beta, &self.mean, &self.var] {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        if let Some(i) = self.var.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidValue(format!("negative variance on channel {i}")));
        }
        Ok(())
    }

    /// Normalizes a single value of channel `ch`. Every batch-norm evaluation
    /// in the crate goes through this expression, so threshold folding can be
    /// made exact against it.
    #[inline]
    pub fn apply(&self, ch: usize, x: f32) -> f32 {
        self.gamma[ch] * (x - self.mean[ch]) / (self.var[ch] + self.eps).sqrt() + self.beta[ch]
    }

    /// Same normalization for inputs scaled by `scale` (e.g. raw 8-bit pixels
    /// instead of pixels divided by 255).
    pub fn rescaled_input(&self, scale: f32) -> BnParams {
        BnParams {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            mean: self.mean.iter().map(|m| m * scale).collect(),
            var: self.var.iter().map(|v| v * scale * scale).collect(),
            eps: self.eps * scale * scale,
        }
    }
}

/// Applies batch normalization along axis 0 (channels) of `x`.
pub fn bn_forward(x: &DenseTensor, p: &BnParams) -> Result<DenseTensor> {
    let c = x.dims()[0];
    if c != p.channels() {
        return shape_err(format!("bn_forward: {} channels, parameters for {}", c, p.channels()));
    }
    let per = x.len() / c;
    let mut out = Vec::with_capacity(x.len());
    for (ch, plane) in x.data().chunks(per).enumerate() {
        out.extend(plane.iter().map(|&v| p.apply(ch, v)));
    }
    DenseTensor::new(x.dims().to_vec(), out)
}

/// Integer threshold replacing `sign(bn(v))`: the output is +1 iff
/// `(v >= tau) != flip`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThresholdParams {
    pub tau: Vec<i32>,
    pub flip: Vec<bool>,
}

impl ThresholdParams {
    pub fn new(tau: Vec<i32>, flip: Vec<bool>) -> Result<Self> {
        if tau.len() != flip.len() {
            return shape_err("threshold and flip vectors differ in length");
        }
        Ok(ThresholdParams { tau, flip })
    }

    pub fn channels(&self) -> usize {
        self.tau.len()
    }

    #[inline(always)]
    pub fn fire(&self, ch: usize, v: i32) -> bool {
        (v >= self.tau[ch]) != self.flip[ch]
    }
}

/// Search window for folded thresholds; every integer in it is exactly
/// representable as `f32`, and all reachable pre-activations lie inside.
const FOLD_LIMIT: i32 = 1 << 24;

/// Folds `sign(bn(v))` into per-channel integer thresholds.
///
/// For γ > 0 the result is `v >= ceil(μ − √(σ²+ε)·β/γ)`; for γ < 0 the
/// comparison is reversed via `flip`. The boundary is located by bisection
/// on [`BnParams::apply`] itself, so the folded layer reproduces the `f32`
/// normalization bit-for-bit on every integer in `[-2^24, 2^24]`.
pub fn fold_bn_sign(p: &BnParams) -> Result<ThresholdParams> {
    p.validate()?;
    let mut tau = Vec::with_capacity(p.channels());
    let mut flip = Vec::with_capacity(p.channels());
    for ch in 0..p.channels() {
        let g = p.gamma[ch];
        if g == 0.0 {
            return Err(Error::ZeroGamma { channel: ch });
        }
        let positive = |v: i32| p.apply(ch, v as f32) >= 0.0;
        let (lo, hi) = (-FOLD_LIMIT, FOLD_LIMIT);
        if g > 0.0 {
            // Up-set: smallest v that fires.
            let t = if positive(lo) {
                lo
            } else if !positive(hi) {
                hi + 1
            } else {
                let (mut a, mut b) = (lo, hi); // !positive(a), positive(b)
                while b - a > 1 {
                    let m = a + (b - a) / 2;
                    if positive(m) {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                b
            };
            tau.push(t);
            flip.push(false);
        } else {
            // Down-set: fires for v <= last, i.e. !(v >= last + 1).
            let t = if !positive(lo) {
                lo
            } else if positive(hi) {
                hi + 1
            } else {
                let (mut a, mut b) = (lo, hi); // positive(a), !positive(b)
                while b - a > 1 {
                    let m = a + (b - a) / 2;
                    if positive(m) {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                b
            };
            tau.push(t);
            flip.push(true);
        }
    }
    Ok(ThresholdParams { tau, flip })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sign_value;
    use rand::{Rng, SeedableRng};

    fn one(gamma: f32, beta: f32, mean: f32, var: f32, eps: f32) -> BnParams {
        BnParams::new(vec![gamma], vec![beta], vec![mean], vec![var], eps).unwrap()
    }

    fn direct(p: &BnParams, v: i32) -> bool {
        sign_value(p.apply(0, v as f32)) > 0.0
    }

    #[test]
    fn unit_bn_folds_to_sign() {
        let t = fold_bn_sign(&one(1.0, 0.0, 0.0, 1.0, 1e-5)).unwrap();
        assert_eq!(t.tau, vec![0]);
        assert_eq!(t.flip, vec![false]);
    }

    #[test]
    fn shifted_boundary() {
        // σ = 2, μ = 10, β = 3: boundary at 10 − 2·3 = 4.
        let p = one(1.0, 3.0, 10.0, 4.0, 1e-9);
        let t = fold_bn_sign(&p).unwrap();
        assert_eq!(t.tau, vec![4]);
        for v in -100..=100 {
            assert_eq!(t.fire(0, v), direct(&p, v), "v = {v}");
        }
    }

    #[test]
    fn negative_gamma_flips() {
        let p = one(-1.0, 0.0, 0.0, 1.0, 1e-5);
        let t = fold_bn_sign(&p).unwrap();
        assert!(t.flip[0]);
        for v in 0..50 {
            assert_eq!(t.fire(0, v), v == 0, "v = {v}");
            assert_eq!(t.fire(0, v), direct(&p, v));
        }
        assert!(t.fire(0, -3));
    }

    #[test]
    fn zero_gamma_is_not_foldable() {
        let p = BnParams::new(vec![1.0, 0.0], vec![0.0; 2], vec![0.0; 2], vec![1.0; 2], 1e-5).unwrap();
        assert!(matches!(fold_bn_sign(&p), Err(Error::ZeroGamma { channel: 1 })));
    }

    #[test]
    fn bn_identity_and_constant_input() {
        let x = DenseTensor::new([2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -4.0]).unwrap();
        let y = bn_forward(&x, &BnParams::identity(2, 1e-12)).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let p = BnParams::new(vec![2.0], vec![0.7], vec![1.5], vec![3.0], 1e-5).unwrap();
        let x = DenseTensor::filled([1, 4], 1.5).unwrap();
        assert!(bn_forward(&x, &p).unwrap().data().iter().all(|&v| v == 0.7));
        assert!(bn_forward(&x, &BnParams::identity(3, 1e-5)).is_err());
    }

    #[test]
    fn training_statistics_standardize() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 4096;
        let xs: Vec<f32> = (0..n).map(|_| rng.random_range(-3.0..7.0)).collect();
        let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = xs.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let p = BnParams::new(vec![-1.7], vec![0.4], vec![mean as f32], vec![var as f32], 1e-5).unwrap();
        let y = bn_forward(&DenseTensor::new([1, n], xs).unwrap(), &p).unwrap();
        let ym = y.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let ys = (y.data().iter().map(|&v| (v as f64 - ym).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((ym - 0.4).abs() < 1e-3);
        assert!((ys - 1.7).abs() < 1e-3);
    }

    #[test]
    fn analytic_threshold_agrees_on_generic_params() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let p = one(
                rng.random_range(0.1..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(0.1..100.0),
                1e-5,
            );
            let s = ((p.var[0] + p.eps) as f64).sqrt();
            let exact = p.mean[0] as f64 - s * p.beta[0] as f64 / p.gamma[0] as f64;
            let t = fold_bn_sign(&p).unwrap();
            // Away from exact-integer ties the closed form is the fold.
            if (exact - exact.round()).abs() > 1e-3 {
                assert_eq!(t.tau[0], exact.ceil() as i32);
            }
        }
    }
}
