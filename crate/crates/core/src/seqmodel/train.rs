use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::seqmodel::{combined_loss, combined_loss_grad, LossParts, LossWeights, LstmParams, VisuoMotorSequence};
use crate::training::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrainConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    /// Sequences per update.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    pub verbose: bool,
}

impl Default for LstmTrainConfig {
    fn default() -> Self {
        LstmTrainConfig {
            hidden: 100,
            layers: 2,
            epochs: 300,
            batch_size: 4,
            learning_rate: 2e-3,
            weights: LossWeights::default(),
            grad_clip: 1.0,
            seed: 0,
            verbose: false,
        }
    }
}

impl LstmTrainConfig {
    pub const KEYS: [&'static str; 10] =
        ["hidden", "layers", "epochs", "batch_size", "learning_rate", "alpha", "beta", "gamma", "grad_clip", "seed"];

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        self.hidden = kv.get_or("hidden", self.hidden)?;
        self.layers = kv.get_or("layers", self.layers)?;
        self.epochs = kv.get_or("epochs", self.epochs)?;
        self.batch_size = kv.get_or("batch_size", self.batch_size)?;
        self.learning_rate = kv.get_or("learning_rate", self.learning_rate)?;
        self.weights.alpha = kv.get_or("alpha", self.weights.alpha)?;
        self.weights.beta = kv.get_or("beta", self.weights.beta)?;
        self.weights.gamma = kv.get_or("gamma", self.weights.gamma)?;
        self.grad_clip = kv.get_or("grad_clip", self.grad_clip)?;
        self.seed = kv.get_or("seed", self.seed)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.batch_size == 0 {
            return Err(Error::Config("hidden, layers and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip >= 0.0) {
            return Err(Error::Config("learning_rate must be positive and grad_clip non-negative".into()));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LstmEpoch {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossParts,
}

#[derive(Debug, Clone)]
pub struct TrainedLstm {
    pub params: LstmParams<f32>,
    pub curve: Vec<LstmEpoch>,
    /// Mean loss over the training set before the first update.
    pub initial: LossParts,
}

impl TrainedLstm {
    /// Loss curve as CSV.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,combined,multi,single,state\n");
        for e in &self.curve {
            let l = e.loss;
            s.push_str(&format!("{},{},{},{},{}\n", e.epoch, l.combined, l.multi, l.single, l.state));
        }
        s
    }
}

fn grouped(seqs: &[VisuoMotorSequence], order: &[usize], batch: usize) -> Vec<Vec<usize>> {
    // Batches only mix sequences of equal length.
    let mut out = Vec::new();
    let mut lens: Vec<usize> = order.iter().map(|&i| seqs[i].len()).collect();
    lens.sort_unstable();
    lens.dedup();
    for len in lens {
        let idx: Vec<usize> = order.iter().copied().filter(|&i| seqs[i].len() == len).collect();
        out.extend(idx.chunks(batch).map(|c| c.to_vec()));
    }
    out
}

fn mean_loss(p: &LstmParams<f32>, seqs: &[VisuoMotorSequence], w: &LossWeights) -> Result<LossParts> {
    let order: Vec<usize> = (0..seqs.len()).collect();
    let mut total = LossParts::default();
    for g in grouped(seqs, &order, 16) {
        let refs: Vec<&[f32]> = g.iter().map(|&i| seqs[i].data()).collect();
        let l = combined_loss(p, &refs, w)?;
        let k = g.len() as f64;
        total.multi += l.multi * k;
        total.single += l.single * k;
        total.state += l.state * k;
        total.combined += l.combined * k;
    }
    let n = seqs.len() as f64;
    Ok(LossParts { multi: total.multi / n, single: total.single / n, state: total.state / n, combined: total.combined / n })
}

/// Backprop through time over both rollouts, minimizing the combined loss.
pub fn train_lstm(seqs: &[VisuoMotorSequence], cfg: &LstmTrainConfig) -> Result<TrainedLstm> {
    cfg.validate()?;
    let first = seqs.first().ok_or(Error::EmptyDataset)?;
    let dim = first.dim();
    if seqs.iter().any(|s| s.dim() != dim) {
        return Err(Error::Shape("all sequences must share one step width".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = LstmParams::<f32>::random(dim, &vec![cfg.hidden; cfg.layers], &mut rng);
    let clip = vec![false; params.tensors().len()];
    let mut opt = Adam::<f32>::new(
        AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() },
        params.tensors().iter().map(|t| t.len()),
    );
    let initial = mean_loss(&params, seqs, &cfg.weights)?;
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        for g in grouped(seqs, &order, cfg.batch_size) {
            let refs: Vec<&[f32]> = g.iter().map(|&i| seqs[i].data()).collect();
            let (l, mut grads) = combined_loss_grad(&params, &refs, &cfg.weights)?;
            step += 1;
            if !l.combined.is_finite() {
                return Err(Error::Diverged { stage: "lstm", step });
            }
            let norm = grads.tensors().iter().flat_map(|t| t.iter()).map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Diverged { stage: "lstm", step });
            }
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let k = (cfg.grad_clip / norm) as f32;
                grads.tensors_mut().into_iter().flatten().for_each(|v| *v *= k);
            }
            let gt = grads.tensors();
            opt.step(&mut params.tensors_mut(), &gt, &clip)?;
            let k = g.len() as f64;
            sum.multi += l.multi * k;
            sum.single += l.single * k;
            sum.state += l.state * k;
            sum.combined += l.combined * k;
        }
        let n = seqs.len() as f64;
        let loss = LossParts { multi: sum.multi / n, single: sum.single / n, state: sum.state / n, combined: sum.combined / n };
        if cfg.verbose && (epoch + 1) % 25 == 0 {
            eprintln!(
                "train-lstm epoch={} combined={:.6} multi={:.6} single={:.6} state={:.6}",
                epoch + 1,
                loss.combined,
                loss.multi,
                loss.single,
                loss.state
            );
        }
        curve.push(LstmEpoch { epoch: epoch + 1, loss });
    }
    Ok(TrainedLstm { params, curve, initial })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn smooth_sequences(n: usize, len: usize, dim: usize, seed: u64) -> Vec<VisuoMotorSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let phase: Vec<f32> = (0..dim).map(|_| rng.random_range(0.0..6.28)).collect();
                let data = (0..len)
                    .flat_map(|t| phase.iter().map(move |p| 0.8 * (0.3 * t as f32 + p).sin()).collect::<Vec<_>>())
                    .collect();
                VisuoMotorSequence::new(dim, data).unwrap()
            })
            .collect()
    }

    #[test]
    fn combined_loss_halves_on_smoke_set() {
        let seqs = smooth_sequences(5, 12, 6, 1);
        let cfg = LstmTrainConfig { hidden: 16, epochs: 100, batch_size: 1, learning_rate: 1e-2, ..Default::default() };
        let t = train_lstm(&seqs, &cfg).unwrap();
        let start: f64 = t.curve[..10].iter().map(|e| e.loss.combined).sum::<f64>() / 10.0;
        let end = t.curve.last().unwrap().loss.combined;
        assert!(end <= 0.5 * start, "{start} -> {end}");
        assert!(t.curve.iter().all(|e| e.loss.combined.is_finite()));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let seqs = smooth_sequences(3, 6, 4, 2);
        let cfg = LstmTrainConfig { hidden: 5, epochs: 5, batch_size: 2, ..Default::default() };
        let a = train_lstm(&seqs, &cfg).unwrap();
        let b = train_lstm(&seqs, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn groups_by_length() {
        let mut seqs = smooth_sequences(3, 6, 4, 3);
        seqs.extend(smooth_sequences(2, 4, 4, 4));
        let order: Vec<usize> = (0..5).collect();
        for g in grouped(&seqs, &order, 8) {
            assert!(g.iter().all(|&i| seqs[i].len() == seqs[g[0]].len()));
        }
        let cfg = LstmTrainConfig { hidden: 3, epochs: 1, ..Default::default() };
        assert!(train_lstm(&seqs, &cfg).is_ok());
        assert!(matches!(train_lstm(&[], &cfg), Err(Error::EmptyDataset)));
    }
}
