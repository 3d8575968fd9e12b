use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::error::{shape_err, Error, Result};
use crate::image::Image8;
use crate::kernels::Real;
use crate::layers::{Architecture, BnEncoderParams, ConvParams, DecoderParams, EncoderParams, FcParams, SizePreset};
use crate::tensor::{sign_forward, BitTensor, DenseTensor};
use crate::training::{mse, mse_grad, Adam, AdamConfig, Dcae, Grads, Mode, Tape};

/// Autoencoder training settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub size: SizePreset,
    /// Overrides the preset's input side when set.
    pub input_size: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Partial,
            size: SizePreset::Desk,
            input_size: None,
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            verbose: false,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 7] = ["mode", "size", "input_size", "epochs", "batch_size", "learning_rate", "seed"];

    /// Overrides fields present in `kv`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(m) = kv.get("mode")? {
            self.mode = m;
        }
        if let Some(s) = kv.get("size")? {
            self.size = s;
        }
        if let Some(s) = kv.get("input_size")? {
            self.input_size = Some(s);
        }
        self.epochs = kv.get_or("epochs", self.epochs)?;
        self.batch_size = kv.get_or("batch_size", self.batch_size)?;
        self.learning_rate = kv.get_or("learning_rate", self.learning_rate)?;
        self.seed = kv.get_or("seed", self.seed)?;
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.reject_unknown(&Self::KEYS)?;
        let mut c = TrainConfig::default();
        c.apply(&kv)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 (batch statistics)".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        self.arch().validate()
    }

    pub fn arch(&self) -> Architecture {
        let mut a = Architecture::preset(self.size);
        if let Some(s) = self.input_size {
            a.input_size = s;
        }
        a
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

/// Mean squared reconstruction error.
pub fn dcae_loss(img: &DenseTensor, recon: &DenseTensor) -> Result<f32> {
    if img.shape() != recon.shape() {
        return shape_err(format!("dcae_loss: {} vs {}", img.shape(), recon.shape()));
    }
    mse(img.data(), recon.data())
}

/// Parameter gradients for `loss_grad` (gradient w.r.t. the reconstruction).
pub fn dcae_backward<T: Real>(model: &Dcae<T>, tape: Tape<T>, loss_grad: &[T]) -> Result<Grads<T>> {
    model.backward(tape, loss_grad)
}

/// A trained autoencoder with its loss history.
#[derive(Debug, Clone)]
pub struct TrainedDcae {
    pub model: Dcae<f32>,
    pub curve: Vec<EpochLoss>,
    /// Training-mode loss over the training set before the first update.
    pub initial_mse: f64,
    /// Whether running statistics hold population values of the final weights.
    pub bn_finalized: bool,
    encoder: Option<EncoderParams>,
}

fn image_batch(images: &[&Image8]) -> Vec<f32> {
    images.iter().flat_map(|img| img.to_unit()).collect()
}

/// Splits indices into batches of `size`, folding a remainder of one into
/// the previous batch.
fn batches(idx: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = idx.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let n = out.len();
        let start = (n - 2) * size;
        out.truncate(n - 2);
        out.push(&idx[start..]);
    }
    out
}

fn check_images(arch: &Architecture, images: &[Image8]) -> Result<()> {
    let s = arch.input_size;
    for (i, img) in images.iter().enumerate() {
        if img.channels() != arch.input_channels || img.height() != s || img.width() != s {
            return shape_err(format!(
                "image {i} is {}x{}x{}, model expects {}x{s}x{s}",
                img.channels(),
                img.height(),
                img.width(),
                arch.input_channels
            ));
        }
    }
    Ok(())
}

/// Trains the autoencoder in `cfg.mode`, then replaces running batch-norm
/// statistics with population statistics over the training set.
pub fn train_dcae(train: &[Image8], val: &[Image8], cfg: &TrainConfig) -> Result<TrainedDcae> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::EmptyDataset);
    }
    let arch = cfg.arch();
    check_images(&arch, train)?;
    check_images(&arch, val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Dcae::<f32>::new(arch, cfg.mode, &mut rng)?;
    let mut opt = Adam::for_params(AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() }, model.params());
    let order: Vec<usize> = (0..train.len()).collect();
    let initial_mse = {
        let mut probe = model.clone();
        let mut total = 0.0;
        for b in batches(&order, cfg.batch_size) {
            let x = image_batch(&b.iter().map(|&i| &train[i]).collect::<Vec<_>>());
            let tape = probe.forward_train(&x, b.len())?;
            total += mse(&x, tape.output())? as f64 * b.len() as f64;
        }
        total / train.len() as f64
    };
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut idx = order.clone();
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for b in batches(&idx, cfg.batch_size) {
            let x = image_batch(&b.iter().map(|&i| &train[i]).collect::<Vec<_>>());
            let tape = model.forward_train(&x, b.len())?;
            let loss = mse(&x, tape.output())?;
            if !loss.is_finite() {
                return Err(Error::Diverged { stage: "dcae", step: epoch });
            }
            total += loss as f64 * b.len() as f64;
            let g = mse_grad(&x, tape.output());
            let grads = model.backward(tape, &g)?;
            if grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { stage: "dcae", step: epoch });
            }
            opt.step_params(model.params_mut(), &grads)?;
        }
        let row = EpochLoss {
            epoch: epoch + 1,
            train_mse: total / train.len() as f64,
            val_mse: if val.is_empty() { None } else { Some(eval_mse(&model, val)?) },
        };
        if cfg.verbose {
            eprintln!(
                "train-dcae mode={} epoch={} train_mse={:.6} val_mse={}",
                cfg.mode,
                row.epoch,
                row.train_mse,
                row.val_mse.map_or("-".into(), |v| format!("{v:.6}"))
            );
        }
        curve.push(row);
    }
    let groups: Vec<(Vec<f32>, usize)> = batches(&order, cfg.batch_size.max(8))
        .into_iter()
        .map(|b| (image_batch(&b.iter().map(|&i| &train[i]).collect::<Vec<_>>()), b.len()))
        .collect();
    let refs: Vec<(&[f32], usize)> = groups.iter().map(|(x, n)| (&x[..], *n)).collect();
    model.finalize_bn(&refs)?;
    TrainedDcae::from_model(model, curve, initial_mse, true)
}

/// Inference-mode reconstruction error over `images`.
pub fn eval_mse(model: &Dcae<f32>, images: &[Image8]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in images.chunks(16) {
        let x = image_batch(&chunk.iter().collect::<Vec<_>>());
        let y = model.reconstruct(&x, chunk.len())?;
        total += mse(&x, &y)? as f64 * chunk.len() as f64;
    }
    Ok(total / images.len() as f64)
}

impl TrainedDcae {
    pub fn from_model(model: Dcae<f32>, curve: Vec<EpochLoss>, initial_mse: f64, bn_finalized: bool) -> Result<Self> {
        let mut t = TrainedDcae { model, curve, initial_mse, bn_finalized, encoder: None };
        if t.model.mode().binary_encoder() && bn_finalized {
            t.encoder = Some(t.bn_encoder()?.fold()?);
        }
        Ok(t)
    }

    pub fn mode(&self) -> Mode {
        self.model.mode()
    }

    pub fn arch(&self) -> &Architecture {
        self.model.arch()
    }

    /// Binarized encoder with inference statistics; the first layer's batch
    /// norm is rescaled to raw 8-bit pixels.
    pub fn bn_encoder(&self) -> Result<BnEncoderParams> {
        if !self.mode().binary_encoder() {
            return Err(Error::InvalidValue("a full-precision encoder has no binary form".into()));
        }
        if !self.bn_finalized {
            return Err(Error::UnfinalizedBatchNorm);
        }
        let m = &self.model;
        let bits = |name: &str| -> Result<BitTensor> {
            let p = &m.params()[m.param_index(name).ok_or_else(|| Error::InvalidValue(format!("missing {name}")))?];
            Ok(sign_forward(&DenseTensor::new(p.shape.clone(), p.data.clone())?))
        };
        let mut conv_weights = Vec::new();
        let mut conv_bn = Vec::new();
        for i in 1..=4 {
            let name = format!("enc.conv{i}");
            conv_weights.push(bits(&format!("{name}.weight"))?);
            let bn = m.bn_params(&name)?;
            conv_bn.push(if i == 1 { bn.rescaled_input(255.0) } else { bn });
        }
        let mut fc_weights = Vec::new();
        let mut fc_bn = Vec::new();
        for i in 1..=2 {
            let name = format!("enc.fc{i}");
            fc_weights.push(bits(&format!("{name}.weight"))?);
            fc_bn.push(m.bn_params(&name)?);
        }
        let e = BnEncoderParams { arch: *m.arch(), conv_weights, conv_bn, fc_weights, fc_bn };
        e.validate()?;
        Ok(e)
    }

    /// Folded, packed encoder (binarized modes only).
    pub fn encoder(&self) -> Result<EncoderParams> {
        match &self.encoder {
            Some(e) => Ok(e.clone()),
            None => self.bn_encoder()?.fold(),
        }
    }

    pub fn decoder(&self) -> Result<DecoderParams> {
        let m = &self.model;
        let tensor = |name: &str| -> Result<DenseTensor> {
            let p = &m.params()[m.param_index(name).ok_or_else(|| Error::InvalidValue(format!("missing {name}")))?];
            DenseTensor::new(p.shape.clone(), p.data.clone())
        };
        let mut fcs = Vec::new();
        let mut fc_bn = Vec::new();
        for i in 1..=2 {
            let w = tensor(&format!("dec.fc{i}.weight"))?;
            let out = w.dims()[0];
            fcs.push(FcParams::new(w, DenseTensor::zeros([out])?)?);
            fc_bn.push(m.bn_params(&format!("dec.fc{i}"))?);
        }
        let mut convs = Vec::new();
        let mut conv_bn = Vec::new();
        for i in 1..=4 {
            let w = tensor(&format!("dec.conv{i}.weight"))?;
            let out = w.dims()[0];
            let bias = if i == 4 { tensor("dec.conv4.bias")? } else { DenseTensor::zeros([out])? };
            convs.push(ConvParams::new(w, bias)?);
            if i < 4 {
                conv_bn.push(m.bn_params(&format!("dec.conv{i}"))?);
            }
        }
        let d = DecoderParams { arch: *m.arch(), binary: self.mode().binary_decoder(), fcs, fc_bn, convs, conv_bn };
        d.validate()?;
        Ok(d)
    }

    /// Feature vector of one image: packed kernels when the encoder is
    /// binarized, the float encoder otherwise.
    pub fn features(&self, img: &Image8) -> Result<Vec<f32>> {
        match &self.encoder {
            Some(e) => Ok(e.forward(img)?.into_data()),
            None => self.model.encode(&img.to_unit(), 1),
        }
    }

    /// Reconstruction quantized to 8 bits.
    pub fn reconstruct(&self, img: &Image8) -> Result<Image8> {
        let y = self.model.reconstruct(&img.to_unit(), 1)?;
        Image8::from_unit(img.channels(), img.height(), img.width(), &y)
    }

    /// Loss curve as CSV (`epoch,train_mse,val_mse`).
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for r in &self.curve {
            let v = r.val_mse.map_or(String::new(), |v| format!("{v}"));
            s.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, v));
        }
        s
    }
}
