//! Training checkpoints (`PBCK`): a JSON description followed by the raw
//! `f32` tensors it lists, in order.
//!
//! Header: magic, `u16` version, reserved `u16`, `u32` JSON length, `u32`
//! CRC-32 of everything after the header.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Architecture;
use crate::seqmodel::{LossParts, LstmCellParams, LstmEpoch, LstmParams, TrainedLstm};
use crate::training::{Dcae, EpochLoss, Mode, Param, RunningStats, TrainedDcae};
use crate::wire::{self, Reader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PBCK";
pub const CHECKPOINT_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Meta {
    Dcae {
        arch: Architecture,
        mode: Mode,
        bn_finalized: bool,
        initial_mse: f64,
        curve: Vec<EpochLoss>,
        tensors: Vec<TensorMeta>,
    },
    Lstm {
        dim: usize,
        hidden: Vec<usize>,
        initial: LossParts,
        curve: Vec<LstmEpoch>,
        tensors: Vec<TensorMeta>,
    },
}

fn encode(meta: &Meta, payload: &[&[f32]]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = wire::header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&json);
    for t in payload {
        out.extend(wire::f32_bytes(t));
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out[12..16].copy_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Returns the description and one value vector per listed tensor.
fn decode(buf: &[u8]) -> Result<(Meta, Vec<Vec<f32>>)> {
    let mut r = Reader::new(buf);
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let json_len = r.u32()? as usize;
    let stored = r.u32()?;
    let computed = crc32fast::hash(&buf[HEADER_LEN..]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let meta: Meta = serde_json::from_slice(r.take(json_len)?).map_err(|e| Error::Format(format!("checkpoint description: {e}")))?;
    let tensors = match &meta {
        Meta::Dcae { tensors, .. } | Meta::Lstm { tensors, .. } => tensors,
    };
    let mut values = Vec::with_capacity(tensors.len());
    for t in tensors {
        let n: usize = t.shape.iter().product();
        values.push(wire::f32_values(r.take(4 * n)?));
    }
    r.finish()?;
    Ok((meta, values))
}

fn read(path: &Path, command: &str) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact { path: path.to_path_buf(), command: command.into() },
        _ => Error::Io(e),
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn dcae_bytes(t: &TrainedDcae) -> Result<Vec<u8>> {
    let m = &t.model;
    let mut tensors: Vec<TensorMeta> = m.params().iter().map(|p| TensorMeta { name: p.name.clone(), shape: p.shape.clone() }).collect();
    let mut payload: Vec<&[f32]> = m.params().iter().map(|p| &p.data[..]).collect();
    for s in m.stats() {
        tensors.push(TensorMeta { name: format!("{}.running_mean", s.name), shape: vec![s.mean.len()] });
        tensors.push(TensorMeta { name: format!("{}.running_var", s.name), shape: vec![s.var.len()] });
        payload.extend([&s.mean[..], &s.var[..]]);
    }
    let meta = Meta::Dcae {
        arch: *m.arch(),
        mode: m.mode(),
        bn_finalized: t.bn_finalized,
        initial_mse: t.initial_mse,
        curve: t.curve.clone(),
        tensors,
    };
    encode(&meta, &payload)
}

fn dcae_from_bytes(buf: &[u8]) -> Result<TrainedDcae> {
    let (meta, mut values) = decode(buf)?;
    let Meta::Dcae { arch, mode, bn_finalized, initial_mse, curve, tensors } = meta else {
        return Err(Error::Format("checkpoint holds an LSTM, not an autoencoder".into()));
    };
    let mut model = Dcae::<f32>::new(arch, mode, &mut ChaCha8Rng::seed_from_u64(0))?;
    let n_params = model.params().len();
    if tensors.len() != n_params + 2 * model.stats().len() {
        return Err(Error::Format("checkpoint tensor list does not match the architecture".into()));
    }
    let stat_values = values.split_off(n_params);
    let params: Vec<Param<f32>> = model
        .params()
        .iter()
        .zip(tensors.iter().zip(values))
        .map(|(p, (t, data))| Param { name: t.name.clone(), shape: t.shape.clone(), data, binarized: p.binarized })
        .collect();
    let mut stat_values = stat_values.into_iter();
    let stats: Vec<RunningStats<f32>> = model
        .stats()
        .iter()
        .map(|s| RunningStats {
            name: s.name.clone(),
            mean: stat_values.next().unwrap_or_default(),
            var: stat_values.next().unwrap_or_default(),
        })
        .collect();
    model.load_state(params, stats)?;
    TrainedDcae::from_model(model, curve, initial_mse, bn_finalized)
}

fn lstm_names(layers: usize) -> Vec<String> {
    let mut names = Vec::new();
    for k in 1..=layers {
        names.extend(["w_x", "w_h", "b_x", "b_h"].map(|n| format!("lstm{k}.{n}")));
    }
    names.extend(["fc3.weight".into(), "fc3.bias".into()]);
    names
}

fn lstm_bytes(t: &TrainedLstm) -> Result<Vec<u8>> {
    let p = &t.params;
    let payload = p.tensors();
    let tensors = lstm_names(p.layers.len()).into_iter().zip(&payload).map(|(name, v)| TensorMeta { name, shape: vec![v.len()] }).collect();
    let meta = Meta::Lstm { dim: p.dim(), hidden: p.hidden_sizes(), initial: t.initial, curve: t.curve.clone(), tensors };
    encode(&meta, &payload)
}

fn lstm_from_bytes(buf: &[u8]) -> Result<TrainedLstm> {
    let (meta, values) = decode(buf)?;
    let Meta::Lstm { dim, hidden, initial, curve, tensors } = meta else {
        return Err(Error::Format("checkpoint holds an autoencoder, not an LSTM".into()));
    };
    let names = lstm_names(hidden.len());
    if tensors.iter().map(|t| &t.name).ne(names.iter()) {
        return Err(Error::Format("checkpoint tensor list does not match the LSTM layout".into()));
    }
    let mut it = values.into_iter();
    let mut layers = Vec::new();
    let mut input = dim;
    for &h in &hidden {
        let mut next = || it.next().unwrap_or_default();
        let (w_x, w_h, b_x, b_h) = (next(), next(), next(), next());
        layers.push(LstmCellParams { input, hidden: h, w_x, w_h, b_x, b_h });
        input = h;
    }
    let params = LstmParams { layers, fc_w: it.next().unwrap_or_default(), fc_b: it.next().unwrap_or_default() };
    params.validate()?;
    Ok(TrainedLstm { params, curve, initial })
}

pub fn save_dcae(t: &TrainedDcae, path: &Path) -> Result<()> {
    write(path, &dcae_bytes(t)?)
}

pub fn load_dcae(path: &Path) -> Result<TrainedDcae> {
    dcae_from_bytes(&read(path, "train-dcae")?)
}

pub fn save_lstm(t: &TrainedLstm, path: &Path) -> Result<()> {
    write(path, &lstm_bytes(t)?)
}

pub fn load_lstm(path: &Path) -> Result<TrainedLstm> {
    lstm_from_bytes(&read(path, "train-lstm")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image8;

    fn tiny_arch() -> Architecture {
        Architecture { input_size: 31, input_channels: 3, conv_channels: [4, 4, 4, 4], fc_hidden: 8, feature_dim: 6 }
    }

    fn trained(mode: Mode) -> TrainedDcae {
        let model = Dcae::<f32>::new(tiny_arch(), mode, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let curve = vec![EpochLoss { epoch: 1, train_mse: 0.5, val_mse: Some(0.4) }];
        TrainedDcae::from_model(model, curve, 0.7, mode != Mode::Full).unwrap()
    }

    #[test]
    fn dcae_roundtrip_preserves_outputs() {
        for mode in Mode::ALL {
            let t = trained(mode);
            let back = dcae_from_bytes(&dcae_bytes(&t).unwrap()).unwrap();
            assert_eq!(back.model.params(), t.model.params());
            assert_eq!(back.model.stats(), t.model.stats());
            assert_eq!((back.curve.clone(), back.initial_mse, back.bn_finalized), (t.curve.clone(), t.initial_mse, t.bn_finalized));
            let img = Image8::new(3, 31, 31, (0..3 * 31 * 31).map(|i| (i * 7 % 256) as u8).collect()).unwrap();
            assert_eq!(back.reconstruct(&img).unwrap(), t.reconstruct(&img).unwrap());
        }
    }

    #[test]
    fn lstm_roundtrip() {
        let params = LstmParams::random(9, &[5, 4], &mut ChaCha8Rng::seed_from_u64(2));
        let loss = LossParts { multi: 1.0, single: 2.0, state: 3.0, combined: 4.0 };
        let t = TrainedLstm { params, curve: vec![LstmEpoch { epoch: 1, loss }], initial: loss };
        let back = lstm_from_bytes(&lstm_bytes(&t).unwrap()).unwrap();
        assert_eq!(back.params, t.params);
        assert_eq!(back.curve, t.curve);
    }

    #[test]
    fn corruption_and_kind_mismatch() {
        let bytes = dcae_bytes(&trained(Mode::Partial)).unwrap();
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        assert!(matches!(dcae_from_bytes(&bad), Err(Error::Checksum { .. })));
        assert!(dcae_from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let t = TrainedLstm { params: LstmParams::zeros(4, &[3]), curve: vec![], initial: LossParts::default() };
        assert!(matches!(dcae_from_bytes(&lstm_bytes(&t).unwrap()), Err(Error::Format(_))));
    }

    #[test]
    fn missing_checkpoint_names_the_command() {
        let dir = tempfile::tempdir().unwrap();
        let e = load_dcae(&dir.path().join("dcae.pbck")).unwrap_err();
        assert!(e.to_string().contains("train-dcae"));
        let e = load_lstm(&dir.path().join("lstm.pbck")).unwrap_err();
        assert!(e.to_string().contains("train-lstm"));
    }
}
