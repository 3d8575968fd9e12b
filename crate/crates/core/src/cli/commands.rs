use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::cli::{to_json, Settings, Split};
use crate::error::{Error, Result};
use crate::evalsynth::{
    capped, denormalize_degrees, evaluate_pipeline, generate_dataset, io, psnr, Dataset, RawSequence, JOINTS, MOTOR_DIM,
};
use crate::image::Image8;
use crate::layers::Architecture;
use crate::modelio::{
    export_model, import_model, load_dcae, load_lstm, save_dcae, save_lstm, size_report, LstmShape, PackedModel,
};
use crate::seqmodel::{encode_all, train_lstm as fit_lstm};
use crate::training::{train_dcae as fit_dcae, TrainedDcae};

fn data_dir(out: &Path) -> PathBuf {
    out.join("data")
}
fn dcae_path(out: &Path) -> PathBuf {
    out.join("dcae.pbck")
}
fn lstm_path(out: &Path) -> PathBuf {
    out.join("lstm.pbck")
}
pub(crate) fn model_path(out: &Path) -> PathBuf {
    out.join("model.pbdc")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Resizes every frame to the encoder input when the data was rendered at
/// another size.
fn fit_dataset(mut d: Dataset, arch: &Architecture) -> Dataset {
    let s = arch.input_size;
    let fit = |seqs: &mut Vec<RawSequence>| {
        for img in seqs.iter_mut().flat_map(|q| q.images.iter_mut()) {
            if img.height() != s || img.width() != s {
                *img = img.resize_bilinear(s, s);
            }
        }
    };
    if d.train_images().chain(d.val_images()).any(|i| i.height() != s || i.width() != s) {
        eprintln!("resizing frames to {s}x{s}");
        fit(&mut d.train);
        fit(&mut d.val);
    }
    d
}

pub fn gen(s: Settings, sequences: Option<usize>, length: Option<usize>, image_size: Option<usize>) -> Result<Value> {
    let mut cfg = s.data;
    cfg.num_sequences = sequences.unwrap_or(cfg.num_sequences);
    cfg.length = length.unwrap_or(cfg.length);
    cfg.image_size = image_size.unwrap_or(cfg.image_size);
    eprintln!("gen seed={} sequences={} length={} image={}", cfg.seed, cfg.num_sequences, cfg.length, cfg.image_size);
    let d = generate_dataset(&cfg)?;
    let dir = data_dir(&s.out);
    io::save_dataset(&dir, &d)?;
    Ok(json!({
        "command": "gen",
        "dir": dir,
        "config": cfg,
        "train_sequences": d.train.len(),
        "val_sequences": d.val.len(),
        "frames": d.train_images().count() + d.val_images().count(),
    }))
}

fn mean_psnr(t: &TrainedDcae, images: &[Image8]) -> Result<Option<f64>> {
    if images.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for img in images {
        sum += capped(psnr(img, &t.reconstruct(img)?, 255.0)?);
    }
    Ok(Some(sum / images.len() as f64))
}

pub fn train_dcae(
    s: Settings,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    stride: usize,
) -> Result<Value> {
    let mut cfg = s.dcae.clone();
    cfg.epochs = epochs.unwrap_or(cfg.epochs);
    cfg.batch_size = batch_size.unwrap_or(cfg.batch_size);
    cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
    cfg.verbose = true;
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    let d = fit_dataset(io::load_dataset(&data_dir(&s.out))?, &cfg.arch());
    let train: Vec<Image8> = d.train_images().step_by(stride).cloned().collect();
    let val: Vec<Image8> = d.val_images().step_by(stride).cloned().collect();
    eprintln!("train-dcae mode={} images={} val={} epochs={}", cfg.mode, train.len(), val.len(), cfg.epochs);
    let t = fit_dcae(&train, &val, &cfg)?;
    save_dcae(&t, &dcae_path(&s.out))?;
    write_text(&s.out.join("dcae_curve.csv"), &t.curve_csv())?;
    let last = t.curve.last();
    Ok(json!({
        "command": "train-dcae",
        "mode": cfg.mode,
        "arch": t.arch(),
        "epochs": cfg.epochs,
        "train_images": train.len(),
        "val_images": val.len(),
        "initial_mse": t.initial_mse,
        "final_train_mse": last.map(|e| e.train_mse),
        "final_val_mse": last.and_then(|e| e.val_mse),
        "val_psnr_db": mean_psnr(&t, &val)?,
        "checkpoint": dcae_path(&s.out),
    }))
}

pub fn train_lstm(s: Settings, epochs: Option<usize>, hidden: Option<usize>, learning_rate: Option<f64>) -> Result<Value> {
    let mut cfg = s.lstm.clone();
    cfg.epochs = epochs.unwrap_or(cfg.epochs);
    cfg.hidden = hidden.unwrap_or(cfg.hidden);
    cfg.learning_rate = learning_rate.unwrap_or(cfg.learning_rate);
    cfg.verbose = true;
    cfg.validate()?;
    let dcae = load_dcae(&dcae_path(&s.out))?;
    let d = fit_dataset(io::load_dataset(&data_dir(&s.out))?, dcae.arch());
    let seqs = encode_all(&d.train, &dcae)?;
    eprintln!("train-lstm mode={} sequences={} epochs={}", dcae.mode(), seqs.len(), cfg.epochs);
    let t = fit_lstm(&seqs, &cfg)?;
    save_lstm(&t, &lstm_path(&s.out))?;
    write_text(&s.out.join("lstm_curve.csv"), &t.curve_csv())?;
    Ok(json!({
        "command": "train-lstm",
        "mode": dcae.mode(),
        "sequences": seqs.len(),
        "epochs": cfg.epochs,
        "initial_loss": t.initial,
        "final_loss": t.curve.last().map(|e| e.loss),
        "checkpoint": lstm_path(&s.out),
    }))
}

pub fn export(s: Settings, report_only: bool) -> Result<Value> {
    if report_only {
        let arch = s.arch();
        let lstm = LstmShape::new(arch.feature_dim + MOTOR_DIM, vec![s.lstm.hidden; s.lstm.layers]);
        let r = size_report(&arch, &lstm, s.mode);
        eprint!("{}", r.to_table());
        return to_json(&r);
    }
    let dcae = load_dcae(&dcae_path(&s.out))?;
    let lstm = load_lstm(&lstm_path(&s.out))?;
    let model = PackedModel::from_trained(&dcae, &lstm.params)?;
    let path = model_path(&s.out);
    export_model(&model, &path)?;
    let r = size_report(model.arch(), &LstmShape::of(model.lstm()), model.mode());
    write_text(&s.out.join("size_report.txt"), &r.to_table())?;
    write_text(&s.out.join("size_report.json"), &serde_json::to_string_pretty(&r).unwrap_or_default())?;
    eprint!("{}", r.to_table());
    Ok(json!({
        "command": "export",
        "path": path,
        "mode": model.mode(),
        "bytes": std::fs::metadata(&path)?.len(),
        "encoder_fingerprint": format!("{:016x}", model.encoder().fingerprint()),
        "manifest": model.manifest(),
        "size_report": r,
    }))
}

/// Binary PPM (`P6`, maxval 255).
fn read_ppm(bytes: &[u8]) -> Result<Image8> {
    let bad = |m: &str| Error::Format(format!("PPM: {m}"));
    let mut fields = Vec::new();
    let mut at = 0;
    while fields.len() < 4 {
        while at < bytes.len() && (bytes[at].is_ascii_whitespace() || bytes[at] == b'#') {
            if bytes[at] == b'#' {
                while at < bytes.len() && bytes[at] != b'\n' {
                    at += 1;
                }
            } else {
                at += 1;
            }
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..at]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only binary P6 is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("maxval must be 255"));
    }
    let data = bytes.get(at + 1..at + 1 + w * h * 3).ok_or_else(|| bad("truncated pixels"))?;
    Image8::from_hwc(h, w, 3, data)
}

pub(crate) fn load_frame(path: &Path, frame: usize) -> Result<Image8> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(io::VIMG_MAGIC) {
        let images = io::decode_images(&bytes)?;
        let n = images.len();
        return images.into_iter().nth(frame).ok_or_else(|| Error::InvalidValue(format!("frame {frame} out of {n}")));
    }
    read_ppm(&bytes)
}

pub fn infer(s: Settings, model: Option<PathBuf>, image: &Path, frame: usize, joints: &[f64], gripper: f64) -> Result<Value> {
    if joints.len() != JOINTS {
        return Err(Error::Config(format!("--joints needs {JOINTS} values, got {}", joints.len())));
    }
    let model = import_model(&model.unwrap_or_else(|| model_path(&s.out)))?;
    let img = load_frame(image, frame)?;
    let mut motor: Vec<f32> = joints.iter().map(|d| (d / 180.0) as f32).collect();
    motor.push(gripper as f32);
    let (y, _) = model.step(&img, &motor, &model.lstm().initial_state())?;
    let off = model.arch().feature_dim;
    let joints_deg: Vec<f64> = y[off..off + JOINTS].iter().map(|&v| denormalize_degrees(v)).collect();
    let grip = (y[off + JOINTS] as f64).clamp(0.0, 1.0);
    let mut values = joints_deg.clone();
    values.push(grip);
    Ok(json!({ "command": "infer", "values": values, "joints_deg": joints_deg, "gripper": grip }))
}

pub fn eval(s: Settings, split: Split) -> Result<Value> {
    let dcae = load_dcae(&dcae_path(&s.out))?;
    let lstm = load_lstm(&lstm_path(&s.out))?;
    let d = fit_dataset(io::load_dataset(&data_dir(&s.out))?, dcae.arch());
    let seqs = if split == Split::Val { &d.val } else { &d.train };
    let summary = evaluate_pipeline(&dcae, Some(&dcae), &lstm.params, seqs)?;
    eprintln!(
        "eval mode={} sequences={} joint_mse={:.3} deg^2 psnr={:.2} dB",
        dcae.mode(),
        summary.sequences,
        summary.joint_mse_deg2,
        summary.mean_psnr_db.unwrap_or(f64::NAN)
    );
    let mut v = to_json(&summary)?;
    if let Value::Object(m) = &mut v {
        m.insert("command".into(), json!("eval"));
        m.insert("mode".into(), json!(dcae.mode()));
        m.insert("split".into(), json!(if split == Split::Val { "val" } else { "train" }));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_parses_with_comments() {
        let mut b = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        b.extend([1, 2, 3, 4, 5, 6]);
        let img = read_ppm(&b).unwrap();
        assert_eq!((img.channels(), img.height(), img.width()), (3, 1, 2));
        assert_eq!(img.to_hwc(), vec![1, 2, 3, 4, 5, 6]);
        assert!(read_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(read_ppm(b"P6\n4 4\n255\n\x00").is_err());
    }
}
