//! End-to-end acceptance checks. Each test prints one `criterion N` line with
//! its verdict and measurements, then asserts it.
//!
//! Criteria 5 to 7 share one set of trained models, built on first use.

use std::cell::Cell;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pbdcae::cli::{random_model, run_bench, BenchConfig, BenchPath};
use pbdcae::evalsynth::{capped, evaluate_pipeline, generate_dataset, psnr, DatasetConfig, EvalSummary};
use pbdcae::layers::*;
use pbdcae::modelio::{export_model, import_model, size_report, LstmShape, PackedModel};
use pbdcae::seqmodel::{combined_loss, combined_loss_grad, encode_all, train_lstm, LossWeights, LstmParams, LstmTrainConfig, TrainedLstm};
use pbdcae::training::{mse, mse_grad, train_dcae, Anchor, Dcae, Mode, TrainConfig, TrainedDcae};
use pbdcae::{unpack, BitTensor, DenseTensor, Error, Image8};

/// Timed criteria run one at a time so they do not share the CPU.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, pass: bool, detail: &str) -> bool {
    println!("criterion {n} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn runner(cases: u32) -> TestRunner {
    let cfg = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn bits(rng: &mut impl Rng, dims: &[usize]) -> BitTensor {
    let n: usize = dims.iter().product();
    BitTensor::from_bools(dims.to_vec(), (0..n).map(|_| rng.random::<bool>())).unwrap()
}

/// Statistics spread around pre-activations of standard deviation `spread`,
/// with γ of either sign.
fn bn(rng: &mut impl Rng, c: usize, spread: f32) -> BnParams {
    let gamma = (0..c).map(|_| rng.random_range(0.1f32..2.0) * if rng.random_bool(0.3) { -1.0 } else { 1.0 }).collect();
    let beta = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = (0..c).map(|_| rng.random_range(-1.5..1.5) * spread).collect();
    let var = (0..c).map(|_| (rng.random_range(0.3..2.0) * spread).powi(2)).collect();
    BnParams::new(gamma, beta, mean, var, 1e-5).unwrap()
}

/// sign(bn(v)) with sign(0) = +1, written out from the definition.
fn sign_bn(p: &BnParams, ch: usize, v: f32) -> bool {
    p.gamma[ch] * (v - p.mean[ch]) / (p.var[ch] + p.eps).sqrt() + p.beta[ch] >= 0.0
}

/// Direct-loop 3×3 same convolution of `x` (`[c, h, w]`) with padding `pad`.
fn naive_conv(x: &[f32], c: usize, h: usize, w: &[f32], oc: usize, pad: f32) -> Vec<f32> {
    let hp = h + 2;
    let mut xp = vec![pad; c * hp * hp];
    for i in 0..c {
        for y in 0..h {
            xp[(i * hp + y + 1) * hp + 1..][..h].copy_from_slice(&x[(i * h + y) * h..][..h]);
        }
    }
    let mut out = vec![0.0f32; oc * h * h];
    for o in 0..oc {
        let plane = &mut out[o * h * h..][..h * h];
        for i in 0..c {
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = w[((o * c + i) * 3 + ky) * 3 + kx];
                    for y in 0..h {
                        let src = &xp[(i * hp + y + ky) * hp + kx..][..h];
                        for (d, s) in plane[y * h..][..h].iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

fn sign_bits(pre: &[f32], p: &BnParams, per_channel: usize) -> Vec<bool> {
    pre.iter().enumerate().map(|(i, &v)| sign_bn(p, i / per_channel, v)).collect()
}

#[test]
fn criterion_1_kernel_exactness() {
    let _serial = serial();
    let t0 = Instant::now();
    // Reference spatial sizes with channels divided by 8.
    let a = Architecture { conv_channels: [4, 8, 16, 32], fc_hidden: 128, ..Architecture::paper() };
    let sizes = a.conv_sizes();
    let ins = a.conv_in_channels();
    let mut failures = Vec::new();
    for layer in 0..6 {
        let mut r = runner(1000);
        let outcome = r.run(&any::<u64>(), |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            if layer < 4 {
                let (ic, oc, h) = (ins[layer], a.conv_channels[layer], sizes[layer]);
                let w = bits(&mut rng, &[oc, ic, 3, 3]);
                let (input, out, p, pad) = if layer == 0 {
                    let img = Image8::new(ic, h, h, (0..ic * h * h).map(|_| rng.random::<u8>()).collect()).unwrap();
                    let p = bn(&mut rng, oc, 75.0 * (9.0 * ic as f32).sqrt());
                    let bp = BinConvParams::new(w.clone(), fold_bn_sign(&p).unwrap()).unwrap();
                    (img.to_dense().into_data(), conv2d_binary_image(&img, &bp).unwrap(), p, 0.0)
                } else {
                    let x = bits(&mut rng, &[ic, h, h]);
                    let p = bn(&mut rng, oc, (9.0 * ic as f32).sqrt());
                    let bp = BinConvParams::new(w.clone(), fold_bn_sign(&p).unwrap()).unwrap();
                    (unpack(&x).into_data(), conv2d_binary(&x, &bp).unwrap(), p, -1.0)
                };
                let pre = naive_conv(&input, ic, h, unpack(&w).data(), oc, pad);
                let want = sign_bits(&pre, &p, h * h);
                let got: Vec<bool> = (0..want.len()).map(|i| out.get(i)).collect();
                prop_assert_eq!(got, want);
            } else {
                let (i, o) = if layer == 4 { (a.flat_dim(), a.fc_hidden) } else { (a.fc_hidden, a.feature_dim) };
                let x = bits(&mut rng, &[i]);
                let w = bits(&mut rng, &[o, i]);
                let p = bn(&mut rng, o, (i as f32).sqrt());
                let bp = BinFcParams::new(w.clone(), fold_bn_sign(&p).unwrap()).unwrap();
                let got = fc_binary(&x, &bp).unwrap();
                let pre = fc_float(&unpack(&x), &FcParams::new(unpack(&w), DenseTensor::zeros([o]).unwrap()).unwrap()).unwrap();
                let ints = fc_binary_preact(&x, &bp).unwrap();
                prop_assert!(ints.iter().zip(pre.data()).all(|(&a, &b)| a as f32 == b));
                let want = sign_bits(pre.data(), &p, 1);
                prop_assert_eq!((0..o).map(|k| got.get(k)).collect::<Vec<_>>(), want);
            }
            Ok(())
        });
        if let Err(e) = outcome {
            failures.push(format!("layer {}: {e}", layer + 1));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    let mut detail = format!("6 layer shapes x 1000 instances, {} mismatching shapes, {secs:.1} s", failures.len());
    for f in &failures {
        detail.push_str("; ");
        detail.push_str(f);
    }
    assert!(verdict(1, "kernel exactness", pass, &detail));
}

#[test]
fn criterion_2_bn_fold_exactness() {
    let _serial = serial();
    let t0 = Instant::now();
    let bounds = Architecture::paper().reachable_bounds();
    let mut r = runner(10_000);
    let (negative, values) = (Cell::new(0usize), Cell::new(0u64));
    let outcome = r.run(&(any::<u64>(), 0..6usize), |(seed, layer)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = bounds[layer] as i32;
        let spread = (k as f32).sqrt() * if layer == 0 { 75.0 / 255.0f32.sqrt() } else { 1.0 };
        let p = bn(&mut rng, 1, spread);
        negative.set(negative.get() + (p.gamma[0] < 0.0) as usize);
        let t = fold_bn_sign(&p).unwrap();
        for v in -k..=k {
            prop_assert_eq!(t.fire(0, v), sign_bn(&p, 0, v as f32), "v = {}", v);
        }
        values.set(values.get() + 2 * k as u64 + 1);
        Ok(())
    });
    let secs = t0.elapsed().as_secs_f64();
    let (negative, values) = (negative.get(), values.get());
    let pass = outcome.is_ok() && negative > 0 && secs < 30.0;
    let detail = format!("10000 channels ({negative} with gamma < 0), {values} thresholded values, {secs:.1} s{}", outcome.err().map(|e| format!("; {e}")).unwrap_or_default());
    assert!(verdict(2, "bn-fold exactness", pass, &detail));
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|y| y * y).sum::<f64>().sqrt()
}

/// Backprop of the STE-masked autoencoder against central differences of the
/// forward pass linearized at the same point (sign masks and batch
/// statistics frozen).
fn dcae_gradient_error(mode: Mode, seed: u64) -> f64 {
    let arch = Architecture { input_size: 31, input_channels: 2, conv_channels: [2, 3, 3, 4], fc_hidden: 5, feature_dim: 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Dcae::<f64>::new(arch, mode, &mut rng).unwrap();
    for p in model.params_mut() {
        if p.name.starts_with("enc.conv") && p.name.ends_with("gamma") {
            p.data.fill(0.5);
        }
        if p.name.starts_with("enc.conv") && p.name.ends_with("beta") {
            p.data.fill(-0.5);
        }
    }
    let n = 4;
    let x: Vec<f64> = (0..n * model.input_len()).map(|_| rng.random_range(0.0..1.0)).collect();
    let tape = model.forward_train(&x, n).unwrap();
    let base = model.clone();
    let g = mse_grad(&x, tape.output());
    let grads = {
        let mut m = base.clone();
        let t = m.forward_train(&x, n).unwrap();
        m.backward(t, &g).unwrap()
    };
    let anchor = Anchor { params: base.params(), tape: &tape };
    let loss = |m: &Dcae<f64>| mse(&x, m.forward_linearized(&x, n, &anchor).unwrap().output()).unwrap();
    let mut probe = base.clone();
    let (mut ana, mut num) = (Vec::new(), Vec::new());
    // Batch statistics make the loss curved; a small step keeps truncation
    // error well under the tolerance.
    let h = 1e-5;
    for pi in 0..base.params().len() {
        let len = base.params()[pi].data.len();
        let picks: Vec<usize> = if len <= 10 { (0..len).collect() } else { (0..10).map(|_| rng.random_range(0..len)).collect() };
        for i in picks {
            let v = base.params()[pi].data[i];
            probe.params_mut()[pi].data[i] = v + h;
            let up = loss(&probe);
            probe.params_mut()[pi].data[i] = v - h;
            let down = loss(&probe);
            probe.params_mut()[pi].data[i] = v;
            num.push((up - down) / (2.0 * h));
            ana.push(grads[pi][i]);
        }
    }
    relative_error(&ana, &num)
}

fn lstm_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = LstmParams::<f64>::random(4, &[3, 3], &mut rng);
    let xs: Vec<Vec<f64>> = (0..2).map(|_| (0..6 * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let seqs: Vec<&[f64]> = xs.iter().map(|x| &x[..]).collect();
    let w = LossWeights::default();
    let (_, g) = combined_loss_grad(&p, &seqs, &w).unwrap();
    let ana: Vec<f64> = g.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut num = Vec::new();
    let h = 1e-5;
    let sizes: Vec<usize> = p.tensors().iter().map(|t| t.len()).collect();
    for (ti, len) in sizes.into_iter().enumerate() {
        for i in 0..len {
            let v = p.tensors()[ti][i];
            p.tensors_mut()[ti][i] = v + h;
            let up = combined_loss(&p, &seqs, &w).unwrap().combined;
            p.tensors_mut()[ti][i] = v - h;
            let down = combined_loss(&p, &seqs, &w).unwrap().combined;
            p.tensors_mut()[ti][i] = v;
            num.push((up - down) / (2.0 * h));
        }
    }
    relative_error(&ana, &num)
}

#[test]
fn criterion_3_gradient_correctness() {
    let _serial = serial();
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (i, mode) in Mode::ALL.into_iter().enumerate() {
        let e = dcae_gradient_error(mode, 40 + i as u64);
        worst = worst.max(e);
        parts.push(format!("dcae {mode} {e:.1e}"));
    }
    for seed in 0..3 {
        let e = lstm_gradient_error(50 + seed);
        worst = worst.max(e);
        parts.push(format!("lstm {e:.1e}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst < 1e-3 && secs < 60.0;
    assert!(verdict(3, "gradient correctness", pass, &format!("max relative error {worst:.1e}: {}; {secs:.1} s", parts.join(", "))));
}

/// Cell text such as `3.38 KB` or `1.15 MB` in KB, where a per-layer MB is
/// 1000 KB.
fn cell_kb(s: &str) -> f64 {
    let (v, unit) = s.split_once(' ').unwrap();
    let v: f64 = v.parse().unwrap();
    if unit == "MB" { v * 1000.0 } else { v }
}

#[test]
fn criterion_4_size_report() {
    let _serial = serial();
    const EXPECTED: [(&str, &str, &str); 9] = [
        ("Conv1", "3.38 KB", "0.105 KB"),
        ("Conv2", "72.0 KB", "2.25 KB"),
        ("Conv3", "288 KB", "9.00 KB"),
        ("Conv4", "1.15 MB", "36.0 KB"),
        ("FC1", "50.2 MB", "1.57 MB"),
        ("FC2", "256 KB", "8.00 KB"),
        ("LSTM1", "280 KB", "280 KB"),
        ("LSTM2", "316 KB", "316 KB"),
        ("FC3", "30.4 KB", "30.4 KB"),
    ];
    let arch = Architecture::paper();
    let r = size_report(&arch, &LstmShape::new(arch.feature_dim + 13, vec![100, 100]), Mode::Partial);
    let mut worst = 0.0f64;
    for ((name, f, p), row) in EXPECTED.iter().zip(&r.rows) {
        assert_eq!(&row.layer, name);
        for (ours, theirs) in [(&row.float, f), (&row.packed, p)] {
            worst = worst.max((cell_kb(ours) / cell_kb(theirs) - 1.0).abs());
        }
    }
    let reduction = format!("{:.1}%", r.reduction_pct);
    let pass = r.rows.len() == 9 && r.float_total == "51.3 MB" && r.packed_total == "2.20 MB" && reduction == "95.7%" && worst <= 0.02;
    let detail = format!("totals {} / {}, reduction {reduction}, worst per-layer deviation {:.2}%", r.float_total, r.packed_total, 100.0 * worst);
    assert!(verdict(4, "size table", pass, &detail));
}

/// Autoencoders for every mode on the fixed desk dataset, with held-out PSNR.
struct Autoencoders {
    models: Vec<(Mode, TrainedDcae, f64, Duration)>,
}

fn autoencoders() -> &'static Autoencoders {
    static CELL: OnceLock<Autoencoders> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = generate_dataset(&DatasetConfig::default()).unwrap();
        let train: Vec<Image8> = data.train_images().step_by(2).cloned().collect();
        let val: Vec<Image8> = data.val_images().cloned().collect();
        let models = Mode::ALL
            .into_iter()
            .map(|mode| {
                let t0 = Instant::now();
                let cfg = TrainConfig { mode, epochs: 10, batch_size: 16, ..TrainConfig::default() };
                let t = train_dcae(&train, &[], &cfg).unwrap();
                let sum: f64 = val.iter().map(|img| capped(psnr(img, &t.reconstruct(img).unwrap(), 255.0).unwrap())).sum();
                (mode, t, sum / val.len() as f64, t0.elapsed())
            })
            .collect();
        Autoencoders { models }
    })
}

fn model_of(mode: Mode) -> &'static (Mode, TrainedDcae, f64, Duration) {
    autoencoders().models.iter().find(|m| m.0 == mode).unwrap()
}

#[test]
fn criterion_5_partial_binarization_benefit() {
    let _serial = serial();
    let ae = autoencoders();
    let [full, partial, binary] = [Mode::Full, Mode::Partial, Mode::Binary].map(|m| model_of(m).2);
    let secs: f64 = ae.models.iter().map(|m| m.3.as_secs_f64()).sum();
    let pass = full >= partial && partial > binary && partial - binary >= 3.0 && partial >= 18.0 && secs < 900.0;
    let detail = format!("held-out PSNR full {full:.2} dB, partial {partial:.2} dB, binary {binary:.2} dB; {secs:.0} s");
    assert!(verdict(5, "partial-binarization benefit", pass, &detail));
}

/// Rollout data: the same generator and seed with more sequences, so the
/// held-out sequences are unseen by both the autoencoders and the LSTMs.
const ROLLOUT_SEQUENCES: usize = 30;
const LSTM_EPOCHS: usize = 200;

/// LSTMs on features from each autoencoder, evaluated by free-running
/// rollout on the held-out sequences.
struct Rollouts {
    runs: Vec<(Mode, TrainedLstm, EvalSummary, Duration)>,
}

fn rollouts() -> &'static Rollouts {
    static CELL: OnceLock<Rollouts> = OnceLock::new();
    CELL.get_or_init(|| {
        let ae = autoencoders();
        let data = generate_dataset(&DatasetConfig { num_sequences: ROLLOUT_SEQUENCES, ..DatasetConfig::default() }).unwrap();
        let cfg = LstmTrainConfig { epochs: LSTM_EPOCHS, ..LstmTrainConfig::default() };
        let runs = ae
            .models
            .iter()
            .map(|(mode, dcae, _, _)| {
                let t0 = Instant::now();
                let seqs = encode_all(&data.train, dcae).unwrap();
                let l = train_lstm(&seqs, &cfg).unwrap();
                let s = evaluate_pipeline(dcae, None, &l.params, &data.val).unwrap();
                (*mode, l, s, t0.elapsed())
            })
            .collect();
        Rollouts { runs }
    })
}

fn rollout_of(mode: Mode) -> &'static (Mode, TrainedLstm, EvalSummary, Duration) {
    rollouts().runs.iter().find(|r| r.0 == mode).unwrap()
}

#[test]
fn criterion_6_rollout_quality() {
    let _serial = serial();
    let r = rollouts();
    let [full, partial, binary] = [Mode::Full, Mode::Partial, Mode::Binary].map(|m| rollout_of(m).2.joint_mse_deg2);
    // Autoencoder training counts towards this criterion as well.
    let secs: f64 = r.runs.iter().map(|x| x.3.as_secs_f64()).chain(autoencoders().models.iter().map(|m| m.3.as_secs_f64())).sum();
    let pass = partial <= 1.25 * full && full < binary && partial < binary && secs < 900.0;
    let detail = format!(
        "multi-step joint MSE full {full:.1}, partial {partial:.1} ({:+.0}% vs full), binary {binary:.1} deg^2; {secs:.0} s",
        100.0 * (partial / full - 1.0)
    );
    assert!(verdict(6, "rollout quality", pass, &detail));
}

#[test]
fn criterion_7_loss_combination() {
    let _serial = serial();
    let w = LossWeights::default();
    let l = &rollout_of(Mode::Partial).1;
    let last = l.curve.last().unwrap().loss;
    let finite = l.curve.iter().all(|e| e.loss.combined.is_finite());
    let reduction = 1.0 - last.combined / l.initial.combined;
    let pass = (w.alpha, w.beta, w.gamma) == (0.1, 1.0, 0.1) && finite && reduction >= 0.5;
    let detail = format!(
        "weights ({}, {}, {}), combined loss {:.4} -> {:.4} ({:.0}% reduction) over {} epochs",
        w.alpha,
        w.beta,
        w.gamma,
        l.initial.combined,
        last.combined,
        100.0 * reduction,
        l.curve.len()
    );
    assert!(verdict(7, "loss combination", pass, &detail));
}

#[test]
fn criterion_8_serialization() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let arch = Architecture::desk();
    let enc = BnEncoderParams::random(arch, &mut rng);
    let lstm = LstmParams::<f32>::random(arch.feature_dim + 13, &[100, 100], &mut rng);
    let model = PackedModel::new(Mode::Partial, enc.fold().unwrap(), lstm).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.pbdc");
    export_model(&model, &path).unwrap();
    let back = import_model(&path).unwrap();

    let params_equal = back.encoder() == model.encoder()
        && back.lstm().tensors().iter().zip(model.lstm().tensors()).all(|(a, b)| a.iter().map(|v| v.to_bits()).eq(b.iter().map(|v| v.to_bits())));
    let mut outputs_equal = true;
    for _ in 0..10 {
        let img = Image8::new(3, 64, 64, (0..3 * 64 * 64).map(|_| rng.random::<u8>()).collect()).unwrap();
        let motor: Vec<f32> = (0..13).map(|_| rng.random_range(-1.0..1.0)).collect();
        let state = model.lstm().initial_state();
        let (a, sa) = model.step(&img, &motor, &state).unwrap();
        let (b, sb) = back.step(&img, &motor, &state).unwrap();
        outputs_equal &= a.iter().map(|v| v.to_bits()).eq(b.iter().map(|v| v.to_bits())) && sa == sb;
    }

    let bytes = std::fs::read(&path).unwrap();
    let mut rejected = Vec::new();
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x01;
    rejected.push(matches!(PackedModel::from_bytes(&flipped), Err(Error::Checksum { .. })));
    rejected.push(PackedModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'X';
    rejected.push(matches!(PackedModel::from_bytes(&magic), Err(Error::Format(_))));
    let mut version = bytes.clone();
    version[4] = 2;
    rejected.push(matches!(PackedModel::from_bytes(&version), Err(Error::UnsupportedVersion { .. })));
    let all_rejected = rejected.iter().all(|&r| r);

    let pass = params_equal && outputs_equal && all_rejected;
    let detail = format!(
        "parameters bit-exact {params_equal}, 10 inference outputs bit-exact {outputs_equal}, corrupted files rejected {}/4",
        rejected.iter().filter(|&&r| r).count()
    );
    assert!(verdict(8, "serialization", pass, &detail));
}

#[test]
fn criterion_9_throughput() {
    let _serial = serial();
    let cfg = BenchConfig { path: BenchPath::Both, ..BenchConfig::default() };
    let paper = run_bench(None, Architecture::paper(), &cfg).unwrap();
    let speedup = paper.encoder_speedup.unwrap();
    let desk_model = random_model(Architecture::desk(), 9).unwrap();
    let desk = run_bench(Some(&desk_model), Architecture::desk(), &BenchConfig { path: BenchPath::Packed, ..cfg }).unwrap();
    let fps = desk.result("packed").unwrap().fps;
    let soft = if fps >= 30.0 { "met" } else { "not met on this hardware" };
    let pass = paper.equivalent && speedup >= 5.0;
    let detail = format!(
        "equivalence gate passed, paper-geometry encoder {:.2} ms packed vs {:.2} ms reference ({speedup:.1}x); desk pipeline {fps:.0} FPS, 30 FPS soft target {soft}",
        paper.result("packed").unwrap().encoder_ms,
        paper.result("reference").unwrap().encoder_ms,
    );
    assert!(verdict(9, "throughput", pass, &detail));
}
