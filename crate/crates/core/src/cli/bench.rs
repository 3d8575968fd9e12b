//! Per-frame latency of the deployed pipeline: preprocessing, encoder and
//! one LSTM step, for the packed kernels and the float reference.

use std::hint::black_box;
use std::time::Instant;

use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evalsynth::{inverse_kinematics, SyntheticScene, MOTOR_DIM};
use crate::image::Image8;
use crate::layers::{Architecture, BnEncoderParams};
use crate::modelio::PackedModel;
use crate::seqmodel::LstmParams;
use crate::training::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchPath {
    Packed,
    Reference,
    Both,
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub path: BenchPath,
    /// Timed runs; at least 30.
    pub runs: usize,
    pub warmup: usize,
    pub source_size: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { path: BenchPath::Both, runs: 30, warmup: 5, source_size: 240, seed: 7 }
    }
}

/// Medians over the timed runs, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub path: &'static str,
    pub preprocess_ms: f64,
    pub encoder_ms: f64,
    pub sequence_ms: f64,
    /// Median of per-run totals.
    pub total_ms: f64,
    pub fps: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub arch: Architecture,
    /// `model` or `random`.
    pub weights: &'static str,
    pub source_size: usize,
    /// Packed and reference encoders agreed on every checked frame.
    pub equivalent: bool,
    pub results: Vec<BenchResult>,
    /// Reference encoder time over packed encoder time.
    pub encoder_speedup: Option<f64>,
    pub total_speedup: Option<f64>,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "bench {}x{}x{} from {}px source, {} weights\n",
            self.arch.input_channels, self.arch.input_size, self.arch.input_size, self.source_size, self.weights
        );
        for r in &self.results {
            s.push_str(&format!(
                "{:<9} preprocess {:8.3} ms  encoder {:8.3} ms  lstm {:8.3} ms  total {:8.3} ms  {:8.1} fps\n",
                r.path, r.preprocess_ms, r.encoder_ms, r.sequence_ms, r.total_ms, r.fps
            ));
        }
        if let Some(x) = self.encoder_speedup {
            s.push_str(&format!("encoder speedup {x:.2}x"));
        }
        s
    }

    pub fn result(&self, path: &str) -> Option<&BenchResult> {
        self.results.iter().find(|r| r.path == path)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Random folded encoder and LSTM at `arch`, for timing without a trained model.
pub fn random_model(arch: Architecture, seed: u64) -> Result<PackedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = BnEncoderParams::random(arch, &mut rng).fold()?;
    let lstm = LstmParams::random(arch.feature_dim + MOTOR_DIM, &[100, 100], &mut rng);
    PackedModel::new(Mode::Partial, enc, lstm)
}

fn source_frame(size: usize) -> Image8 {
    let (theta1, theta2) = inverse_kinematics((0.45, 0.5));
    let scene =
        SyntheticScene { theta1, theta2, cloth: (0.3, 0.45), cloth_color: [40, 90, 200], marker: (0.7, 0.5), gripper: 0.0 };
    scene.render(size)
}

fn time_path(model: &PackedModel, frame: &Image8, packed: bool, cfg: &BenchConfig) -> Result<BenchResult> {
    let motor = [0.0f32; MOTOR_DIM];
    let state = model.lstm().initial_state();
    let (mut pre, mut enc, mut seq, mut tot) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for run in 0..cfg.warmup + cfg.runs {
        let t0 = Instant::now();
        let img = model.preprocess(black_box(frame))?;
        let t1 = Instant::now();
        let mut x = if packed { model.encoder().forward(&img)? } else { model.encoder().forward_float(&img)? }.into_data();
        let t2 = Instant::now();
        x.extend_from_slice(&motor);
        black_box(model.lstm().step(&x, &state)?);
        let t3 = Instant::now();
        if run >= cfg.warmup {
            let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
            pre.push(ms(t0, t1));
            enc.push(ms(t1, t2));
            seq.push(ms(t2, t3));
            tot.push(ms(t0, t3));
        }
    }
    let total_ms = median(&mut tot);
    Ok(BenchResult {
        path: if packed { "packed" } else { "reference" },
        preprocess_ms: median(&mut pre),
        encoder_ms: median(&mut enc),
        sequence_ms: median(&mut seq),
        total_ms,
        fps: 1000.0 / total_ms,
        runs: cfg.runs,
    })
}

/// Checks that the packed and reference encoders agree on the benchmark
/// frame and on a few perturbed copies, then times the requested paths.
/// Nothing is timed if the check fails.
pub fn run_bench(model: Option<&PackedModel>, arch: Architecture, cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.runs < 30 {
        return Err(Error::Config("bench needs at least 30 timed runs".into()));
    }
    let owned;
    let (model, weights) = match model {
        Some(m) => (m, "model"),
        None => {
            owned = random_model(arch, cfg.seed)?;
            (&owned, "random")
        }
    };
    let frame = source_frame(cfg.source_size);
    let base = model.preprocess(&frame)?;
    for k in 0..4u8 {
        let mut img = base.clone();
        img.data_mut().iter_mut().enumerate().for_each(|(i, p)| *p = p.wrapping_add(k.wrapping_mul(i as u8 | 1)));
        let packed = model.encoder().forward(&img)?;
        let reference = model.encoder().forward_float(&img)?;
        if packed != reference {
            return Err(Error::Equivalence(format!("encoder outputs differ on check frame {k}")));
        }
    }
    let mut results = Vec::new();
    if cfg.path != BenchPath::Reference {
        results.push(time_path(model, &frame, true, cfg)?);
    }
    if cfg.path != BenchPath::Packed {
        results.push(time_path(model, &frame, false, cfg)?);
    }
    let (p, r) = (results.iter().find(|x| x.path == "packed"), results.iter().find(|x| x.path == "reference"));
    let both = p.zip(r);
    Ok(BenchReport {
        arch: *model.arch(),
        weights,
        source_size: cfg.source_size,
        equivalent: true,
        encoder_speedup: both.map(|(p, r)| r.encoder_ms / p.encoder_ms),
        total_speedup: both.map(|(p, r)| r.total_ms / p.total_ms),
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn desk_bench_reports_consistent_stages() {
        let cfg = BenchConfig::default();
        let r = run_bench(None, Architecture::desk(), &cfg).unwrap();
        assert!(r.equivalent);
        assert_eq!(r.results.len(), 2);
        for x in &r.results {
            assert!((x.fps - 1000.0 / x.total_ms).abs() < 1e-9);
            assert_eq!(x.runs, 30);
            assert!(x.preprocess_ms > 0.0 && x.encoder_ms > 0.0 && x.sequence_ms > 0.0);
        }
        assert!(run_bench(None, Architecture::desk(), &BenchConfig { runs: 10, ..cfg }).is_err());
    }
}
