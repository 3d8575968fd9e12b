//! Command-line pipeline: `gen → train-dcae → train-lstm → export`, then
//! `infer`, `eval` and `bench`. Results go to stdout as one JSON object,
//! progress to stderr.

mod bench;
mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::evalsynth::DatasetConfig;
use crate::layers::{Architecture, SizePreset};
use crate::seqmodel::LstmTrainConfig;
use crate::training::{Mode, TrainConfig};

pub use bench::{random_model, run_bench, BenchConfig, BenchPath, BenchReport, BenchResult};

#[derive(Debug, Parser)]
#[command(name = "pbdcae", version, about = "Partially binarized autoencoder and LSTM visuo-motor predictor")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// `key = value` file; keys `mode`, `size`, `seed`, `data.*`, `dcae.*`, `lstm.*`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation and both training stages.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Encoder geometry (`paper` is the default).
    #[arg(long, global = true, value_enum)]
    pub size: Option<SizeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Full,
    Binary,
    Partial,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::Binary => Mode::Binary,
            ModeArg::Partial => Mode::Partial,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SizeArg {
    Paper,
    Desk,
}

impl From<SizeArg> for SizePreset {
    fn from(s: SizeArg) -> SizePreset {
        match s {
            SizeArg::Paper => SizePreset::Paper,
            SizeArg::Desk => SizePreset::Desk,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic cloth-dragging dataset.
    Gen {
        #[arg(long)]
        sequences: Option<usize>,
        /// Steps per sequence.
        #[arg(long)]
        length: Option<usize>,
        /// Rendered side in pixels (defaults to the encoder input size).
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Train the autoencoder on the generated training frames.
    TrainDcae {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Use every k-th training frame.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Train the LSTM on encoded training sequences.
    TrainLstm {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Fold and pack the encoder with the LSTM into `model.pbdc`.
    Export {
        /// Print the size report for the selected geometry without any artifacts.
        #[arg(long)]
        report: bool,
    },
    /// Predict the next joint angles from one frame.
    Infer {
        /// Packed model (defaults to `<out>/model.pbdc`).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Binary PPM (`P6`) or `VIMG` blob.
        #[arg(long)]
        image: PathBuf,
        /// Frame index inside a `VIMG` blob.
        #[arg(long, default_value_t = 0)]
        frame: usize,
        /// Twelve comma-separated joint angles in degrees.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        joints: Vec<f64>,
        /// Gripper command, 0 open to 1 closed.
        #[arg(long, default_value_t = 0.0)]
        gripper: f64,
    },
    /// Closed-loop evaluation on held-out sequences.
    Eval {
        #[arg(long, value_enum, default_value = "val")]
        split: Split,
    },
    /// Time preprocessing, encoder and sequence step per frame.
    Bench {
        /// Packed model; random weights at the selected geometry when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        path: BenchPath,
        #[arg(long, default_value_t = 30)]
        runs: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        /// Side of the synthetic camera frame before resizing.
        #[arg(long, default_value_t = 240)]
        source_size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
}

const TOP_KEYS: [&str; 3] = ["mode", "size", "seed"];
const DATA_KEYS: [&str; 4] = ["seed", "sequences", "length", "image_size"];

/// Global flags merged over the configuration file.
#[derive(Debug, Clone)]
pub struct Settings {
    pub out: PathBuf,
    pub mode: Mode,
    pub size: SizePreset,
    pub data: DatasetConfig,
    pub dcae: TrainConfig,
    pub lstm: LstmTrainConfig,
}

impl Settings {
    pub fn resolve(g: &Global) -> Result<Self> {
        let kv = match &g.config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        let known = |k: &str| match k.split_once('.') {
            None => TOP_KEYS.contains(&k),
            Some(("data", rest)) => DATA_KEYS.contains(&rest),
            Some(("dcae", rest)) => TrainConfig::KEYS.contains(&rest) && rest != "mode" && rest != "size",
            Some(("lstm", rest)) => LstmTrainConfig::KEYS.contains(&rest),
            _ => false,
        };
        if let Some(k) = kv.keys().find(|k| !known(k)) {
            return Err(Error::Config(format!("unknown configuration key `{k}`")));
        }
        let mode = match g.mode {
            Some(m) => m.into(),
            None => kv.get_or("mode", Mode::Partial)?,
        };
        let size = match g.size {
            Some(s) => s.into(),
            None => kv.get_or("size", SizePreset::Paper)?,
        };
        let seed = g.seed.map_or_else(|| kv.get::<u64>("seed"), |s| Ok(Some(s)))?;

        let dk = kv.section("data");
        let mut data = DatasetConfig { image_size: Architecture::preset(size).input_size, ..DatasetConfig::default() };
        data.seed = seed.or(dk.get("seed")?).unwrap_or(data.seed);
        data.num_sequences = dk.get_or("sequences", data.num_sequences)?;
        data.length = dk.get_or("length", data.length)?;
        data.image_size = dk.get_or("image_size", data.image_size)?;

        let mut dcae = TrainConfig { mode, size, ..TrainConfig::default() };
        dcae.apply(&kv.section("dcae"))?;
        if let Some(s) = seed {
            dcae.seed = s;
        }
        let mut lstm = LstmTrainConfig::default();
        lstm.apply(&kv.section("lstm"))?;
        if let Some(s) = seed {
            lstm.seed = s;
        }
        Ok(Settings { out: g.out.clone(), mode, size, data, dcae, lstm })
    }

    pub fn arch(&self) -> Architecture {
        self.dcae.arch()
    }
}

/// Runs one parsed command and returns its JSON result.
pub fn run(cli: Cli) -> Result<serde_json::Value> {
    let s = Settings::resolve(&cli.global)?;
    match cli.command {
        Command::Gen { sequences, length, image_size } => commands::gen(s, sequences, length, image_size),
        Command::TrainDcae { epochs, batch_size, learning_rate, stride } => {
            commands::train_dcae(s, epochs, batch_size, learning_rate, stride)
        }
        Command::TrainLstm { epochs, hidden, learning_rate } => commands::train_lstm(s, epochs, hidden, learning_rate),
        Command::Export { report } => commands::export(s, report),
        Command::Infer { model, image, frame, joints, gripper } => commands::infer(s, model, &image, frame, &joints, gripper),
        Command::Eval { split } => commands::eval(s, split),
        Command::Bench { model, path, runs, warmup, source_size } => {
            let cfg = BenchConfig { path, runs, warmup, source_size, seed: s.data.seed };
            let model = match model {
                Some(p) => Some(crate::modelio::import_model(&p)?),
                None => None,
            };
            let report = run_bench(model.as_ref(), s.arch(), &cfg)?;
            eprintln!("{}", report.to_text());
            to_json(&report)
        }
    }
}

pub(crate) fn to_json<T: serde::Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Format(e.to_string()))
}

/// Parses `args`, runs the command, prints the result. Returns the exit code.
pub fn main_with(args: impl IntoIterator<Item = std::ffi::OsString>) -> std::process::ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return std::process::ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::FAILURE
        }
    }
}
