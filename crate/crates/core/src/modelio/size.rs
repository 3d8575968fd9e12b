//! Parameter storage per layer, float against packed.
//!
//! Only weights are counted (thresholds and biases of the binarized layers
//! are excluded; LSTM and FC3 count everything). Display units: per-layer
//! cells use KB = 1024 B and switch to MB = 1000 KB at 1000 KB; totals use
//! MB = 1024 KB. Every value is shown to three significant figures and raw
//! byte counts are kept alongside.

use serde::Serialize;

use crate::layers::Architecture;
use crate::seqmodel::{LstmParams, GATES};
use crate::training::Mode;

/// Width of the recurrent head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LstmShape {
    /// Input and read-out width.
    pub dim: usize,
    pub hidden: Vec<usize>,
}

impl LstmShape {
    pub fn new(dim: usize, hidden: Vec<usize>) -> Self {
        LstmShape { dim, hidden }
    }

    pub fn of(p: &LstmParams<f32>) -> Self {
        LstmShape { dim: p.dim(), hidden: p.hidden_sizes() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeRow {
    pub layer: String,
    /// Output side (`HxW` for convolutions) or width.
    pub output: String,
    /// Input channels or width.
    pub input: usize,
    pub params: u64,
    pub float_bytes: u64,
    pub packed_bytes: u64,
    pub float: String,
    pub packed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeReport {
    pub mode: Mode,
    pub rows: Vec<SizeRow>,
    pub float_total_bytes: u64,
    pub packed_total_bytes: u64,
    pub float_total: String,
    pub packed_total: String,
    /// `100 · (1 − packed / float)`.
    pub reduction_pct: f64,
}

/// `v` to three significant figures.
pub(crate) fn sig3(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    let s = format!("{:.*}", (2 - mag).max(0) as usize, v);
    // Rounding can carry into the next decade (999.7 -> "1000").
    let carried = s.parse::<f64>().is_ok_and(|r| r.abs() >= 10f64.powi(mag + 1));
    if carried { format!("{:.*}", (1 - mag).max(0) as usize, v) } else { s }
}

fn layer_cell(bytes: u64) -> String {
    let kb = bytes as f64 / 1024.0;
    if kb >= 1000.0 { format!("{} MB", sig3(kb / 1000.0)) } else { format!("{} KB", sig3(kb)) }
}

fn total_cell(bytes: u64) -> String {
    let kb = bytes as f64 / 1024.0;
    if kb >= 1000.0 { format!("{} MB", sig3(kb / 1024.0)) } else { format!("{} KB", sig3(kb)) }
}

/// Storage of the encoder and the recurrent head. The decoder is training-only
/// and not counted. In `Full` mode nothing is packed.
pub fn size_report(arch: &Architecture, lstm: &LstmShape, mode: Mode) -> SizeReport {
    let packed = mode.binary_encoder();
    let mut rows = Vec::new();
    let mut push = |layer: String, output: String, input: usize, params: usize, binary: bool| {
        let float_bytes = 4 * params as u64;
        let packed_bytes = if binary && packed { params.div_ceil(8) as u64 } else { float_bytes };
        rows.push(SizeRow {
            layer,
            output,
            input,
            params: params as u64,
            float_bytes,
            packed_bytes,
            float: layer_cell(float_bytes),
            packed: layer_cell(packed_bytes),
        });
    };
    let sizes = arch.conv_sizes();
    for (i, (&oc, ic)) in arch.conv_channels.iter().zip(arch.conv_in_channels()).enumerate() {
        push(format!("Conv{}", i + 1), format!("{0}x{0}", sizes[i]), ic, oc * ic * 9, true);
    }
    push("FC1".into(), arch.fc_hidden.to_string(), arch.flat_dim(), arch.fc_hidden * arch.flat_dim(), true);
    push("FC2".into(), arch.feature_dim.to_string(), arch.fc_hidden, arch.feature_dim * arch.fc_hidden, true);
    let mut input = lstm.dim;
    for (k, &h) in lstm.hidden.iter().enumerate() {
        push(format!("LSTM{}", k + 1), h.to_string(), input, GATES * h * (input + h) + 2 * GATES * h, false);
        input = h;
    }
    push("FC3".into(), lstm.dim.to_string(), input, lstm.dim * input + lstm.dim, false);

    let float_total_bytes = rows.iter().map(|r| r.float_bytes).sum();
    let packed_total_bytes = rows.iter().map(|r| r.packed_bytes).sum();
    SizeReport {
        mode,
        rows,
        float_total_bytes,
        packed_total_bytes,
        float_total: total_cell(float_total_bytes),
        packed_total: total_cell(packed_total_bytes),
        reduction_pct: 100.0 * (1.0 - packed_total_bytes as f64 / float_total_bytes as f64),
    }
}

impl SizeReport {
    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let header = ["Layer", "Output", "Input", "Float", "Packed", "Float B", "Packed B"];
        let mut cells: Vec<[String; 7]> = vec![header.map(String::from)];
        for r in &self.rows {
            cells.push([
                r.layer.clone(),
                r.output.clone(),
                r.input.to_string(),
                r.float.clone(),
                r.packed.clone(),
                r.float_bytes.to_string(),
                r.packed_bytes.to_string(),
            ]);
        }
        cells.push([
            "Total".into(),
            "--".into(),
            "--".into(),
            self.float_total.clone(),
            self.packed_total.clone(),
            self.float_total_bytes.to_string(),
            self.packed_total_bytes.to_string(),
        ]);
        let widths: Vec<usize> = (0..7).map(|c| cells.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 || i == cells.len() - 2 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out.push_str(&format!("mode {}, reduction {:.1}%\n", self.mode, self.reduction_pct));
        out
    }
}
