//! The `.pbdc` deployment artifact: folded binary encoder plus LSTM head.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! 0   "PBDC" | version u16 | reserved u16 | segment count u32 | CRC-32 u32
//! 16  architecture block, 12 × u32
//! 64  manifest, 72 bytes per segment
//! ..  segments, each starting on an 8-byte boundary
//! ```
//!
//! The CRC covers every byte after the 16-byte header. Manifest offsets are
//! absolute file offsets.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evalsynth::MOTOR_DIM;
use crate::image::Image8;
use crate::layers::{Architecture, BinConvParams, BinFcParams, EncoderParams, ThresholdParams};
use crate::seqmodel::{LstmCellParams, LstmParams, LstmState, GATES};
use crate::tensor::BitTensor;
use crate::training::{Mode, TrainedDcae};
use crate::wire::{self, Reader};

pub const PBDC_MAGIC: &[u8; 4] = b"PBDC";
pub const PBDC_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;
const ARCH_LEN: usize = 48;
const ENTRY_LEN: usize = 72;
const NAME_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Conv,
    Fc,
    Lstm,
    Dense,
}

impl SegmentKind {
    fn code(self) -> u8 {
        match self {
            SegmentKind::Conv => 1,
            SegmentKind::Fc => 2,
            SegmentKind::Lstm => 3,
            SegmentKind::Dense => 4,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            1 => SegmentKind::Conv,
            2 => SegmentKind::Fc,
            3 => SegmentKind::Lstm,
            4 => SegmentKind::Dense,
            _ => return Err(Error::Format(format!("unknown segment kind {c}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Precision {
    /// One bit per value, LSB first, bit 1 = +1 (or a set flag).
    #[serde(rename = "bin1")]
    Bin1,
    #[serde(rename = "fp32")]
    Fp32,
    /// `i32` per channel.
    #[serde(rename = "int-threshold")]
    IntThreshold,
}

impl Precision {
    fn code(self) -> u8 {
        match self {
            Precision::Bin1 => 1,
            Precision::Fp32 => 2,
            Precision::IntThreshold => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            1 => Precision::Bin1,
            2 => Precision::Fp32,
            3 => Precision::IntThreshold,
            _ => return Err(Error::Format(format!("unknown precision tag {c}"))),
        })
    }

    pub fn byte_len(self, count: usize) -> usize {
        match self {
            Precision::Bin1 => count.div_ceil(8),
            Precision::Fp32 | Precision::IntThreshold => 4 * count,
        }
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: SegmentKind,
    pub precision: Precision,
    pub dims: Vec<usize>,
    /// Absolute file offset.
    pub offset: u64,
    pub len: u64,
}

impl ManifestEntry {
    pub fn count(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Inference-ready parameters: folded binary encoder and LSTM head. The
/// decoder is never part of it.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    mode: Mode,
    encoder: EncoderParams,
    lstm: LstmParams<f32>,
}

struct Segment {
    name: String,
    kind: SegmentKind,
    precision: Precision,
    dims: Vec<usize>,
    bytes: Vec<u8>,
}

fn bits_bytes(t: &BitTensor) -> Vec<u8> {
    let mut b: Vec<u8> = t.words().iter().flat_map(|w| w.to_le_bytes()).collect();
    b.truncate(t.dims().iter().product::<usize>().div_ceil(8));
    b
}

fn bytes_bits(dims: Vec<usize>, bytes: &[u8]) -> Result<BitTensor> {
    let mut padded = bytes.to_vec();
    padded.resize(bytes.len().div_ceil(8) * 8, 0);
    let words = padded.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    BitTensor::from_words(dims, words)
}

fn flags_bytes(flags: &[bool]) -> Vec<u8> {
    let mut b = vec![0u8; flags.len().div_ceil(8)];
    for (i, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
        b[i / 8] |= 1 << (i % 8);
    }
    b
}

fn bytes_flags(count: usize, bytes: &[u8]) -> Result<Vec<bool>> {
    let flags: Vec<bool> = (0..bytes.len() * 8).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
    if flags[count..].iter().any(|&f| f) {
        return Err(Error::Format("flag padding bits must be zero".into()));
    }
    Ok(flags[..count].to_vec())
}

fn mode_code(m: Mode) -> u32 {
    match m {
        Mode::Full => 0,
        Mode::Partial => 1,
        Mode::Binary => 2,
    }
}

fn mode_from_code(c: u32) -> Result<Mode> {
    match c {
        1 => Ok(Mode::Partial),
        2 => Ok(Mode::Binary),
        _ => Err(Error::Format(format!("mode code {c} has no binary encoder"))),
    }
}

impl PackedModel {
    /// `lstm` must read features followed by the motor vector.
    pub fn new(mode: Mode, encoder: EncoderParams, lstm: LstmParams<f32>) -> Result<Self> {
        if !mode.binary_encoder() {
            return Err(Error::InvalidValue("a full-precision model has no packed form".into()));
        }
        lstm.validate()?;
        let want = encoder.arch().feature_dim + MOTOR_DIM;
        if lstm.dim() != want {
            return Err(Error::Shape(format!("LSTM width {} does not match features + motor = {want}", lstm.dim())));
        }
        Ok(PackedModel { mode, encoder, lstm })
    }

    /// Folds the trained encoder's batch norm into thresholds and drops the decoder.
    pub fn from_trained(dcae: &TrainedDcae, lstm: &LstmParams<f32>) -> Result<Self> {
        PackedModel::new(dcae.mode(), dcae.encoder()?, lstm.clone())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn arch(&self) -> &Architecture {
        self.encoder.arch()
    }
    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }
    pub fn lstm(&self) -> &LstmParams<f32> {
        &self.lstm
    }

    /// Bilinear resize to the encoder input and 8-bit quantization.
    pub fn preprocess(&self, frame: &Image8) -> Result<Image8> {
        let a = self.arch();
        if frame.channels() != a.input_channels {
            return Err(Error::Shape(format!("frame has {} channels, model expects {}", frame.channels(), a.input_channels)));
        }
        if frame.height() == a.input_size && frame.width() == a.input_size {
            return Ok(frame.clone());
        }
        Ok(frame.resize_bilinear(a.input_size, a.input_size))
    }

    /// One closed-loop step: encodes `frame`, appends `motor`
    /// (normalized), and advances the LSTM. Returns the predicted next
    /// step `[features | motor]` and the new state.
    pub fn step(&self, frame: &Image8, motor: &[f32], state: &LstmState<f32>) -> Result<(Vec<f32>, LstmState<f32>)> {
        if motor.len() != MOTOR_DIM {
            return Err(Error::Shape(format!("motor vector has {} values, expected {MOTOR_DIM}", motor.len())));
        }
        let mut x = self.encoder.forward(&self.preprocess(frame)?)?.into_data();
        x.extend_from_slice(motor);
        self.lstm.step(&x, state)
    }

    fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut push = |name: String, kind, precision, dims: Vec<usize>, bytes| {
            out.push(Segment { name, kind, precision, dims, bytes });
        };
        let binary = self
            .encoder
            .convs()
            .iter()
            .map(|c| (SegmentKind::Conv, &c.weights, &c.thresholds))
            .chain(self.encoder.fcs().iter().map(|f| (SegmentKind::Fc, &f.weights, &f.thresholds)));
        for (i, (kind, w, t)) in binary.enumerate() {
            let name = if i < 4 { format!("enc.conv{}", i + 1) } else { format!("enc.fc{}", i - 3) };
            let ch = t.channels();
            push(format!("{name}.weight"), kind, Precision::Bin1, w.dims().to_vec(), bits_bytes(w));
            let tau = t.tau.iter().flat_map(|v| v.to_le_bytes()).collect();
            push(format!("{name}.threshold"), kind, Precision::IntThreshold, vec![ch], tau);
            push(format!("{name}.flip"), kind, Precision::Bin1, vec![ch], flags_bytes(&t.flip));
        }
        for (k, l) in self.lstm.layers.iter().enumerate() {
            let g = GATES * l.hidden;
            let tensors = [("w_x", vec![g, l.input], &l.w_x), ("w_h", vec![g, l.hidden], &l.w_h), ("b_x", vec![g], &l.b_x), ("b_h", vec![g], &l.b_h)];
            for (n, dims, v) in tensors {
                push(format!("lstm{}.{n}", k + 1), SegmentKind::Lstm, Precision::Fp32, dims, wire::f32_bytes(v));
            }
        }
        let (dim, top) = (self.lstm.dim(), self.lstm.fc_w.len() / self.lstm.dim());
        push("fc3.weight".into(), SegmentKind::Dense, Precision::Fp32, vec![dim, top], wire::f32_bytes(&self.lstm.fc_w));
        push("fc3.bias".into(), SegmentKind::Dense, Precision::Fp32, vec![dim], wire::f32_bytes(&self.lstm.fc_b));
        out
    }

    fn layout(&self) -> (Vec<Segment>, Vec<ManifestEntry>, usize) {
        let segs = self.segments();
        let mut at = (HEADER_LEN + ARCH_LEN + ENTRY_LEN * segs.len()).next_multiple_of(8);
        let mut manifest = Vec::with_capacity(segs.len());
        for s in &segs {
            manifest.push(ManifestEntry {
                name: s.name.clone(),
                kind: s.kind,
                precision: s.precision,
                dims: s.dims.clone(),
                offset: at as u64,
                len: s.bytes.len() as u64,
            });
            at = (at + s.bytes.len()).next_multiple_of(8);
        }
        (segs, manifest, at)
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.layout().1
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (segs, manifest, total) = self.layout();
        let mut out = wire::header(PBDC_MAGIC, PBDC_VERSION);
        out.extend_from_slice(&(segs.len() as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        let a = self.arch();
        let l = &self.lstm;
        let arch = [
            a.input_size,
            a.input_channels,
            a.conv_channels[0],
            a.conv_channels[1],
            a.conv_channels[2],
            a.conv_channels[3],
            a.fc_hidden,
            a.feature_dim,
            l.dim(),
            l.layers.len(),
            mode_code(self.mode) as usize,
            0,
        ];
        for v in arch {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for e in &manifest {
            let mut name = [0u8; NAME_LEN];
            name[..e.name.len()].copy_from_slice(e.name.as_bytes());
            out.extend_from_slice(&name);
            out.extend_from_slice(&[e.kind.code(), e.precision.code(), e.dims.len() as u8, 0]);
            for i in 0..4 {
                out.extend_from_slice(&(e.dims.get(i).copied().unwrap_or(0) as u32).to_le_bytes());
            }
            out.extend_from_slice(&(e.count() as u32).to_le_bytes());
            out.extend_from_slice(&e.offset.to_le_bytes());
            out.extend_from_slice(&e.len.to_le_bytes());
        }
        for (s, e) in segs.iter().zip(&manifest) {
            out.resize(e.offset as usize, 0);
            out.extend_from_slice(&s.bytes);
        }
        out.resize(total, 0);
        let crc = crc32fast::hash(&out[HEADER_LEN..]);
        out[12..16].copy_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf);
        r.header(PBDC_MAGIC, PBDC_VERSION)?;
        let count = r.u32()? as usize;
        let stored = r.u32()?;
        let computed = crc32fast::hash(&buf[HEADER_LEN..]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut arch_words = [0usize; 12];
        for v in &mut arch_words {
            *v = r.u32()? as usize;
        }
        let [input_size, input_channels, c0, c1, c2, c3, fc_hidden, feature_dim, lstm_dim, lstm_layers, mode, _] = arch_words;
        let arch = Architecture { input_size, input_channels, conv_channels: [c0, c1, c2, c3], fc_hidden, feature_dim };
        arch.validate()?;
        let mode = mode_from_code(mode as u32)?;

        let manifest = read_manifest(&mut r, count, buf.len())?;
        let mut segs = manifest.iter().map(|e| (e, &buf[e.offset as usize..(e.offset + e.len) as usize]));
        let mut next = |name: &str| -> Result<(&ManifestEntry, &[u8])> {
            let (e, b) = segs.next().ok_or_else(|| Error::Format(format!("missing segment {name}")))?;
            if e.name != name {
                return Err(Error::Format(format!("expected segment {name}, found {}", e.name)));
            }
            Ok((e, b))
        };
        let mut read_layer = |name: &str| -> Result<(BitTensor, ThresholdParams)> {
            let (e, b) = next(&format!("{name}.weight"))?;
            expect_precision(e, Precision::Bin1)?;
            let w = bytes_bits(e.dims.clone(), b)?;
            let (e, b) = next(&format!("{name}.threshold"))?;
            expect_precision(e, Precision::IntThreshold)?;
            let tau: Vec<i32> = b.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let (e, b) = next(&format!("{name}.flip"))?;
            expect_precision(e, Precision::Bin1)?;
            let flip = bytes_flags(e.count(), b)?;
            Ok((w, ThresholdParams::new(tau, flip)?))
        };
        let mut convs = Vec::new();
        for i in 1..=4 {
            let (w, t) = read_layer(&format!("enc.conv{i}"))?;
            convs.push(BinConvParams::new(w, t)?);
        }
        let mut fcs = Vec::new();
        for i in 1..=2 {
            let (w, t) = read_layer(&format!("enc.fc{i}"))?;
            fcs.push(BinFcParams::new(w, t)?);
        }
        let encoder = EncoderParams::new(arch, convs, fcs)?;

        let mut fp32 = |name: &str| -> Result<(Vec<usize>, Vec<f32>)> {
            let (e, b) = next(name)?;
            expect_precision(e, Precision::Fp32)?;
            Ok((e.dims.clone(), wire::f32_values(b)))
        };
        let mut layers = Vec::new();
        for k in 1..=lstm_layers {
            let (dx, w_x) = fp32(&format!("lstm{k}.w_x"))?;
            let (_, w_h) = fp32(&format!("lstm{k}.w_h"))?;
            let (_, b_x) = fp32(&format!("lstm{k}.b_x"))?;
            let (_, b_h) = fp32(&format!("lstm{k}.b_h"))?;
            if dx.len() != 2 || dx[0] % GATES != 0 {
                return Err(Error::Format(format!("lstm{k}.w_x has shape {dx:?}")));
            }
            layers.push(LstmCellParams { input: dx[1], hidden: dx[0] / GATES, w_x, w_h, b_x, b_h });
        }
        let (_, fc_w) = fp32("fc3.weight")?;
        let (_, fc_b) = fp32("fc3.bias")?;
        if let Some((e, _)) = segs.next() {
            return Err(Error::Format(format!("unexpected segment {}", e.name)));
        }
        let lstm = LstmParams { layers, fc_w, fc_b };
        if lstm.dim() != lstm_dim {
            return Err(Error::Format(format!("LSTM width {} disagrees with header {lstm_dim}", lstm.dim())));
        }
        PackedModel::new(mode, encoder, lstm)
    }
}

fn expect_precision(e: &ManifestEntry, p: Precision) -> Result<()> {
    if e.precision != p {
        return Err(Error::Format(format!("segment {} has precision {:?}, expected {p:?}", e.name, e.precision)));
    }
    Ok(())
}

fn read_manifest(r: &mut Reader<'_>, count: usize, file_len: usize) -> Result<Vec<ManifestEntry>> {
    let table_end = count
        .checked_mul(ENTRY_LEN)
        .and_then(|v| v.checked_add(HEADER_LEN + ARCH_LEN))
        .filter(|&e| e <= file_len)
        .ok_or_else(|| Error::Format(format!("manifest of {count} entries does not fit the file")))?;
    let mut prev_end = table_end as u64;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = r.take(NAME_LEN)?;
        let name_len = raw.iter().position(|&b| b == 0).unwrap_or(NAME_LEN);
        let name = std::str::from_utf8(&raw[..name_len]).map_err(|_| Error::Format("segment name is not UTF-8".into()))?.to_string();
        let kind = SegmentKind::from_code(r.u8()?)?;
        let precision = Precision::from_code(r.u8()?)?;
        let rank = r.u8()? as usize;
        r.u8()?;
        let mut dims = Vec::new();
        for i in 0..4 {
            let d = r.u32()? as usize;
            if i < rank {
                dims.push(d);
            }
        }
        let count = r.u32()? as usize;
        let offset = r.u64()?;
        let len = r.u64()?;
        let e = ManifestEntry { name, kind, precision, dims, offset, len };
        if rank == 0 || rank > 4 || e.count() != count {
            return Err(Error::Format(format!("segment {} has inconsistent shape", e.name)));
        }
        if len != precision.byte_len(count) as u64 {
            return Err(Error::Format(format!("segment {} is {len} bytes, its shape needs {}", e.name, precision.byte_len(count))));
        }
        let end = offset.checked_add(len).filter(|&end| end <= file_len as u64);
        match end {
            Some(end) if offset % 8 == 0 && offset >= prev_end => prev_end = end,
            _ => return Err(Error::Format(format!("segment {} has a bad offset {offset}", e.name))),
        }
        out.push(e);
    }
    Ok(out)
}

pub fn export_model(model: &PackedModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn import_model(path: &Path) -> Result<PackedModel> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact { path: path.to_path_buf(), command: "export".into() },
        _ => Error::Io(e),
    })?;
    PackedModel::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::BnEncoderParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> Architecture {
        Architecture { input_size: 32, input_channels: 3, conv_channels: [8, 8, 16, 16], fc_hidden: 24, feature_dim: 64 }
    }

    fn model(seed: u64) -> PackedModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = BnEncoderParams::random(small_arch(), &mut rng).fold().unwrap();
        let lstm = LstmParams::random(64 + MOTOR_DIM, &[12, 12], &mut rng);
        PackedModel::new(Mode::Partial, enc, lstm).unwrap()
    }

    fn image(rng: &mut impl Rng) -> Image8 {
        Image8::new(3, 32, 32, (0..3 * 32 * 32).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = model(1);
        let bytes = m.to_bytes();
        let back = PackedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.encoder().fingerprint(), m.encoder().fingerprint());
        assert_eq!(back.to_bytes(), bytes);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let motor = [0.1f32; MOTOR_DIM];
        for _ in 0..10 {
            let img = image(&mut rng);
            let s = m.lstm().initial_state();
            let (a, sa) = m.step(&img, &motor, &s).unwrap();
            let (b, sb) = back.step(&img, &motor, &s).unwrap();
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn layout_is_aligned_and_sizes_match() {
        let m = model(2);
        let bytes = m.to_bytes();
        let manifest = m.manifest();
        assert_eq!(manifest.len(), 6 * 3 + 2 * 4 + 2);
        for e in &manifest {
            assert_eq!(e.offset % 8, 0);
            assert_eq!(e.len as usize, e.precision.byte_len(e.count()));
            assert!(e.offset + e.len <= bytes.len() as u64);
        }
        assert!(manifest.iter().all(|e| !e.name.starts_with("dec")));
        let conv1 = &manifest[0];
        assert_eq!((conv1.name.as_str(), conv1.dims.as_slice(), conv1.len), ("enc.conv1.weight", &[8, 3, 3, 3][..], 27));
    }

    #[test]
    fn any_flipped_byte_fails_the_checksum() {
        let bytes = model(3).to_bytes();
        for at in [HEADER_LEN, 100, bytes.len() / 2, bytes.len() - 1] {
            let mut bad = bytes.clone();
            bad[at] ^= 0x10;
            assert!(matches!(PackedModel::from_bytes(&bad), Err(Error::Checksum { .. })), "byte {at}");
        }
    }

    #[test]
    fn header_errors() {
        let bytes = model(4).to_bytes();
        let mut old = bytes.clone();
        old[4] = 0;
        assert!(matches!(PackedModel::from_bytes(&old), Err(Error::UnsupportedVersion { found: 0, supported: 1 })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(PackedModel::from_bytes(&magic), Err(Error::Format(_))));
        for n in [0, 10, HEADER_LEN, bytes.len() - 8] {
            assert!(PackedModel::from_bytes(&bytes[..n]).is_err(), "truncated to {n}");
        }
    }

    #[test]
    fn manifest_lies_are_caught_even_with_a_valid_crc() {
        let mut bytes = model(5).to_bytes();
        // First entry's stored length field.
        let len_at = HEADER_LEN + ARCH_LEN + NAME_LEN + 4 + 16 + 4 + 8;
        bytes[len_at] += 1;
        let crc = crc32fast::hash(&bytes[HEADER_LEN..]);
        bytes[12..16].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(PackedModel::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_full_mode_and_wrong_lstm_width() {
        let m = model(6);
        assert!(PackedModel::new(Mode::Full, m.encoder().clone(), m.lstm().clone()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let narrow = LstmParams::random(40, &[8], &mut rng);
        assert!(PackedModel::new(Mode::Partial, m.encoder().clone(), narrow).is_err());
    }

    #[test]
    fn file_roundtrip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pbdc");
        let m = model(7);
        export_model(&m, &path).unwrap();
        assert_eq!(import_model(&path).unwrap(), m);
        let missing = import_model(&dir.path().join("nope.pbdc")).unwrap_err();
        assert!(matches!(missing, Error::MissingArtifact { ref command, .. } if command == "export"));
    }
}
