//! Raw image blobs (`VIMG`) and float sequence records (`VMSQ`).
//!
//! Both start with a 4-byte magic, a `u16` version and a reserved `u16`;
//! all integers and floats are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evalsynth::dataset::{Dataset, RawSequence, MOTOR_DIM};
use crate::image::Image8;
use crate::wire::{self, header, Reader};

pub const VIMG_MAGIC: &[u8; 4] = b"VIMG";
pub const VMSQ_MAGIC: &[u8; 4] = b"VMSQ";
pub const VERSION: u16 = 1;

/// Header, `count`, `c`, `h`, `w` (`u32`), then `count` planar images.
pub fn encode_images(images: &[Image8]) -> Result<Vec<u8>> {
    let (c, h, w) = images.first().map_or((0, 0, 0), |i| (i.channels(), i.height(), i.width()));
    let mut out = header(VIMG_MAGIC, VERSION);
    for v in [images.len(), c, h, w] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for img in images {
        if (img.channels(), img.height(), img.width()) != (c, h, w) {
            return Err(Error::Shape("all images in a blob must share one shape".into()));
        }
        out.extend_from_slice(img.data());
    }
    Ok(out)
}

pub fn decode_images(buf: &[u8]) -> Result<Vec<Image8>> {
    let mut r = Reader::new(buf);
    r.header(VIMG_MAGIC, VERSION)?;
    let (n, c, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let per = c * h * w;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(Image8::new(c, h, w, r.take(per)?.to_vec())?);
    }
    r.finish()?;
    Ok(out)
}

/// Header, `n`, `dim` (`u32`), then `n × dim` `f32` values.
pub fn encode_sequence(dim: usize, values: &[f32]) -> Result<Vec<u8>> {
    if dim == 0 || values.len() % dim != 0 {
        return Err(Error::Shape(format!("{} values do not form rows of {dim}", values.len())));
    }
    let mut out = header(VMSQ_MAGIC, VERSION);
    out.extend_from_slice(&((values.len() / dim) as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.extend(wire::f32_bytes(values));
    Ok(out)
}

/// Returns `(dim, values)`.
pub fn decode_sequence(buf: &[u8]) -> Result<(usize, Vec<f32>)> {
    let mut r = Reader::new(buf);
    r.header(VMSQ_MAGIC, VERSION)?;
    let (n, dim) = (r.u32()? as usize, r.u32()? as usize);
    let bytes = r.take(n.checked_mul(dim).and_then(|v| v.checked_mul(4)).ok_or_else(|| Error::Format("size overflow".into()))?)?;
    r.finish()?;
    Ok((dim, wire::f32_values(bytes)))
}

/// One row per step, `dim` comma-separated values.
pub fn sequence_csv(dim: usize, values: &[f32]) -> String {
    let mut s = String::new();
    for row in values.chunks(dim) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn save_sequence(dir: &Path, name: &str, seq: &RawSequence) -> Result<()> {
    write(&dir.join(format!("{name}.vimg")), &encode_images(&seq.images)?)?;
    let motor: Vec<f32> = seq.motor.iter().flatten().copied().collect();
    write(&dir.join(format!("{name}.vmsq")), &encode_sequence(MOTOR_DIM, &motor)?)
}

pub fn load_sequence(dir: &Path, name: &str) -> Result<RawSequence> {
    let images = decode_images(&fs::read(dir.join(format!("{name}.vimg")))?)?;
    let (dim, values) = decode_sequence(&fs::read(dir.join(format!("{name}.vmsq")))?)?;
    if dim != MOTOR_DIM || values.len() / dim != images.len() {
        return Err(Error::Format(format!("{name}: motor record does not match its {} images", images.len())));
    }
    let motor = values.chunks_exact(dim).map(|c| c.try_into().expect("row of MOTOR_DIM")).collect();
    Ok(RawSequence { images, motor })
}

/// Writes `train/` and `val/` with `seq_NNN.{vimg,vmsq}` pairs.
pub fn save_dataset(root: &Path, d: &Dataset) -> Result<()> {
    for (split, seqs) in [("train", &d.train), ("val", &d.val)] {
        for (i, s) in seqs.iter().enumerate() {
            save_sequence(&root.join(split), &format!("seq_{i:03}"), s)?;
        }
    }
    Ok(())
}

fn split_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vmsq"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    Ok(names)
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let load = |split: &str| -> Result<Vec<RawSequence>> {
        let dir: PathBuf = root.join(split);
        if !dir.is_dir() {
            return Err(Error::MissingArtifact { path: dir, command: "gen".into() });
        }
        split_names(&dir)?.iter().map(|n| load_sequence(&dir, n)).collect()
    };
    Ok(Dataset { train: load("train")?, val: load("val")? })
}
