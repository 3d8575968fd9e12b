//! Little-endian byte cursor shared by the on-disk formats.

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, at: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated at byte {} (need {n} more)", self.at)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Magic, then a version that must equal `version`, then a reserved `u16`.
    pub fn header(&mut self, magic: &[u8; 4], version: u16) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("bad magic, expected {}", String::from_utf8_lossy(magic))));
        }
        let found = self.u16()?;
        if found != version {
            return Err(Error::UnsupportedVersion { found, supported: version });
        }
        self.u16()?;
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.at != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.at)));
        }
        Ok(())
    }
}

pub(crate) fn header(magic: &[u8; 4], version: u16) -> Vec<u8> {
    let mut out = magic.to_vec();
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out
}

pub(crate) fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub(crate) fn f32_values(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect()
}
