use std::path::Path;

use crate::error::{read_bytes, write_file, Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"VFF1";
pub const FEATURE_VERSION: u32 = 1;

/// Per-video frame descriptors, `m` rows of width `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub video_id: String,
    pub m: usize,
    pub q: usize,
    pub values: Vec<f32>,
}

impl FeatureFile {
    pub fn new(video_id: impl Into<String>, m: usize, q: usize, values: Vec<f32>) -> Result<Self> {
        if m == 0 || q == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature extents must be positive, got {m}x{q}"
            )));
        }
        if m.checked_mul(q) != Some(values.len()) {
            return Err(Error::InvalidArgument(format!(
                "{m}x{q} features but {} values",
                values.len()
            )));
        }
        Ok(FeatureFile {
            video_id: video_id.into(),
            m,
            q,
            values,
        })
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.values.iter().map(|&v| f64::from(v)).collect();
        Tensor::new(vec![self.m, self.q], data).expect("extents checked at construction")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id = self.video_id.as_bytes();
        let mut out = Vec::with_capacity(20 + id.len() + 4 * self.values.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(id.len()).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&u32_len(self.m).to_le_bytes());
        out.extend_from_slice(&u32_len(self.q).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let truncated = || Error::Truncated { path: path.to_owned() };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(truncated)? != FEATURE_MAGIC {
            return Err(Error::BadMagic {
                path: path.to_owned(),
                expected: "VFF1",
            });
        }
        let version = r.u32().ok_or_else(truncated)?;
        if version != FEATURE_VERSION {
            return Err(Error::UnsupportedVersion {
                path: path.to_owned(),
                found: version,
                expected: FEATURE_VERSION,
            });
        }
        let id_len = r.u32().ok_or_else(truncated)? as usize;
        let id = r.take(id_len).ok_or_else(truncated)?;
        let video_id = std::str::from_utf8(id)
            .map_err(|_| Error::Format(format!("{}: video id is not UTF-8", path.display())))?
            .to_owned();
        let m = r.u32().ok_or_else(truncated)? as usize;
        let q = r.u32().ok_or_else(truncated)? as usize;
        if m == 0 || q == 0 {
            return Err(Error::Format(format!("{}: empty extents {m}x{q}", path.display())));
        }
        let payload = m
            .checked_mul(q)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::ExtentOverflow {
                path: path.to_owned(),
                detail: format!("{m}x{q} float32 values"),
            })?;
        let body = r.take(payload).ok_or_else(truncated)?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after payload",
                path.display(),
                bytes.len() - r.pos
            )));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(FeatureFile { video_id, m, q, values })
    }
}

fn u32_len(n: usize) -> u32 {
    u32::try_from(n).expect("extent exceeds u32 range")
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_feature_file(path: &Path) -> Result<FeatureFile> {
    FeatureFile::from_bytes(&read_bytes(path)?, path)
}

pub fn write_feature_file(file: &FeatureFile, path: &Path) -> Result<()> {
    write_file(path, file.to_bytes())
}
