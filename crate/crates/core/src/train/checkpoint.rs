use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::decoder::{Decoder, DecoderConfig};
use crate::error::{read_bytes, write_file, Error, Result};
use crate::params::{ParamLayout, ParamSet};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
    pub seed: u64,
    pub vocab_size: usize,
    pub feature_width: usize,
    pub adam_step: u64,
}

/// Decoded checkpoint: metadata plus every stored tensor by name.
#[derive(Debug, Clone)]
pub struct CheckpointFile {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor)>,
}

impl CheckpointFile {
    fn lookup(&self) -> HashMap<&str, &Tensor> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect()
    }

    fn fill(&self, layout: &ParamLayout, prefix: &str) -> Result<ParamSet> {
        let stored = self.lookup();
        let mut set = layout.clone().zeros();
        for id in set.ids().collect::<Vec<_>>() {
            let name = format!("{prefix}{}", set.name(id));
            let t = stored
                .get(name.as_str())
                .ok_or_else(|| Error::MissingTensor(name.clone()))?;
            let expected = set.get(id).shape().to_vec();
            if t.shape() != expected {
                return Err(Error::TensorShape {
                    name,
                    found: t.shape().to_vec(),
                    expected,
                });
            }
            set.set(id, (*t).clone())?;
        }
        Ok(set)
    }

    /// Parameters for `layout`; every tensor must be present with its exact shape.
    pub fn params_for(&self, layout: &ParamLayout) -> Result<ParamSet> {
        self.fill(layout, "")
    }

    pub fn adam_for(&self, layout: &ParamLayout) -> Result<AdamState> {
        let m = self.fill(layout, "adam.m.")?;
        let v = self.fill(layout, "adam.v.")?;
        Ok(AdamState {
            config: self.meta.train.adam,
            step: self.meta.adam_step,
            m: m.values().to_vec(),
            v: v.values().to_vec(),
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} exceeds u32 range")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank())?;
    for &e in t.shape() {
        put_u32(out, e)?;
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode_checkpoint(meta: &CheckpointMeta, params: &ParamSet, adam: &AdamState) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(meta)?;
    put_u32(&mut out, json.len())?;
    out.extend_from_slice(&json);
    for id in params.ids() {
        put_record(&mut out, params.name(id), params.get(id))?;
    }
    for (prefix, moments) in [("adam.m.", &adam.m), ("adam.v.", &adam.v)] {
        for (id, t) in params.ids().zip(moments) {
            put_record(&mut out, &format!("{prefix}{}", params.name(id)), t)?;
        }
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ParamSet, adam: &AdamState) -> Result<()> {
    write_file(path, encode_checkpoint(meta, params, adam)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated {
            path: self.path.to_owned(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<CheckpointFile> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_owned(),
            expected: "MDCK",
        });
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_owned(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = c.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(c.take(len)?)?;
    let mut tensors = Vec::new();
    while !c.done() {
        let nlen = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?)
            .map_err(|_| Error::Format(format!("{}: tensor name is not UTF-8", path.display())))?
            .to_owned();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(c.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::ExtentOverflow {
                path: path.to_owned(),
                detail: format!("tensor `{name}` shape {shape:?}"),
            })?;
        let data = c
            .take(numel)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
        tensors.push((name, t));
    }
    Ok(CheckpointFile { meta, tensors })
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointFile> {
    decode_checkpoint(&read_bytes(path)?, path)
}

/// Rebuilds the decoder recorded in the checkpoint together with its
/// parameters and optimizer state.
pub fn load_checkpoint(path: &Path) -> Result<(Decoder, ParamSet, AdamState, CheckpointMeta)> {
    let file = read_checkpoint(path)?;
    let decoder = Decoder::new(&file.meta.decoder, file.meta.vocab_size, file.meta.feature_width)?;
    let params = file.params_for(decoder.layout())?;
    let adam = file.adam_for(decoder.layout())?;
    Ok((decoder, params, adam, file.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::AdamConfig;

    fn small() -> (Decoder, ParamSet, AdamState, CheckpointMeta) {
        let cfg = DecoderConfig {
            n: 4,
            d_a: 3,
            ..Default::default()
        };
        let d = Decoder::new(&cfg, 9, 5).unwrap();
        let p = d.init_params();
        let mut a = AdamState::new(AdamConfig::default(), &p);
        a.step = 3;
        a.m[0].data_mut()[0] = 0.125;
        let meta = CheckpointMeta {
            decoder: cfg,
            train: TrainConfig::default(),
            epoch: 2,
            best_val_loss: Some(1.5),
            seed: 42,
            vocab_size: 9,
            feature_width: 5,
            adam_step: 3,
        };
        (d, p, a, meta)
    }

    #[test]
    fn round_trip() {
        let (_, p, a, meta) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.mdck");
        write_checkpoint(&path, &meta, &p, &a).unwrap();
        let (_, p2, a2, meta2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(p2, p);
        assert_eq!(a2, a);
    }

    #[test]
    fn corrupted_header() {
        let (_, p, a, meta) = small();
        let bytes = encode_checkpoint(&meta, &p, &a).unwrap();
        let path = Path::new("c.mdck");
        let mut v = bytes.clone();
        v[5] = 0xff;
        assert!(matches!(
            decode_checkpoint(&v, path),
            Err(Error::UnsupportedVersion { .. })
        ));
        let mut m = bytes.clone();
        m[1] = b'x';
        assert!(matches!(decode_checkpoint(&m, path), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3], path),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn mismatched_width_names_tensor() {
        let (_, p, a, meta) = small();
        let file = decode_checkpoint(&encode_checkpoint(&meta, &p, &a).unwrap(), Path::new("c")).unwrap();
        let wider = Decoder::new(
            &DecoderConfig {
                n: 6,
                ..meta.decoder.clone()
            },
            9,
            5,
        )
        .unwrap();
        let err = file.params_for(wider.layout()).unwrap_err();
        assert!(
            matches!(&err, Error::TensorShape { name, .. } if name == "fusion.w1"),
            "{err}"
        );
    }
}
