//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      b"TDTC"
//! version    u32 (currently 1)
//! meta_len   u64
//! meta       meta_len bytes of UTF-8 JSON (specs, task, seed, epoch, frozen, labels)
//! payload    for each layer, for each parameter:
//!              ndim u32, dims ndim x u64, values prod(dims) x f64
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::LayerSpec;
use crate::model::{Layer, LayeredModel, TaskKind};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"TDTC";
pub const VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8;

/// Metadata block of a checkpoint file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub specs: Vec<LayerSpec>,
    pub task: TaskKind,
    pub seed: u64,
    pub epoch: Option<usize>,
    pub frozen: Vec<bool>,
    /// Caller-supplied annotations.
    #[serde(default)]
    pub labels: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn of(model: &LayeredModel, labels: BTreeMap<String, String>) -> Self {
        Self {
            specs: model.specs(),
            task: model.task(),
            seed: model.seed(),
            epoch: model.trained_epoch(),
            frozen: model.frozen_flags(),
            labels,
        }
    }

    fn payload_len(&self) -> u64 {
        self.specs
            .iter()
            .flat_map(|s| s.param_shapes())
            .map(|shape| 4 + 8 * shape.len() as u64 + 8 * shape.iter().product::<usize>() as u64)
            .sum()
    }
}

pub fn encode_checkpoint(model: &LayeredModel, labels: BTreeMap<String, String>) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&CheckpointMeta::of(model, labels))
        .map_err(|e| Error::Corrupt(format!("checkpoint metadata: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 8 * model.param_count());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    for layer in model.layers() {
        for p in &layer.params {
            out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
            for &d in p.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().expect("4 bytes"))
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().expect("8 bytes"))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(LayeredModel, CheckpointMeta)> {
    let actual = bytes.len() as u64;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual,
        });
    }
    let mut found = [0u8; 4];
    found.copy_from_slice(&bytes[..4]);
    if found != MAGIC {
        return Err(Error::Format { expected: MAGIC, found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual,
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32();
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            supported: VERSION,
        });
    }
    let meta_len = r.u64();
    let meta_end = HEADER_LEN as u64 + meta_len;
    if actual < meta_end {
        return Err(Error::Truncated {
            expected: meta_end,
            actual,
        });
    }
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len as usize))
        .map_err(|e| Error::Corrupt(format!("checkpoint metadata: {e}")))?;
    if meta.frozen.len() != meta.specs.len() {
        return Err(Error::Corrupt(format!(
            "{} frozen flags for {} layers",
            meta.frozen.len(),
            meta.specs.len()
        )));
    }
    let expected = meta_end + meta.payload_len();
    if actual != expected {
        return Err(if actual < expected {
            Error::Truncated { expected, actual }
        } else {
            Error::Corrupt(format!("{} trailing bytes after payload", actual - expected))
        });
    }
    let mut layers = Vec::with_capacity(meta.specs.len());
    for (spec, &frozen) in meta.specs.iter().zip(&meta.frozen) {
        let mut params = Vec::new();
        for shape in spec.param_shapes() {
            let ndim = r.u32() as usize;
            let dims: Vec<usize> = (0..ndim.min(shape.len())).map(|_| r.u64() as usize).collect();
            if ndim != shape.len() || dims != shape {
                return Err(Error::Corrupt(format!(
                    "parameter of `{spec}` stored with shape {dims:?}, expected {shape:?}"
                )));
            }
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = r
                .take(8 * numel)
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push(Tensor::new(shape, data).map_err(|e| Error::Corrupt(e.to_string()))?);
        }
        layers.push(Layer {
            spec: *spec,
            params,
            frozen,
        });
    }
    let model = LayeredModel::from_layers(layers, meta.task, meta.seed)?.with_trained_epoch(meta.epoch);
    Ok((model, meta))
}

pub fn save_checkpoint(model: &LayeredModel, labels: BTreeMap<String, String>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(model, labels)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(LayeredModel, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Activation;
    use crate::model::build_model;

    fn model() -> LayeredModel {
        build_model(
            &[
                LayerSpec::embedding(7, 3).unwrap(),
                LayerSpec::lstm(3, 4).unwrap(),
                LayerSpec::dense(4, 4, Activation::Relu).unwrap(),
                LayerSpec::output(4, 7).unwrap(),
            ],
            TaskKind::CharLm,
            5,
        )
        .unwrap()
        .with_trained_epoch(Some(3))
    }

    #[test]
    fn round_trip() {
        let mut m = model();
        m.layer_mut(3).frozen = true;
        let labels = BTreeMap::from([("run".to_string(), "x".to_string())]);
        let bytes = encode_checkpoint(&m, labels.clone()).unwrap();
        let (back, meta) = decode_checkpoint(&bytes).unwrap();
        assert!(back.bit_eq(&m));
        assert_eq!(back.frozen_flags(), m.frozen_flags());
        assert_eq!(back.trained_epoch(), Some(3));
        assert_eq!(meta.labels, labels);
        assert_eq!(encode_checkpoint(&back, labels).unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = encode_checkpoint(&model(), BTreeMap::new()).unwrap();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format { found, .. }) if &found == b"XXXX"));
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Version { found: 2, supported: 1 })));
    }

    #[test]
    fn truncation_reports_byte_counts() {
        let bytes = encode_checkpoint(&model(), BTreeMap::new()).unwrap();
        let cut = &bytes[..bytes.len() - 8];
        match decode_checkpoint(cut) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, cut.len() as u64);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Corrupt(_))));
    }
}
