//! Checkpoint format: "PPGM" magic, a length-prefixed JSON header holding the
//! architecture config and run metadata, then parameter, buffer and optimizer
//! tensors in declaration order as little-endian f32 with u32 shape prefixes.
//! Round-trips are bit-exact.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::adam::{AdamHyper, AdamState};
use crate::nn::model::{ArchitectureConfig, Model};
use crate::nn::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PPGM";
const CHECKPOINT_VERSION: u16 = 1;

/// Training metadata carried inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Initialization seed; restoring rebuilds dropout seeds from it.
    pub seed: u64,
    /// Epoch index (0-based) the parameters were captured at.
    pub epoch: usize,
    /// Validation metric at that epoch (loss for pretraining, accuracy for
    /// personalization).
    pub best_val_metric: f64,
    pub task: String,
    pub scheme: String,
    pub adam_step: u64,
    pub adam_hyper: AdamHyper,
}

/// A serializable snapshot of a model plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub architecture: ArchitectureConfig,
    pub meta: CheckpointMeta,
    pub params: Vec<Tensor<f32>>,
    pub buffers: Vec<Tensor<f32>>,
    pub adam_m: Vec<Tensor<f32>>,
    pub adam_v: Vec<Tensor<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: ArchitectureConfig,
    meta: CheckpointMeta,
    n_params: usize,
    n_buffers: usize,
}

impl ModelCheckpoint {
    /// Snapshots the model's parameters, buffers and optimizer state.
    pub fn capture(model: &mut Model<f32>, adam: &AdamState<f32>, meta: CheckpointMeta) -> Self {
        let mut params = Vec::new();
        model.visit_params(&mut |p, _| params.push(p.clone()));
        let mut buffers = Vec::new();
        model.visit_buffers(&mut |b| buffers.push(b.clone()));
        ModelCheckpoint {
            architecture: model.config.clone(),
            meta,
            params,
            buffers,
            adam_m: adam.m.clone(),
            adam_v: adam.v.clone(),
        }
    }

    /// Rebuilds a live model and optimizer from this snapshot.
    pub fn restore(&self) -> Result<(Model<f32>, AdamState<f32>)> {
        let mut model = Model::from_config(&self.architecture, self.meta.seed)?;
        let mut idx = 0usize;
        let mut mismatch: Option<String> = None;
        model.visit_params(&mut |p, _| {
            if let Some(stored) = self.params.get(idx) {
                if stored.shape() == p.shape() {
                    p.data_mut().copy_from_slice(stored.data());
                } else {
                    mismatch = Some(format!(
                        "parameter {idx} shape {:?} vs stored {:?}",
                        p.shape(),
                        stored.shape()
                    ));
                }
            } else {
                mismatch = Some(format!("missing parameter tensor {idx}"));
            }
            idx += 1;
        });
        if idx != self.params.len() {
            mismatch = Some(format!(
                "model has {idx} parameter tensors, checkpoint {}",
                self.params.len()
            ));
        }
        let mut bidx = 0usize;
        model.visit_buffers(&mut |b| {
            if let Some(stored) = self.buffers.get(bidx) {
                if stored.shape() == b.shape() {
                    b.data_mut().copy_from_slice(stored.data());
                } else {
                    mismatch = Some(format!("buffer {bidx} shape mismatch"));
                }
            } else {
                mismatch = Some(format!("missing buffer tensor {bidx}"));
            }
            bidx += 1;
        });
        if let Some(m) = mismatch {
            return Err(Error::Shape(format!("checkpoint does not fit model: {m}")));
        }

        let adam = AdamState {
            m: self.adam_m.clone(),
            v: self.adam_v.clone(),
            step: self.meta.adam_step,
            hyper: self.meta.adam_hyper,
        };
        Ok((model, adam))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            architecture: self.architecture.clone(),
            meta: self.meta.clone(),
            n_params: self.params.len(),
            n_buffers: self.buffers.len(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Config(format!("checkpoint header serialization: {e}")))?;

        let file = fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(header_json.len() as u32).to_le_bytes())?;
        w.write_all(&header_json)?;
        for group in [&self.params, &self.buffers, &self.adam_m, &self.adam_v] {
            for tensor in group.iter() {
                write_tensor(&mut w, tensor)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut offset = 0u64;

        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, &mut offset, "checkpoint magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad checkpoint magic {magic:?}, expected \"PPGM\""),
            });
        }
        let mut ver = [0u8; 2];
        read_exact(&mut r, &mut ver, &mut offset, "checkpoint version")?;
        let version = u16::from_le_bytes(ver);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let mut len = [0u8; 4];
        read_exact(&mut r, &mut len, &mut offset, "header length")?;
        let header_len = u32::from_le_bytes(len) as usize;
        let mut header_json = vec![0u8; header_len];
        read_exact(&mut r, &mut header_json, &mut offset, "header json")?;
        let header: Header = serde_json::from_slice(&header_json).map_err(|e| Error::Format {
            offset: 10,
            message: format!("invalid checkpoint header: {e}"),
        })?;

        let read_group = |r: &mut BufReader<fs::File>, offset: &mut u64, n: usize| -> Result<Vec<Tensor<f32>>> {
            (0..n).map(|_| read_tensor(r, offset)).collect()
        };
        let params = read_group(&mut r, &mut offset, header.n_params)?;
        let buffers = read_group(&mut r, &mut offset, header.n_buffers)?;
        let adam_m = read_group(&mut r, &mut offset, header.n_params)?;
        let adam_v = read_group(&mut r, &mut offset, header.n_params)?;

        Ok(ModelCheckpoint {
            architecture: header.architecture,
            meta: header.meta,
            params,
            buffers,
            adam_m,
            adam_v,
        })
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    let at = *offset;
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format {
                offset: at,
                message: format!("truncated while reading {what}"),
            }
        } else {
            Error::Io(e)
        }
    })?;
    *offset += buf.len() as u64;
    Ok(())
}

fn write_tensor(w: &mut impl Write, tensor: &Tensor<f32>) -> Result<()> {
    w.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in tensor.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read, offset: &mut u64) -> Result<Tensor<f32>> {
    let mut b4 = [0u8; 4];
    read_exact(r, &mut b4, offset, "tensor rank")?;
    let rank = u32::from_le_bytes(b4) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        read_exact(r, &mut b4, offset, "tensor dims")?;
        shape.push(u32::from_le_bytes(b4) as usize);
    }
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; 4 * n];
    read_exact(r, &mut bytes, offset, "tensor values")?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{build_architecture, HeadSpec, Profile};

    fn small_checkpoint() -> ModelCheckpoint {
        let config = build_architecture(
            "resnet18",
            HeadSpec::Classification { bins: 3 },
            Profile::Desk,
            128,
        )
        .unwrap();
        let mut model: Model<f32> = Model::from_config(&config, 42).unwrap();
        let adam = AdamState::new(&model.param_shapes(), AdamHyper::default());
        let meta = CheckpointMeta {
            seed: 42,
            epoch: 3,
            best_val_metric: 0.77,
            task: "classification".into(),
            scheme: "hph".into(),
            adam_step: 12,
            adam_hyper: AdamHyper::default(),
        };
        ModelCheckpoint::capture(&mut model, &adam, meta)
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ppgm");
        let ckpt = small_checkpoint();
        ckpt.save(&path).unwrap();
        let back = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(ckpt, back);

        // Saving the loaded checkpoint reproduces the file byte for byte.
        let path2 = dir.path().join("model2.ppgm");
        back.save(&path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ppgm");
        small_checkpoint().save(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[1] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            ModelCheckpoint::load(&path),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn restore_rebuilds_identical_model_state() {
        let ckpt = small_checkpoint();
        let (mut model, adam) = ckpt.restore().unwrap();
        assert_eq!(adam.step, 12);
        let recaptured = ModelCheckpoint::capture(&mut model, &adam, ckpt.meta.clone());
        assert_eq!(ckpt, recaptured);
    }
}
