//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CENC"  u32 version  u64 header_len  header (JSON)  zero pad to 8
//! tensor payloads, each starting on an 8-byte boundary
//! ```
//!
//! The header records the architecture descriptors, the configs, the
//! trainer state and a table of tensors with their dtype, shape and offset
//! relative to the start of the payload area.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_discriminator, build_generator, GeneratorConfig, LayerKind, Network};
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};
use crate::train::{AdamHyper, AdamState, TrainConfig, Trainer};

pub const MAGIC: &[u8; 4] = b"CENC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: [usize; 4],
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub iteration: u64,
    pub saturated_steps: u32,
    pub fill: [f64; 3],
    pub rng: RngState,
    pub gen_adam: AdamHyper,
    pub disc_adam: AdamHyper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub generator: Vec<LayerKind>,
    pub discriminator: Vec<LayerKind>,
    pub gen_config: GeneratorConfig,
    pub train_config: TrainConfig,
    pub trainer: TrainerState,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<(String, Tensor)>,
}

fn prefixed(prefix: &str, items: Vec<(String, Tensor)>) -> impl Iterator<Item = (String, Tensor)> + '_ {
    items.into_iter().map(move |(n, t)| (format!("{prefix}/{n}"), t))
}

fn adam_tensors(prefix: &str, st: &AdamState) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (i, (m, v)) in st.m.iter().zip(&st.v).enumerate() {
        out.push((format!("{prefix}/m/{i}"), m.detached()));
        out.push((format!("{prefix}/v/{i}"), v.detached()));
    }
    out
}

fn restore_adam(
    prefix: &str,
    net: &Network,
    hyper: AdamHyper,
    map: &HashMap<String, Tensor>,
) -> Result<AdamState> {
    let mut st = AdamState::for_network(net);
    st.hyper = hyper;
    for i in 0..st.m.len() {
        for (buf, kind) in [(&mut st.m[i], "m"), (&mut st.v[i], "v")] {
            let name = format!("{prefix}/{kind}/{i}");
            let t = map
                .get(&name)
                .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks {name}")))?;
            if t.shape() != buf.shape() {
                return Err(Error::InvalidShape(format!(
                    "{name} has shape {}, expected {}",
                    t.shape(),
                    buf.shape()
                )));
            }
            *buf = t.detached();
        }
    }
    Ok(st)
}

fn strip(prefix: &str, map: &HashMap<String, Tensor>) -> HashMap<String, Tensor> {
    let p = format!("{prefix}/");
    map.iter()
        .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.detached())))
        .collect()
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        let mut tensors: Vec<(String, Tensor)> = prefixed("gen", t.gen.state_tensors()).collect();
        tensors.extend(prefixed("disc", t.disc.state_tensors()));
        tensors.extend(adam_tensors("gen_adam", &t.gen_adam));
        tensors.extend(adam_tensors("disc_adam", &t.disc_adam));
        Checkpoint {
            header: CheckpointHeader {
                generator: t.gen.kinds(),
                discriminator: t.disc.kinds(),
                gen_config: t.gen_cfg.clone(),
                train_config: t.cfg.clone(),
                trainer: TrainerState {
                    iteration: t.iteration,
                    saturated_steps: t.saturated_steps,
                    fill: t.fill,
                    rng: t.rng,
                    gen_adam: t.gen_adam.hyper,
                    disc_adam: t.disc_adam.hyper,
                },
                tensors: Vec::new(),
            },
            tensors,
        }
    }

    fn map(&self) -> HashMap<String, Tensor> {
        self.tensors.iter().map(|(n, t)| (n.clone(), t.detached())).collect()
    }

    /// Generator rebuilt from the stored config and filled with the stored
    /// weights; the descriptor must match the rebuilt architecture.
    pub fn generator(&self) -> Result<Network> {
        let mut gen = build_generator(&self.header.gen_config, &mut RngState::new(0))?;
        if gen.kinds() != self.header.generator {
            return Err(Error::InvalidShape(
                "generator descriptor does not match its config".into(),
            ));
        }
        gen.load_state(&strip("gen", &self.map()))?;
        Ok(gen)
    }

    pub fn into_trainer(self) -> Result<Trainer> {
        let h = &self.header;
        let map = self.map();
        let gen = self.generator()?;
        let mut disc = build_discriminator(&h.gen_config, &mut RngState::new(0))?;
        if disc.kinds() != h.discriminator {
            return Err(Error::InvalidShape(
                "discriminator descriptor does not match its config".into(),
            ));
        }
        disc.load_state(&strip("disc", &map))?;
        let gen_adam = restore_adam("gen_adam", &gen, h.trainer.gen_adam, &map)?;
        let disc_adam = restore_adam("disc_adam", &disc, h.trainer.disc_adam, &map)?;
        Ok(Trainer {
            gen_cfg: h.gen_config.clone(),
            cfg: h.train_config.clone(),
            gen,
            disc,
            gen_adam,
            disc_adam,
            iteration: h.trainer.iteration,
            saturated_steps: h.trainer.saturated_steps,
            fill: h.trainer.fill,
            rng: h.trainer.rng,
        })
    }
}

fn pad8(len: usize) -> usize {
    len.div_ceil(8) * 8
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut header = ckpt.header.clone();
    header.tensors.clear();
    let mut offset = 0u64;
    for (name, t) in &ckpt.tensors {
        header.tensors.push(TensorEntry {
            name: name.clone(),
            dtype: Dtype::F64,
            shape: t.shape().dims(),
            offset,
        });
        offset += pad8(t.numel() * 8) as u64;
    }
    let json = serde_json::to_vec(&header)
        .map_err(|e| Error::InvalidArgument(format!("cannot serialize header: {e}")))?;
    let mut out = Vec::with_capacity(16 + json.len() + offset as usize + 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.resize(pad8(out.len()), 0);
    for (_, t) in &ckpt.tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |reason: String| Error::format(path, reason);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| bad(format!("invalid header: {e}")))?;
    let base = pad8(16 + hlen);
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let shape = Shape::from(e.shape);
        let start = base + e.offset as usize;
        let len = shape.numel() * e.dtype.size();
        if !start.is_multiple_of(8) {
            return Err(bad(format!("tensor {} is not 8-byte aligned", e.name)));
        }
        let raw = bytes
            .get(start..start + len)
            .ok_or_else(|| bad(format!("truncated payload for {}", e.name)))?;
        let data: Vec<f64> = match e.dtype {
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        };
        tensors.push((e.name.clone(), Tensor::from_vec(shape, data)?));
    }
    Ok(Checkpoint { header, tensors })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

pub fn save_trainer(t: &Trainer, path: &Path) -> Result<()> {
    save_checkpoint(&Checkpoint::from_trainer(t), path)
}

pub fn load_trainer(path: &Path) -> Result<Trainer> {
    load_checkpoint(path)?.into_trainer()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MaskConfig;

    fn small_trainer() -> Trainer {
        let gen_cfg = GeneratorConfig {
            image_size: 32,
            base_channels: 4,
            mask: MaskConfig::central_for(32),
            ..GeneratorConfig::default()
        };
        Trainer::new(gen_cfg, TrainConfig::default(), [0.5; 3]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = small_trainer();
        let ckpt = Checkpoint::from_trainer(&t);
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let back = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.tensors.len(), ckpt.tensors.len());
        for ((na, a), (nb, b)) in ckpt.tensors.iter().zip(&back.tensors) {
            assert_eq!(na, nb);
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let t2 = back.into_trainer().unwrap();
        assert_eq!(t2.iteration, t.iteration);
        assert_eq!(t2.gen.state_tensors(), t.gen.state_tensors());
    }

    #[test]
    fn corrupt_magic_and_version_rejected() {
        let bytes = encode_checkpoint(&Checkpoint::from_trainer(&small_trainer())).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad, Path::new("m")), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad, Path::new("m")), Err(Error::Format { .. })));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 8], Path::new("m")).is_err());
    }

    #[test]
    fn shape_inconsistency_rejected() {
        let mut ckpt = Checkpoint::from_trainer(&small_trainer());
        let (_, t) = &mut ckpt.tensors[0];
        *t = Tensor::zeros([1, 1, 1, 1]);
        assert!(ckpt.into_trainer().is_err());
    }
}
