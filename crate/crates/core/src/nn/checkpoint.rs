//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | offset      | size | content                                          |
//! |-------------|------|--------------------------------------------------|
//! | 0           | 8    | magic `b"RGCKPT\0\0"`                            |
//! | 8           | 4    | format version, `u32` (currently 1)              |
//! | 12          | 8    | header length `H`, `u64`                         |
//! | 20          | H    | UTF-8 JSON header: metadata and layer specs      |
//! | 20 + H      | 8·N  | current parameters, then initial parameters, as  |
//! |             |      | `f64` row-major, layer by layer `(W_1, b_1, ...)` |
//! | end − 8     | 8    | FNV-1a 64 checksum of every preceding byte       |
//!
//! `N` is twice the parameter count implied by the layer specs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, LayerSpec, Network, NnError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RGCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub network: Network,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    layers: Vec<LayerSpec>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            meta: self.meta.clone(),
            layers: self.network.layers().iter().map(|l| l.spec).collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(36 + header.len() + 16 * self.network.count_params());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self
            .network
            .flat_params()
            .into_iter()
            .chain(self.network.flat_init_params())
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(parse_err(0, "bad magic"));
        }
        let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(NnError::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(r.take(8, "header length")?.try_into().unwrap());
        let header_start = r.pos;
        let header_bytes = r.take(header_len as usize, "header")?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| parse_err(header_start, &format!("header json: {e}")))?;

        let n: usize = header.layers.iter().map(|s| s.num_params()).sum();
        let body_start = r.pos;
        let body = r.take(16 * n, "parameter data")?;
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let trailer_at = r.pos;
        let stored = u64::from_le_bytes(r.take(8, "checksum")?.try_into().unwrap());
        if r.pos != bytes.len() {
            return Err(parse_err(r.pos, "trailing bytes after checksum"));
        }
        if stored != fnv1a(&bytes[..trailer_at]) {
            return Err(parse_err(trailer_at, "checksum mismatch"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(parse_err(body_start + 8 * i, "non-finite parameter"));
        }

        let (current, init) = values.split_at(n);
        let layers = build_layers(&header.layers, current)?;
        let init = build_layers(&header.layers, init)?;
        Ok(Self {
            meta: header.meta,
            network: Network::with_init(layers, init)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), NnError> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    Checkpoint::load(path)
}

fn build_layers(specs: &[LayerSpec], mut flat: &[f64]) -> Result<Vec<Layer>, NnError> {
    let mut layers = Vec::with_capacity(specs.len());
    for spec in specs {
        let shape = spec.weight_shape();
        let nw: usize = shape.iter().product();
        let weight = Tensor::new(shape, flat[..nw].to_vec())?;
        flat = &flat[nw..];
        let bias = if spec.has_bias {
            let b = Tensor::vector(flat[..spec.fan_out].to_vec());
            flat = &flat[spec.fan_out..];
            Some(b)
        } else {
            None
        };
        layers.push(Layer::new(*spec, weight, bias)?);
    }
    Ok(layers)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(parse_err(
                self.pos,
                &format!("truncated while reading {what} ({n} bytes needed)"),
            )),
        }
    }
}

fn parse_err(offset: usize, msg: &str) -> NnError {
    NnError::Parse {
        offset,
        message: msg.to_string(),
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::PerturbMode;

    fn sample() -> Checkpoint {
        let specs = [LayerSpec::dense(3, 4, true), LayerSpec::dense(4, 2, false)];
        let init = Network::he_init(&specs, 42).unwrap();
        // Move the current weights away from the initial ones.
        let trained = init.perturb(0.3, PerturbMode::Isotropic, 0.0, 9);
        Checkpoint {
            meta: CheckpointMeta {
                config_id: "lr=0.1,depth=2".into(),
                seed: 3,
            },
            network: trained,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.meta, ck.meta);
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.network.flat_params()), bits(ck.network.flat_params()));
        assert_eq!(
            bits(back.network.flat_init_params()),
            bits(ck.network.flat_init_params())
        );
    }

    #[test]
    fn truncated_file_reports_offset() {
        let bytes = sample().to_bytes();
        let cut = &bytes[..bytes.len() - 20];
        match Checkpoint::from_bytes(cut) {
            Err(NnError::Parse { offset, .. }) => assert!(offset > 20),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(NnError::UnsupportedVersion(7))
        ));
    }

    #[test]
    fn flipped_bit_fails_checksum() {
        let mut bytes = sample().to_bytes();
        let i = bytes.len() - 30;
        bytes[i] ^= 0x01;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(NnError::Parse { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/ck.bin");
        let ck = sample();
        save_checkpoint(&path, &ck).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ck);
    }
}
