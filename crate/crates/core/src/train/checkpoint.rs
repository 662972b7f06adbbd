//! Binary checkpoint container.
//!
//! Layout (little endian): magic `AWCK`, `u32` version, `u32` header length,
//! UTF-8 header of `key = value` lines, `u32` tensor count, then per tensor a
//! `u16` name length, the name, `u8` ndim, `u64` dims and `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::adam::AdamState;
use crate::wavenet::{NetworkConfig, NetworkParams, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"AWCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub optimizer: Option<AdamState>,
    pub step: u64,
    /// Free-form keys stored alongside the network shape (frontend settings,
    /// normalization statistics, ...).
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(params: NetworkParams) -> Self {
        Self {
            params,
            optimizer: None,
            step: 0,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        for (k, v) in self.params.config.to_pairs() {
            header.push_str(&format!("network.{k} = {v}\n"));
        }
        header.push_str(&format!("step = {}\n", self.step));
        if let Some(opt) = &self.optimizer {
            header.push_str(&format!("adam.step = {}\n", opt.step));
        }
        for (k, v) in &self.metadata {
            header.push_str(&format!("{k} = {v}\n"));
        }

        let named = self.params.named_tensors();
        let mut entries: Vec<(String, &[usize], &[f64])> = named
            .iter()
            .map(|(n, t)| (n.clone(), t.shape.as_slice(), t.data.as_slice()))
            .collect();
        if let Some(opt) = &self.optimizer {
            for (i, (n, t)) in named.iter().enumerate() {
                entries.push((format!("adam.m.{n}"), t.shape.as_slice(), &opt.m[i]));
            }
            for (i, (n, t)) in named.iter().enumerate() {
                entries.push((format!("adam.v.{n}"), t.shape.as_slice(), &opt.v[i]));
            }
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, shape, data) in entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let header_len = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?).map_err(|_| "header is not UTF-8")?;
        let mut keys = BTreeMap::new();
        for line in header.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("malformed header line {line:?}"))?;
            keys.insert(k.trim().to_string(), v.trim().to_string());
        }
        let config = NetworkConfig::from_lookup(|k| keys.get(&format!("network.{k}")).cloned())
            .map_err(|e| e.to_string())?;
        let step = parse_u64(&keys, "step")?;
        let adam_step = keys.get("adam.step").map(|_| parse_u64(&keys, "adam.step")).transpose()?;

        let mut tensors = BTreeMap::new();
        let count = r.u32()?;
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| "tensor name is not UTF-8")?
                .to_string();
            let ndim = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or("tensor too large")?)?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(format!("tensor {name} contains non-finite values"));
            }
            tensors.insert(name, Tensor { shape, data });
        }
        if r.pos != bytes.len() {
            return Err("trailing bytes after last tensor".into());
        }

        let mut params = NetworkParams::zeros(&config);
        let mut fill = |name: &str, dst: &mut Tensor| -> std::result::Result<(), String> {
            let src = tensors.remove(name).ok_or_else(|| format!("missing tensor {name}"))?;
            if src.shape != dst.shape {
                return Err(format!(
                    "tensor {name} has shape {:?}, network expects {:?}",
                    src.shape, dst.shape
                ));
            }
            *dst = src;
            Ok(())
        };
        for (name, t) in params.named_tensors_mut() {
            fill(&name, t)?;
        }
        let optimizer = match adam_step {
            Some(s) => {
                let mut state = AdamState::new(&params);
                state.step = s;
                for (i, (name, t)) in params.named_tensors().into_iter().enumerate() {
                    let mut m = t.clone();
                    fill(&format!("adam.m.{name}"), &mut m)?;
                    let mut v = t.clone();
                    fill(&format!("adam.v.{name}"), &mut v)?;
                    state.m[i] = m.data;
                    state.v[i] = v.data;
                }
                Some(state)
            }
            None => None,
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(format!("unexpected tensor {extra}"));
        }
        let metadata = keys
            .into_iter()
            .filter(|(k, _)| !k.starts_with("network.") && k != "step" && k != "adam.step")
            .collect();
        Ok(Self {
            params,
            optimizer,
            step,
            metadata,
        })
    }
}

fn parse_u64(keys: &BTreeMap<String, String>, key: &str) -> std::result::Result<u64, String> {
    let raw = keys.get(key).ok_or_else(|| format!("missing header key {key}"))?;
    raw.parse().map_err(|_| format!("header key {key}: bad integer {raw:?}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetworkConfig {
        NetworkConfig {
            layers_per_stack: 2,
            stacks: 1,
            residual_channels: 3,
            gate_channels: 3,
            skip_channels: 3,
            mixture_components: 2,
            input_channels: 2,
            cond_channels: 4,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn round_trip_with_optimizer() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = NetworkParams::random(&small(), 0.5, &mut rng);
        let mut opt = AdamState::new(&params);
        opt.step = 17;
        opt.m[3][0] = 0.25;
        opt.v[5][1] = 0.5;
        let mut ck = Checkpoint::new(params.clone());
        ck.step = 17;
        ck.optimizer = Some(opt.clone());
        ck.metadata.insert("frontend.hop".into(), "155".into());
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.step, 17);
        assert_eq!(back.optimizer.unwrap(), opt);
        assert_eq!(back.metadata["frontend.hop"], "155");
        for ((_, a), (_, b)) in back.params.named_tensors().iter().zip(params.named_tensors()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn detects_corruption() {
        let params = NetworkParams::zeros(&small());
        let bytes = Checkpoint::new(params).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err().contains("truncated"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.awck");
        let params = NetworkParams::zeros(&small());
        Checkpoint::new(params.clone()).save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap().params, params);
    }
}
