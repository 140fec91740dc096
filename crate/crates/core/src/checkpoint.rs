//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic "LSSFCKPT" | version u32 | config (u32 length + JSON)
//! seed u64 | epoch u64 | step u64 | cursor u64
//! params:  u32 count, then name | u8 rank | u32 dims.. | f32 data..
//! buffers: u32 count, then name | u32 C | f32 mean[C] | f32 var[C]
//! optimizer: u8 present; if 1: t u64 | lr, beta1, beta2, eps f64 |
//!            u32 count, then name | u32 len | f32 m[len] | f32 v[len]
//! ```
//!
//! Names are a u16 length followed by UTF-8 bytes.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;
use lssf_tensor::Tensor;

use crate::config::NetworkConfig;
use crate::error::{LssfError, Result};
use crate::network::{init_params, Model};
use crate::optim::{AdamConfig, AdamState};
use crate::params::{BnBuffers, ParamStore};

pub const MAGIC: &[u8; 8] = b"LSSFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    /// Training seed the run was started with.
    pub seed: u64,
    /// Fully completed epochs.
    pub epoch: u64,
    /// Optimizer steps taken.
    pub step: u64,
    /// Batches already consumed from epoch `epoch + 1`.
    pub cursor: u64,
    pub params: ParamStore<f32>,
    pub optimizer: Option<AdamState<f32>>,
}

impl Checkpoint {
    /// Freshly initialized weights, no training progress.
    pub fn fresh(config: NetworkConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self {
            seed: config.seed,
            config,
            epoch: 0,
            step: 0,
            cursor: 0,
            params,
            optimizer: None,
        })
    }

    pub fn model(&self) -> Model<f32> {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    /// Error unless this checkpoint's tensors have exactly the names and
    /// shapes `config` would build.
    pub fn check_compatible(&self, config: &NetworkConfig) -> Result<()> {
        let expected = init_params(config)?;
        let mismatch = |detail: String| Err(LssfError::ConfigMismatch(detail));
        if expected.len() != self.params.len() {
            return mismatch(format!(
                "checkpoint has {} parameter tensors, configuration expects {}",
                self.params.len(),
                expected.len()
            ));
        }
        for (name, t) in expected.iter() {
            match self.params.get(name) {
                Ok(have) if have.shape() == t.shape() => {}
                Ok(have) => {
                    return mismatch(format!(
                        "`{name}` is {:?} in the checkpoint, configuration expects {:?}",
                        have.shape(),
                        t.shape()
                    ))
                }
                Err(_) => return mismatch(format!("`{name}` missing from checkpoint")),
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        self.write(&mut w).map_err(|e| LssfError::Checkpoint(e.to_string()))?;
        Ok(w)
    }

    fn write(&self, w: &mut Vec<u8>) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        let cfg = serde_json::to_vec(&self.config)?;
        w.write_u32::<LE>(cfg.len() as u32)?;
        w.write_all(&cfg)?;
        for v in [self.seed, self.epoch, self.step, self.cursor] {
            w.write_u64::<LE>(v)?;
        }
        w.write_u32::<LE>(self.params.len() as u32)?;
        for (name, t) in self.params.iter() {
            write_name(w, name)?;
            w.write_u8(t.rank() as u8)?;
            for &d in t.shape() {
                w.write_u32::<LE>(d as u32)?;
            }
            write_f32s(w, t.data())?;
        }
        let buffers: Vec<_> = self.params.bn_iter().collect();
        w.write_u32::<LE>(buffers.len() as u32)?;
        for (name, b) in buffers {
            write_name(w, name)?;
            w.write_u32::<LE>(b.mean.len() as u32)?;
            write_f32s(w, &b.mean)?;
            write_f32s(w, &b.var)?;
        }
        match &self.optimizer {
            None => w.write_u8(0)?,
            Some(opt) => {
                w.write_u8(1)?;
                w.write_u64::<LE>(opt.t)?;
                let c = opt.config;
                for v in [c.lr, c.beta1, c.beta2, c.eps] {
                    w.write_f64::<LE>(v)?;
                }
                w.write_u32::<LE>(opt.m.len() as u32)?;
                for (name, m) in &opt.m {
                    let v = &opt.v[name];
                    write_name(w, name)?;
                    w.write_u32::<LE>(m.len() as u32)?;
                    write_f32s(w, m)?;
                    write_f32s(w, v)?;
                }
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let ck = read(&mut r)?;
        if (r.position() as usize) != bytes.len() {
            return Err(LssfError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.position() as usize
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| LssfError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| LssfError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_name(w: &mut Vec<u8>, name: &str) -> std::io::Result<()> {
    w.write_u16::<LE>(name.len() as u16)?;
    w.write_all(name.as_bytes())
}

fn write_f32s(w: &mut Vec<u8>, data: &[f32]) -> std::io::Result<()> {
    for &v in data {
        w.write_f32::<LE>(v)?;
    }
    Ok(())
}

fn truncated(e: std::io::Error) -> LssfError {
    LssfError::Checkpoint(format!("truncated or unreadable ({e})"))
}

fn read_name(r: &mut Cursor<&[u8]>) -> Result<String> {
    let n = r.read_u16::<LE>().map_err(truncated)? as usize;
    let mut buf = vec![0; n];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| LssfError::Checkpoint("tensor name is not UTF-8".into()))
}

fn read_f32s(r: &mut Cursor<&[u8]>, n: usize) -> Result<Vec<f32>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if n.checked_mul(4).is_none_or(|b| b > remaining) {
        return Err(LssfError::Checkpoint(format!("truncated: {n} floats announced, {remaining} bytes left")));
    }
    let mut out = vec![0f32; n];
    r.read_f32_into::<LE>(&mut out).map_err(truncated)?;
    Ok(out)
}

fn read(r: &mut Cursor<&[u8]>) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(LssfError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LE>().map_err(truncated)?;
    if version != FORMAT_VERSION {
        return Err(LssfError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = r.read_u32::<LE>().map_err(truncated)? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if n > remaining {
        return Err(LssfError::Checkpoint("truncated configuration".into()));
    }
    let mut cfg = vec![0; n];
    r.read_exact(&mut cfg).map_err(truncated)?;
    let config: NetworkConfig = serde_json::from_slice(&cfg)?;
    let mut counters = [0u64; 4];
    for c in &mut counters {
        *c = r.read_u64::<LE>().map_err(truncated)?;
    }
    let [seed, epoch, step, cursor] = counters;

    let mut params = ParamStore::new();
    let count = r.read_u32::<LE>().map_err(truncated)?;
    for _ in 0..count {
        let name = read_name(r)?;
        let rank = r.read_u8().map_err(truncated)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u32::<LE>().map_err(truncated)? as usize);
        }
        let data = read_f32s(r, dims.iter().product())?;
        params.insert(name, Tensor::new(dims, data)?)?;
    }
    let count = r.read_u32::<LE>().map_err(truncated)?;
    for _ in 0..count {
        let name = read_name(r)?;
        let c = r.read_u32::<LE>().map_err(truncated)? as usize;
        let mean = read_f32s(r, c)?;
        let var = read_f32s(r, c)?;
        params.insert_bn(name, BnBuffers { mean, var })?;
    }
    let optimizer = match r.read_u8().map_err(truncated)? {
        0 => None,
        1 => {
            let t = r.read_u64::<LE>().map_err(truncated)?;
            let mut f = [0f64; 4];
            for v in &mut f {
                *v = r.read_f64::<LE>().map_err(truncated)?;
            }
            let config = AdamConfig {
                lr: f[0],
                beta1: f[1],
                beta2: f[2],
                eps: f[3],
            };
            let (mut m, mut v) = (IndexMap::new(), IndexMap::new());
            let count = r.read_u32::<LE>().map_err(truncated)?;
            for _ in 0..count {
                let name = read_name(r)?;
                let len = r.read_u32::<LE>().map_err(truncated)? as usize;
                m.insert(name.clone(), read_f32s(r, len)?);
                v.insert(name, read_f32s(r, len)?);
            }
            Some(AdamState { config, t, m, v })
        }
        other => return Err(LssfError::Checkpoint(format!("bad optimizer flag {other}"))),
    };
    Ok(Checkpoint {
        config,
        seed,
        epoch,
        step,
        cursor,
        params,
        optimizer,
    })
}
