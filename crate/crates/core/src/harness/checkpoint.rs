//! FRF1 checkpoints: named f32 tensors plus a configuration fingerprint.
//!
//! Layout (little-endian): magic `FRF1`, u16 version, u32 tensor count; per
//! tensor u32 name length, UTF-8 name, u8 rank, rank x u32 dims, f32 payload;
//! then a u64 fingerprint.

use std::path::Path;

use crate::aggregation::EsaConfig;
use crate::error::{arg_err, Error, Result};
use crate::network::{Generator, NetConfig, ReuseMode, Stage};
use crate::params::{shape_of_dims, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FRF1";
pub const VERSION: u16 = 1;
/// Bytes before the first tensor record.
pub const HEADER_LEN: usize = 4 + 2 + 4;
pub const TRAILER_LEN: usize = 8;

pub fn encode(store: &ParamStore, fingerprint: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, p) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(p.dims.len() as u8);
        for d in &p.dims {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out.extend_from_slice(&fingerprint.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                what: "checkpoint",
                detail: format!("needed {n} bytes for {what} at offset {}, {} left", self.pos, self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, u64)> {
    let mut r = Reader { bytes, pos: 0 };
    let found: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found });
    }
    let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32("tensor count")?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let len = r.u32("name length")? as usize;
        let name =
            std::str::from_utf8(r.take(len, "name")?).map_err(|e| arg_err("load_checkpoint", format!("tensor {i}: name is not UTF-8: {e}")))?.to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let shape = shape_of_dims(&dims)?;
        let payload = r.take(4 * shape.numel(), "payload")?;
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
        store.insert(name, dims, Tensor::from_vec(shape, data)?)?;
    }
    let fingerprint = u64::from_le_bytes(r.take(8, "fingerprint")?.try_into().unwrap());
    if r.pos != bytes.len() {
        return Err(arg_err("load_checkpoint", format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((store, fingerprint))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, fingerprint: u64) -> Result<()> {
    std::fs::write(path, encode(store, fingerprint))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, u64)> {
    decode(&std::fs::read(path)?)
}

const ARCH: &str = "arch";
const REC_PREFIX: &str = "rec.";
const DISC_PREFIX: &str = "d.";

fn stage_code(stage: Stage) -> f64 {
    match stage {
        Stage::Rec => 0.0,
        Stage::All { reuse: true } => 1.0,
        Stage::All { reuse: false } => 2.0,
    }
}

/// Architecture descriptor stored next to the weights so a checkpoint can be
/// rebuilt without its training config. Every entry is an integer below 2^16.
fn encode_arch(cfg: &NetConfig, stage: Stage) -> Result<Tensor> {
    let mut v = vec![
        stage_code(stage),
        cfg.c as f64,
        cfg.ref_c[0] as f64,
        cfg.ref_c[1] as f64,
        cfg.ref_c[2] as f64,
        cfg.c_sife as f64,
        cfg.sife_blocks as f64,
        cfg.dense_units as f64,
        cfg.growth as f64,
        cfg.drb_units as f64,
        cfg.esa.pool_k as f64,
        cfg.esa.pool_s as f64,
        cfg.sife as u8 as f64,
        cfg.drb as u8 as f64,
        matches!(cfg.reuse_mode, ReuseMode::FinalDownsampled) as u8 as f64,
        cfg.patch as f64,
    ];
    v.extend((0..4).map(|i| ((cfg.frozen_seed >> (16 * i)) & 0xffff) as f64));
    if v.iter().any(|&x| x >= 65536.0) {
        return Err(arg_err("save_checkpoint", "architecture field exceeds 16 bits"));
    }
    let n = v.len();
    Tensor::from_vec(shape_of_dims(&[n])?, v)
}

fn decode_arch(t: &Tensor) -> Result<(NetConfig, Stage)> {
    let v: Vec<usize> = t.data().iter().map(|&x| x as usize).collect();
    if v.len() != 20 {
        return Err(arg_err("load_checkpoint", format!("architecture record has {} fields, expected 20", v.len())));
    }
    let stage = match v[0] {
        0 => Stage::Rec,
        1 => Stage::All { reuse: true },
        2 => Stage::All { reuse: false },
        s => return Err(arg_err("load_checkpoint", format!("unknown stage code {s}"))),
    };
    let cfg = NetConfig {
        c: v[1],
        ref_c: [v[2], v[3], v[4]],
        c_sife: v[5],
        sife_blocks: v[6],
        dense_units: v[7],
        growth: v[8],
        drb_units: v[9],
        esa: EsaConfig { pool_k: v[10], pool_s: v[11] },
        sife: v[12] != 0,
        drb: v[13] != 0,
        reuse_mode: if v[14] != 0 { ReuseMode::FinalDownsampled } else { ReuseMode::PerScale },
        patch: v[15],
        frozen_seed: (0..4).map(|i| (v[16 + i] as u64) << (16 * i)).sum(),
    };
    Ok((cfg, stage))
}

/// A generator together with its weights.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: Generator,
    pub params: ParamStore,
}

/// Contents of a model checkpoint: the first-stage network always, the
/// second-stage network and critic weights for stage `all`.
#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub rec: Model,
    pub all: Option<Model>,
    pub disc: Option<ParamStore>,
}

impl ModelCheckpoint {
    pub fn stage(&self) -> Stage {
        self.all.as_ref().map_or(Stage::Rec, |m| m.net.stage)
    }

    pub fn to_store(&self) -> Result<(ParamStore, u64)> {
        let mut store = ParamStore::new();
        let top = self.all.as_ref().unwrap_or(&self.rec);
        let arch = encode_arch(&top.net.cfg, top.net.stage)?;
        store.insert(ARCH, vec![arch.numel()], arch)?;
        match &self.all {
            None => store.extend_prefixed("", &self.rec.params)?,
            Some(all) => {
                store.extend_prefixed("", &all.params)?;
                store.extend_prefixed(REC_PREFIX, &self.rec.params)?;
                if let Some(d) = &self.disc {
                    store.extend_prefixed(DISC_PREFIX, d)?;
                }
            }
        }
        Ok((store, top.net.fingerprint()))
    }

    pub fn from_store(store: &ParamStore, fingerprint: u64) -> Result<Self> {
        let (cfg, stage) = decode_arch(store.get(ARCH)?)?;
        let expected = cfg.fingerprint(stage);
        if expected != fingerprint {
            return Err(Error::FingerprintMismatch { checkpoint: fingerprint, config: expected });
        }
        let build = |stage: Stage, src: &ParamStore| -> Result<Model> {
            let (net, mut params) = Generator::new(&cfg, stage, 0)?;
            params.load_from(src)?;
            Ok(Model { net, params })
        };
        let mut top = ParamStore::new();
        for (name, p) in store.iter() {
            if name != ARCH && !name.starts_with(REC_PREFIX) && !name.starts_with(DISC_PREFIX) {
                top.insert(name, p.dims.clone(), p.value.clone())?;
            }
        }
        Ok(match stage {
            Stage::Rec => ModelCheckpoint { rec: build(Stage::Rec, &top)?, all: None, disc: None },
            Stage::All { .. } => {
                let disc = store.strip_prefix(DISC_PREFIX)?;
                ModelCheckpoint {
                    rec: build(Stage::Rec, &store.strip_prefix(REC_PREFIX)?)?,
                    all: Some(build(stage, &top)?),
                    disc: (!disc.is_empty()).then_some(disc),
                }
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (store, fp) = self.to_store()?;
        save_checkpoint(path, &store, fp)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (store, fp) = load_checkpoint(path)?;
        ModelCheckpoint::from_store(&store, fp)
    }
}
