//! `MRGF` checkpoints: magic, u32 version, u32 tensor count, then per
//! tensor a u16 name length, the name, a u8 rank, u32 dims and raw
//! little-endian `f32` data. Metadata, optimizer and RNG state travel as
//! named tensors too; integers and `f64` bit patterns are split into
//! 16-bit chunks so every `f32` holds them exactly.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::models::{Model, Phase, ProganStage};
use crate::optim::{OptimKind, OptimizerState};
use crate::tensor::Tensor;
use crate::Rng;

pub const MAGIC: &[u8; 4] = b"MRGF";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_records(records: &[Record]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {}", r.name)))?;
        let rank = u8::try_from(r.shape.len()).map_err(|_| bad(format!("rank too large: {}", r.name)))?;
        if r.shape.iter().product::<usize>() != r.data.len() {
            return Err(bad(format!("{}: shape {:?} does not match {} values", r.name, r.shape, r.data.len())));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(rank);
        for &d in &r.shape {
            let d = u32::try_from(d).map_err(|_| bad(format!("dimension too large: {}", r.name)))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_records(buf: &[u8]) -> Result<Vec<Record>> {
    struct R<'a>(&'a [u8], usize);
    impl R<'_> {
        fn take(&mut self, n: usize) -> Result<&[u8]> {
            let end = self.1.checked_add(n).filter(|&e| e <= self.0.len());
            let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.1)))?;
            let s = &self.0[self.1..end];
            self.1 = end;
            Ok(s)
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
        }
    }
    let mut r = R(buf, 0);
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let bytes = shape.iter().try_fold(4usize, |a, &d| a.checked_mul(d));
        let raw = r.take(bytes.ok_or_else(|| bad("tensor too large"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        out.push(Record { name, shape, data });
    }
    if r.1 != buf.len() {
        return Err(bad(format!("{} trailing bytes", buf.len() - r.1)));
    }
    Ok(out)
}

/// Packs `u64` words into exact `f32` 16-bit chunks.
pub fn pack_u64(words: &[u64]) -> Vec<f32> {
    words
        .iter()
        .flat_map(|w| (0..4).map(move |i| ((w >> (16 * i)) & 0xFFFF) as f32))
        .collect()
}

pub fn unpack_u64(data: &[f32]) -> Result<Vec<u64>> {
    if data.len() % 4 != 0 {
        return Err(bad("packed integer record has a partial word"));
    }
    data.chunks(4)
        .map(|c| {
            c.iter().enumerate().try_fold(0u64, |acc, (i, &v)| {
                if v.fract() != 0.0 || !(0.0..65536.0).contains(&v) {
                    return Err(bad("packed integer chunk out of range"));
                }
                Ok(acc | ((v as u64) << (16 * i)))
            })
        })
        .collect()
}

fn packed(name: impl Into<String>, words: &[u64]) -> Record {
    let data = pack_u64(words);
    Record {
        name: name.into(),
        shape: vec![data.len()],
        data,
    }
}

fn text_record(name: &str, s: &str) -> Record {
    Record {
        name: name.into(),
        shape: vec![s.len()],
        data: s.bytes().map(f32::from).collect(),
    }
}

fn record_text(r: &Record) -> Result<String> {
    let bytes: Vec<u8> = r.data.iter().map(|&v| v as u8).collect();
    String::from_utf8(bytes).map_err(|_| bad(format!("{} is not UTF-8", r.name)))
}

/// Everything needed to resume a run or reload its networks.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// Resolved config text of the run.
    pub config: String,
    pub stage: Option<ProganStage>,
    /// Discriminator (or segmenter) steps taken so far.
    pub step: u64,
    /// Training wall time accumulated up to the save.
    pub wall_seconds: f64,
    /// `("net", m)` for a segmenter, `("g", g)` and `("d", d)` for a GAN.
    pub nets: Vec<(String, Model)>,
    pub optims: Vec<(String, OptimizerState)>,
    pub rng: Rng,
}

impl Checkpoint {
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::parse_str(&self.config).map_err(|e| bad(format!("embedded config: {e}")))
    }

    pub fn net(&self, key: &str) -> Result<&Model> {
        self.nets
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, m)| m)
            .ok_or_else(|| bad(format!("no `{key}` network")))
    }

    pub fn records(&self) -> Result<Vec<Record>> {
        let mut out = vec![text_record("meta.config", &self.config), packed("meta.step", &[self.step, self.wall_seconds.to_bits()])];
        if let Some(s) = self.stage {
            let phase = match s.phase {
                Phase::Stabilize => 0,
                Phase::Transition => 1,
            };
            out.push(packed("meta.stage", &[s.resolution as u64, phase, s.alpha.to_bits()]));
        }
        for (key, m) in &self.nets {
            if !m.params.all_finite() {
                return Err(bad(format!("refusing to save non-finite parameters of `{key}`")));
            }
            for p in m.params.iter() {
                out.push(Record {
                    name: format!("{key}/{}", p.name),
                    shape: p.tensor.shape().to_vec(),
                    data: p.tensor.data().to_vec(),
                });
            }
        }
        for (key, o) in &self.optims {
            let kind = match o.kind {
                OptimKind::Adam => 0,
                OptimKind::SgdNesterov => 1,
            };
            out.push(packed(
                format!("opt.{key}.hyper"),
                &[
                    kind,
                    o.lr.to_bits(),
                    o.beta1.to_bits(),
                    o.beta2.to_bits(),
                    o.eps.to_bits(),
                    o.momentum.to_bits(),
                    o.t,
                ],
            ));
            for (tag, bufs) in [("m", &o.m), ("v", &o.v)] {
                for (name, b) in bufs {
                    out.push(Record {
                        name: format!("opt.{key}.{tag}/{name}"),
                        shape: vec![b.len()],
                        data: b.clone(),
                    });
                }
            }
        }
        let seed = self.rng.get_seed();
        let mut words: Vec<u64> = seed.chunks(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let pos = self.rng.get_word_pos();
        words.extend([self.rng.get_stream(), pos as u64, (pos >> 64) as u64]);
        out.push(packed("rng", &words));
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = encode_records(&self.records()?)?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_records(decode_records(&std::fs::read(path)?)?)
    }

    /// Rebuilds the networks named by the embedded config and fills every
    /// parameter. Missing, extra or misshapen tensors are rejected before
    /// anything is returned.
    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        let mut by_name: BTreeMap<String, Record> = BTreeMap::new();
        for r in records {
            if by_name.contains_key(&r.name) {
                return Err(bad(format!("duplicate tensor `{}`", r.name)));
            }
            by_name.insert(r.name.clone(), r);
        }
        let mut take = |name: &str| by_name.remove(name).ok_or_else(|| bad(format!("missing `{name}`")));
        let config = record_text(&take("meta.config")?)?;
        let counters = unpack_u64(&take("meta.step")?.data)?;
        let [step, wall] = counters[..] else {
            return Err(bad("meta.step has the wrong length"));
        };
        let wall_seconds = f64::from_bits(wall);
        let exp = ExperimentConfig::parse_str(&config).map_err(|e| bad(format!("embedded config: {e}")))?;
        let stage = match by_name.remove("meta.stage") {
            Some(r) => {
                let w = unpack_u64(&r.data)?;
                if w.len() != 3 {
                    return Err(bad("meta.stage has the wrong length"));
                }
                let s = ProganStage {
                    resolution: w[0] as usize,
                    phase: if w[1] == 0 { Phase::Stabilize } else { Phase::Transition },
                    alpha: f64::from_bits(w[2]),
                };
                s.validate()?;
                Some(s)
            }
            None => None,
        };
        let layouts = exp.arch.layouts(stage)?;
        let keys: &[&str] = if exp.arch.is_gan() { &["g", "d"] } else { &["net"] };
        let mut nets = Vec::new();
        for (key, mut m) in keys.iter().zip(layouts) {
            for d in m.declared() {
                let name = format!("{key}/{}", d.name);
                let r = by_name.remove(&name).ok_or_else(|| bad(format!("missing `{name}`")))?;
                if r.shape != d.shape {
                    return Err(bad(format!("`{name}` has shape {:?}, expected {:?}", r.shape, d.shape)));
                }
                m.params.insert(d.name, Tensor::new(r.shape, r.data)?, d.trainable);
            }
            m.alpha = stage.map_or(1.0, |s| s.alpha);
            nets.push((key.to_string(), m));
        }
        let mut optims = Vec::new();
        for key in keys {
            let Some(h) = by_name.remove(&format!("opt.{key}.hyper")) else {
                continue;
            };
            let w = unpack_u64(&h.data)?;
            if w.len() != 7 {
                return Err(bad(format!("opt.{key}.hyper has the wrong length")));
            }
            let f = f64::from_bits;
            let mut o = OptimizerState {
                kind: if w[0] == 0 { OptimKind::Adam } else { OptimKind::SgdNesterov },
                lr: f(w[1]),
                beta1: f(w[2]),
                beta2: f(w[3]),
                eps: f(w[4]),
                momentum: f(w[5]),
                t: w[6],
                m: BTreeMap::new(),
                v: BTreeMap::new(),
            };
            for tag in ["m", "v"] {
                let prefix = format!("opt.{key}.{tag}/");
                let names: Vec<String> = by_name.keys().filter(|n| n.starts_with(&prefix)).cloned().collect();
                for n in names {
                    let r = by_name.remove(&n).expect("listed");
                    let dest = if tag == "m" { &mut o.m } else { &mut o.v };
                    dest.insert(n[prefix.len()..].to_string(), r.data);
                }
            }
            optims.push((key.to_string(), o));
        }
        let words = unpack_u64(&take_rng(&mut by_name)?.data)?;
        if words.len() != 7 {
            return Err(bad("rng state has the wrong length"));
        }
        let mut seed = [0u8; 32];
        for (i, w) in words[..4].iter().enumerate() {
            seed[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = <Rng as rand::SeedableRng>::from_seed(seed);
        rng.set_stream(words[4]);
        rng.set_word_pos(words[5] as u128 | ((words[6] as u128) << 64));
        if let Some(extra) = by_name.keys().next() {
            return Err(bad(format!("unexpected tensor `{extra}`")));
        }
        Ok(Self {
            config,
            stage,
            step,
            wall_seconds,
            nets,
            optims,
            rng,
        })
    }
}

fn take_rng(by_name: &mut BTreeMap<String, Record>) -> Result<Record> {
    by_name.remove("rng").ok_or_else(|| bad("missing `rng`"))
}
