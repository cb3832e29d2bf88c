//! VLCK checkpoint container.
//!
//! ```text
//! "VLCK" | version u32 = 1
//! manifest_len u32 | manifest (UTF-8 key=value lines)
//! param_count u32
//! param_count x ( name_len u16 | name | rank u32 | dims u32* | f64 data )
//! adam_step u64 | first moments | second moments (f64, parameter order)
//! ```
//!
//! The manifest holds the model configuration plus `epoch` and
//! `train_seed`. Files are written to a temporary sibling and renamed.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::training::adam::AdamState;

pub const MAGIC: &[u8; 4] = b"VLCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    pub epoch: usize,
    pub train_seed: u64,
}

fn err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn checkpoint_bytes(model: &Model, adam: &AdamState, epoch: usize, train_seed: u64) -> Vec<u8> {
    let mut manifest = model.config.to_kv();
    manifest.insert("epoch", epoch.to_string());
    manifest.insert("train_seed", train_seed.to_string());
    let text: String = manifest.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&(text.len() as u32).to_le_bytes());
    b.extend_from_slice(text.as_bytes());
    b.extend_from_slice(&(model.store.len() as u32).to_le_bytes());
    let floats = |b: &mut Vec<u8>, t: &Tensor| t.data().iter().for_each(|v| b.extend_from_slice(&v.to_le_bytes()));
    for (_, name, t) in model.store.iter() {
        b.extend_from_slice(&(name.len() as u16).to_le_bytes());
        b.extend_from_slice(name.as_bytes());
        b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            b.extend_from_slice(&(d as u32).to_le_bytes());
        }
        floats(&mut b, t);
    }
    b.extend_from_slice(&adam.step.to_le_bytes());
    adam.m.iter().chain(&adam.v).for_each(|t| floats(&mut b, t));
    b
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, adam: &AdamState, epoch: usize, train_seed: u64) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(&checkpoint_bytes(model, adam, epoch, train_seed))?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.b.len() - self.pos < n {
            return Err(Error::Truncated(format!("checkpoint ends at byte {}", self.b.len())));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(err("not a VLCK file"));
    }
    let mut r = Reader { b: bytes, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| err("manifest is not UTF-8"))?;
    let manifest: BTreeMap<&str, &str> = text
        .lines()
        .map(|l| l.split_once('=').ok_or_else(|| err(format!("bad manifest line `{l}`"))))
        .collect::<Result<_>>()?;
    let get = |k: &str| manifest.get(k).copied().ok_or_else(|| err(format!("manifest lacks `{k}`")));
    let epoch = get("epoch")?.parse().map_err(|_| err("bad epoch"))?;
    let train_seed = get("train_seed")?.parse().map_err(|_| err("bad train_seed"))?;
    let mut config = ModelConfig::default();
    config.apply_kv(manifest.iter().map(|(k, v)| (*k, *v)))?;
    let mut model = Model::new(config)?;

    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(err(format!("{count} parameters stored, model has {}", model.store.len())));
    }
    for id in model.store.ids().collect::<Vec<_>>() {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| err("parameter name is not UTF-8"))?;
        if name != model.store.name(id) {
            return Err(err(format!("expected parameter `{}`, found `{name}`", model.store.name(id))));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().product();
        let t = Tensor::new(shape, r.floats(numel)?)?;
        model.store.set(id, t).map_err(|e| err(e.to_string()))?;
    }
    let mut adam = AdamState::new(&model.store);
    adam.step = r.u64()?;
    for t in adam.m.iter_mut().chain(adam.v.iter_mut()) {
        let n = t.numel();
        t.data_mut().copy_from_slice(&r.floats(n)?);
    }
    if r.pos != bytes.len() {
        return Err(err("trailing bytes"));
    }
    Ok(Checkpoint {
        model,
        adam,
        epoch,
        train_seed,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    parse_checkpoint(&crate::error::read_file(path.as_ref())?)
}
