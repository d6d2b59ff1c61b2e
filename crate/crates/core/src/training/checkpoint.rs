//! `MGPC` checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "MGPC" version config_len config_text(utf-8) record_count record*
//! record = name_len name(utf-8) ndim dim* f32*
//! ```
//!
//! Record names: `param/<name>` for every learnable array,
//! `buffer/compare.b<k>.bn.running_mean|running_var` for normalization
//! statistics, `adam.m/<name>` and `adam.v/<name>` for optimizer moments,
//! and `meta/epoch`, `meta/step` as single-element records.

use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::training::adam::Adam;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MGPC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Largest counter that survives the round trip through `f32`.
const MAX_META: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config_text: String,
    pub records: Vec<Record>,
}

/// A checkpoint turned back into live objects.
#[derive(Debug, Clone)]
pub struct Restored {
    pub config: Config,
    pub model: Model,
    /// Present when the checkpoint carries optimizer moments.
    pub adam: Option<Adam>,
    pub epoch: usize,
}

fn store_records(prefix: &str, store: &ParamStore, out: &mut Vec<Record>) {
    for info in store.layout().infos() {
        let data = &store.as_slice()[info.offset..info.offset + info.len()];
        out.push(Record {
            name: format!("{prefix}/{}", info.name),
            shape: info.shape.clone(),
            data: data.iter().map(|&v| v as f32).collect(),
        });
    }
}

fn meta(name: &str, value: usize) -> Result<Record> {
    if value > MAX_META {
        return Err(Error::Format(format!("{name} = {value} is too large to store")));
    }
    Ok(Record {
        name: format!("meta/{name}"),
        shape: vec![1],
        data: vec![value as f32],
    })
}

fn stat_names(k: usize) -> (String, String) {
    (
        format!("buffer/compare.b{k}.bn.running_mean"),
        format!("buffer/compare.b{k}.bn.running_var"),
    )
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.at..end];
                self.at = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "checkpoint truncated at byte {} while reading {what} ({n} bytes needed, {} left)",
                self.at,
                self.bytes.len() - self.at
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format(format!("{what} is not valid utf-8")))
    }
}

impl Checkpoint {
    pub fn capture(config: &Config, model: &Model, adam: Option<&Adam>, epoch: usize) -> Result<Self> {
        let mut records = Vec::new();
        store_records("param", &model.params, &mut records);
        for (k, s) in model.stats.iter().enumerate() {
            let (mean, var) = stat_names(k);
            for (name, v) in [(mean, &s.mean), (var, &s.var)] {
                records.push(Record {
                    name,
                    shape: vec![v.len()],
                    data: v.iter().map(|&x| x as f32).collect(),
                });
            }
        }
        if let Some(adam) = adam {
            store_records("adam.m", &adam.m, &mut records);
            store_records("adam.v", &adam.v, &mut records);
            records.push(meta("step", adam.step as usize)?);
        }
        records.push(meta("epoch", epoch)?);
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config_text: config.to_text(),
            records,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put(&mut out, self.version as usize);
        put(&mut out, self.config_text.len());
        out.extend_from_slice(self.config_text.as_bytes());
        put(&mut out, self.records.len());
        for r in &self.records {
            put(&mut out, r.name.len());
            out.extend_from_slice(r.name.as_bytes());
            put(&mut out, r.shape.len());
            for &d in &r.shape {
                put(&mut out, d);
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint: missing MGPC magic".into()));
        }
        let mut r = Reader { bytes, at: 4 };
        let version = r.u32("version")? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let config_text = r.string("config text")?;
        let count = r.u32("record count")?;
        let mut records = Vec::new();
        for k in 0..count {
            let name = r.string(&format!("name of record {k}"))?;
            let ndim = r.u32(&format!("rank of `{name}`"))?;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u32(&format!("shape of `{name}`"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format(format!("shape of `{name}` overflows")))?;
            let data = r
                .take(n, &format!("data of `{name}`"))?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            records.push(Record { name, shape, data });
        }
        if r.at != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after the last record",
                bytes.len() - r.at
            )));
        }
        Ok(Self {
            version,
            config_text,
            records,
        })
    }

    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }

    fn require(&self, name: &str, shape: &[usize]) -> Result<&Record> {
        let r = self
            .record(name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no record `{name}`")))?;
        if r.shape != shape {
            return Err(Error::Format(format!(
                "record `{name}` has shape {:?}, model expects {shape:?}",
                r.shape
            )));
        }
        Ok(r)
    }

    fn fill(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let infos = store.layout().infos().to_vec();
        for info in infos {
            let r = self.require(&format!("{prefix}/{}", info.name), &info.shape)?;
            let dst = &mut store.as_mut_slice()[info.offset..info.offset + info.len()];
            for (d, &s) in dst.iter_mut().zip(&r.data) {
                *d = f64::from(s);
            }
        }
        Ok(())
    }

    fn meta_value(&self, name: &str) -> Result<usize> {
        let r = self.require(&format!("meta/{name}"), &[1])?;
        Ok(r.data[0] as usize)
    }

    /// Rebuilds the model (and optimizer, when stored) from the echoed
    /// configuration and the records.
    pub fn restore(&self) -> Result<Restored> {
        let config = Config::parse(&self.config_text)?;
        let mut model = Model::new(&config.model, config.train.seed)?;
        self.fill("param", &mut model.params)?;
        for (k, s) in model.stats.iter_mut().enumerate() {
            let (mean, var) = stat_names(k);
            let c = s.mean.len();
            for (name, dst) in [(mean, &mut s.mean), (var, &mut s.var)] {
                let r = self.require(&name, &[c])?;
                for (d, &v) in dst.iter_mut().zip(&r.data) {
                    *d = f64::from(v);
                }
            }
        }
        let adam = if self.record("meta/step").is_some() {
            let mut adam = Adam::new(config.train.lr, &model.params);
            self.fill("adam.m", &mut adam.m)?;
            self.fill("adam.v", &mut adam.v)?;
            adam.step = self.meta_value("step")? as u64;
            Some(adam)
        } else {
            None
        };
        let epoch = self.meta_value("epoch")?;
        Ok(Restored {
            config,
            model,
            adam,
            epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
