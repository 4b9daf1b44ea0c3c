//! Binary checkpoint format.
//!
//! ```text
//! "SNATCKPT"  u32 version
//! u32 header_len, header: UTF-8 `key<TAB>value` lines
//! u32 block_count, then per block:
//!   u32 name_len, name, u32 ndim, u64 dims…, little-endian f32 data
//! ```
//!
//! Model parameters come first, in layout order; optimizer state blocks
//! carry an `opt.` prefix.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::config::ModelConfig;
use super::params::ParamStore;
use super::snat::SnatModel;
use super::teacher::TeacherModel;
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SNATCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const OPT_PREFIX: &str = "opt.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Snat,
    Teacher,
}

impl ModelKind {
    fn name(self) -> &'static str {
        match self {
            ModelKind::Snat => "snat",
            ModelKind::Teacher => "teacher",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub step: u64,
    /// Free-form string metadata (training config, data fingerprints).
    pub meta: BTreeMap<String, String>,
    pub blocks: Vec<(String, Tensor<f32>)>,
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn clean(s: &str) -> Result<&str> {
    if s.contains(['\t', '\n']) {
        return Err(Error::Format(format!(
            "header text may not contain tabs or newlines: {s:?}"
        )));
    }
    Ok(s)
}

impl Checkpoint {
    pub fn from_snat(model: &SnatModel, step: u64) -> Self {
        Self::new(
            ModelKind::Snat,
            model.config().clone(),
            step,
            model.params(),
        )
    }

    pub fn from_teacher(model: &TeacherModel, step: u64) -> Self {
        Self::new(
            ModelKind::Teacher,
            model.config().clone(),
            step,
            model.params(),
        )
    }

    fn new(kind: ModelKind, config: ModelConfig, step: u64, params: &ParamStore) -> Self {
        Checkpoint {
            kind,
            config,
            step,
            meta: BTreeMap::new(),
            blocks: params
                .named()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn config_hash(&self) -> String {
        self.config.hash()
    }

    /// Model parameters (everything but optimizer state).
    pub fn params(&self) -> ParamStore {
        ParamStore::from_named(
            self.blocks
                .iter()
                .filter(|(n, _)| !n.starts_with(OPT_PREFIX))
                .cloned()
                .collect(),
        )
    }

    pub fn block(&self, name: &str) -> Option<&Tensor<f32>> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn into_snat(&self) -> Result<SnatModel> {
        if self.kind != ModelKind::Snat {
            return Err(Error::Format("checkpoint holds a teacher model".into()));
        }
        SnatModel::from_params(self.config.clone(), self.params())
    }

    pub fn into_teacher(&self) -> Result<TeacherModel> {
        if self.kind != ModelKind::Teacher {
            return Err(Error::Format("checkpoint holds a SNAT model".into()));
        }
        TeacherModel::from_params(self.config.clone(), self.params())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::new();
        let mut line = |k: &str, v: &str| -> Result<()> {
            header.push_str(clean(k)?);
            header.push('\t');
            header.push_str(clean(v)?);
            header.push('\n');
            Ok(())
        };
        line("kind", self.kind.name())?;
        line("step", &self.step.to_string())?;
        line("config_hash", &self.config_hash())?;
        for (k, v) in self.config.to_kv() {
            line(&format!("config.{k}"), &v)?;
        }
        for (k, v) in &self.meta {
            line(&format!("meta.{k}"), v)?;
        }
        w.write_all(MAGIC)?;
        put_u32(&mut w, FORMAT_VERSION)?;
        put_u32(&mut w, header.len() as u32)?;
        w.write_all(header.as_bytes())?;
        put_u32(&mut w, self.blocks.len() as u32)?;
        for (name, t) in &self.blocks {
            put_u32(&mut w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            put_u32(&mut w, t.shape().len() as u32)?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut bytes = Vec::with_capacity(t.numel() * 4);
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = get_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let hlen = get_u32(&mut r)? as usize;
        let mut hbytes = vec![0u8; hlen];
        r.read_exact(&mut hbytes)?;
        let header =
            String::from_utf8(hbytes).map_err(|_| Error::Format("header is not UTF-8".into()))?;
        let mut kv = BTreeMap::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("bad header line {line:?}")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let field = |k: &str| {
            kv.get(k)
                .cloned()
                .ok_or_else(|| Error::Format(format!("missing header field {k}")))
        };
        let kind = match field("kind")?.as_str() {
            "snat" => ModelKind::Snat,
            "teacher" => ModelKind::Teacher,
            other => return Err(Error::Format(format!("unknown model kind {other}"))),
        };
        let step = field("step")?
            .parse()
            .map_err(|_| Error::Format("bad step".into()))?;
        let sub = |prefix: &str| -> BTreeMap<String, String> {
            kv.iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.clone())))
                .collect()
        };
        let config = ModelConfig::from_kv(&sub("config."))?;
        if config.hash() != field("config_hash")? {
            return Err(Error::Format("config hash does not match header".into()));
        }
        let meta = sub("meta.");

        let count = get_u32(&mut r)? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = get_u32(&mut r)? as usize;
            let mut nb = vec![0u8; nlen];
            r.read_exact(&mut nb)?;
            let name = String::from_utf8(nb)
                .map_err(|_| Error::Format("block name is not UTF-8".into()))?;
            let ndim = get_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(get_u64(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blocks.push((name, Tensor::new(shape, data)?));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after last block".into()));
        }
        Ok(Checkpoint {
            kind,
            config,
            step,
            meta,
            blocks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
