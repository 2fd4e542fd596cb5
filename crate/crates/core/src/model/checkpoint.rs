use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uniisp_tensor::{ParamStore, Tensor};

use super::config::ModelConfig;
use super::UniIspModel;
use crate::error::{Error, IoContext, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UISP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    cameras: Vec<String>,
    seed: u64,
    /// Names of parameters stored as frozen.
    frozen: Vec<String>,
    param_count: usize,
    state: Option<serde_json::Value>,
}

/// A model plus optional trainer state (opaque JSON) and auxiliary tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: UniIspModel,
    pub state: Option<serde_json::Value>,
    pub extra: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn model_only(model: UniIspModel) -> Self {
        Checkpoint { model, state: None, extra: Vec::new() }
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(buf: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(buf, d as u32);
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let m = &ck.model;
    let header = Header {
        config: m.config.clone(),
        cameras: m.cameras().to_vec(),
        seed: m.seed(),
        frozen: m.params.iter().filter(|(_, p)| !p.trainable).map(|(n, _)| n.to_string()).collect(),
        param_count: m.params.len(),
        state: ck.state.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u32(&mut buf, json.len() as u32);
    buf.extend_from_slice(&json);
    put_u32(&mut buf, (m.params.len() + ck.extra.len()) as u32);
    for (name, p) in m.params.iter() {
        put_tensor(&mut buf, name, &p.value);
    }
    for (name, t) in &ck.extra {
        put_tensor(&mut buf, name, t);
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt { path: self.path.to_path_buf(), reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.corrupt("tensor name is not UTF-8"))?;
        let rank = self.u32()? as usize;
        if rank > 4 {
            return Err(self.corrupt(format!("tensor `{name}` has rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| self.corrupt("tensor size overflow"))?;
        let raw = self.take(len.checked_mul(4).ok_or_else(|| self.corrupt("tensor size overflow"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| self.corrupt(e.to_string()))?;
        Ok((name, t))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| r.corrupt(format!("header: {e}")))?;
    let count = r.u32()? as usize;
    if count < header.param_count {
        return Err(r.corrupt("fewer tensors than parameters"));
    }
    let mut params = ParamStore::new();
    for _ in 0..header.param_count {
        let (name, t) = r.tensor()?;
        let trainable = !header.frozen.contains(&name);
        params.insert(&name, t, trainable).map_err(|e| r.corrupt(e.to_string()))?;
    }
    let mut extra = Vec::new();
    for _ in header.param_count..count {
        extra.push(r.tensor()?);
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    let model = UniIspModel::from_parts(header.config, params, header.cameras, header.seed)?;
    Ok(Checkpoint { model, state: header.state, extra })
}

/// Writes atomically: a temporary sibling file is renamed over `path`.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).at(&tmp)?;
        f.write_all(&bytes).at(&tmp)?;
        f.sync_all().at(&tmp)?;
    }
    fs::rename(&tmp, path).at(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).at(path)?;
    decode_checkpoint(&bytes, path)
}
