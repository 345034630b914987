//! Single-file checkpoint: a text header (format version and the resolved
//! run config) followed by a little-endian binary payload.
//!
//! Payload layout:
//! `u64 update_index, u64 steps_done, u64 seed, u32 n_params`, then per
//! parameter `u32 name_len, name, u8 dtype (4 = f32), u32 ndim, u64 dims...,
//! f32 values...`, then the optimizer: `u64 step_count, f64 lr, f64 beta1,
//! f64 beta2, f64 epsilon` and the first and second moments of every
//! parameter in table order as f32 values. All random streams are derived
//! from the seed and the update index, which together form the RNG state.

use std::io::{Read, Write};
use std::path::Path;

use super::{HarnessError, RunConfig};
use crate::diff::{AdamState, Real, Tensor};
use crate::model::Model;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "SONICNAV-CHECKPOINT";
const END_HEADER: &str = "END-HEADER\n";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: Model<f32>,
    pub adam: AdamState<f32>,
    pub update_index: u64,
    pub steps_done: u64,
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_values(b: &mut Vec<u8>, t: &Tensor<f32>) {
    for v in t.data() {
        b.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], HarnessError> {
        if self.pos + n > self.buf.len() {
            return Err(HarnessError::Checkpoint("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, HarnessError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, HarnessError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, HarnessError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, HarnessError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn values_into(&mut self, t: &mut Tensor<f32>) -> Result<(), HarnessError> {
        let n = t.len();
        let bytes = self.take(4 * n)?;
        for (dst, chunk) in t.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        Ok(())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n{}{END_HEADER}", self.config.resolved()).into_bytes();
        put_u64(&mut out, self.update_index);
        put_u64(&mut out, self.steps_done);
        put_u64(&mut out, self.config.seed);
        put_u32(&mut out, self.model.params.len() as u32);
        for (_, p) in self.model.params.iter() {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            out.push(f32::DTYPE);
            put_u32(&mut out, p.value.shape().len() as u32);
            for &d in p.value.shape() {
                put_u64(&mut out, d as u64);
            }
            put_values(&mut out, &p.value);
        }
        let a = &self.adam;
        put_u64(&mut out, a.step_count);
        for v in [a.lr, a.beta1, a.beta2, a.epsilon] {
            put_f64(&mut out, v);
        }
        for t in a.first_moment.iter().chain(&a.second_moment) {
            put_values(&mut out, t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Checkpoint(m);
        let end = find(bytes, END_HEADER.as_bytes())
            .ok_or_else(|| bad("missing header terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not utf-8".into()))?;
        let (first, config_text) = header.split_once('\n').unwrap_or((header, ""));
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("not a checkpoint file".into()))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let config = RunConfig::parse(config_text)?;
        let mut model = Model::<f32>::new(config.effective_net(), config.seed)?;
        let mut r = Reader {
            buf: bytes,
            pos: end + END_HEADER.len(),
        };
        let update_index = r.u64()?;
        let steps_done = r.u64()?;
        let seed = r.u64()?;
        if seed != config.seed {
            return Err(bad("payload seed disagrees with header".into()));
        }
        let n = r.u32()? as usize;
        if n != model.params.len() {
            return Err(bad(format!("{n} parameters, architecture has {}", model.params.len())));
        }
        for i in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("parameter name".into()))?;
            let id = model
                .params
                .id(&name)
                .ok_or_else(|| bad(format!("unknown parameter {name}")))?;
            if id.0 != i {
                return Err(bad(format!("parameter {name} out of order")));
            }
            if r.u8()? != f32::DTYPE {
                return Err(bad(format!("parameter {name}: unsupported dtype")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let p = model.params.get_mut(id);
            if p.value.shape() != shape.as_slice() {
                return Err(bad(format!("parameter {name}: shape {shape:?} vs {:?}", p.value.shape())));
            }
            r.values_into(&mut p.value)?;
        }
        let mut adam = AdamState::new(&model.params, config.ppo.lr);
        adam.step_count = r.u64()?;
        adam.lr = r.f64()?;
        adam.beta1 = r.f64()?;
        adam.beta2 = r.f64()?;
        adam.epsilon = r.f64()?;
        for t in adam.first_moment.iter_mut().chain(adam.second_moment.iter_mut()) {
            r.values_into(t)?;
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after payload".into()));
        }
        Ok(Self {
            config,
            model,
            adam,
            update_index,
            steps_done,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}
