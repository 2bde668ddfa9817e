//! Binary checkpoint container, little-endian throughout:
//!
//! ```text
//! magic    "NVAECKPT"
//! version  u32
//! V K D    u64 ×3
//! config   u32 length + UTF-8 JSON of the TrainConfig
//! vocab    u64 count, then per word u32 length + UTF-8
//! blocks   u32 count, then per block: u32 name length + name,
//!          u64 rows, u64 cols, rows·cols f64 values
//!          (every ModelParams block and buffer in `ModelParams::tensors` order)
//! schedule u64 global_step, u64 steps_per_epoch, u64 epochs_completed,
//!          f64 learning_rate, f64 temperature
//! adam     f64 beta1, f64 beta2, f64 eps, u32 count, then per block:
//!          u32 name length + name, u64 t, u64 n, n f64 m, n f64 v
//! checksum u64 FNV-1a of every preceding byte
//! ```

use std::path::Path;

use super::{AdamState, ScheduleState, TrainConfig};
use crate::error::{Error, Result};
use crate::formats::write_atomic;
use crate::model::ModelParams;
use crate::numkernel::DenseMatrix;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NVAECKPT";

/// Everything needed to evaluate or resume a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    pub params: ModelParams<f64>,
    pub schedule: ScheduleState,
    pub adam: AdamState<f64>,
}

impl Checkpoint {
    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.params.vocab_size(),
            self.params.topics(),
            self.params.embedding_dim(),
        )
    }

    /// Fails unless the stored model has the given `(V, K, D)`; `None`
    /// entries are not checked.
    pub fn expect_dims(&self, v: Option<usize>, k: Option<usize>, d: Option<usize>) -> Result<()> {
        let (sv, sk, sd) = self.dims();
        for (name, want, have) in [("V", v, sv), ("K", k, sk), ("D", d, sd)] {
            if let Some(w) = want {
                if w != have {
                    return Err(Error::Shape(format!(
                        "checkpoint has {name}={have}, expected {name}={w}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, x: u32) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        for &x in xs {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let p = &ckpt.params;
    if ckpt.vocab.len() != p.vocab_size() {
        return Err(Error::Shape(format!(
            "{} vocabulary words for a model over {}",
            ckpt.vocab.len(),
            p.vocab_size()
        )));
    }
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let (v, k, d) = ckpt.dims();
    w.u64(v as u64);
    w.u64(k as u64);
    w.u64(d as u64);
    w.str(&serde_json::to_string(&ckpt.config).map_err(|e| Error::Checkpoint(e.to_string()))?);
    w.u64(ckpt.vocab.len() as u64);
    for word in &ckpt.vocab {
        w.str(word);
    }
    let tensors = p.tensors();
    w.u32(tensors.len() as u32);
    for t in &tensors {
        w.str(&t.name);
        w.u64(t.shape.0 as u64);
        w.u64(t.shape.1 as u64);
        w.f64s(t.data);
    }
    let s = &ckpt.schedule;
    w.u64(s.global_step);
    w.u64(s.steps_per_epoch);
    w.u64(s.epochs_completed);
    w.f64(s.learning_rate);
    w.f64(s.temperature);
    let a = &ckpt.adam;
    w.f64(a.beta1);
    w.f64(a.beta2);
    w.f64(a.eps);
    w.u32(a.names.len() as u32);
    for i in 0..a.names.len() {
        w.str(&a.names[i]);
        w.u64(a.t[i]);
        w.u64(a.m[i].len() as u64);
        w.f64s(&a.m[i]);
        w.f64s(&a.v[i]);
    }
    let sum = fnv1a(&w.0);
    w.u64(sum);
    Ok(w.0)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 4 + 8 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(Error::Checkpoint("checksum mismatch (truncated or corrupt)".into()));
    }
    let mut r = Reader { bytes: body, pos: 12 };
    let (v, k, d) = (r.len()?, r.len()?, r.len()?);
    let config: TrainConfig = serde_json::from_str(&r.str()?)
        .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
    if config.topics != k {
        return Err(Error::Checkpoint("config disagrees with stored K".into()));
    }
    let nv = r.len()?;
    if nv != v {
        return Err(Error::Checkpoint(format!("{nv} vocabulary words for V={v}")));
    }
    let vocab = (0..nv).map(|_| r.str()).collect::<Result<Vec<_>>>()?;

    let mut params = ModelParams::init(config.model_config(), DenseMatrix::zeros(v, d), 0)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let layout: Vec<(String, (usize, usize))> =
        params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    let count = r.u32()? as usize;
    if count != layout.len() {
        return Err(Error::Checkpoint(format!(
            "{count} parameter blocks, architecture needs {}",
            layout.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for (name, shape) in &layout {
        let got = r.str()?;
        let rows = r.len()?;
        let cols = r.len()?;
        if &got != name || (rows, cols) != *shape {
            return Err(Error::Checkpoint(format!(
                "block {got} {rows}x{cols}, expected {name} {}x{}",
                shape.0, shape.1
            )));
        }
        values.push(r.f64s(rows * cols)?);
    }
    for (dst, src) in params.tensors_mut().into_iter().zip(values) {
        dst.copy_from_slice(&src);
    }
    let schedule = ScheduleState {
        global_step: r.u64()?,
        steps_per_epoch: r.u64()?,
        epochs_completed: r.u64()?,
        learning_rate: r.f64()?,
        temperature: r.f64()?,
    };
    let mut adam = AdamState::new(&params, r.f64()?, r.f64()?, r.f64()?);
    let n_adam = r.u32()? as usize;
    if n_adam != adam.names.len() {
        return Err(Error::Checkpoint("optimizer state does not match the model".into()));
    }
    for i in 0..n_adam {
        let name = r.str()?;
        if name != adam.names[i] {
            return Err(Error::Checkpoint(format!("optimizer block {name}, expected {}", adam.names[i])));
        }
        adam.t[i] = r.u64()?;
        let n = r.len()?;
        if n != adam.m[i].len() {
            return Err(Error::Checkpoint(format!("optimizer block {name} has {n} entries")));
        }
        adam.m[i] = r.f64s(n)?;
        adam.v[i] = r.f64s(n)?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint {
        config,
        vocab,
        params,
        schedule,
        adam,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
