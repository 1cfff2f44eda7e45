//! Binary checkpoints: magic `IDT1`, a format version, the canonical
//! config text, the RNG position, both optimizer step counters, and a named
//! tensor table (little-endian f32) covering both parameter sets and both
//! optimizers' moment buffers. Loading a checkpoint reproduces training
//! bitwise.

use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::training::TrainState;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"IDT1";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint config: {0}")]
    Config(#[from] crate::config::ConfigError),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    fn floats(&mut self, v: &[f32]) {
        for &x in v {
            self.buf.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn tensor(&mut self, name: &str, shape: &[usize], data: &[f32]) {
        self.bytes(name.as_bytes());
        self.u32(shape.len() as u32);
        for &d in shape {
            self.u32(d as u32);
        }
        self.floats(data);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Corrupt("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8], CheckpointError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f32>), CheckpointError> {
        let name = String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = self.take(numel * 4)?;
        let data: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((name, shape, data))
    }
}

/// Serialize the run config and full training state.
pub fn save(path: &Path, config: &RunConfig, state: &TrainState) -> Result<(), CheckpointError> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.bytes(config.render().as_bytes());
    w.u64(state.step);
    w.u64(config.train.seed);
    w.u64(state.rng.get_stream());
    w.u128(state.rng.get_word_pos());
    w.u64(state.adam_insertion.step_count());
    w.u64(state.adam_deletion.step_count());

    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    let ins_names = state.insertion.names();
    for (name, t) in ins_names.iter().zip(state.insertion.tensors()) {
        tensors.push((format!("ins.{name}"), t.shape().to_vec(), t.data().to_vec()));
    }
    let del_names = state.deletion.names();
    for (name, t) in del_names.iter().zip(state.deletion.tensors()) {
        tensors.push((format!("del.{name}"), t.shape().to_vec(), t.data().to_vec()));
    }
    let (m, v) = state.adam_insertion.buffers();
    for (i, name) in ins_names.iter().enumerate() {
        if i < m.len() {
            tensors.push((format!("adam_ins.m.{name}"), vec![m[i].len()], m[i].clone()));
            tensors.push((format!("adam_ins.v.{name}"), vec![v[i].len()], v[i].clone()));
        }
    }
    let (m, v) = state.adam_deletion.buffers();
    for (i, name) in del_names.iter().enumerate() {
        if i < m.len() {
            tensors.push((format!("adam_del.m.{name}"), vec![m[i].len()], m[i].clone()));
            tensors.push((format!("adam_del.v.{name}"), vec![v[i].len()], v[i].clone()));
        }
    }

    w.u32(tensors.len() as u32);
    for (name, shape, data) in &tensors {
        w.tensor(name, shape, data);
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(&w.buf)?;
    Ok(())
}

/// Load a checkpoint back into a run config and training state.
pub fn load(path: &Path) -> Result<(RunConfig, TrainState), CheckpointError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };

    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config_text = String::from_utf8(r.bytes()?.to_vec())
        .map_err(|_| CheckpointError::Corrupt("config text is not UTF-8".into()))?;
    let config = RunConfig::parse(&config_text)?;
    let step = r.u64()?;
    let rng_seed = r.u64()?;
    let rng_stream = r.u64()?;
    let rng_word_pos = r.u128()?;
    let adam_ins_step = r.u64()?;
    let adam_del_step = r.u64()?;

    let n_tensors = r.u32()? as usize;
    let mut table: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for _ in 0..n_tensors {
        let (name, shape, data) = r.tensor()?;
        if table.insert(name.clone(), (shape, data)).is_some() {
            return Err(CheckpointError::Corrupt(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }

    let mut state = TrainState::init(config.model, &config.train);
    state.step = step;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(rng_stream);
    rng.set_word_pos(rng_word_pos);
    state.rng = rng;

    let ins_names = state.insertion.names();
    let del_names = state.deletion.names();
    restore_params(&table, "ins", &mut state.insertion.tensors_mut(), &ins_names)?;
    restore_params(&table, "del", &mut state.deletion.tensors_mut(), &del_names)?;

    if let Some((m, v)) = restore_moments(&table, "adam_ins", &ins_names)? {
        state.adam_insertion.restore(m, v, adam_ins_step);
    }
    if let Some((m, v)) = restore_moments(&table, "adam_del", &del_names)? {
        state.adam_deletion.restore(m, v, adam_del_step);
    }
    Ok((config, state))
}

fn restore_params(
    table: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    prefix: &str,
    tensors: &mut [&mut Tensor],
    names: &[String],
) -> Result<(), CheckpointError> {
    for (name, tensor) in names.iter().zip(tensors.iter_mut()) {
        let key = format!("{prefix}.{name}");
        let (shape, data) = table
            .get(&key)
            .ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor {key}")))?;
        if shape != tensor.shape() {
            return Err(CheckpointError::Corrupt(format!(
                "tensor {key}: shape {:?} does not match model shape {:?}",
                shape,
                tensor.shape()
            )));
        }
        tensor.data_mut().copy_from_slice(data);
    }
    Ok(())
}

type Moments = (Vec<Vec<f32>>, Vec<Vec<f32>>);

fn restore_moments(
    table: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    prefix: &str,
    names: &[String],
) -> Result<Option<Moments>, CheckpointError> {
    let first = format!("{prefix}.m.{}", names[0]);
    if !table.contains_key(&first) {
        // checkpoint taken before the first optimizer step
        return Ok(None);
    }
    let mut ms = Vec::with_capacity(names.len());
    let mut vs = Vec::with_capacity(names.len());
    for name in names {
        for (kind, out) in [("m", &mut ms), ("v", &mut vs)] {
            let key = format!("{prefix}.{kind}.{name}");
            let (_, data) = table
                .get(&key)
                .ok_or_else(|| CheckpointError::Corrupt(format!("missing tensor {key}")))?;
            out.push(data.clone());
        }
    }
    Ok(Some((ms, vs)))
}
