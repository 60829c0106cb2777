//! Binary checkpoint: parameters, AdamW moments, batch-norm running
//! statistics and the training stream position. Layout in
//! `docs/checkpoint-format.md`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::RngState;

use super::trainer::TrainState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ECGCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

const FORMAT: &str = "checkpoint";
const MAX_RANK: usize = 8;

/// One named float array.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub epochs_completed: u64,
    pub rng_seed: u64,
    pub rng_counter: u128,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn capture(state: &TrainState) -> Checkpoint {
        let mut entries = Vec::new();
        for p in state.model.params().iter() {
            entries.push(Entry {
                name: p.name().to_string(),
                shape: p.tensor().shape().to_vec(),
                data: p.value().to_vec(),
            });
        }
        for (i, p) in state.model.params().iter().enumerate() {
            let shape = p.tensor().shape().to_vec();
            entries.push(Entry {
                name: format!("adam.m/{}", p.name()),
                shape: shape.clone(),
                data: state.optimizer.m[i].clone(),
            });
            entries.push(Entry {
                name: format!("adam.v/{}", p.name()),
                shape,
                data: state.optimizer.v[i].clone(),
            });
        }
        for (i, s) in state.model.bn_stats().iter().enumerate() {
            let c = s.mean.len();
            entries.push(Entry {
                name: format!("te.block{i}.bn.running_mean"),
                shape: vec![c],
                data: s.mean.clone(),
            });
            entries.push(Entry {
                name: format!("te.block{i}.bn.running_var"),
                shape: vec![c],
                data: s.var.clone(),
            });
            entries.push(Entry {
                name: format!("te.block{i}.bn.updates"),
                shape: vec![1],
                data: vec![s.updates as f64],
            });
        }
        Checkpoint {
            step: state.optimizer.t,
            epochs_completed: state.epochs_completed,
            rng_seed: state.rng.seed(),
            rng_counter: state.rng.counter(),
            entries,
        }
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::format(FORMAT, format!("missing entry `{name}`")))
    }

    /// Rebuilds a training state for a model of the given layout.
    pub fn restore(&self, model_config: ModelConfig) -> Result<TrainState> {
        let mut state = TrainState::new(model_config, 0)?;
        let names: Vec<(String, Vec<usize>)> = state
            .model
            .params()
            .iter()
            .map(|p| (p.name().to_string(), p.tensor().shape().to_vec()))
            .collect();
        for (i, (name, shape)) in names.iter().enumerate() {
            let check = |e: &Entry| -> Result<()> {
                if &e.shape != shape {
                    return Err(Error::format(
                        FORMAT,
                        format!("`{}` has shape {:?}, model expects {:?}", e.name, e.shape, shape),
                    ));
                }
                Ok(())
            };
            let value = self.entry(name)?;
            check(value)?;
            let m = self.entry(&format!("adam.m/{name}"))?;
            check(m)?;
            let v = self.entry(&format!("adam.v/{name}"))?;
            check(v)?;
            let p = state.model.params_mut().iter_mut().nth(i).expect("index in range");
            p.value_mut().copy_from_slice(&value.data);
            state.optimizer.m[i] = m.data.clone();
            state.optimizer.v[i] = v.data.clone();
        }
        for i in 0..state.model.bn_stats().len() {
            let c = state.model.bn_stats()[i].mean.len();
            let mean = self.entry(&format!("te.block{i}.bn.running_mean"))?;
            let var = self.entry(&format!("te.block{i}.bn.running_var"))?;
            let upd = self.entry(&format!("te.block{i}.bn.updates"))?;
            if mean.shape != [c] || var.shape != [c] || upd.shape != [1] {
                return Err(Error::format(FORMAT, format!("batch-norm {i} shape mismatch")));
            }
            let u = upd.data[0];
            if !(u >= 0.0 && u.fract() == 0.0 && u < 2f64.powi(53)) {
                return Err(Error::format(FORMAT, format!("batch-norm {i} update count {u}")));
            }
            let s = &mut state.model.bn_stats_mut()[i];
            s.mean = mean.data.clone();
            s.var = var.data.clone();
            s.updates = u as u64;
        }
        let expected = state.model.params().len() * 3 + state.model.bn_stats().len() * 3;
        if self.entries.len() != expected {
            let known = |n: &str| {
                let base = n
                    .strip_prefix("adam.m/")
                    .or_else(|| n.strip_prefix("adam.v/"))
                    .unwrap_or(n);
                state.model.params().id(base).is_some()
                    || (0..state.model.bn_stats().len()).any(|i| {
                        ["running_mean", "running_var", "updates"]
                            .iter()
                            .any(|k| n == format!("te.block{i}.bn.{k}"))
                    })
            };
            let extra = self.entries.iter().find(|e| !known(&e.name));
            return Err(Error::format(
                FORMAT,
                match extra {
                    Some(e) => format!("entry `{}` does not belong to this model", e.name),
                    None => format!("{} entries, model layout needs {expected}", self.entries.len()),
                },
            ));
        }
        state.optimizer.t = self.step;
        state.epochs_completed = self.epochs_completed;
        state.rng = RngState::at(self.rng_seed, self.rng_counter);
        Ok(state)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.epochs_completed.to_le_bytes());
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        out.extend_from_slice(&self.rng_counter.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(e.data.len() as u64).to_le_bytes());
            offset += e.data.len() as u64;
        }
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format(FORMAT, "bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(FORMAT, format!("unsupported version {version}")));
        }
        let step = r.u64()?;
        let epochs_completed = r.u64()?;
        let rng_seed = r.u64()?;
        let rng_counter = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let count = r.u32()? as usize;

        let mut toc = Vec::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(FORMAT, "entry name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            if rank > MAX_RANK {
                return Err(Error::format(FORMAT, format!("`{name}` has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let offset = r.u64()?;
            let n = r.u64()?;
            let product = shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .ok_or_else(|| Error::format(FORMAT, format!("`{name}` shape overflows")))?;
            if product != n {
                return Err(Error::format(
                    FORMAT,
                    format!("`{name}` declares {n} elements for shape {shape:?}"),
                ));
            }
            if toc.iter().any(|(prev, ..): &(String, Vec<usize>, u64, u64)| *prev == name) {
                return Err(Error::format(FORMAT, format!("duplicate entry `{name}`")));
            }
            toc.push((name, shape, offset, n));
        }

        let payload = &bytes[r.pos..];
        if payload.len() % 8 != 0 {
            return Err(Error::format(FORMAT, "payload is not a whole number of f64 values"));
        }
        let total = (payload.len() / 8) as u64;
        let mut entries = Vec::with_capacity(toc.len());
        for (name, shape, offset, n) in toc {
            let end = offset
                .checked_add(n)
                .filter(|&e| e <= total)
                .ok_or_else(|| Error::format(FORMAT, format!("`{name}` runs past the payload")))?;
            let data: Vec<f64> = payload[(offset * 8) as usize..(end * 8) as usize]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(FORMAT, format!("`{name}` holds a non-finite value")));
            }
            entries.push(Entry { name, shape, data });
        }
        Ok(Checkpoint {
            step,
            epochs_completed,
            rng_seed,
            rng_counter,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(FORMAT, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
