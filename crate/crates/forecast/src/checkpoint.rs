//! Versioned binary checkpoints.
//!
//! Little-endian layout: magic `"BSATCKPT"`, u32 version, model config,
//! parameter tensors (name, group, decay flag, shape, values), batch-norm
//! running statistics, optimizer moments, RNG state, train-fold
//! normalization statistics and progress counters. Decoding then encoding
//! reproduces the input bytes exactly.

use std::path::Path;

use bsat::posenc::PosEncMode;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::model::{BnRunning, Model, ModelConfig, Param, ParamGroup};
use crate::optim::{AdamW, LrSchedule};
use crate::tape::Mat;
use crate::train::TrainState;

pub const MAGIC: &[u8; 8] = b"BSATCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    /// Train-fold mean and standard deviation of the raw series.
    pub norm_mean: f64,
    pub norm_std: f64,
}

const GROUPS: [ParamGroup; 7] = [
    ParamGroup::Embedding,
    ParamGroup::Lpe,
    ParamGroup::Attention,
    ParamGroup::Norm,
    ParamGroup::FeedForward,
    ParamGroup::Phi,
    ParamGroup::Head,
];

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.arr::<1>()?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.arr()?) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.bytes(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8 name".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn write_config(w: &mut Writer, c: &ModelConfig) {
    w.u32(c.layers);
    w.u32(c.d_model);
    w.u32(c.heads);
    w.u32(c.ff_factor);
    w.f64(c.dropout);
    w.f64(c.fc_dropout);
    w.f64(c.attn_dropout);
    w.f64(c.learning_rate);
    w.f64(c.weight_decay);
    w.u64(c.seed);
    w.u32(c.horizon);
    w.str(c.mode.as_str());
    w.u32(c.tokens);
    w.u32(c.value_dim);
    w.u32(c.lookback);
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    Ok(ModelConfig {
        layers: r.u32()?,
        d_model: r.u32()?,
        heads: r.u32()?,
        ff_factor: r.u32()?,
        dropout: r.f64()?,
        fc_dropout: r.f64()?,
        attn_dropout: r.f64()?,
        learning_rate: r.f64()?,
        weight_decay: r.f64()?,
        seed: r.u64()?,
        horizon: r.u32()?,
        mode: r.str()?.parse::<PosEncMode>()?,
        tokens: r.u32()?,
        value_dim: r.u32()?,
        lookback: r.u32()?,
    })
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let s = &ckpt.state;
    let m = &s.model;
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    write_config(&mut w, &m.config);
    w.u32(m.params.len());
    for p in &m.params {
        w.str(&p.name);
        w.u8(GROUPS.iter().position(|g| *g == p.group).unwrap_or(0) as u8);
        w.u8(p.decay as u8);
        w.u32(p.value.rows);
        w.u32(p.value.cols);
        w.f64s(&p.value.data);
    }
    w.u32(m.running.len());
    for r in &m.running {
        w.f64s(&r.mean);
        w.f64s(&r.var);
    }
    let o = &s.optimizer;
    w.f64(o.beta1);
    w.f64(o.beta2);
    w.f64(o.eps);
    w.f64(o.weight_decay);
    w.u64(o.step);
    for (mm, vv) in o.m.iter().zip(&o.v) {
        w.f64s(mm);
        w.f64s(vv);
    }
    let sc = &s.schedule;
    w.f64(sc.peak);
    w.u32(sc.warmup_epochs);
    w.u32(sc.decay_epochs);
    w.f64(sc.start_fraction);
    w.f64(sc.floor_fraction);
    w.0.extend_from_slice(&s.rng.get_seed());
    w.u64(s.rng.get_stream());
    w.0.extend_from_slice(&s.rng.get_word_pos().to_le_bytes());
    w.u64(s.epoch as u64);
    w.f64(s.best_val_rmse);
    w.u64(s.patience_counter as u64);
    w.f64(ckpt.norm_mean);
    w.f64(ckpt.norm_std);
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.bytes(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = read_config(&mut r)?;
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let group = *GROUPS
            .get(r.u8()? as usize)
            .ok_or_else(|| Error::Checkpoint(format!("unknown group for {name}")))?;
        let decay = r.u8()? != 0;
        let (rows, cols) = (r.u32()?, r.u32()?);
        let data = r.f64s(rows * cols)?;
        params.push(Param {
            name,
            group,
            value: Mat::from_vec(rows, cols, data),
            decay,
        });
    }
    let nrun = r.u32()?;
    let mut running = Vec::with_capacity(nrun);
    for _ in 0..nrun {
        running.push(BnRunning {
            mean: r.f64s(config.d_model)?,
            var: r.f64s(config.d_model)?,
        });
    }
    let model = Model::from_parts(config, params, running)?;
    let (beta1, beta2, eps, weight_decay) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let step = r.u64()?;
    let mut m = Vec::with_capacity(model.params.len());
    let mut v = Vec::with_capacity(model.params.len());
    for p in &model.params {
        m.push(r.f64s(p.value.len())?);
        v.push(r.f64s(p.value.len())?);
    }
    let optimizer = AdamW {
        beta1,
        beta2,
        eps,
        weight_decay,
        step,
        m,
        v,
    };
    let schedule = LrSchedule {
        peak: r.f64()?,
        warmup_epochs: r.u32()?,
        decay_epochs: r.u32()?,
        start_fraction: r.f64()?,
        floor_fraction: r.f64()?,
    };
    let seed: [u8; 32] = r.arr()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.arr()?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let epoch = r.u64()? as usize;
    let best_val_rmse = r.f64()?;
    let patience_counter = r.u64()? as usize;
    let norm_mean = r.f64()?;
    let norm_std = r.f64()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        state: TrainState {
            model,
            optimizer,
            rng,
            schedule,
            epoch,
            best_val_rmse,
            patience_counter,
        },
        norm_mean,
        norm_std,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    bsat::cache::write_atomic(path, &encode(ckpt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TokenWindow;
    use rand::Rng;

    #[test]
    fn roundtrip_is_bit_exact_and_resumable() {
        let config = ModelConfig {
            layers: 2,
            d_model: 8,
            heads: 2,
            tokens: 5,
            horizon: 3,
            lookback: 40,
            mode: PosEncMode::LRopeLpe,
            ..ModelConfig::default()
        };
        let mut state = TrainState::new(config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = TokenWindow {
            values: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
            centers: vec![0.0, 9.5, 19.0, 28.5, 39.0],
            target: vec![0.1, 0.2, 0.3],
        };
        state.step(&[&w, &w], 1e-3, 1.0).unwrap();
        let ckpt = Checkpoint {
            state,
            norm_mean: 12.5,
            norm_std: 3.25,
        };
        let bytes = encode(&ckpt);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode(&back), bytes);

        let mut a = ckpt.state.clone();
        let mut b = back.state;
        let la = a.step(&[&w, &w], 1e-3, 1.0).unwrap();
        let lb = b.step(&[&w, &w], 1e-3, 1.0).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(a.model, b.model);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &ckpt).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(load(&path).unwrap(), ckpt);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
