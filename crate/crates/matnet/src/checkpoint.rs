//! Binary checkpoint: everything needed to resume training or to evaluate.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "MATNETCK" | version u32 | sha256(payload) [32]
//! payload:
//!   record count u32
//!   per record: name len u32, name bytes, dtype u8 (0 = f64), rank u32,
//!               dims u64 x rank, values
//!   text len u64, text (config, Adam hyperparameters, epoch, RNG state)
//! ```
//! Parameter records come first in store order, then Adam moments as
//! `adam.m/<name>` and `adam.v/<name>`. Training randomness is derived from
//! (seed, epoch, batch, instance), so the RNG state is the seed plus the
//! epoch counter.

use std::fmt::Write as _;
use std::path::Path;

use matnet_core::adam::AdamState;
use matnet_core::params::ParamStore;
use matnet_core::Tensor;
use sha2::{Digest, Sha256};

use crate::config::{KeyValues, TrainConfig};
use crate::error::{AppError, Result};
use crate::trainer::{Model, Trainer};

pub const MAGIC: &[u8; 8] = b"MATNETCK";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;
const HEADER: usize = 8 + 4 + 32;
const STATE_MARK: &str = "[state]\n";

fn bad(msg: impl Into<String>) -> AppError {
    AppError::Checkpoint(msg.into())
}

fn put_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(DTYPE_F64);
    out.extend((t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

pub fn encode(t: &Trainer) -> Vec<u8> {
    let mut payload = Vec::new();
    let records = 3 * t.store.len();
    payload.extend((records as u32).to_le_bytes());
    for (name, v) in t.store.iter() {
        put_record(&mut payload, name, v);
    }
    for (tag, moments) in [("m", &t.adam.m), ("v", &t.adam.v)] {
        for ((name, _), m) in t.store.iter().zip(moments) {
            put_record(&mut payload, &format!("adam.{tag}/{name}"), m);
        }
    }
    let mut text = t.config.to_text();
    text.push_str(STATE_MARK);
    let a = &t.adam;
    writeln!(text, "epoch = {}", t.epoch).unwrap();
    writeln!(text, "adam_step = {}", a.step).unwrap();
    writeln!(text, "adam_lr = {:?}", a.lr).unwrap();
    writeln!(text, "adam_beta1 = {:?}", a.beta1).unwrap();
    writeln!(text, "adam_beta2 = {:?}", a.beta2).unwrap();
    writeln!(text, "adam_eps = {:?}", a.eps).unwrap();
    writeln!(text, "rng = seed:{} epoch:{}", t.config.seed, t.epoch).unwrap();
    payload.extend((text.len() as u64).to_le_bytes());
    payload.extend(text.as_bytes());

    let mut out = Vec::with_capacity(HEADER + payload.len());
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    out.extend(Sha256::digest(&payload));
    out.extend(payload);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("payload ends early"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn record(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?).map_err(|_| bad("record name is not UTF-8"))?.to_string();
        if self.take(1)?[0] != DTYPE_F64 {
            return Err(bad(format!("record `{name}` has an unknown dtype")));
        }
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("record too large"))?;
        let bytes = self.take(count.checked_mul(8).ok_or_else(|| bad("record too large"))?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("record `{name}`: {e}")))?;
        Ok((name, t))
    }
}

fn state_value<'a>(kv: &'a KeyValues, key: &str) -> Result<&'a str> {
    kv.get(&format!("state.{key}")).ok_or_else(|| bad(format!("missing state field `{key}`")))
}

fn parse_state<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<T> {
    state_value(kv, key)?.parse().map_err(|_| bad(format!("bad state field `{key}`")))
}

pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        if bytes.len() >= 8 && &bytes[..8] == MAGIC {
            return Err(bad("checksum mismatch (file truncated)"));
        }
        return Err(bad("bad magic bytes, not a checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("format version {version}, this build reads version {VERSION}")));
    }
    let payload = &bytes[HEADER..];
    if Sha256::digest(payload).as_slice() != &bytes[12..HEADER] {
        return Err(bad("checksum mismatch (file corrupt or truncated)"));
    }

    let mut r = Reader { buf: payload, pos: 0 };
    let count = r.u32()? as usize;
    let records = (0..count).map(|_| r.record()).collect::<Result<Vec<_>>>()?;
    let text_len = r.u64()? as usize;
    let text = std::str::from_utf8(r.take(text_len)?).map_err(|_| bad("text blob is not UTF-8"))?;
    if r.pos != payload.len() {
        return Err(bad("trailing bytes after text blob"));
    }
    let (config_text, state_text) = text.split_once(STATE_MARK).ok_or_else(|| bad("text blob has no state section"))?;
    let config = TrainConfig::from_text(config_text, "checkpoint")?;
    let kv = KeyValues::parse(&format!("{STATE_MARK}{state_text}"), "checkpoint")?;

    let mut store = ParamStore::new();
    let model = Model::build(&config, &mut store)?;
    let n = store.len();
    if records.len() != 3 * n {
        return Err(bad(format!("{} records, config implies {}", records.len(), 3 * n)));
    }
    let mut groups = records.chunks(n);
    let mut take_group = |prefix: &str| -> Result<Vec<Tensor>> {
        let g = groups.next().unwrap();
        g.iter()
            .zip(store.iter())
            .map(|((name, t), (expect, cur))| {
                let want = format!("{prefix}{expect}");
                if *name != want {
                    return Err(bad(format!("record `{name}` where `{want}` was expected")));
                }
                if t.shape() != cur.shape() {
                    return Err(bad(format!("record `{name}` has shape {:?}, model needs {:?}", t.shape(), cur.shape())));
                }
                Ok(t.clone())
            })
            .collect()
    };
    let params = take_group("")?;
    let m = take_group("adam.m/")?;
    let v = take_group("adam.v/")?;
    store.load_values(params)?;

    let epoch: usize = parse_state(&kv, "epoch")?;
    let rng = state_value(&kv, "rng")?;
    if rng != format!("seed:{} epoch:{epoch}", config.seed) {
        return Err(bad(format!("RNG state `{rng}` does not match seed and epoch")));
    }
    let adam = AdamState {
        lr: parse_state(&kv, "adam_lr")?,
        beta1: parse_state(&kv, "adam_beta1")?,
        beta2: parse_state(&kv, "adam_beta2")?,
        eps: parse_state(&kv, "adam_eps")?,
        step: parse_state(&kv, "adam_step")?,
        m,
        v,
    };
    Ok(Trainer {
        config,
        store,
        model,
        adam,
        epoch,
    })
}

pub fn save_checkpoint(path: &Path, t: &Trainer) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, encode(t)).map_err(|e| AppError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        AppError::Checkpoint(m) => AppError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Problem;

    fn tiny(problem: Problem) -> Trainer {
        let mut c = match problem {
            Problem::Atsp => TrainConfig::atsp_toy(),
            Problem::Ffsp => TrainConfig::ffsp_toy(),
        };
        c.size = 5;
        c.encoder.layers = 1;
        c.encoder.d_model = 16;
        c.encoder.d_ff = 16;
        if problem == Problem::Atsp {
            c.encoder.init_b = matnet_core::encoder::InitScheme::OneHotPool(5);
        }
        c.batch_size = 2;
        c.instances_per_epoch = 2;
        c.epochs = 1;
        c.trajectories = 4;
        let mut t = Trainer::new(c).unwrap();
        t.run(|_| {}).unwrap();
        t
    }

    #[test]
    fn round_trip_is_bitwise() {
        for p in [Problem::Atsp, Problem::Ffsp] {
            let t = tiny(p);
            let bytes = encode(&t);
            let back = decode(&bytes).unwrap();
            assert_eq!(back, t);
            assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let mut t = tiny(Problem::Atsp);
        let mut resumed = decode(&encode(&t)).unwrap();
        t.config.epochs = 2;
        resumed.config.epochs = 2;
        t.run(|_| {}).unwrap();
        resumed.run(|_| {}).unwrap();
        assert_eq!(t, resumed);
    }

    #[test]
    fn damage_is_reported() {
        let bytes = encode(&tiny(Problem::Ffsp));
        for cut in [bytes.len() - 1, bytes.len() / 2, HEADER, 20, 3] {
            let e = decode(&bytes[..cut]).unwrap_err().to_string();
            assert!(e.contains("checksum") || e.contains("magic"), "{e}");
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 10;
        flipped[last] ^= 1;
        assert!(decode(&flipped).unwrap_err().to_string().contains("checksum"));
        let mut v2 = bytes;
        v2[8] = 2;
        assert!(decode(&v2).unwrap_err().to_string().contains("version 2"));
    }
}
