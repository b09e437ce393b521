//! Pointer decoder: a query token attends over candidate embeddings with a
//! masked multi-head attention, then a single clipped head turns the result
//! into selection probabilities.
//!
//! All functions work on a batch of `B` queries against one shared
//! [`KvCache`]; masks are `[B, C]` row-major with `true` meaning excluded.

use alloc::format;
use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    pub d_model: usize,
    pub heads: usize,
    pub query_width: usize,
    pub clip: f64,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    /// Single-head key projection for the final logits.
    pub wl: ParamId,
    /// Learned extra candidate appended after the real ones.
    pub skip: Option<ParamId>,
}

impl DecoderParams {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        query_width: usize,
        with_skip: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Config {
                field: "heads",
                reason: format!("{heads} heads do not divide d_model {d_model}"),
            });
        }
        let n = |s: &str| format!("{prefix}.{s}");
        let d = d_model;
        Ok(DecoderParams {
            d_model,
            heads,
            query_width,
            clip: 10.0,
            wq: store.add_uniform(&n("wq"), &[query_width, d], query_width, rng),
            wk: store.add_uniform(&n("wk"), &[d, d], d, rng),
            wv: store.add_uniform(&n("wv"), &[d, d], d, rng),
            wo: store.add_uniform(&n("wo"), &[d, d], d, rng),
            bo: store.add_zeros(&n("bo"), &[d]),
            wl: store.add_uniform(&n("wl"), &[d, d], d, rng),
            skip: with_skip.then(|| store.add_uniform(&n("skip"), &[1, d], d, rng)),
        })
    }
}

/// Projected candidate keys and values, built once per encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KvCache {
    /// `[heads, C, dk]`
    pub keys: Var,
    /// `[heads, C, dk]`
    pub values: Var,
    /// `[C, d]`
    pub logit_keys: Var,
    pub candidates: usize,
}

/// Builds the cache for `candidates[C, d]`. A decoder with a skip row gets
/// it appended as candidate index `C`.
pub fn precompute_kv(tape: &mut Tape, store: &ParamStore, p: &DecoderParams, candidates: Var) -> Result<KvCache> {
    let cands = match p.skip {
        Some(s) => {
            let row = tape.param(store, s);
            tape.concat_rows(candidates, row)?
        }
        None => candidates,
    };
    let c = tape.shape(cands)[0];
    let (wk, wv, wl) = (tape.param(store, p.wk), tape.param(store, p.wv), tape.param(store, p.wl));
    let k = tape.matmul(cands, wk)?;
    let keys = tape.split_heads(k, p.heads)?;
    let v = tape.matmul(cands, wv)?;
    let values = tape.split_heads(v, p.heads)?;
    let logit_keys = tape.matmul(cands, wl)?;
    Ok(KvCache {
        keys,
        values,
        logit_keys,
        candidates: c,
    })
}

/// Projects raw query inputs `[B, query_width]` to `[B, d]`.
pub fn project_query(tape: &mut Tape, store: &ParamStore, p: &DecoderParams, raw: Var) -> Result<Var> {
    let wq = tape.param(store, p.wq);
    Ok(tape.matmul(raw, wq)?)
}

/// ATSP query `[h_first ; h_current] W_q` for each `(first, current)` pair.
pub fn make_query_atsp(
    tape: &mut Tape,
    store: &ParamStore,
    p: &DecoderParams,
    h_a: Var,
    first: &[usize],
    current: &[usize],
) -> Result<Var> {
    let f = tape.gather_rows(h_a, first)?;
    let c = tape.gather_rows(h_a, current)?;
    let raw = tape.concat_last(f, c)?;
    project_query(tape, store, p, raw)
}

/// FFSP query: the embedding of each deciding machine, projected.
pub fn make_query_ffsp(tape: &mut Tape, store: &ParamStore, p: &DecoderParams, h_machines: Var, machines: &[usize]) -> Result<Var> {
    let raw = tape.gather_rows(h_machines, machines)?;
    project_query(tape, store, p, raw)
}

/// Selection probabilities `[B, C]` for projected queries `[B, d]`.
pub fn decode_step(
    tape: &mut Tape,
    store: &ParamStore,
    p: &DecoderParams,
    cache: &KvCache,
    query: Var,
    mask: &[bool],
) -> Result<Var> {
    let b = tape.shape(query)[0];
    if mask.len() != b * cache.candidates {
        return Err(Error::Invalid(format!(
            "mask has {} entries for {b} queries x {} candidates",
            mask.len(),
            cache.candidates
        )));
    }
    let dk = p.d_model / p.heads;
    let q = tape.split_heads(query, p.heads)?;
    let s = tape.matmul_nt(q, cache.keys)?;
    let s = tape.scale(s, 1.0 / libm::sqrt(dk as f64))?;
    let attn = tape.masked_softmax(s, Some(mask))?;
    let mh = tape.matmul(attn, cache.values)?;
    let mh = tape.merge_heads(mh)?;
    let (wo, bo) = (tape.param(store, p.wo), tape.param(store, p.bo));
    let mh = tape.matmul(mh, wo)?;
    let mh = tape.add_bias(mh, bo)?;
    let logits = tape.matmul_nt(mh, cache.logit_keys)?;
    let logits = tape.scale(logits, 1.0 / libm::sqrt(p.d_model as f64))?;
    let logits = tape.soft_clip(logits, p.clip)?;
    Ok(tape.masked_softmax(logits, Some(mask))?)
}

/// Inverse-CDF draw from a probability row. Zero-probability entries are
/// never returned.
pub fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Index of the largest probability, lowest index on ties.
pub fn greedy_index(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

impl DecodeMode {
    pub fn pick<R: Rng>(self, probs: &[f64], rng: &mut R) -> usize {
        match self {
            DecodeMode::Greedy => greedy_index(probs),
            DecodeMode::Sample => sample_index(probs, rng),
        }
    }
}

/// Picks one action per row of `probs[B, C]`.
pub fn pick_rows<R: Rng>(probs: &[f64], candidates: usize, mode: DecodeMode, rng: &mut R) -> Vec<usize> {
    probs.chunks(candidates).map(|row| mode.pick(row, rng)).collect()
}
