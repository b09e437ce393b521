//! Dual graph-attentional encoder with mixed-score attention.
//!
//! A layer holds two structurally identical sub-blocks: `F_A` updates the row
//! items (queries from A, keys/values from B, scores mixed with `D`) and
//! `F_B` updates the column items (queries from B, keys/values from A, mixed
//! with `D^T`). Each sub-block is
//! `norm(x + MHA(x, y)) -> norm(h + FF(h))` with instance normalization.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMode {
    /// Both sub-blocks read the pre-update embeddings.
    Parallel,
    /// `F_A` runs first; `F_B` reads its output.
    SeqAFirst,
    /// `F_B` runs first; `F_A` reads its output.
    SeqBFirst,
}

/// How the initial node vectors of one side are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    Zeros,
    /// One-hot vectors drawn without replacement from a pool of this size.
    OneHotPool(usize),
    /// Fresh i.i.d. uniform [0, 1) vectors per instance.
    RandomVectors,
    /// Rows of a trainable table of this many vectors, drawn without
    /// replacement.
    LearnedPool(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Number of relationship matrices stacked in the input.
    pub features: usize,
    pub mixer_hidden: usize,
    /// Soft-clip bound applied to mixed scores; `None` disables clipping.
    pub clip: Option<f64>,
    pub update_mode: UpdateMode,
    pub share_update_fn: bool,
    pub init_a: InitScheme,
    pub init_b: InitScheme,
}

impl EncoderConfig {
    /// Large configuration used for the ATSP experiments in the literature:
    /// 5 layers, 256 wide, 16 heads.
    pub fn full_atsp(n: usize) -> Self {
        EncoderConfig {
            layers: 5,
            d_model: 256,
            heads: 16,
            d_ff: 516,
            features: 1,
            mixer_hidden: 16,
            clip: Some(10.0),
            update_mode: UpdateMode::Parallel,
            share_update_fn: false,
            init_a: InitScheme::Zeros,
            init_b: InitScheme::OneHotPool(n),
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(Error::Config {
                field,
                reason: reason.into(),
            })
        };
        if self.d_model == 0 {
            return bad("d_model", "must be positive");
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("heads", "must divide d_model");
        }
        if self.features == 0 {
            return bad("features", "must be at least 1");
        }
        if self.d_ff == 0 {
            return bad("d_ff", "must be positive");
        }
        if self.mixer_hidden == 0 {
            return bad("mixer_hidden", "must be positive");
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad("clip", "must be positive");
            }
        }
        for (field, scheme) in [("init_a", self.init_a), ("init_b", self.init_b)] {
            match scheme {
                InitScheme::OneHotPool(p) if p == 0 || p > self.d_model => {
                    return Err(Error::Config {
                        field,
                        reason: format!("one-hot pool {p} must be in 1..={}", self.d_model),
                    })
                }
                InitScheme::LearnedPool(0) => return bad(field, "learned pool must be non-empty"),
                _ => {}
            }
        }
        Ok(())
    }
}

/// Stack of `features` relationship matrices of size `rows x cols`, kept
/// together with its transpose.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    rows: usize,
    cols: usize,
    planes: Arc<Tensor>,
    transposed: Arc<Tensor>,
}

impl DataMatrix {
    /// `data` is feature-major: `data[f][i * cols + j]`.
    pub fn new(rows: usize, cols: usize, planes: Vec<Vec<f64>>) -> Result<Self> {
        if planes.is_empty() {
            return Err(Error::Config {
                field: "features",
                reason: "at least one matrix is required".into(),
            });
        }
        let f = planes.len();
        let mut flat = Vec::with_capacity(f * rows * cols);
        let mut flat_t = vec![0.0; f * rows * cols];
        for (fi, p) in planes.iter().enumerate() {
            if p.len() != rows * cols {
                return Err(Error::Invalid(format!(
                    "matrix {fi} has {} entries, expected {rows}x{cols}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("matrix {fi} has non-finite entries")));
            }
            flat.extend_from_slice(p);
            for i in 0..rows {
                for j in 0..cols {
                    flat_t[fi * rows * cols + j * rows + i] = p[i * cols + j];
                }
            }
        }
        Ok(DataMatrix {
            rows,
            cols,
            planes: Arc::new(Tensor::new(vec![f, rows, cols], flat)?),
            transposed: Arc::new(Tensor::new(vec![f, cols, rows], flat_t)?),
        })
    }

    pub fn single(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        DataMatrix::new(rows, cols, vec![data])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn features(&self) -> usize {
        self.planes.shape()[0]
    }

    pub fn planes(&self) -> &Arc<Tensor> {
        &self.planes
    }

    pub fn transposed(&self) -> &Arc<Tensor> {
        &self.transposed
    }
}

/// Parameters of one update function (`F_A` or `F_B`).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub mix_w1: ParamId,
    pub mix_b1: ParamId,
    pub mix_w2: ParamId,
    pub mix_b2: ParamId,
    pub norm1_gamma: ParamId,
    pub norm1_beta: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
    pub norm2_gamma: ParamId,
    pub norm2_beta: ParamId,
}

impl BlockParams {
    fn register<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let (d, h, hid, f) = (cfg.d_model, cfg.heads, cfg.mixer_hidden, cfg.features);
        let n = |s: &str| format!("{prefix}.{s}");
        BlockParams {
            wq: store.add_uniform(&n("wq"), &[d, d], d, rng),
            wk: store.add_uniform(&n("wk"), &[d, d], d, rng),
            wv: store.add_uniform(&n("wv"), &[d, d], d, rng),
            wo: store.add_uniform(&n("wo"), &[d, d], d, rng),
            bo: store.add_zeros(&n("bo"), &[d]),
            mix_w1: store.add_uniform(&n("mix_w1"), &[h, f + 1, hid], f + 1, rng),
            mix_b1: store.add_zeros(&n("mix_b1"), &[h, hid]),
            mix_w2: store.add_uniform(&n("mix_w2"), &[h, hid], hid, rng),
            mix_b2: store.add_zeros(&n("mix_b2"), &[h]),
            norm1_gamma: store.add_ones(&n("norm1_gamma"), &[d]),
            norm1_beta: store.add_zeros(&n("norm1_beta"), &[d]),
            ff_w1: store.add_uniform(&n("ff_w1"), &[d, cfg.d_ff], d, rng),
            ff_b1: store.add_zeros(&n("ff_b1"), &[cfg.d_ff]),
            ff_w2: store.add_uniform(&n("ff_w2"), &[cfg.d_ff, d], cfg.d_ff, rng),
            ff_b2: store.add_zeros(&n("ff_b2"), &[d]),
            norm2_gamma: store.add_ones(&n("norm2_gamma"), &[d]),
            norm2_beta: store.add_zeros(&n("norm2_beta"), &[d]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub block_a: BlockParams,
    /// Same ids as `block_a` when the update function is shared.
    pub block_b: BlockParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layers: Vec<LayerParams>,
    pub pool_a: Option<ParamId>,
    pub pool_b: Option<ParamId>,
}

impl EncoderParams {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let block_a = BlockParams::register(store, &format!("{prefix}.l{l}.a"), config, rng);
            let block_b = if config.share_update_fn {
                block_a.clone()
            } else {
                BlockParams::register(store, &format!("{prefix}.l{l}.b"), config, rng)
            };
            layers.push(LayerParams { block_a, block_b });
        }
        let mut pool = |side: &str, scheme: InitScheme| match scheme {
            InitScheme::LearnedPool(p) => Some(store.add(
                &format!("{prefix}.pool_{side}"),
                Tensor::from_fn(&[p, config.d_model], |_| rng.gen_range(-1.0..1.0)),
            )),
            _ => None,
        };
        let pool_a = pool("a", config.init_a);
        let pool_b = pool("b", config.init_b);
        Ok(EncoderParams {
            config: config.clone(),
            layers,
            pool_a,
            pool_b,
        })
    }
}

/// Initial vectors for one side of the bipartite graph.
#[derive(Clone, Debug, PartialEq)]
pub enum SideInit {
    Zeros(usize),
    /// Pool index (= hot position) of each item.
    OneHot(Vec<usize>),
    Random(Tensor),
    /// Row of the learned table used for each item.
    Learned(Vec<usize>),
}

impl SideInit {
    pub fn len(&self) -> usize {
        match self {
            SideInit::Zeros(n) => *n,
            SideInit::OneHot(a) | SideInit::Learned(a) => a.len(),
            SideInit::Random(t) => t.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pool indices, when the scheme draws from a pool.
    pub fn assignment(&self) -> Option<&[usize]> {
        match self {
            SideInit::OneHot(a) | SideInit::Learned(a) => Some(a),
            _ => None,
        }
    }

    /// Dense initial vectors; learned pools need the parameter table.
    pub fn to_tensor(&self, d_model: usize, pool: Option<&Tensor>) -> Result<Tensor> {
        Ok(match self {
            SideInit::Zeros(n) => Tensor::zeros(&[*n, d_model]),
            SideInit::OneHot(a) => {
                let mut t = Tensor::zeros(&[a.len(), d_model]);
                for (r, &p) in a.iter().enumerate() {
                    t.data_mut()[r * d_model + p] = 1.0;
                }
                t
            }
            SideInit::Random(t) => t.clone(),
            SideInit::Learned(a) => {
                let pool = pool.ok_or_else(|| Error::Invalid("learned pool missing".into()))?;
                let mut data = Vec::with_capacity(a.len() * d_model);
                for &p in a {
                    data.extend_from_slice(pool.row(p));
                }
                Tensor::new(vec![a.len(), d_model], data)?
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialEmbeddings {
    pub a: SideInit,
    pub b: SideInit,
}

fn draw_side<R: Rng>(n: usize, scheme: InitScheme, d_model: usize, rng: &mut R) -> Result<SideInit> {
    let draw_pool = |pool: usize, rng: &mut R| -> Result<Vec<usize>> {
        if n > pool {
            return Err(Error::Capacity {
                what: "initial embedding pool",
                requested: n,
                limit: pool,
            });
        }
        let mut idx: Vec<usize> = (0..pool).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        Ok(idx)
    };
    Ok(match scheme {
        InitScheme::Zeros => SideInit::Zeros(n),
        InitScheme::OneHotPool(pool) => SideInit::OneHot(draw_pool(pool, rng)?),
        InitScheme::LearnedPool(pool) => SideInit::Learned(draw_pool(pool, rng)?),
        InitScheme::RandomVectors => {
            SideInit::Random(Tensor::from_fn(&[n, d_model], |_| rng.gen::<f64>()))
        }
    })
}

/// Draws the initial vectors for `rows` A-items and `cols` B-items.
pub fn init_embeddings<R: Rng>(rows: usize, cols: usize, config: &EncoderConfig, rng: &mut R) -> Result<InitialEmbeddings> {
    let a = draw_side(rows, config.init_a, config.d_model, rng)?;
    let b = draw_side(cols, config.init_b, config.d_model, rng)?;
    Ok(InitialEmbeddings { a, b })
}

fn embed_side(tape: &mut Tape, store: &ParamStore, side: &SideInit, pool: Option<ParamId>, d_model: usize) -> Result<Var> {
    match side {
        SideInit::Learned(idx) => {
            let pid = pool.ok_or_else(|| Error::Invalid("learned pool missing".into()))?;
            let table = tape.param(store, pid);
            Ok(tape.gather_rows(table, idx)?)
        }
        other => Ok(tape.constant(other.to_tensor(d_model, None)?)),
    }
}

/// Multi-head mixed-score attention from `q_in[nq, d]` onto `kv_in[nkv, d]`
/// with external scores `feats[f, nq, nkv]`.
pub fn mixed_score_attention(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    block: &BlockParams,
    q_in: Var,
    kv_in: Var,
    feats: &Arc<Tensor>,
) -> Result<Var> {
    let heads = cfg.heads;
    let (wq, wk, wv) = (tape.param(store, block.wq), tape.param(store, block.wk), tape.param(store, block.wv));
    let q = tape.matmul(q_in, wq)?;
    let q = tape.split_heads(q, heads)?;
    let k = tape.matmul(kv_in, wk)?;
    let k = tape.split_heads(k, heads)?;
    let v = tape.matmul(kv_in, wv)?;
    let v = tape.split_heads(v, heads)?;
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / libm::sqrt(cfg.d_k() as f64))?;
    let (w1, b1, w2, b2) = (
        tape.param(store, block.mix_w1),
        tape.param(store, block.mix_b1),
        tape.param(store, block.mix_w2),
        tape.param(store, block.mix_b2),
    );
    let mut mixed = tape.score_mixer(scores, feats.clone(), w1, b1, w2, b2)?;
    if let Some(c) = cfg.clip {
        mixed = tape.soft_clip(mixed, c)?;
    }
    let attn = tape.masked_softmax(mixed, None)?;
    let out = tape.matmul(attn, v)?;
    let out = tape.merge_heads(out)?;
    let wo = tape.param(store, block.wo);
    let bo = tape.param(store, block.bo);
    let out = tape.matmul(out, wo)?;
    Ok(tape.add_bias(out, bo)?)
}

/// One update function: attention, add & norm, feed-forward, add & norm.
pub fn update_block(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    block: &BlockParams,
    self_in: Var,
    other_in: Var,
    feats: &Arc<Tensor>,
) -> Result<Var> {
    let attn = mixed_score_attention(tape, store, cfg, block, self_in, other_in, feats)?;
    let x = tape.add(self_in, attn)?;
    let (g1, b1) = (tape.param(store, block.norm1_gamma), tape.param(store, block.norm1_beta));
    let x = tape.instance_norm(x, g1, b1)?;
    let (w1, fb1, w2, fb2) = (
        tape.param(store, block.ff_w1),
        tape.param(store, block.ff_b1),
        tape.param(store, block.ff_w2),
        tape.param(store, block.ff_b2),
    );
    let hidden = tape.matmul(x, w1)?;
    let hidden = tape.add_bias(hidden, fb1)?;
    let hidden = tape.relu(hidden)?;
    let ff = tape.matmul(hidden, w2)?;
    let ff = tape.add_bias(ff, fb2)?;
    let y = tape.add(x, ff)?;
    let (g2, b2) = (tape.param(store, block.norm2_gamma), tape.param(store, block.norm2_beta));
    Ok(tape.instance_norm(y, g2, b2)?)
}

pub fn encoder_layer(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncoderConfig,
    layer: &LayerParams,
    h_a: Var,
    h_b: Var,
    data: &DataMatrix,
) -> Result<(Var, Var)> {
    let (d, dt) = (data.planes(), data.transposed());
    Ok(match cfg.update_mode {
        UpdateMode::Parallel => {
            let a = update_block(tape, store, cfg, &layer.block_a, h_a, h_b, d)?;
            let b = update_block(tape, store, cfg, &layer.block_b, h_b, h_a, dt)?;
            (a, b)
        }
        UpdateMode::SeqAFirst => {
            let a = update_block(tape, store, cfg, &layer.block_a, h_a, h_b, d)?;
            let b = update_block(tape, store, cfg, &layer.block_b, h_b, a, dt)?;
            (a, b)
        }
        UpdateMode::SeqBFirst => {
            let b = update_block(tape, store, cfg, &layer.block_b, h_b, h_a, dt)?;
            let a = update_block(tape, store, cfg, &layer.block_a, h_a, b, d)?;
            (a, b)
        }
    })
}

/// Node embeddings `(H_A[rows, d], H_B[cols, d])` as tape nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeEmbeddings {
    pub a: Var,
    pub b: Var,
}

/// Runs the full encoder on `data` from the given initial vectors.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    data: &DataMatrix,
    init: &InitialEmbeddings,
) -> Result<NodeEmbeddings> {
    let cfg = &params.config;
    if data.features() != cfg.features {
        return Err(Error::Config {
            field: "features",
            reason: format!("model expects {} matrices, input has {}", cfg.features, data.features()),
        });
    }
    if init.a.len() != data.rows() || init.b.len() != data.cols() {
        return Err(Error::Invalid(format!(
            "initial embeddings {}x{} do not match matrix {}x{}",
            init.a.len(),
            init.b.len(),
            data.rows(),
            data.cols()
        )));
    }
    let mut h_a = embed_side(tape, store, &init.a, params.pool_a, cfg.d_model)?;
    let mut h_b = embed_side(tape, store, &init.b, params.pool_b, cfg.d_model)?;
    for layer in &params.layers {
        (h_a, h_b) = encoder_layer(tape, store, cfg, layer, h_a, h_b, data)?;
    }
    Ok(NodeEmbeddings { a: h_a, b: h_b })
}

/// Draws fresh initial vectors from `rng`, then encodes.
pub fn encode_with_rng<R: Rng>(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EncoderParams,
    data: &DataMatrix,
    rng: &mut R,
) -> Result<(NodeEmbeddings, InitialEmbeddings)> {
    let init = init_embeddings(data.rows(), data.cols(), &params.config, rng)?;
    let emb = encode(tape, store, params, data, &init)?;
    Ok((emb, init))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn small_config(layers: usize) -> EncoderConfig {
        EncoderConfig {
            layers,
            d_model: 8,
            heads: 2,
            d_ff: 12,
            features: 1,
            mixer_hidden: 4,
            clip: Some(10.0),
            update_mode: UpdateMode::Parallel,
            share_update_fn: false,
            init_a: InitScheme::Zeros,
            init_b: InitScheme::OneHotPool(6),
        }
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::from_seed(seed);
        (0..rows * cols).map(|_| r.gen::<f64>()).collect()
    }

    fn build(cfg: &EncoderConfig, seed: u64) -> (ParamStore, EncoderParams) {
        let mut store = ParamStore::new();
        let mut r = rng::from_seed(seed);
        let p = EncoderParams::new(&mut store, "enc", cfg, &mut r).unwrap();
        (store, p)
    }

    fn run(store: &ParamStore, p: &EncoderParams, data: &DataMatrix, init: &InitialEmbeddings) -> (Tensor, Tensor) {
        let mut t = Tape::inference();
        let e = encode(&mut t, store, p, data, init).unwrap();
        (t.value(e.a).clone(), t.value(e.b).clone())
    }

    fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
        let d = t.shape()[1];
        Tensor::new(vec![perm.len(), d], perm.iter().flat_map(|&i| t.row(i).to_vec()).collect()).unwrap()
    }

    #[test]
    fn zeros_and_one_hot_initialization() {
        let mut cfg = small_config(1);
        cfg.init_b = InitScheme::OneHotPool(4);
        let mut r = rng::from_seed(1);
        let init = init_embeddings(3, 4, &cfg, &mut r).unwrap();
        let a = init.a.to_tensor(8, None).unwrap();
        assert_eq!(a.shape(), &[3, 8]);
        assert!(a.data().iter().all(|v| *v == 0.0));
        let mut idx = init.b.assignment().unwrap().to_vec();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        let b = init.b.to_tensor(8, None).unwrap();
        for (row, &hot) in init.b.assignment().unwrap().iter().enumerate() {
            for c in 0..8 {
                assert_eq!(b.at(row, c), if c == hot { 1.0 } else { 0.0 });
            }
        }
        assert!(matches!(init_embeddings(3, 5, &cfg, &mut r), Err(Error::Capacity { .. })));
    }

    #[test]
    fn one_hot_assignment_is_uniform_permutation() {
        let mut cfg = small_config(1);
        cfg.init_b = InitScheme::OneHotPool(3);
        let mut r = rng::from_seed(2);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..6000 {
            let init = init_embeddings(1, 3, &cfg, &mut r).unwrap();
            *counts.entry(init.b.assignment().unwrap().to_vec()).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 - 1000.0).abs() < 150.0, "{counts:?}");
        }
    }

    #[test]
    fn one_hot_pool_must_fit_embedding() {
        let mut cfg = small_config(1);
        cfg.init_b = InitScheme::OneHotPool(9);
        assert!(matches!(cfg.validate(), Err(Error::Config { field: "init_b", .. })));
        cfg.init_b = InitScheme::OneHotPool(4);
        cfg.heads = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config { field: "heads", .. })));
    }

    /// Sets every head's mixer to output exactly its score input.
    fn identity_mixer(store: &mut ParamStore, block: &BlockParams, cfg: &EncoderConfig) {
        let (h, f, hid) = (cfg.heads, cfg.features, cfg.mixer_hidden);
        let w1 = store.get_mut(block.mix_w1).data_mut();
        w1.iter_mut().for_each(|v| *v = 0.0);
        for head in 0..h {
            let base = head * (f + 1) * hid;
            w1[base] = 1.0;
            w1[base + 1] = -1.0;
        }
        let w2 = store.get_mut(block.mix_w2).data_mut();
        w2.iter_mut().for_each(|v| *v = 0.0);
        for head in 0..h {
            w2[head * hid] = 1.0;
            w2[head * hid + 1] = -1.0;
        }
        store.get_mut(block.mix_b1).data_mut().iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(block.mix_b2).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    // Plain scaled-dot-product multi-head attention, written without the tape.
    fn plain_attention(store: &ParamStore, block: &BlockParams, cfg: &EncoderConfig, q_in: &Tensor, kv_in: &Tensor) -> Tensor {
        let (d, h) = (cfg.d_model, cfg.heads);
        let dk = d / h;
        let proj = |x: &Tensor, w: ParamId| -> Vec<Vec<f64>> {
            let w = store.get(w);
            (0..x.shape()[0])
                .map(|i| (0..d).map(|j| (0..d).map(|k| x.at(i, k) * w.at(k, j)).sum()).collect())
                .collect()
        };
        let (q, k, v) = (proj(q_in, block.wq), proj(kv_in, block.wk), proj(kv_in, block.wv));
        let (nq, nk) = (q.len(), k.len());
        let mut concat = vec![vec![0.0; d]; nq];
        for head in 0..h {
            for i in 0..nq {
                let s: Vec<f64> = (0..nk)
                    .map(|j| {
                        let raw: f64 = (0..dk).map(|x| q[i][head * dk + x] * k[j][head * dk + x]).sum::<f64>() / (dk as f64).sqrt();
                        match cfg.clip {
                            Some(c) => c * (raw / c).tanh(),
                            None => raw,
                        }
                    })
                    .collect();
                let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for j in 0..nk {
                    for x in 0..dk {
                        concat[i][head * dk + x] += e[j] / z * v[j][head * dk + x];
                    }
                }
            }
        }
        let wo = store.get(block.wo);
        let bo = store.get(block.bo);
        Tensor::from_fn(&[nq, d], |idx| {
            let (i, j) = (idx / d, idx % d);
            (0..d).map(|k| concat[i][k] * wo.at(k, j)).sum::<f64>() + bo.data()[j]
        })
    }

    fn attention_via_tape(store: &ParamStore, cfg: &EncoderConfig, block: &BlockParams, q: &Tensor, kv: &Tensor, data: &DataMatrix) -> Tensor {
        let mut t = Tape::inference();
        let (qv, kvv) = (t.constant(q.clone()), t.constant(kv.clone()));
        let out = mixed_score_attention(&mut t, store, cfg, block, qv, kvv, data.planes()).unwrap();
        t.value(out).clone()
    }

    #[test]
    fn identity_mixer_reduces_to_plain_attention() {
        for clip in [Some(10.0), None] {
            let mut cfg = small_config(1);
            cfg.clip = clip;
            let (mut store, p) = build(&cfg, 4);
            let block = p.layers[0].block_a.clone();
            identity_mixer(&mut store, &block, &cfg);
            let bo = store.get_mut(block.bo).data_mut();
            bo.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64);
            let mut r = rng::from_seed(5);
            let q = Tensor::from_fn(&[3, 8], |_| r.gen_range(-2.0..2.0));
            let kv = Tensor::from_fn(&[4, 8], |_| r.gen_range(-2.0..2.0));
            let data = DataMatrix::single(3, 4, random_matrix(3, 4, 6)).unwrap();
            let got = attention_via_tape(&store, &cfg, &block, &q, &kv, &data);
            let want = plain_attention(&store, &block, &cfg, &q, &kv);
            assert!(got.max_abs_diff(&want) < 1e-10, "{}", got.max_abs_diff(&want));
        }
    }

    #[test]
    fn single_key_returns_value_row() {
        let cfg = small_config(1);
        let (store, p) = build(&cfg, 7);
        let block = &p.layers[0].block_a;
        let mut r = rng::from_seed(8);
        let q = Tensor::from_fn(&[3, 8], |_| r.gen_range(-2.0..2.0));
        let kv = Tensor::from_fn(&[1, 8], |_| r.gen_range(-2.0..2.0));
        let data = DataMatrix::single(3, 1, vec![0.3, 0.9, 0.1]).unwrap();
        let got = attention_via_tape(&store, &cfg, block, &q, &kv, &data);
        // softmax over one key is 1, so each row is (kv Wv) Wo + bo
        let (wv, wo) = (store.get(block.wv), store.get(block.wo));
        let v: Vec<f64> = (0..8).map(|j| (0..8).map(|k| kv.at(0, k) * wv.at(k, j)).sum()).collect();
        let o: Vec<f64> = (0..8).map(|j| (0..8).map(|k| v[k] * wo.at(k, j)).sum()).collect();
        for i in 0..3 {
            for j in 0..8 {
                assert!((got.at(i, j) - o[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_per_element_reference() {
        let mut cfg = small_config(1);
        cfg.features = 2;
        let (mut store, p) = build(&cfg, 9);
        let block = p.layers[0].block_a.clone();
        let mut r = rng::from_seed(10);
        for id in [block.mix_b1, block.mix_b2, block.bo] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.5..0.5));
        }
        let q = Tensor::from_fn(&[2, 8], |_| r.gen_range(-2.0..2.0));
        let kv = Tensor::from_fn(&[3, 8], |_| r.gen_range(-2.0..2.0));
        let planes = vec![random_matrix(2, 3, 11), random_matrix(2, 3, 12)];
        let data = DataMatrix::new(2, 3, planes.clone()).unwrap();
        let got = attention_via_tape(&store, &cfg, &block, &q, &kv, &data);

        let (d, h, hid) = (8, 2, cfg.mixer_hidden);
        let dk = d / h;
        let mm = |x: &[f64], w: &Tensor| -> Vec<f64> { (0..d).map(|j| (0..d).map(|k| x[k] * w.at(k, j)).sum()).collect() };
        let (w1, b1, w2, b2) = (store.get(block.mix_w1), store.get(block.mix_b1), store.get(block.mix_w2), store.get(block.mix_b2));
        let mut want = Tensor::zeros(&[2, 8]);
        for i in 0..2 {
            let qi = mm(q.row(i), store.get(block.wq));
            let mut concat = vec![0.0; d];
            for head in 0..h {
                let mut mixed = Vec::new();
                for j in 0..3 {
                    let kj = mm(kv.row(j), store.get(block.wk));
                    let s: f64 = (0..dk).map(|x| qi[head * dk + x] * kj[head * dk + x]).sum::<f64>() / 2.0;
                    let inputs = [s, planes[0][i * 3 + j], planes[1][i * 3 + j]];
                    let mut out = b2.data()[head];
                    for u in 0..hid {
                        let mut pre = b1.data()[head * hid + u];
                        for (fi, x) in inputs.iter().enumerate() {
                            pre += x * w1.data()[(head * 3 + fi) * hid + u];
                        }
                        out += pre.max(0.0) * w2.data()[head * hid + u];
                    }
                    mixed.push(10.0 * (out / 10.0).tanh());
                }
                let z: f64 = mixed.iter().map(|m| m.exp()).sum();
                for j in 0..3 {
                    let vj = mm(kv.row(j), store.get(block.wv));
                    for x in 0..dk {
                        concat[head * dk + x] += mixed[j].exp() / z * vj[head * dk + x];
                    }
                }
            }
            let o = mm(&concat, store.get(block.wo));
            for j in 0..d {
                want.data_mut()[i * d + j] = o[j] + store.get(block.bo).data()[j];
            }
        }
        assert!(got.max_abs_diff(&want) < 1e-12, "{}", got.max_abs_diff(&want));
    }

    fn fixed_init(rows: usize, cols: usize, hot: &[usize]) -> InitialEmbeddings {
        assert_eq!(hot.len(), cols);
        InitialEmbeddings {
            a: SideInit::Zeros(rows),
            b: SideInit::OneHot(hot.to_vec()),
        }
    }

    #[test]
    fn row_and_column_permutation_symmetry() {
        for mode in [UpdateMode::Parallel, UpdateMode::SeqAFirst, UpdateMode::SeqBFirst] {
            let mut cfg = small_config(2);
            cfg.update_mode = mode;
            let (store, p) = build(&cfg, 13);
            let (m, n) = (4, 5);
            let raw = random_matrix(m, n, 14);
            let hot = [3, 0, 4, 1, 2];
            let data = DataMatrix::single(m, n, raw.clone()).unwrap();
            let (ha, hb) = run(&store, &p, &data, &fixed_init(m, n, &hot));

            let rp = [2, 0, 3, 1];
            let rows: Vec<f64> = rp.iter().flat_map(|&i| raw[i * n..(i + 1) * n].to_vec()).collect();
            let (ha2, hb2) = run(&store, &p, &DataMatrix::single(m, n, rows).unwrap(), &fixed_init(m, n, &hot));
            assert!(ha2.max_abs_diff(&permute_rows(&ha, &rp)) < 1e-8);
            assert!(hb2.max_abs_diff(&hb) < 1e-8);

            let cp = [4, 2, 0, 1, 3];
            let cols: Vec<f64> = (0..m).flat_map(|i| cp.iter().map(move |&j| (i, j))).map(|(i, j)| raw[i * n + j]).collect();
            let hot2: Vec<usize> = cp.iter().map(|&j| hot[j]).collect();
            let (ha3, hb3) = run(&store, &p, &DataMatrix::single(m, n, cols).unwrap(), &fixed_init(m, n, &hot2));
            assert!(hb3.max_abs_diff(&permute_rows(&hb, &cp)) < 1e-8);
            assert!(ha3.max_abs_diff(&ha) < 1e-8);
        }
    }

    #[test]
    fn shared_update_function_aliases_parameters() {
        let mut cfg = small_config(2);
        cfg.share_update_fn = true;
        let (store, p) = build(&cfg, 15);
        assert_eq!(p.layers[0].block_a, p.layers[0].block_b);
        // Two copies of the same weights, unshared, must give the same output.
        let mut cfg2 = cfg.clone();
        cfg2.share_update_fn = false;
        let (mut store2, p2) = build(&cfg2, 99);
        for (l, layer) in p2.layers.iter().enumerate() {
            let src = &p.layers[l].block_a;
            for blk in [&layer.block_a, &layer.block_b] {
                let pairs = [
                    (blk.wq, src.wq), (blk.wk, src.wk), (blk.wv, src.wv), (blk.wo, src.wo), (blk.bo, src.bo),
                    (blk.mix_w1, src.mix_w1), (blk.mix_b1, src.mix_b1), (blk.mix_w2, src.mix_w2), (blk.mix_b2, src.mix_b2),
                    (blk.norm1_gamma, src.norm1_gamma), (blk.norm1_beta, src.norm1_beta),
                    (blk.ff_w1, src.ff_w1), (blk.ff_b1, src.ff_b1), (blk.ff_w2, src.ff_w2), (blk.ff_b2, src.ff_b2),
                    (blk.norm2_gamma, src.norm2_gamma), (blk.norm2_beta, src.norm2_beta),
                ];
                for (dst, s) in pairs {
                    *store2.get_mut(dst) = store.get(s).clone();
                }
            }
        }
        let data = DataMatrix::single(3, 4, random_matrix(3, 4, 16)).unwrap();
        let init = fixed_init(3, 4, &[1, 3, 0, 2]);
        let (a1, b1) = run(&store, &p, &data, &init);
        let (a2, b2) = run(&store2, &p2, &data, &init);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
    }

    #[test]
    fn zero_layers_return_initial_embeddings() {
        let cfg = small_config(0);
        let (store, p) = build(&cfg, 17);
        let data = DataMatrix::single(2, 3, random_matrix(2, 3, 18)).unwrap();
        let init = fixed_init(2, 3, &[2, 0, 1]);
        let (a, b) = run(&store, &p, &data, &init);
        assert_eq!(a, Tensor::zeros(&[2, 8]));
        assert_eq!(b, init.b.to_tensor(8, None).unwrap());
    }

    #[test]
    fn same_seed_same_output_and_augmentation_differs() {
        let cfg = small_config(2);
        let (store, p) = build(&cfg, 19);
        let data = DataMatrix::single(4, 6, random_matrix(4, 6, 20)).unwrap();
        let go = |seed| {
            let mut t = Tape::inference();
            let (e, _) = encode_with_rng(&mut t, &store, &p, &data, &mut rng::from_seed(seed)).unwrap();
            (t.value(e.a).clone(), t.value(e.b).clone())
        };
        assert_eq!(go(1), go(1));
        assert!(go(1).0.max_abs_diff(&go(2).0) > 1e-6);
    }

    #[test]
    fn learned_pool_and_random_vectors_encode() {
        let mut cfg = small_config(1);
        cfg.init_b = InitScheme::LearnedPool(7);
        cfg.init_a = InitScheme::RandomVectors;
        let (mut store, p) = build(&cfg, 21);
        assert!(p.pool_b.is_some());
        let data = DataMatrix::single(3, 4, random_matrix(3, 4, 22)).unwrap();
        let report = crate::gradcheck::check(&mut store, 1e-5, Some(6), |t, s| {
            let init = init_embeddings(3, 4, &p.config, &mut rng::from_seed(23)).unwrap();
            let e = encode(t, s, &p, &data, &init).map_err(|e| match e {
                Error::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            let w: Vec<f64> = (0..4 * 8).map(|i| (i as f64 * 0.37).sin()).collect();
            t.dot_const(e.b, &w)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
        let init = init_embeddings(3, 4, &p.config, &mut rng::from_seed(23)).unwrap();
        if let SideInit::Random(t) = &init.a {
            assert!(t.data().iter().all(|v| (0.0..1.0).contains(v)));
        } else {
            panic!("expected random vectors");
        }
    }
}
