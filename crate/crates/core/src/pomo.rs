//! Multi-trajectory rollouts on one tape per instance and the shared-baseline
//! REINFORCE loss.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::atsp::{tour_length, AtspEnv, AtspInstance};
use crate::decoder::{decode_step, make_query_atsp, make_query_ffsp, pick_rows, precompute_kv, DecodeMode, KvCache};
use crate::encoder::{encode, init_embeddings, InitialEmbeddings};
use crate::error::{Error, Result};
use crate::ffsp::{machine_orders, FfspInstance, FfspSchedule, GanttEnv, FFSP_SCALE};
use crate::model::{AtspModel, FfspModel};
use crate::params::{Gradients, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Log-probabilities of one batched decoding step: entry `i` of `var`
/// belongs to trajectory `rows[i]`.
#[derive(Clone, Debug)]
pub struct LogProbTerm {
    pub var: Var,
    pub rows: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct AtspRollout {
    pub tours: Vec<Vec<usize>>,
    pub lengths: Vec<f64>,
    pub terms: Vec<LogProbTerm>,
    pub log_probs: Vec<f64>,
}

/// Encoder output an ATSP rollout decodes from: "from"-city embeddings and
/// the key/value cache over "to"-city embeddings.
#[derive(Clone, Debug)]
pub struct AtspEncoding {
    pub rows: Var,
    pub cache: KvCache,
}

pub fn encode_atsp(
    tape: &mut Tape,
    store: &ParamStore,
    model: &AtspModel,
    inst: &AtspInstance,
    scale: f64,
    init: &InitialEmbeddings,
) -> Result<AtspEncoding> {
    let data = inst.data_matrix(scale)?;
    let emb = encode(tape, store, &model.encoder, &data, init)?;
    let cache = precompute_kv(tape, store, &model.decoder, emb.b)?;
    Ok(AtspEncoding { rows: emb.a, cache })
}

fn atsp_rollout_with<P>(
    tape: &mut Tape,
    store: &ParamStore,
    model: &AtspModel,
    inst: &AtspInstance,
    enc: &AtspEncoding,
    starts: &[usize],
    mut pick: P,
) -> Result<AtspRollout>
where
    P: FnMut(usize, &[f64], usize) -> usize,
{
    let n = inst.n();
    if starts.is_empty() || starts.iter().any(|&s| s >= n) {
        return Err(Error::Invalid(format!("bad start list for {n} cities")));
    }
    let b = starts.len();
    let mut envs: Vec<AtspEnv> = starts.iter().map(|&s| AtspEnv::new(n, s)).collect();
    let mut terms = Vec::with_capacity(n.saturating_sub(1));
    let mut log_probs = vec![0.0; b];
    let rows: Vec<usize> = (0..b).collect();
    for step in 1..n {
        let first: Vec<usize> = envs.iter().map(|e| e.first()).collect();
        let current: Vec<usize> = envs.iter().map(|e| e.current()).collect();
        let q = make_query_atsp(tape, store, &model.decoder, enc.rows, &first, &current)?;
        let mask: Vec<bool> = envs.iter().flat_map(|e| e.mask().iter().copied()).collect();
        let probs = decode_step(tape, store, &model.decoder, &enc.cache, q, &mask)?;
        let picks: Vec<usize> = tape.value(probs).data().chunks(n).enumerate().map(|(r, row)| pick(r, row, step)).collect();
        let lp = tape.pick_log(probs, &picks)?;
        for (r, (&c, env)) in picks.iter().zip(envs.iter_mut()).enumerate() {
            env.step(c)?;
            log_probs[r] += tape.value(lp).data()[r];
        }
        terms.push(LogProbTerm { var: lp, rows: rows.clone() });
    }
    let tours: Vec<Vec<usize>> = envs.into_iter().map(|e| e.tour().to_vec()).collect();
    let lengths = tours.iter().map(|t| tour_length(inst, t)).collect::<Result<Vec<_>>>()?;
    Ok(AtspRollout {
        tours,
        lengths,
        terms,
        log_probs,
    })
}

/// Decodes one tour per entry of `starts` from an existing encoding.
#[allow(clippy::too_many_arguments)]
pub fn rollout_encoded_atsp<R: Rng>(
    tape: &mut Tape,
    store: &ParamStore,
    model: &AtspModel,
    inst: &AtspInstance,
    enc: &AtspEncoding,
    starts: &[usize],
    mode: DecodeMode,
    rng: &mut R,
) -> Result<AtspRollout> {
    atsp_rollout_with(tape, store, model, inst, enc, starts, |_, row, _| mode.pick(row, rng))
}

/// One tour per entry of `starts`, all decoded in a batch from a single
/// encoding of `inst` (distances divided by `scale`).
#[allow(clippy::too_many_arguments)]
pub fn pomo_rollout_atsp<R: Rng>(
    tape: &mut Tape,
    store: &ParamStore,
    model: &AtspModel,
    inst: &AtspInstance,
    scale: f64,
    init: &InitialEmbeddings,
    starts: &[usize],
    mode: DecodeMode,
    rng: &mut R,
) -> Result<AtspRollout> {
    let enc = encode_atsp(tape, store, model, inst, scale, init)?;
    rollout_encoded_atsp(tape, store, model, inst, &enc, starts, mode, rng)
}

/// Teacher-forced pass: log-probabilities the model assigns to `tours`.
pub fn atsp_replay(
    tape: &mut Tape,
    store: &ParamStore,
    model: &AtspModel,
    inst: &AtspInstance,
    scale: f64,
    init: &InitialEmbeddings,
    tours: &[Vec<usize>],
) -> Result<AtspRollout> {
    if tours.iter().any(|t| t.len() != inst.n()) {
        return Err(Error::Invalid("replayed tour has the wrong length".into()));
    }
    let starts: Vec<usize> = tours.iter().map(|t| t[0]).collect();
    let enc = encode_atsp(tape, store, model, inst, scale, init)?;
    atsp_rollout_with(tape, store, model, inst, &enc, &starts, |r, _, step| tours[r][step])
}

#[derive(Clone, Debug)]
pub struct FfspRollout {
    pub schedules: Vec<FfspSchedule>,
    pub terms: Vec<LogProbTerm>,
    pub log_probs: Vec<f64>,
    /// Encoder passes made by this call: one per stage, shared by all
    /// trajectories (0 when decoding from a given encoding).
    pub encoder_passes: usize,
}

impl FfspRollout {
    pub fn makespans(&self) -> Vec<f64> {
        self.schedules.iter().map(|s| s.makespan as f64).collect()
    }
}

/// Machine orders for `count` trajectories: permutation `p mod M_k!` on every
/// stage for trajectory `p`.
pub fn pomo_orders(inst: &FfspInstance, count: usize) -> Vec<Vec<Vec<usize>>> {
    (0..count).map(|p| machine_orders(inst, p)).collect()
}

/// Per-stage machine embeddings and job key/value caches.
#[derive(Clone, Debug)]
pub struct FfspEncoding {
    pub machines: Vec<Var>,
    pub caches: Vec<KvCache>,
}

pub fn encode_ffsp(tape: &mut Tape, store: &ParamStore, model: &FfspModel, inst: &FfspInstance, inits: &[InitialEmbeddings]) -> Result<FfspEncoding> {
    let s = inst.stages();
    if model.stages.len() != s || inits.len() != s {
        return Err(Error::Invalid(format!(
            "{} stage models and {} initial embeddings for {s} stages",
            model.stages.len(),
            inits.len()
        )));
    }
    let mut machines = Vec::with_capacity(s);
    let mut caches = Vec::with_capacity(s);
    for k in 0..s {
        let data = inst.data_matrix(k, FFSP_SCALE)?;
        let emb = encode(tape, store, &model.stages[k].encoder, &data, &inits[k])?;
        caches.push(precompute_kv(tape, store, &model.stages[k].decoder, emb.b)?);
        machines.push(emb.a);
    }
    Ok(FfspEncoding { machines, caches })
}

/// One schedule per entry of `orders`, built in lockstep from an existing
/// encoding; pending decisions of all trajectories are batched per stage.
#[allow(clippy::too_many_arguments)]
pub fn rollout_encoded_ffsp<R: Rng>(
    tape: &mut Tape,
    store: &ParamStore,
    model: &FfspModel,
    inst: &FfspInstance,
    enc: &FfspEncoding,
    orders: &[Vec<Vec<usize>>],
    mode: DecodeMode,
    rng: &mut R,
) -> Result<FfspRollout> {
    if orders.is_empty() {
        return Err(Error::Invalid("no machine orders given".into()));
    }
    let (s, n) = (inst.stages(), inst.jobs());
    let mut envs = orders.iter().map(|o| GanttEnv::new(inst, o.clone())).collect::<Result<Vec<_>>>()?;
    let mut terms = Vec::new();
    let mut log_probs = vec![0.0; orders.len()];
    loop {
        let pending: Vec<_> = envs.iter_mut().enumerate().filter_map(|(i, e)| e.next_decision().map(|d| (i, d))).collect();
        if pending.is_empty() {
            break;
        }
        for k in 0..s {
            let group: Vec<_> = pending.iter().filter(|(_, d)| d.stage == k).collect();
            if group.is_empty() {
                continue;
            }
            let machines: Vec<usize> = group.iter().map(|(_, d)| d.machine).collect();
            let q = make_query_ffsp(tape, store, &model.stages[k].decoder, enc.machines[k], &machines)?;
            let mask: Vec<bool> = group.iter().flat_map(|(_, d)| d.mask.iter().copied()).collect();
            let probs = decode_step(tape, store, &model.stages[k].decoder, &enc.caches[k], q, &mask)?;
            let picks = pick_rows(tape.value(probs).data(), n + 1, mode, rng);
            let lp = tape.pick_log(probs, &picks)?;
            let rows: Vec<usize> = group.iter().map(|(i, _)| *i).collect();
            for (r, (&i, &a)) in rows.iter().zip(&picks).enumerate() {
                envs[i].apply(a)?;
                log_probs[i] += tape.value(lp).data()[r];
            }
            terms.push(LogProbTerm { var: lp, rows });
        }
    }
    let schedules = envs.iter().map(|e| e.schedule()).collect::<Result<Vec<_>>>()?;
    Ok(FfspRollout {
        schedules,
        terms,
        log_probs,
        encoder_passes: 0,
    })
}

/// Encodes every stage once, then runs [`rollout_encoded_ffsp`].
#[allow(clippy::too_many_arguments)]
pub fn pomo_rollout_ffsp<R: Rng>(
    tape: &mut Tape,
    store: &ParamStore,
    model: &FfspModel,
    inst: &FfspInstance,
    inits: &[InitialEmbeddings],
    orders: &[Vec<Vec<usize>>],
    mode: DecodeMode,
    rng: &mut R,
) -> Result<FfspRollout> {
    let enc = encode_ffsp(tape, store, model, inst, inits)?;
    let mut ro = rollout_encoded_ffsp(tape, store, model, inst, &enc, orders, mode, rng)?;
    ro.encoder_passes = enc.machines.len();
    Ok(ro)
}

/// `reward - mean(reward)`; fewer than two trajectories leave no baseline.
pub fn advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Invalid(format!("shared baseline needs at least 2 trajectories, got {}", rewards.len())));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Invalid("non-finite reward".into()));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// `-sum_i adv_i * log p_i / total` over this instance's trajectories;
/// `total` is the trajectory count of the whole batch so that summing the
/// per-instance losses gives the batch mean.
pub fn reinforce_loss(tape: &mut Tape, terms: &[LogProbTerm], rewards: &[f64], total: usize) -> Result<Var> {
    let adv = advantages(rewards)?;
    let mut loss = tape.constant(Tensor::scalar(0.0));
    for t in terms {
        let w: Vec<f64> = t.rows.iter().map(|&r| -adv[r] / total as f64).collect();
        let part = tape.dot_const(t.var, &w)?;
        loss = tape.add(loss, part)?;
    }
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceStats {
    pub mean_reward: f64,
    pub best_reward: f64,
    pub loss: f64,
}

fn stats(rewards: &[f64], loss: f64) -> InstanceStats {
    InstanceStats {
        mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
        best_reward: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        loss,
    }
}

/// Sampled rollouts from every city, loss and gradients for one instance.
/// Reward is `-length / scale`.
pub fn atsp_instance_grads<R: Rng>(
    store: &ParamStore,
    model: &AtspModel,
    inst: &AtspInstance,
    scale: f64,
    total: usize,
    rng: &mut R,
) -> Result<(Gradients, InstanceStats)> {
    let n = inst.n();
    let init = init_embeddings(n, n, model.config(), rng)?;
    let mut tape = Tape::new();
    let starts: Vec<usize> = (0..n).collect();
    let ro = pomo_rollout_atsp(&mut tape, store, model, inst, scale, &init, &starts, DecodeMode::Sample, rng)?;
    let rewards: Vec<f64> = ro.lengths.iter().map(|l| -l / scale).collect();
    let loss = reinforce_loss(&mut tape, &ro.terms, &rewards, total)?;
    let lv = tape.value(loss).item();
    let grads = tape.backward(loss, store)?;
    Ok((grads, stats(&rewards, lv)))
}

/// Fresh per-stage initial embeddings for an FFSP instance.
pub fn ffsp_inits<R: Rng>(model: &FfspModel, inst: &FfspInstance, rng: &mut R) -> Result<Vec<InitialEmbeddings>> {
    (0..inst.stages())
        .map(|k| init_embeddings(inst.machines(k), inst.jobs(), &model.stages[k].encoder.config, rng))
        .collect()
}

/// Sampled rollouts over `trajectories` machine orders, loss and gradients
/// for one instance. Reward is `-makespan / 10`.
pub fn ffsp_instance_grads<R: Rng>(
    store: &ParamStore,
    model: &FfspModel,
    inst: &FfspInstance,
    trajectories: usize,
    total: usize,
    rng: &mut R,
) -> Result<(Gradients, InstanceStats)> {
    let inits = ffsp_inits(model, inst, rng)?;
    let orders = pomo_orders(inst, trajectories);
    let mut tape = Tape::new();
    let ro = pomo_rollout_ffsp(&mut tape, store, model, inst, &inits, &orders, DecodeMode::Sample, rng)?;
    let rewards: Vec<f64> = ro.makespans().iter().map(|m| -m / FFSP_SCALE).collect();
    let loss = reinforce_loss(&mut tape, &ro.terms, &rewards, total)?;
    let lv = tape.value(loss).item();
    let grads = tape.backward(loss, store)?;
    Ok((grads, stats(&rewards, lv)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atsp::{generate_tmat, TMAT_SCALE};
    use crate::ffsp::{generate_ffsp, permutations, validate_schedule};
    use crate::model::{atsp_toy, ffsp_toy};
    use crate::rng;

    fn small_atsp(n_max: usize) -> (ParamStore, AtspModel) {
        let mut cfg = atsp_toy(n_max);
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.layers = 1;
        let mut store = ParamStore::new();
        let model = AtspModel::new(&mut store, &cfg, &mut rng::from_seed(1)).unwrap();
        (store, model)
    }

    fn small_ffsp() -> (ParamStore, FfspModel) {
        let mut cfg = ffsp_toy(4);
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.layers = 1;
        let mut store = ParamStore::new();
        let model = FfspModel::new(&mut store, &cfg, 3, &mut rng::from_seed(2)).unwrap();
        (store, model)
    }

    fn is_perm(t: &[usize], n: usize) -> bool {
        let mut seen = vec![false; n];
        t.len() == n && t.iter().all(|&c| c < n && !core::mem::replace(&mut seen[c], true))
    }

    #[test]
    fn atsp_rollouts_are_tours_one_per_start() {
        let (store, model) = small_atsp(8);
        let mut r = rng::from_seed(3);
        for n in [2, 5, 8] {
            let inst = generate_tmat(n, &mut r).unwrap();
            let init = init_embeddings(n, n, model.config(), &mut r).unwrap();
            let starts: Vec<usize> = (0..n).collect();
            let mut t = Tape::new();
            let ro = pomo_rollout_atsp(&mut t, &store, &model, &inst, TMAT_SCALE, &init, &starts, DecodeMode::Sample, &mut r).unwrap();
            assert_eq!(ro.tours.len(), n);
            for (s, tour) in ro.tours.iter().enumerate() {
                assert!(is_perm(tour, n));
                assert_eq!(tour[0], s);
            }
            assert!(ro.log_probs.iter().all(|l| l.is_finite() && *l <= 0.0));
            if n == 2 {
                assert_eq!(ro.lengths[0], ro.lengths[1]);
            }
        }
    }

    #[test]
    fn replay_matches_sampled_log_probs() {
        let (store, model) = small_atsp(6);
        let mut r = rng::from_seed(4);
        let inst = generate_tmat(6, &mut r).unwrap();
        let init = init_embeddings(6, 6, model.config(), &mut r).unwrap();
        let mut t = Tape::inference();
        let ro = pomo_rollout_atsp(&mut t, &store, &model, &inst, TMAT_SCALE, &init, &[0, 3, 3], DecodeMode::Sample, &mut r).unwrap();
        let mut t2 = Tape::inference();
        let re = atsp_replay(&mut t2, &store, &model, &inst, TMAT_SCALE, &init, &ro.tours).unwrap();
        assert_eq!(re.tours, ro.tours);
        for (a, b) in re.log_probs.iter().zip(&ro.log_probs) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn advantage_identities() {
        let adv = advantages(&[-1.25, -3.5, -0.75, -2.0]).unwrap();
        assert!(adv.iter().sum::<f64>().abs() < 1e-12);
        assert!(advantages(&[1.0]).is_err());
        assert!(advantages(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn equal_rewards_give_zero_gradient() {
        let (store, model) = small_atsp(5);
        let mut r = rng::from_seed(5);
        let inst = generate_tmat(5, &mut r).unwrap();
        let init = init_embeddings(5, 5, model.config(), &mut r).unwrap();
        let mut t = Tape::new();
        let ro = pomo_rollout_atsp(&mut t, &store, &model, &inst, TMAT_SCALE, &init, &[0, 1, 2, 3, 4], DecodeMode::Sample, &mut r).unwrap();
        let loss = reinforce_loss(&mut t, &ro.terms, &[-0.7; 5], 5).unwrap();
        let g = t.backward(loss, &store).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn sgd_step_favours_better_trajectory() {
        let (mut store, model) = small_atsp(5);
        let mut r = rng::from_seed(6);
        let inst = generate_tmat(5, &mut r).unwrap();
        let init = init_embeddings(5, 5, model.config(), &mut r).unwrap();
        let tours = vec![vec![0, 1, 2, 3, 4], vec![0, 4, 3, 2, 1]];
        let lp = |store: &ParamStore| {
            let mut t = Tape::inference();
            atsp_replay(&mut t, store, &model, &inst, TMAT_SCALE, &init, &tours).unwrap().log_probs
        };
        let before = lp(&store);
        let mut t = Tape::new();
        let ro = atsp_replay(&mut t, &store, &model, &inst, TMAT_SCALE, &init, &tours).unwrap();
        let loss = reinforce_loss(&mut t, &ro.terms, &[1.0, 0.0], 2).unwrap();
        let g = t.backward(loss, &store).unwrap();
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let gd = g.get(id).data().to_vec();
            for (p, gv) in store.get_mut(id).data_mut().iter_mut().zip(gd) {
                *p -= 0.05 * gv;
            }
        }
        let after = lp(&store);
        assert!(after[0] > before[0]);
        assert!(after[0] - after[1] > before[0] - before[1]);
    }

    #[test]
    fn ffsp_lockstep_rollouts_validate() {
        let (store, model) = small_ffsp();
        let mut r = rng::from_seed(7);
        let inst = generate_ffsp(3, 4, 6, &mut r).unwrap();
        let inits = ffsp_inits(&model, &inst, &mut r).unwrap();
        let orders = pomo_orders(&inst, 24);
        let distinct: Vec<Vec<usize>> = orders.iter().map(|o| o[0].clone()).collect();
        assert_eq!(distinct, permutations(4));
        let mut t = Tape::new();
        let ro = pomo_rollout_ffsp(&mut t, &store, &model, &inst, &inits, &orders, DecodeMode::Sample, &mut r).unwrap();
        assert_eq!(ro.schedules.len(), 24);
        assert_eq!(ro.encoder_passes, 3);
        for s in &ro.schedules {
            validate_schedule(&inst, s).unwrap();
        }
        let rewards: Vec<f64> = ro.makespans().iter().map(|m| -m / FFSP_SCALE).collect();
        let loss = reinforce_loss(&mut t, &ro.terms, &rewards, 24).unwrap();
        let g = t.backward(loss, &store).unwrap();
        assert!(g.is_finite());
    }

    #[test]
    fn lockstep_equals_one_at_a_time_under_greedy() {
        let (store, model) = small_ffsp();
        let mut r = rng::from_seed(8);
        let inst = generate_ffsp(3, 4, 5, &mut r).unwrap();
        let inits = ffsp_inits(&model, &inst, &mut r).unwrap();
        let orders = pomo_orders(&inst, 6);
        let mut t = Tape::inference();
        let all = pomo_rollout_ffsp(&mut t, &store, &model, &inst, &inits, &orders, DecodeMode::Greedy, &mut r).unwrap();
        for (p, o) in orders.iter().enumerate() {
            let mut t = Tape::inference();
            let one = pomo_rollout_ffsp(&mut t, &store, &model, &inst, &inits, &[o.clone()], DecodeMode::Greedy, &mut r).unwrap();
            assert_eq!(one.schedules[0], all.schedules[p]);
            assert!((one.log_probs[0] - all.log_probs[p]).abs() < 1e-12);
        }
    }
}
