//! Best-of solving: multi-start decoding, instance augmentation through
//! re-drawn initial embeddings, and the plain-sampling comparison arm.
//!
//! Seeds nest so that larger budgets see a superset of candidates:
//! augmentation `a` draws its initial embeddings from `stream(seed, [a, 0])`
//! and decoding pass `c` on that encoding samples from
//! `stream(seed, [a, 1, c])`.

use alloc::format;
use alloc::vec::Vec;

use crate::atsp::{AtspInstance, Tour};
use crate::decoder::DecodeMode;
use crate::encoder::{init_embeddings, InitialEmbeddings};
use crate::error::{Error, Result};
use crate::ffsp::{validate_schedule, FfspInstance, FfspSchedule};
use crate::model::{AtspModel, FfspModel};
use crate::params::ParamStore;
use crate::pomo::{encode_atsp, encode_ffsp, ffsp_inits, pomo_orders, rollout_encoded_atsp, rollout_encoded_ffsp};
use crate::rng::stream;
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub mode: DecodeMode,
    /// Multi-start decoding (every city / every machine order); otherwise a
    /// single trajectory per augmentation.
    pub pomo: bool,
    pub augmentation: usize,
    pub sampling_count: usize,
    pub seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            mode: DecodeMode::Sample,
            pomo: true,
            augmentation: 1,
            sampling_count: 1,
            seed: 0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.augmentation == 0 {
            return Err(Error::Config {
                field: "augmentation",
                reason: "must be at least 1".into(),
            });
        }
        if self.sampling_count == 0 {
            return Err(Error::Config {
                field: "sampling_count",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AtspSolution {
    pub tour: Tour,
    /// Candidate lengths, augmentation-major.
    pub candidates: Vec<f64>,
    pub best_augmentation: usize,
    pub best_start: usize,
    pub inits: Vec<InitialEmbeddings>,
}

/// Candidates of one augmentation (or, with `passes > 1`, several sampled
/// passes over the same encoding).
pub fn atsp_augmentation(
    store: &ParamStore,
    model: &AtspModel,
    inst: &AtspInstance,
    scale: f64,
    opts: &SolveOptions,
    aug: usize,
    passes: usize,
) -> Result<(InitialEmbeddings, Vec<Vec<usize>>, Vec<f64>)> {
    let n = inst.n();
    let init = init_embeddings(n, n, model.config(), &mut stream(opts.seed, &[aug as u64, 0]))?;
    let mut tape = Tape::inference();
    let enc = encode_atsp(&mut tape, store, model, inst, scale, &init)?;
    let starts: Vec<usize> = if opts.pomo { (0..n).collect() } else { alloc::vec![0] };
    let mut tours = Vec::new();
    let mut lengths = Vec::new();
    for c in 0..passes {
        let mut rng = stream(opts.seed, &[aug as u64, 1, c as u64]);
        let ro = rollout_encoded_atsp(&mut tape, store, model, inst, &enc, &starts, opts.mode, &mut rng)?;
        tours.extend(ro.tours);
        lengths.extend(ro.lengths);
    }
    Ok((init, tours, lengths))
}

/// Keeps the first strictly better candidate, so ties go to the lowest
/// augmentation and then the lowest start.
fn best_of(groups: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (0, 0);
    let mut val = f64::INFINITY;
    for (a, g) in groups.iter().enumerate() {
        for (i, &v) in g.iter().enumerate() {
            if v < val {
                val = v;
                best = (a, i);
            }
        }
    }
    best
}

/// Merges per-augmentation results (in augmentation order) into a solution.
pub fn collect_atsp(inst: &AtspInstance, parts: Vec<(InitialEmbeddings, Vec<Vec<usize>>, Vec<f64>)>) -> Result<AtspSolution> {
    let groups: Vec<Vec<f64>> = parts.iter().map(|p| p.2.clone()).collect();
    let (a, i) = best_of(&groups);
    let tour = Tour::new(inst, parts[a].1[i].clone())?;
    Ok(AtspSolution {
        tour,
        candidates: groups.concat(),
        best_augmentation: a,
        best_start: i,
        inits: parts.into_iter().map(|p| p.0).collect(),
    })
}

/// Best tour over `augmentation` encodings, each decoded from every start.
pub fn solve_atsp(store: &ParamStore, model: &AtspModel, inst: &AtspInstance, scale: f64, opts: &SolveOptions) -> Result<AtspSolution> {
    opts.validate()?;
    let parts = (0..opts.augmentation)
        .map(|a| atsp_augmentation(store, model, inst, scale, opts, a, 1))
        .collect::<Result<Vec<_>>>()?;
    collect_atsp(inst, parts)
}

/// One encoding, `count` sampled multi-start passes, best kept.
pub fn sample_only_solve(store: &ParamStore, model: &AtspModel, inst: &AtspInstance, scale: f64, count: usize, seed: u64) -> Result<AtspSolution> {
    let opts = SolveOptions {
        mode: DecodeMode::Sample,
        sampling_count: count,
        seed,
        ..SolveOptions::default()
    };
    opts.validate()?;
    let part = atsp_augmentation(store, model, inst, scale, &opts, 0, count)?;
    collect_atsp(inst, alloc::vec![part])
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfspSolution {
    pub schedule: FfspSchedule,
    /// Candidate makespans, augmentation-major.
    pub candidates: Vec<u32>,
    pub best_augmentation: usize,
    pub best_order: usize,
    pub inits: Vec<Vec<InitialEmbeddings>>,
}

/// Every machine order's schedule for augmentation `aug`; each is validated.
pub fn ffsp_augmentation(
    store: &ParamStore,
    model: &FfspModel,
    inst: &FfspInstance,
    opts: &SolveOptions,
    aug: usize,
) -> Result<(Vec<InitialEmbeddings>, Vec<FfspSchedule>)> {
    let inits = ffsp_inits(model, inst, &mut stream(opts.seed, &[aug as u64, 0]))?;
    let count = if opts.pomo {
        (0..inst.stages()).map(|k| (1..=inst.machines(k)).product::<usize>()).max().unwrap_or(1)
    } else {
        1
    };
    let orders = pomo_orders(inst, count);
    let mut tape = Tape::inference();
    let enc = encode_ffsp(&mut tape, store, model, inst, &inits)?;
    let mut rng = stream(opts.seed, &[aug as u64, 1, 0]);
    let ro = rollout_encoded_ffsp(&mut tape, store, model, inst, &enc, &orders, opts.mode, &mut rng)?;
    for s in &ro.schedules {
        validate_schedule(inst, s).map_err(|v| Error::Invalid(format!("model produced an invalid schedule: {v}")))?;
    }
    Ok((inits, ro.schedules))
}

pub fn collect_ffsp(parts: Vec<(Vec<InitialEmbeddings>, Vec<FfspSchedule>)>) -> FfspSolution {
    let groups: Vec<Vec<f64>> = parts.iter().map(|p| p.1.iter().map(|s| s.makespan as f64).collect()).collect();
    let (a, i) = best_of(&groups);
    FfspSolution {
        schedule: parts[a].1[i].clone(),
        candidates: parts.iter().flat_map(|p| p.1.iter().map(|s| s.makespan)).collect(),
        best_augmentation: a,
        best_order: i,
        inits: parts.into_iter().map(|p| p.0).collect(),
    }
}

/// Best schedule over `augmentation` encodings x all machine orders.
pub fn solve_ffsp(store: &ParamStore, model: &FfspModel, inst: &FfspInstance, opts: &SolveOptions) -> Result<FfspSolution> {
    opts.validate()?;
    let parts = (0..opts.augmentation)
        .map(|a| ffsp_augmentation(store, model, inst, opts, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect_ffsp(parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atsp::{generate_tmat, tour_length, TMAT_SCALE};
    use crate::ffsp::generate_ffsp;
    use crate::model::{atsp_toy, ffsp_toy};
    use crate::rng;

    fn atsp_model() -> (ParamStore, AtspModel) {
        let mut cfg = atsp_toy(8);
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.layers = 1;
        let mut store = ParamStore::new();
        let m = AtspModel::new(&mut store, &cfg, &mut rng::from_seed(1)).unwrap();
        (store, m)
    }

    #[test]
    fn two_city_greedy_forced() {
        let (store, m) = atsp_model();
        let inst = AtspInstance::new(2, alloc::vec![0.0, 3.0, 4.0, 0.0]).unwrap();
        let opts = SolveOptions {
            mode: DecodeMode::Greedy,
            ..SolveOptions::default()
        };
        let s = solve_atsp(&store, &m, &inst, 1.0, &opts).unwrap();
        assert_eq!(s.tour.length, 7.0);
        assert_eq!(s.candidates, alloc::vec![7.0, 7.0]);
        assert_eq!((s.best_augmentation, s.best_start), (0, 0));
    }

    #[test]
    fn best_of_is_monotone_and_consistent() {
        let (store, m) = atsp_model();
        let mut r = rng::from_seed(2);
        for i in 0..5 {
            let inst = generate_tmat(8, &mut r).unwrap();
            let opts = |k| SolveOptions {
                augmentation: k,
                seed: i,
                ..SolveOptions::default()
            };
            let one = solve_atsp(&store, &m, &inst, TMAT_SCALE, &opts(1)).unwrap();
            let eight = solve_atsp(&store, &m, &inst, TMAT_SCALE, &opts(8)).unwrap();
            assert_eq!(eight.candidates[..8], one.candidates[..]);
            assert!(eight.tour.length <= one.tour.length);
            assert_eq!(eight.tour.length, tour_length(&inst, &eight.tour.perm).unwrap());
            assert_eq!(eight.inits.len(), 8);

            let s1 = sample_only_solve(&store, &m, &inst, TMAT_SCALE, 1, i).unwrap();
            let s4 = sample_only_solve(&store, &m, &inst, TMAT_SCALE, 4, i).unwrap();
            assert_eq!(s1, one);
            assert!(s4.tour.length <= s1.tour.length);
            assert_eq!(s4.candidates.len(), 32);
        }
    }

    #[test]
    fn bad_options_rejected() {
        let (store, m) = atsp_model();
        let inst = generate_tmat(4, &mut rng::from_seed(3)).unwrap();
        let opts = SolveOptions {
            augmentation: 0,
            ..SolveOptions::default()
        };
        assert!(solve_atsp(&store, &m, &inst, TMAT_SCALE, &opts).is_err());
        assert!(sample_only_solve(&store, &m, &inst, TMAT_SCALE, 0, 1).is_err());
    }

    #[test]
    fn ffsp_candidates_and_monotonicity() {
        let mut cfg = ffsp_toy(4);
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.layers = 1;
        let mut store = ParamStore::new();
        let m = FfspModel::new(&mut store, &cfg, 3, &mut rng::from_seed(4)).unwrap();
        let inst = generate_ffsp(3, 4, 6, &mut rng::from_seed(5)).unwrap();
        let opts = |k| SolveOptions {
            augmentation: k,
            seed: 9,
            ..SolveOptions::default()
        };
        let one = solve_ffsp(&store, &m, &inst, &opts(1)).unwrap();
        let three = solve_ffsp(&store, &m, &inst, &opts(3)).unwrap();
        assert_eq!(one.candidates.len(), 24);
        assert_eq!(three.candidates[..24], one.candidates[..]);
        assert!(three.schedule.makespan <= one.schedule.makespan);
        assert_eq!(three.schedule.makespan, *three.candidates.iter().min().unwrap());
    }
}
