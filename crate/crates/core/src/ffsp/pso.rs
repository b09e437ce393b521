use alloc::vec::Vec;
use rand::Rng;

use super::ga::SearchResult;
use super::{decode_chromosome, encode_schedule, random_chromosome, sjf, FfspInstance};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PsoConfig {
    pub particles: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity limit as a fraction of each coordinate's range.
    pub vmax_frac: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            particles: 25,
            inertia: 0.7,
            cognitive: 1.5,
            social: 1.5,
            vmax_frac: 1.0,
        }
    }
}

/// Global-best particle swarm over chromosome positions. Positions are
/// clamped to `[0, M_k)` per coordinate; one particle starts on the SJF
/// encoding.
pub fn pso_solve<R: Rng>(inst: &FfspInstance, cfg: &PsoConfig, iters: usize, rng: &mut R) -> Result<SearchResult> {
    if cfg.particles == 0 {
        return Err(Error::Config {
            field: "particles",
            reason: "must be positive".into(),
        });
    }
    let n = inst.jobs();
    let dim = inst.stages() * n;
    let hi: Vec<f64> = (0..dim).map(|g| inst.machines(g / n) as f64 - 1e-9).collect();
    let vmax: Vec<f64> = hi.iter().map(|h| h * cfg.vmax_frac).collect();

    let seed = sjf(inst);
    let mut x = Vec::with_capacity(cfg.particles);
    x.push(encode_schedule(inst, &seed));
    while x.len() < cfg.particles {
        x.push(random_chromosome(inst, rng));
    }
    let mut v: Vec<Vec<f64>> = (0..cfg.particles)
        .map(|_| (0..dim).map(|g| rng.gen_range(-vmax[g]..=vmax[g])).collect())
        .collect();
    let mut pbest = x.clone();
    let mut pfit = Vec::with_capacity(cfg.particles);
    for p in &x {
        pfit.push(decode_chromosome(inst, p)?.makespan);
    }
    let mut gi = (0..cfg.particles).min_by_key(|&i| pfit[i]).unwrap();
    let mut best = decode_chromosome(inst, &pbest[gi])?;
    let mut history = Vec::with_capacity(iters + 1);
    history.push(best.makespan);
    for _ in 0..iters {
        let g = pbest[gi].clone();
        for p in 0..cfg.particles {
            for d in 0..dim {
                let r1: f64 = rng.gen();
                let r2: f64 = rng.gen();
                let vel = cfg.inertia * v[p][d] + cfg.cognitive * r1 * (pbest[p][d] - x[p][d]) + cfg.social * r2 * (g[d] - x[p][d]);
                v[p][d] = vel.clamp(-vmax[d], vmax[d]);
                x[p][d] = (x[p][d] + v[p][d]).clamp(0.0, hi[d]);
            }
            let s = decode_chromosome(inst, &x[p])?;
            if s.makespan <= pfit[p] {
                pfit[p] = s.makespan;
                pbest[p].clone_from(&x[p]);
            }
            if s.makespan < best.makespan {
                best = s;
                gi = p;
            }
        }
        history.push(best.makespan);
    }
    Ok(SearchResult { best, history })
}
