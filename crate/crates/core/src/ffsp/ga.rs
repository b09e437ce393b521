use alloc::vec::Vec;
use rand::Rng;

use super::{decode_chromosome, encode_schedule, random_chromosome, sjf, Chromosome, FfspInstance, FfspSchedule};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GaConfig {
    pub population: usize,
    pub crossover: f64,
    pub mutation: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 25,
            crossover: 0.3,
            mutation: 0.3,
        }
    }
}

/// Best schedule found plus the best-so-far makespan after each iteration
/// (entry 0 is the initial population).
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best: FfspSchedule,
    pub history: Vec<u32>,
}

pub(crate) fn check_probability(field: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config {
            field,
            reason: alloc::format!("{v} is not a probability"),
        })
    }
}

fn machine_of(g: f64) -> f64 {
    libm::floor(g)
}

fn tournament<R: Rng>(fit: &[u32], rng: &mut R) -> usize {
    let a = rng.gen_range(0..fit.len());
    let b = rng.gen_range(0..fit.len());
    if fit[b] < fit[a] {
        b
    } else {
        a
    }
}

/// Machine (integer part) and priority (fraction) of every gene come from
/// independently chosen parents.
fn crossover<R: Rng>(a: &[f64], b: &[f64], rng: &mut R) -> Chromosome {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let m = if rng.gen::<bool>() { machine_of(x) } else { machine_of(y) };
            let f = if rng.gen::<bool>() { x - machine_of(x) } else { y - machine_of(y) };
            m + f
        })
        .collect()
}

fn mutate<R: Rng>(inst: &FfspInstance, c: &mut [f64], rng: &mut R) {
    let n = inst.jobs();
    let k = rng.gen_range(0..inst.stages());
    let row = &mut c[k * n..(k + 1) * n];
    let machines: Vec<f64> = row.iter().map(|&g| machine_of(g)).collect();
    let mut fracs: Vec<f64> = row.iter().zip(&machines).map(|(g, m)| g - m).collect();
    let a = rng.gen_range(0..n);
    let b = rng.gen_range(0..n);
    match rng.gen_range(0..4) {
        0 => fracs.swap(a, b),
        1 => fracs[a.min(b)..=a.max(b)].reverse(),
        2 => {
            let f = fracs.remove(a);
            fracs.insert(b, f);
        }
        _ => {
            row[a] = rng.gen_range(0..inst.machines(k)) as f64 + rng.gen::<f64>();
            return;
        }
    }
    for ((g, m), f) in row.iter_mut().zip(machines).zip(fracs) {
        *g = m + f;
    }
}

/// Elitist genetic algorithm over [`Chromosome`]s. One initial chromosome
/// encodes the SJF schedule, the rest are random; each generation keeps the
/// best individual and fills the remainder by tournament selection,
/// crossover and single-row mutation.
pub fn ga_solve<R: Rng>(inst: &FfspInstance, cfg: &GaConfig, iters: usize, rng: &mut R) -> Result<SearchResult> {
    if cfg.population == 0 {
        return Err(Error::Config {
            field: "population",
            reason: "must be positive".into(),
        });
    }
    check_probability("crossover", cfg.crossover)?;
    check_probability("mutation", cfg.mutation)?;
    let seed = sjf(inst);
    let mut pop: Vec<Chromosome> = Vec::with_capacity(cfg.population);
    pop.push(encode_schedule(inst, &seed));
    while pop.len() < cfg.population {
        pop.push(random_chromosome(inst, rng));
    }
    let mut scheds = pop.iter().map(|c| decode_chromosome(inst, c)).collect::<Result<Vec<_>>>()?;
    let mut best = seed;
    for s in &scheds {
        if s.makespan < best.makespan {
            best = s.clone();
        }
    }
    let mut history = Vec::with_capacity(iters + 1);
    history.push(best.makespan);
    for _ in 0..iters {
        let fit: Vec<u32> = scheds.iter().map(|s| s.makespan).collect();
        let elite = (0..fit.len()).min_by_key(|&i| fit[i]).unwrap();
        let mut next = Vec::with_capacity(cfg.population);
        next.push(pop[elite].clone());
        while next.len() < cfg.population {
            let p = tournament(&fit, rng);
            let mut child = if rng.gen::<f64>() < cfg.crossover {
                let q = tournament(&fit, rng);
                crossover(&pop[p], &pop[q], rng)
            } else {
                pop[p].clone()
            };
            if rng.gen::<f64>() < cfg.mutation {
                mutate(inst, &mut child, rng);
            }
            next.push(child);
        }
        pop = next;
        scheds = pop.iter().map(|c| decode_chromosome(inst, c)).collect::<Result<Vec<_>>>()?;
        for s in &scheds {
            if s.makespan < best.makespan {
                best = s.clone();
            }
        }
        history.push(best.makespan);
    }
    Ok(SearchResult { best, history })
}
