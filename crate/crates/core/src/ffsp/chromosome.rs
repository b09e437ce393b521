use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::{Assignment, FfspInstance, FfspSchedule};
use crate::error::{Error, Result};

/// Random-key encoding with one real per (stage, job), row-major by stage.
/// The integer part picks the machine, the fractional part is the job's
/// priority on that machine (lower runs first).
pub type Chromosome = Vec<f64>;

fn split(v: f64, machines: usize) -> (usize, f64) {
    let i = (libm::floor(v).max(0.0) as usize).min(machines - 1);
    (i, v - i as f64)
}

/// Non-delay decode: stage by stage, each machine repeatedly starts the
/// lowest-priority-value job among those already waiting, jumping ahead to
/// the next release only when nothing waits.
pub fn decode_chromosome(inst: &FfspInstance, genes: &[f64]) -> Result<FfspSchedule> {
    let (s, n) = (inst.stages(), inst.jobs());
    if genes.len() != s * n {
        return Err(Error::Invalid(format!("chromosome has {} genes, expected {}", genes.len(), s * n)));
    }
    if genes.iter().any(|g| !g.is_finite()) {
        return Err(Error::Invalid("chromosome contains a non-finite gene".into()));
    }
    let mut assign = vec![Assignment { machine: 0, start: 0 }; s * n];
    let mut ready = vec![0u32; n];
    let mut queue: Vec<(f64, usize)> = Vec::with_capacity(n);
    for k in 0..s {
        let m = inst.machines(k);
        let row = &genes[k * n..(k + 1) * n];
        let mut next_ready = ready.clone();
        for i in 0..m {
            queue.clear();
            queue.extend((0..n).filter_map(|j| {
                let (mi, f) = split(row[j], m);
                (mi == i).then_some((f, j))
            }));
            queue.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut tau = 0u32;
            while !queue.is_empty() {
                let pos = match queue.iter().position(|&(_, j)| ready[j] <= tau) {
                    Some(p) => p,
                    None => {
                        tau = queue.iter().map(|&(_, j)| ready[j]).min().unwrap();
                        queue.iter().position(|&(_, j)| ready[j] <= tau).unwrap()
                    }
                };
                let (_, j) = queue.remove(pos);
                assign[k * n + j] = Assignment { machine: i, start: tau };
                tau += inst.p(k, i, j);
                next_ready[j] = tau;
            }
        }
        ready = next_ready;
    }
    Ok(FfspSchedule::from_assignments(inst, assign))
}

/// Chromosome that decodes back to `sched`, provided `sched` is itself
/// non-delay on every machine (as the greedy constructions are).
pub fn encode_schedule(inst: &FfspInstance, sched: &FfspSchedule) -> Chromosome {
    let (s, n) = (inst.stages(), inst.jobs());
    let mut genes = vec![0.0; s * n];
    for k in 0..s {
        for i in 0..inst.machines(k) {
            let mut on: Vec<usize> = (0..n).filter(|&j| sched.get(k, j).machine == i).collect();
            on.sort_by_key(|&j| (sched.get(k, j).start, j));
            let c = on.len() as f64;
            for (r, j) in on.into_iter().enumerate() {
                genes[k * n + j] = i as f64 + (r as f64 + 0.5) / c;
            }
        }
    }
    genes
}

pub fn random_chromosome<R: Rng>(inst: &FfspInstance, rng: &mut R) -> Chromosome {
    let n = inst.jobs();
    (0..inst.stages() * n)
        .map(|g| {
            let m = inst.machines(g / n);
            rng.gen_range(0..m) as f64 + rng.gen::<f64>()
        })
        .collect()
}
