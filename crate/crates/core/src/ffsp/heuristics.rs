use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::{Assignment, FfspInstance, FfspSchedule, GanttEnv};
use crate::error::Result;

/// Shortest-job-first. At each integer time and for each stage, the
/// shortest (idle machine, waiting job) pair is started repeatedly until no
/// idle machine or no waiting job is left. Ties go to the lower machine,
/// then the lower job.
pub fn sjf(inst: &FfspInstance) -> FfspSchedule {
    let (s, n) = (inst.stages(), inst.jobs());
    let mut free_at: Vec<Vec<u32>> = (0..s).map(|k| vec![0; inst.machines(k)]).collect();
    let mut ready: Vec<Vec<Option<u32>>> = vec![vec![None; n]; s];
    ready[0] = vec![Some(0); n];
    let mut assign: Vec<Option<Assignment>> = vec![None; s * n];
    let mut remaining = s * n;
    let mut t = 0u32;
    while remaining > 0 {
        for k in 0..s {
            loop {
                let mut best: Option<(u32, usize, usize)> = None;
                for i in 0..inst.machines(k) {
                    if free_at[k][i] > t {
                        continue;
                    }
                    for j in 0..n {
                        if assign[k * n + j].is_some() || !matches!(ready[k][j], Some(r) if r <= t) {
                            continue;
                        }
                        let c = (inst.p(k, i, j), i, j);
                        if best.is_none_or(|b| c < b) {
                            best = Some(c);
                        }
                    }
                }
                let Some((p, i, j)) = best else { break };
                assign[k * n + j] = Some(Assignment { machine: i, start: t });
                free_at[k][i] = t + p;
                if k + 1 < s {
                    ready[k + 1][j] = Some(t + p);
                }
                remaining -= 1;
            }
        }
        t += 1;
    }
    FfspSchedule::from_assignments(inst, assign.into_iter().map(Option::unwrap).collect())
}

/// Variant where machines are visited in index order and each idle machine
/// takes its own shortest waiting job.
pub fn sjf_per_machine(inst: &FfspInstance) -> Result<FfspSchedule> {
    let mut env = GanttEnv::identity(inst)?;
    while let Some(d) = env.next_decision() {
        let j = d.available().min_by_key(|&j| (inst.p(d.stage, d.machine, j), j)).unwrap();
        env.apply(j)?;
    }
    env.schedule()
}

/// Uniform choice over every unmasked option of each decision, "skip"
/// included, with machines visited in index order.
pub fn random_schedule<R: Rng>(inst: &FfspInstance, rng: &mut R) -> Result<FfspSchedule> {
    let mut env = GanttEnv::identity(inst)?;
    let mut open = Vec::with_capacity(inst.jobs() + 1);
    while let Some(d) = env.next_decision() {
        open.clear();
        open.extend((0..d.mask.len()).filter(|&a| !d.mask[a]));
        env.apply(open[rng.gen_range(0..open.len())])?;
    }
    env.schedule()
}

#[cfg(test)]
mod tests {
    use super::super::{generate_ffsp, validate_schedule};
    use super::*;
    use crate::rng;

    #[test]
    fn sjf_hand_traced() {
        // one stage, two machines, three jobs
        // m0: 4 2 6   m1: 3 5 2
        let inst = FfspInstance::uniform(1, 2, 3, vec![vec![4, 2, 6, 3, 5, 2]]).unwrap();
        let s = sjf(&inst);
        // t=0: (2,m0,j1) then (2,m1,j2); t=2: both free, j0 -> m0 would be 4, m1 3 -> (3,m1,j0)
        assert_eq!(s.get(0, 1), Assignment { machine: 0, start: 0 });
        assert_eq!(s.get(0, 2), Assignment { machine: 1, start: 0 });
        assert_eq!(s.get(0, 0), Assignment { machine: 1, start: 2 });
        assert_eq!(s.makespan, 5);
    }

    #[test]
    fn single_job_runs_back_to_back() {
        let inst = FfspInstance::uniform(3, 2, 1, vec![vec![5, 3], vec![2, 4], vec![7, 6]]).unwrap();
        let s = sjf(&inst);
        assert_eq!(s.makespan, 3 + 2 + 6);
        assert_eq!(s.get(2, 0), Assignment { machine: 1, start: 5 });
    }

    #[test]
    fn heuristics_valid_and_deterministic() {
        let mut r = rng::from_seed(11);
        for _ in 0..30 {
            let inst = generate_ffsp(3, 4, 20, &mut r).unwrap();
            let a = sjf(&inst);
            validate_schedule(&inst, &a).unwrap();
            assert_eq!(a, sjf(&inst));
            validate_schedule(&inst, &sjf_per_machine(&inst).unwrap()).unwrap();
            let x = random_schedule(&inst, &mut rng::from_seed(3)).unwrap();
            validate_schedule(&inst, &x).unwrap();
            assert_eq!(x, random_schedule(&inst, &mut rng::from_seed(3)).unwrap());
        }
    }
}
