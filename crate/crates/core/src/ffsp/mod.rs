//! Flexible flow shop: instances, schedules and their validation, the
//! time-stepped Gantt construction environment, greedy heuristics, the
//! chromosome encoding shared by GA and PSO, and the MIP model.

mod chromosome;
mod env;
mod fixture;
mod ga;
mod heuristics;
mod mip;
mod pso;

pub use chromosome::{decode_chromosome, encode_schedule, random_chromosome, Chromosome};
pub use env::{gantt_rollout, machine_orders, permutations, replay_actions, schedule_actions, Decision, GanttEnv, GanttTrajectory};
pub use fixture::{fixture_instance, FIXTURE_ACTIONS, FIXTURE_MAKESPAN};
pub use ga::{ga_solve, GaConfig, SearchResult};
pub use heuristics::{random_schedule, sjf, sjf_per_machine};
pub use mip::{default_big_m, ffsp_assignment, ffsp_model};
pub use pso::{pso_solve, PsoConfig};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::encoder::DataMatrix;
use crate::error::{Error, Result};

/// Processing times are divided by this before entering the network, and
/// makespans before becoming rewards.
pub const FFSP_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FfspInstance {
    machines: Vec<usize>,
    jobs: usize,
    /// `proc[k][i * jobs + j]`: time of job `j` on machine `i` of stage `k`.
    proc: Vec<Vec<u32>>,
}

impl FfspInstance {
    pub fn new(machines: Vec<usize>, jobs: usize, proc: Vec<Vec<u32>>) -> Result<Self> {
        if machines.is_empty() || jobs == 0 || machines.contains(&0) {
            return Err(Error::Invalid("FFSP needs at least one stage, machine and job".into()));
        }
        if proc.len() != machines.len() {
            return Err(Error::Invalid(format!("{} matrices for {} stages", proc.len(), machines.len())));
        }
        for (k, (p, &m)) in proc.iter().zip(&machines).enumerate() {
            if p.len() != m * jobs {
                return Err(Error::Invalid(format!("stage {k} matrix has {} entries, expected {m}x{jobs}", p.len())));
            }
            if p.contains(&0) {
                return Err(Error::Invalid(format!("stage {k} has a zero processing time")));
            }
        }
        Ok(FfspInstance { machines, jobs, proc })
    }

    pub fn uniform(stages: usize, machines: usize, jobs: usize, proc: Vec<Vec<u32>>) -> Result<Self> {
        FfspInstance::new(vec![machines; stages], jobs, proc)
    }

    pub fn stages(&self) -> usize {
        self.machines.len()
    }

    pub fn machines(&self, stage: usize) -> usize {
        self.machines[stage]
    }

    pub fn machine_counts(&self) -> &[usize] {
        &self.machines
    }

    pub fn max_machines(&self) -> usize {
        self.machines.iter().copied().max().unwrap_or(0)
    }

    pub fn jobs(&self) -> usize {
        self.jobs
    }

    #[inline]
    pub fn p(&self, stage: usize, machine: usize, job: usize) -> u32 {
        self.proc[stage][machine * self.jobs + job]
    }

    pub fn matrix(&self, stage: usize) -> &[u32] {
        &self.proc[stage]
    }

    /// Sum of every entry: no sensible schedule runs longer.
    pub fn horizon(&self) -> u32 {
        self.proc.iter().flatten().sum()
    }

    pub fn data_matrix(&self, stage: usize, scale: f64) -> Result<DataMatrix> {
        DataMatrix::single(
            self.machines[stage],
            self.jobs,
            self.proc[stage].iter().map(|&v| v as f64 / scale).collect(),
        )
    }
}

/// Independent integers in `[lo, hi]` for every stage, machine and job.
pub fn generate_ffsp_range<R: Rng>(stages: usize, machines: usize, jobs: usize, lo: u32, hi: u32, rng: &mut R) -> Result<FfspInstance> {
    let proc = (0..stages)
        .map(|_| (0..machines * jobs).map(|_| rng.gen_range(lo..=hi)).collect())
        .collect();
    FfspInstance::uniform(stages, machines, jobs, proc)
}

/// Processing times uniform on `{2, ..., 9}`.
pub fn generate_ffsp<R: Rng>(stages: usize, machines: usize, jobs: usize, rng: &mut R) -> Result<FfspInstance> {
    generate_ffsp_range(stages, machines, jobs, 2, 9, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub machine: usize,
    pub start: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FfspSchedule {
    pub stages: usize,
    pub jobs: usize,
    /// `assign[k * jobs + j]`
    pub assign: Vec<Assignment>,
    pub makespan: u32,
}

impl FfspSchedule {
    /// Wraps assignments, computing the makespan from the last stage.
    pub fn from_assignments(inst: &FfspInstance, assign: Vec<Assignment>) -> Self {
        let (s, n) = (inst.stages(), inst.jobs());
        let makespan = (0..n)
            .map(|j| {
                let a = assign[(s - 1) * n + j];
                a.start + inst.p(s - 1, a.machine, j)
            })
            .max()
            .unwrap_or(0);
        FfspSchedule {
            stages: s,
            jobs: n,
            assign,
            makespan,
        }
    }

    pub fn get(&self, stage: usize, job: usize) -> Assignment {
        self.assign[stage * self.jobs + job]
    }

    pub fn end(&self, inst: &FfspInstance, stage: usize, job: usize) -> u32 {
        let a = self.get(stage, job);
        a.start + inst.p(stage, a.machine, job)
    }
}

/// First violated constraint found by [`validate_schedule`]. `id` names the
/// constraint family: `F.2` assignment, `F.8` first stage, `F.9` stage
/// precedence, `F.10` machine overlap, `F.1` makespan.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScheduleViolation {
    pub id: &'static str,
    pub stage: usize,
    pub job: usize,
    pub other: Option<usize>,
    pub detail: String,
}

impl core::fmt::Display for ScheduleViolation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} violated at stage {} job {}", self.id, self.stage, self.job)?;
        if let Some(o) = self.other {
            write!(f, " (with job {o})")?;
        }
        write!(f, ": {}", self.detail)
    }
}

pub fn validate_schedule(inst: &FfspInstance, sched: &FfspSchedule) -> core::result::Result<(), ScheduleViolation> {
    let (s, n) = (inst.stages(), inst.jobs());
    let bad = |id, stage, job, other, detail: String| ScheduleViolation {
        id,
        stage,
        job,
        other,
        detail,
    };
    if sched.stages != s || sched.jobs != n || sched.assign.len() != s * n {
        return Err(bad("F.2", 0, 0, None, format!("schedule covers {}x{} slots", sched.stages, sched.jobs)));
    }
    for k in 0..s {
        for j in 0..n {
            let a = sched.get(k, j);
            if a.machine >= inst.machines(k) {
                return Err(bad("F.2", k, j, None, format!("machine {} does not exist", a.machine)));
            }
        }
    }
    for j in 0..n {
        if sched.end(inst, 0, j) < inst.p(0, sched.get(0, j).machine, j) {
            return Err(bad("F.8", 0, j, None, "completes before its processing time".into()));
        }
        for k in 1..s {
            let prev = sched.end(inst, k - 1, j);
            if sched.get(k, j).start < prev {
                return Err(bad("F.9", k, j, None, format!("starts at {} before stage {} ends at {prev}", sched.get(k, j).start, k - 1)));
            }
        }
    }
    for k in 0..s {
        for j in 0..n {
            for l in j + 1..n {
                let (a, b) = (sched.get(k, j), sched.get(k, l));
                if a.machine != b.machine {
                    continue;
                }
                let (ea, eb) = (sched.end(inst, k, j), sched.end(inst, k, l));
                if a.start < eb && b.start < ea {
                    return Err(bad("F.10", k, j, Some(l), format!("both run on machine {} around t={}", a.machine, a.start.max(b.start))));
                }
            }
        }
    }
    let true_ms = (0..n).map(|j| sched.end(inst, s - 1, j)).max().unwrap_or(0);
    if true_ms != sched.makespan {
        return Err(bad("F.1", s - 1, 0, None, format!("reported makespan {} but last job ends at {true_ms}", sched.makespan)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn generated_entries_in_range_with_expected_mean() {
        let mut r = rng::from_seed(1);
        let mut sum = 0u64;
        let mut count = 0u64;
        for _ in 0..1000 {
            let inst = generate_ffsp(3, 4, 20, &mut r).unwrap();
            assert_eq!(inst.stages(), 3);
            assert_eq!(inst.machine_counts(), &[4, 4, 4]);
            for k in 0..3 {
                assert!(inst.matrix(k).iter().all(|v| (2..=9).contains(v)));
                sum += inst.matrix(k).iter().map(|&v| v as u64).sum::<u64>();
                count += 80;
            }
        }
        // 240,000 draws here; the million-draw check lives in the acceptance suite
        assert!((sum as f64 / count as f64 - 5.5).abs() < 0.05);
    }

    fn two_job() -> FfspInstance {
        FfspInstance::uniform(2, 1, 2, vec![vec![3, 2], vec![4, 5]]).unwrap()
    }

    fn sched(inst: &FfspInstance, rows: &[(usize, u32)]) -> FfspSchedule {
        FfspSchedule::from_assignments(inst, rows.iter().map(|&(machine, start)| Assignment { machine, start }).collect())
    }

    #[test]
    fn validator_catches_each_family() {
        let inst = two_job();
        // stage 0: job0 [0,3), job1 [3,5); stage 1: job0 [3,7), job1 [7,12)
        let ok = sched(&inst, &[(0, 0), (0, 3), (0, 3), (0, 7)]);
        assert_eq!(ok.makespan, 12);
        assert_eq!(validate_schedule(&inst, &ok), Ok(()));

        let overlap = sched(&inst, &[(0, 0), (0, 2), (0, 3), (0, 7)]);
        assert_eq!(validate_schedule(&inst, &overlap).unwrap_err().id, "F.10");

        let early = sched(&inst, &[(0, 0), (0, 3), (0, 2), (0, 7)]);
        assert_eq!(validate_schedule(&inst, &early).unwrap_err().id, "F.9");

        let machine = sched(&inst, &[(1, 0), (0, 3), (0, 3), (0, 7)]);
        assert_eq!(validate_schedule(&inst, &machine).unwrap_err().id, "F.2");

        let mut wrong_ms = ok.clone();
        wrong_ms.makespan = 11;
        assert_eq!(validate_schedule(&inst, &wrong_ms).unwrap_err().id, "F.1");
    }
}
