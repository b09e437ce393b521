use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::{Assignment, FfspInstance, FfspSchedule};
use crate::decoder::DecodeMode;
use crate::error::{Error, Result};

/// All permutations of `0..m` in lexicographic order.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..m).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..cur.len()).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..cur.len()).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Machine visiting order for every stage: permutation number `index` (mod
/// `M_k!`) of each stage's machines.
pub fn machine_orders(inst: &FfspInstance, index: usize) -> Vec<Vec<usize>> {
    (0..inst.stages())
        .map(|k| {
            let perms = permutations(inst.machines(k));
            perms[index % perms.len()].clone()
        })
        .collect()
}

/// One pending choice: `machine` of `stage` is idle at time `t`.
/// `mask` has `jobs + 1` entries (the last is "skip"); `true` means the
/// option may not be taken.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub t: u32,
    pub stage: usize,
    pub machine: usize,
    pub mask: Vec<bool>,
}

impl Decision {
    pub fn skip_index(&self) -> usize {
        self.mask.len() - 1
    }

    pub fn available(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask[..self.mask.len() - 1].iter().enumerate().filter(|(_, m)| !**m).map(|(j, _)| j)
    }
}

/// Time-stepped schedule construction. At every integer time, stages are
/// visited in order and each stage's machines in the configured order; an
/// idle machine with at least one waiting job produces a [`Decision`].
/// Choosing "skip" leaves the machine idle until the next time step. Past
/// the horizon (sum of all processing times) skipping is no longer offered.
#[derive(Clone, Debug)]
pub struct GanttEnv<'a> {
    inst: &'a FfspInstance,
    orders: Vec<Vec<usize>>,
    t: u32,
    stage: usize,
    cursor: usize,
    free_at: Vec<Vec<u32>>,
    /// `ready[k][j]`: time job `j` may start stage `k`, once known
    ready: Vec<Vec<Option<u32>>>,
    assign: Vec<Option<Assignment>>,
    remaining: usize,
    cap: u32,
    pending: Option<Decision>,
}

impl<'a> GanttEnv<'a> {
    pub fn new(inst: &'a FfspInstance, orders: Vec<Vec<usize>>) -> Result<Self> {
        let (s, n) = (inst.stages(), inst.jobs());
        if orders.len() != s {
            return Err(Error::Invalid(format!("{} machine orders for {s} stages", orders.len())));
        }
        for (k, o) in orders.iter().enumerate() {
            let mut seen = vec![false; inst.machines(k)];
            for &i in o {
                if i >= seen.len() || core::mem::replace(&mut seen[i], true) {
                    return Err(Error::Invalid(format!("stage {k} order is not a permutation")));
                }
            }
            if seen.contains(&false) {
                return Err(Error::Invalid(format!("stage {k} order is not a permutation")));
            }
        }
        let mut ready = vec![vec![None; n]; s];
        ready[0] = vec![Some(0); n];
        Ok(GanttEnv {
            inst,
            free_at: (0..s).map(|k| vec![0; inst.machines(k)]).collect(),
            orders,
            t: 0,
            stage: 0,
            cursor: 0,
            ready,
            assign: vec![None; s * n],
            remaining: s * n,
            cap: inst.horizon(),
            pending: None,
        })
    }

    /// Identity machine order on every stage.
    pub fn identity(inst: &'a FfspInstance) -> Result<Self> {
        let orders = (0..inst.stages()).map(|k| (0..inst.machines(k)).collect()).collect();
        GanttEnv::new(inst, orders)
    }

    pub fn instance(&self) -> &FfspInstance {
        self.inst
    }

    pub fn time(&self) -> u32 {
        self.t
    }

    pub fn done(&self) -> bool {
        self.remaining == 0
    }

    fn available(&self, k: usize, j: usize) -> bool {
        self.assign[k * self.inst.jobs() + j].is_none() && matches!(self.ready[k][j], Some(r) if r <= self.t)
    }

    /// Advances to the next decision point, or returns `None` once every
    /// job has been placed on every stage. Calling it again before
    /// [`apply`](Self::apply) returns the same decision.
    pub fn next_decision(&mut self) -> Option<Decision> {
        if let Some(d) = &self.pending {
            return Some(d.clone());
        }
        let n = self.inst.jobs();
        while self.remaining > 0 {
            let k = self.stage;
            if self.cursor < self.orders[k].len() {
                let i = self.orders[k][self.cursor];
                if self.free_at[k][i] <= self.t {
                    let mut mask: Vec<bool> = (0..n).map(|j| !self.available(k, j)).collect();
                    if mask.iter().any(|m| !m) {
                        mask.push(self.t >= self.cap);
                        let d = Decision {
                            t: self.t,
                            stage: k,
                            machine: i,
                            mask,
                        };
                        self.pending = Some(d.clone());
                        return Some(d);
                    }
                }
                self.cursor += 1;
            } else {
                self.cursor = 0;
                self.stage += 1;
                if self.stage == self.inst.stages() {
                    self.stage = 0;
                    self.t += 1;
                }
            }
        }
        None
    }

    /// Takes `action` (a job index, or `jobs` to skip) for the pending
    /// decision.
    pub fn apply(&mut self, action: usize) -> Result<()> {
        let d = self.pending.take().ok_or_else(|| Error::Invalid("no pending decision".into()))?;
        if action >= d.mask.len() || d.mask[action] {
            let why = format!("action {action} is masked at t={} stage {} machine {}", d.t, d.stage, d.machine);
            self.pending = Some(d);
            return Err(Error::Invalid(why));
        }
        if action < d.skip_index() {
            let (k, i, j) = (d.stage, d.machine, action);
            let end = self.t + self.inst.p(k, i, j);
            self.assign[k * self.inst.jobs() + j] = Some(Assignment { machine: i, start: self.t });
            self.free_at[k][i] = end;
            if k + 1 < self.inst.stages() {
                self.ready[k + 1][j] = Some(end);
            }
            self.remaining -= 1;
        }
        self.cursor += 1;
        Ok(())
    }

    /// The finished schedule; errors while jobs are still unplaced.
    pub fn schedule(&self) -> Result<FfspSchedule> {
        let assign = self
            .assign
            .iter()
            .map(|a| a.ok_or_else(|| Error::Invalid("schedule is incomplete".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok(FfspSchedule::from_assignments(self.inst, assign))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanttTrajectory {
    pub schedule: FfspSchedule,
    /// Chosen option per decision (`jobs` means skip).
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
}

/// Runs the environment to completion. `policy` returns probabilities over
/// the `jobs + 1` options of the decision (masked ones must be 0).
pub fn gantt_rollout<R: Rng, P>(inst: &FfspInstance, orders: Vec<Vec<usize>>, mut policy: P, mode: DecodeMode, rng: &mut R) -> Result<GanttTrajectory>
where
    P: FnMut(&GanttEnv, &Decision) -> Result<Vec<f64>>,
{
    let mut env = GanttEnv::new(inst, orders)?;
    let mut actions = Vec::new();
    let mut log_probs = Vec::new();
    while let Some(d) = env.next_decision() {
        let probs = policy(&env, &d)?;
        if probs.len() != d.mask.len() {
            return Err(Error::Invalid(format!("policy returned {} probabilities", probs.len())));
        }
        let a = mode.pick(&probs, rng);
        log_probs.push(libm::log(probs[a]));
        actions.push(a);
        env.apply(a)?;
    }
    Ok(GanttTrajectory {
        schedule: env.schedule()?,
        actions,
        log_probs,
    })
}

/// Action sequence that makes the environment rebuild `sched`: at each
/// decision the machine takes the job `sched` starts there at that time,
/// and skips otherwise. Fails if `sched` cannot be produced this way (for
/// example if it keeps a machine idle past the horizon).
pub fn schedule_actions(inst: &FfspInstance, orders: Vec<Vec<usize>>, sched: &FfspSchedule) -> Result<Vec<usize>> {
    let n = inst.jobs();
    let mut env = GanttEnv::new(inst, orders)?;
    let mut actions = Vec::new();
    while let Some(d) = env.next_decision() {
        let a = d
            .available()
            .find(|&j| sched.get(d.stage, j) == Assignment { machine: d.machine, start: d.t })
            .unwrap_or(n);
        env.apply(a)?;
        actions.push(a);
    }
    if env.schedule()? != *sched {
        return Err(Error::Invalid("schedule cannot be replayed by the environment".into()));
    }
    Ok(actions)
}

/// Replays a recorded action sequence; errors on a masked action or if the
/// sequence ends early or runs long.
pub fn replay_actions(inst: &FfspInstance, orders: Vec<Vec<usize>>, actions: &[usize]) -> Result<FfspSchedule> {
    let mut env = GanttEnv::new(inst, orders)?;
    let mut it = actions.iter();
    while env.next_decision().is_some() {
        let &a = it.next().ok_or_else(|| Error::Invalid("action sequence ended early".into()))?;
        env.apply(a)?;
    }
    if it.next().is_some() {
        return Err(Error::Invalid("action sequence longer than the episode".into()));
    }
    env.schedule()
}
