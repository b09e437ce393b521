//! Method dispatch over instance sets.

use std::str::FromStr;
use std::time::Instant;

use matnet_core::atsp::{farthest_insertion, held_karp, nearest_insertion, nearest_neighbor};
use matnet_core::ffsp::{ga_solve, pso_solve, random_schedule, sjf, validate_schedule, GaConfig, PsoConfig};
use matnet_core::inference::{solve_atsp, solve_ffsp, SolveOptions};
use matnet_core::rng::{derive_seed, stream};
use rayon::prelude::*;

use crate::config::Problem;
use crate::error::{AppError, Result};
use crate::formats::{AnyInstance, Solution};
use crate::report::MethodRun;
use crate::trainer::{Model, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Nn,
    Ni,
    Fi,
    Oracle,
    Sjf,
    Random,
    Ga,
    Pso,
    Matnet,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Nn,
        Method::Ni,
        Method::Fi,
        Method::Oracle,
        Method::Sjf,
        Method::Random,
        Method::Ga,
        Method::Pso,
        Method::Matnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nn => "nn",
            Method::Ni => "ni",
            Method::Fi => "fi",
            Method::Oracle => "oracle",
            Method::Sjf => "sjf",
            Method::Random => "random",
            Method::Ga => "ga",
            Method::Pso => "pso",
            Method::Matnet => "matnet",
        }
    }

    /// `None` for methods that solve both problems.
    pub fn problem(self) -> Option<Problem> {
        match self {
            Method::Nn | Method::Ni | Method::Fi | Method::Oracle => Some(Problem::Atsp),
            Method::Sjf | Method::Random | Method::Ga | Method::Pso => Some(Problem::Ffsp),
            Method::Matnet => None,
        }
    }
}

impl FromStr for Method {
    type Err = AppError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            AppError::config("methods", format!("unknown method `{s}` (known: {})", known.join(", ")))
        })
    }
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    /// GA / PSO iteration budget.
    pub iters: usize,
    /// Decoding options for `matnet`; the seed is replaced per instance.
    pub solve: SolveOptions,
    pub model: Option<Trainer>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            iters: 1000,
            solve: SolveOptions::default(),
            model: None,
        }
    }
}

pub fn problem_of(inst: &AnyInstance) -> Problem {
    match inst {
        AnyInstance::Atsp(_) => Problem::Atsp,
        AnyInstance::Ffsp(_) => Problem::Ffsp,
    }
}

/// Solves instance `index` of a set; randomness comes from `(seed, index)`.
pub fn solve_one(method: Method, inst: &AnyInstance, seed: u64, index: usize, opts: &BenchOptions) -> Result<(f64, Solution)> {
    let problem = problem_of(inst);
    if method.problem().is_some_and(|p| p != problem) {
        return Err(AppError::config("methods", format!("`{}` does not apply to {} instances", method.name(), problem.as_str())));
    }
    let mut rng = stream(seed, &[index as u64]);
    let solve_opts = SolveOptions {
        seed: derive_seed(seed, &[index as u64]),
        ..opts.solve.clone()
    };
    let model = || -> Result<&Trainer> {
        let t = opts.model.as_ref().ok_or_else(|| AppError::config("checkpoint", "method `matnet` needs a checkpoint"))?;
        if t.config.problem != problem {
            return Err(AppError::config("checkpoint", format!("checkpoint was trained on {}", t.config.problem.as_str())));
        }
        Ok(t)
    };
    match inst {
        AnyInstance::Atsp(i) => {
            let tour = match method {
                Method::Nn => nearest_neighbor(i),
                Method::Ni => nearest_insertion(i),
                Method::Fi => farthest_insertion(i),
                Method::Oracle => held_karp(i)?,
                Method::Matnet => {
                    let t = model()?;
                    let Model::Atsp(m) = &t.model else { unreachable!() };
                    solve_atsp(&t.store, m, i, t.config.generator.scale(), &solve_opts)?.tour
                }
                _ => unreachable!(),
            };
            Ok((tour.length, Solution::Tour(tour.perm)))
        }
        AnyInstance::Ffsp(i) => {
            let sched = match method {
                Method::Sjf => sjf(i),
                Method::Random => random_schedule(i, &mut rng)?,
                Method::Ga => ga_solve(i, &GaConfig::default(), opts.iters, &mut rng)?.best,
                Method::Pso => pso_solve(i, &PsoConfig::default(), opts.iters, &mut rng)?.best,
                Method::Matnet => {
                    let t = model()?;
                    let Model::Ffsp(m) = &t.model else { unreachable!() };
                    solve_ffsp(&t.store, m, i, &solve_opts)?.schedule
                }
                _ => unreachable!(),
            };
            validate_schedule(i, &sched).map_err(|v| AppError::Other(format!("{} produced an invalid schedule: {v}", method.name())))?;
            Ok((sched.makespan as f64, Solution::Schedule(sched)))
        }
    }
}

/// Runs `method` over the whole set on the current rayon pool.
pub fn run_method(method: Method, insts: &[AnyInstance], seed: u64, opts: &BenchOptions) -> Result<MethodRun> {
    let t0 = Instant::now();
    let objectives = insts
        .par_iter()
        .enumerate()
        .map(|(i, inst)| solve_one(method, inst, seed, i, opts).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(MethodRun {
        method: method.name().to_string(),
        seed,
        objectives,
        wall_seconds: t0.elapsed().as_secs_f64(),
    })
}
