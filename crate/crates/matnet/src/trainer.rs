//! POMO training driver: fresh instances per batch, per-instance gradients
//! computed in parallel and summed in instance order, one Adam step per
//! batch.

use std::time::Instant;

use matnet_core::adam::AdamState;
use matnet_core::atsp::{generate_euclidean, generate_tmat, nearest_neighbor, AtspInstance};
use matnet_core::ffsp::{generate_ffsp, sjf, FfspInstance, FFSP_SCALE};
use matnet_core::model::{AtspModel, FfspModel};
use matnet_core::params::{Gradients, ParamStore};
use matnet_core::pomo::{atsp_instance_grads, ffsp_instance_grads, InstanceStats};
use matnet_core::rng::stream;
use rayon::prelude::*;

use crate::config::{AtspGenerator, Problem, TrainConfig};
use crate::error::{AppError, Result};

/// Seed-path tags keeping the derived streams apart.
const TAG_PARAMS: u64 = 0;
const TAG_INSTANCE: u64 = 1;
const TAG_ROLLOUT: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Atsp(AtspModel),
    Ffsp(FfspModel),
}

impl Model {
    pub fn build(config: &TrainConfig, store: &mut ParamStore) -> Result<Model> {
        let mut rng = stream(config.seed, &[TAG_PARAMS]);
        Ok(match config.problem {
            Problem::Atsp => Model::Atsp(AtspModel::new(store, &config.encoder, &mut rng)?),
            Problem::Ffsp => Model::Ffsp(FfspModel::new(store, &config.encoder, config.stages, &mut rng)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Instance {
    Atsp(AtspInstance),
    Ffsp(FfspInstance),
}

/// Training instance `index` of batch `batch` in epoch `epoch`.
pub fn training_instance(config: &TrainConfig, epoch: usize, batch: usize, index: usize) -> Result<Instance> {
    let mut rng = stream(config.seed, &[TAG_INSTANCE, epoch as u64, batch as u64, index as u64]);
    Ok(match config.problem {
        Problem::Atsp => Instance::Atsp(match config.generator {
            AtspGenerator::Tmat => generate_tmat(config.size, &mut rng)?,
            AtspGenerator::Euclidean => generate_euclidean(config.size, &mut rng)?,
        }),
        Problem::Ffsp => Instance::Ffsp(generate_ffsp(config.stages, config.machines, config.size, &mut rng)?),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_reward: f64,
    /// Mean relative excess of the best sampled trajectory over the
    /// reference heuristic (nearest neighbour / SJF); negative is better.
    pub baseline_metric: f64,
    pub wall_seconds: f64,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "epoch,mean_reward,baseline_metric,wall_seconds";

    pub fn csv_line(&self) -> String {
        format!("{},{:.6},{:.6},{:.3}", self.epoch, self.mean_reward, self.baseline_metric, self.wall_seconds)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub model: Model,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
}

struct Sample {
    grads: Gradients,
    stats: InstanceStats,
    reference: f64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = Model::build(&config, &mut store)?;
        let adam = AdamState::new(&store, config.lr);
        Ok(Trainer {
            config,
            store,
            model,
            adam,
            epoch: 0,
        })
    }

    fn sample(&self, epoch: usize, batch: usize, index: usize, total: usize) -> Result<Sample> {
        let inst = training_instance(&self.config, epoch, batch, index)?;
        let mut rng = stream(self.config.seed, &[TAG_ROLLOUT, epoch as u64, batch as u64, index as u64]);
        let (grads, stats, reference) = match (&self.model, &inst) {
            (Model::Atsp(m), Instance::Atsp(i)) => {
                let scale = self.config.generator.scale();
                let (g, s) = atsp_instance_grads(&self.store, m, i, scale, total, &mut rng)?;
                (g, s, -nearest_neighbor(i).length / scale)
            }
            (Model::Ffsp(m), Instance::Ffsp(i)) => {
                let (g, s) = ffsp_instance_grads(&self.store, m, i, self.config.trajectories, total, &mut rng)?;
                (g, s, -(sjf(i).makespan as f64) / FFSP_SCALE)
            }
            _ => unreachable!("model and instance built from the same config"),
        };
        if !stats.loss.is_finite() || !grads.is_finite() {
            return Err(AppError::Other(format!(
                "non-finite loss or gradient at epoch {epoch} batch {batch} instance {index}: loss={} mean_reward={} best_reward={} max|grad|={}",
                stats.loss,
                stats.mean_reward,
                stats.best_reward,
                grads.max_abs()
            )));
        }
        Ok(Sample { grads, stats, reference })
    }

    fn trajectories_per_instance(&self) -> usize {
        match self.config.problem {
            Problem::Atsp => self.config.size,
            Problem::Ffsp => self.config.trajectories,
        }
    }

    /// Summed gradient of one batch, computed in `grad_accum` chunks.
    pub fn batch_gradients(&self, epoch: usize, batch: usize, size: usize) -> Result<(Gradients, Vec<(InstanceStats, f64)>)> {
        let total = size * self.trajectories_per_instance();
        let mut sum = Gradients::zeros_like(&self.store);
        let mut stats = Vec::with_capacity(size);
        let chunk = size.div_ceil(self.config.grad_accum);
        for start in (0..size).step_by(chunk) {
            let end = (start + chunk).min(size);
            let samples = (start..end)
                .into_par_iter()
                .map(|i| self.sample(epoch, batch, i, total))
                .collect::<Vec<_>>();
            for s in samples {
                let s = s?;
                sum.accumulate(&s.grads);
                stats.push((s.stats, s.reference));
            }
        }
        Ok((sum, stats))
    }

    /// Runs one epoch on the current rayon pool.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let t0 = Instant::now();
        let epoch = self.epoch;
        let per = self.config.instances_per_epoch;
        let bs = self.config.batch_size;
        let (mut reward, mut metric, mut count) = (0.0, 0.0, 0usize);
        for (b, start) in (0..per).step_by(bs).enumerate() {
            let size = bs.min(per - start);
            let (grads, stats) = self.batch_gradients(epoch, b, size)?;
            self.adam.step(&mut self.store, &grads)?;
            for (s, reference) in stats {
                reward += s.mean_reward;
                // rewards are negated costs
                metric += (-s.best_reward) / (-reference) - 1.0;
                count += 1;
            }
        }
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch: self.epoch,
            mean_reward: reward / count as f64,
            baseline_metric: metric / count as f64,
            wall_seconds: t0.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `config.epochs` epochs are complete, reporting each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<()> {
        while self.epoch < self.config.epochs {
            let m = self.train_epoch()?;
            on_epoch(&m);
        }
        Ok(())
    }
}

/// Builds a dedicated pool of `threads` workers (0 = rayon default).
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| AppError::Other(format!("cannot start thread pool: {e}")))
}
