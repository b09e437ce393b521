//! Complete models for the two problems and their named presets.

use alloc::format;
use alloc::vec::Vec;
use rand::Rng;

use crate::decoder::DecoderParams;
use crate::encoder::{EncoderConfig, EncoderParams, InitScheme, UpdateMode};
use crate::error::Result;
use crate::params::ParamStore;

/// Encoder plus one decoder whose query is `[h_first ; h_current]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AtspModel {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl AtspModel {
    pub fn new<R: Rng>(store: &mut ParamStore, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let encoder = EncoderParams::new(store, "enc", config, rng)?;
        let d = config.d_model;
        let decoder = DecoderParams::new(store, "dec", d, config.heads, 2 * d, false, rng)?;
        Ok(AtspModel { encoder, decoder })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }
}

/// One encoder/decoder pair per stage, with untied parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StageModel {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfspModel {
    pub stages: Vec<StageModel>,
}

impl FfspModel {
    pub fn new<R: Rng>(store: &mut ParamStore, config: &EncoderConfig, stages: usize, rng: &mut R) -> Result<Self> {
        let mut out = Vec::with_capacity(stages);
        for k in 0..stages {
            let encoder = EncoderParams::new(store, &format!("s{k}.enc"), config, rng)?;
            let d = config.d_model;
            let decoder = DecoderParams::new(store, &format!("s{k}.dec"), d, config.heads, d, true, rng)?;
            out.push(StageModel { encoder, decoder });
        }
        Ok(FfspModel { stages: out })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.stages[0].encoder.config
    }
}

/// Desk-scale ATSP encoder: 3 layers, 64 wide, 4 heads; "from" cities start
/// at zero, "to" cities draw one-hot vectors from a pool of `n_max`.
pub fn atsp_toy(n_max: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 3,
        d_model: 64,
        heads: 4,
        d_ff: 128,
        features: 1,
        mixer_hidden: 16,
        clip: Some(10.0),
        update_mode: UpdateMode::Parallel,
        share_update_fn: false,
        init_a: InitScheme::Zeros,
        init_b: InitScheme::OneHotPool(n_max),
    }
}

/// Desk-scale FFSP stage encoder: machines are one-hot (pool `m_max`), jobs
/// start at zero.
pub fn ffsp_toy(m_max: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        d_model: 64,
        heads: 4,
        d_ff: 128,
        features: 1,
        mixer_hidden: 16,
        clip: Some(10.0),
        update_mode: UpdateMode::Parallel,
        share_update_fn: false,
        init_a: InitScheme::OneHotPool(m_max),
        init_b: InitScheme::Zeros,
    }
}

/// Full-size ATSP configuration (5 layers, 256 wide, 16 heads).
pub fn atsp_full(n_max: usize) -> EncoderConfig {
    EncoderConfig::full_atsp(n_max)
}

pub fn ffsp_full(m_max: usize) -> EncoderConfig {
    EncoderConfig {
        init_a: InitScheme::OneHotPool(m_max),
        init_b: InitScheme::Zeros,
        ..EncoderConfig::full_atsp(m_max)
    }
}
