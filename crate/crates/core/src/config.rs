//! One declarative table holding every pipeline default.

use serde::{Deserialize, Serialize};

use crate::autoencoder::{AeConfig, AeTrainConfig};
use crate::error::{Error, Result};
use crate::explorer::{FitnessWeights, GaConfig, DEFAULT_CLUSTERS};
use crate::flow::{FlowConfig, FlowInit, FlowTrainConfig};
use crate::surrogate::DEFAULT_UQ_SAMPLES;
use crate::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderSection {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        let t = AeTrainConfig::default();
        Self {
            latent_dim: 64,
            hidden: vec![256, 256],
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub conditional_blocks: usize,
    pub unconditional_blocks: usize,
    pub coupling_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub scale_limit: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
}

impl Default for FlowSection {
    fn default() -> Self {
        let c = FlowConfig::new(64, 4);
        let t = FlowTrainConfig::default();
        Self {
            conditional_blocks: c.conditional_blocks,
            unconditional_blocks: c.unconditional_blocks,
            coupling_hidden: c.coupling_hidden,
            head_hidden: c.head_hidden,
            scale_limit: c.scale_limit,
            alpha: c.alpha,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            clip_norm: t.clip_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorerSection {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub mutation_sigma: f64,
    pub k_nearest: usize,
    pub elite: usize,
    pub uq_samples: usize,
    pub clusters: usize,
    pub weights: FitnessWeights,
    /// Raw parameter vectors with scores in [-1, 1].
    pub preferences: Vec<PreferenceSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceSpec {
    pub params: Vec<f64>,
    pub score: f64,
}

impl Default for ExplorerSection {
    fn default() -> Self {
        let g = GaConfig::default();
        Self {
            population: g.population,
            generations: g.generations,
            mutation_rate: g.mutation_rate,
            mutation_sigma: g.mutation_sigma,
            k_nearest: g.k_nearest,
            elite: g.elite,
            uq_samples: g.uq_samples,
            clusters: DEFAULT_CLUSTERS,
            weights: FitnessWeights::default(),
            preferences: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub autoencoder: AutoencoderSection,
    pub flow: FlowSection,
    /// Flow samples per prediction with uncertainty.
    pub uq_samples: usize,
    pub explorer: ExplorerSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthConfig::default(),
            autoencoder: AutoencoderSection::default(),
            flow: FlowSection::default(),
            uq_samples: DEFAULT_UQ_SAMPLES,
            explorer: ExplorerSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Settings of the reference synthetic run: a 16-dim latent, a shorter
    /// autoencoder schedule, narrower coupling nets and a heavier
    /// parameter-consistency weight.
    pub fn reference() -> Self {
        let mut c = Self::default();
        c.autoencoder.latent_dim = 16;
        c.autoencoder.epochs = 400;
        c.flow.coupling_hidden = vec![32, 32];
        c.flow.alpha = 200.0;
        c
    }

    pub fn ae_config(&self) -> AeConfig {
        AeConfig {
            dims: self.synth.dims,
            latent_dim: self.autoencoder.latent_dim,
            hidden: self.autoencoder.hidden.clone(),
        }
    }

    pub fn ae_train(&self) -> AeTrainConfig {
        AeTrainConfig {
            epochs: self.autoencoder.epochs,
            batch_size: self.autoencoder.batch_size,
            learning_rate: self.autoencoder.learning_rate,
        }
    }

    pub fn flow_config(&self, latent_dim: usize, cond_dim: usize) -> FlowConfig {
        let f = &self.flow;
        FlowConfig {
            latent_dim,
            cond_dim,
            conditional_blocks: f.conditional_blocks,
            unconditional_blocks: f.unconditional_blocks,
            coupling_hidden: f.coupling_hidden.clone(),
            head_hidden: f.head_hidden.clone(),
            scale_limit: f.scale_limit,
            alpha: f.alpha,
            init: FlowInit::Identity,
        }
    }

    pub fn flow_train(&self) -> FlowTrainConfig {
        FlowTrainConfig {
            epochs: self.flow.epochs,
            batch_size: self.flow.batch_size,
            learning_rate: self.flow.learning_rate,
            clip_norm: self.flow.clip_norm,
        }
    }

    pub fn ga_config(&self, seed: u64) -> GaConfig {
        let e = &self.explorer;
        GaConfig {
            population: e.population,
            generations: e.generations,
            mutation_rate: e.mutation_rate,
            mutation_sigma: e.mutation_sigma,
            k_nearest: e.k_nearest,
            elite: e.elite,
            uq_samples: e.uq_samples,
            seed,
        }
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut push = |r: Result<()>| {
            if let Err(e) = r {
                v.push(e.to_string());
            }
        };
        push(self.synth.validate());
        let a = &self.autoencoder;
        if a.latent_dim < 2 {
            push(Err(Error::Config(
                "autoencoder.latent_dim must be at least 2".into(),
            )));
        }
        if a.epochs == 0 || a.batch_size == 0 || !(a.learning_rate > 0.0) {
            push(Err(Error::Config(
                "autoencoder epochs, batch_size and learning_rate must be positive".into(),
            )));
        }
        if a.hidden.contains(&0) {
            push(Err(Error::Config(
                "autoencoder.hidden widths must be positive".into(),
            )));
        }
        push(
            self.flow_config(a.latent_dim.max(2), self.synth.param_dim)
                .validate(),
        );
        let f = &self.flow;
        if f.epochs == 0 || f.batch_size == 0 || !(f.learning_rate > 0.0) {
            push(Err(Error::Config(
                "flow epochs, batch_size and learning_rate must be positive".into(),
            )));
        }
        if f.clip_norm.is_some_and(|c| !(c > 0.0)) {
            push(Err(Error::Config(
                "flow.clip_norm must be positive when set".into(),
            )));
        }
        if self.uq_samples < 1 {
            push(Err(Error::Config("uq_samples must be at least 1".into())));
        }
        push(self.ga_config(self.seed).validate());
        push(self.explorer.weights.validate());
        if self.explorer.clusters < 1 || self.explorer.clusters > self.explorer.population {
            push(Err(Error::Config(
                "explorer.clusters must be in 1..=population".into(),
            )));
        }
        for (i, p) in self.explorer.preferences.iter().enumerate() {
            if !(-1.0..=1.0).contains(&p.score) {
                push(Err(Error::Config(format!(
                    "explorer.preferences[{i}].score must be in [-1, 1]"
                ))));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}
