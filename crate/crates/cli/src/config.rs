//! Run configuration: a TOML file with section headers, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use artiwave_core::corpus::SynthConfig;
use artiwave_core::frontend::FrontendConfig;
use artiwave_core::generate::DecodeRule;
use artiwave_core::train::{AdamConfig, TrainConfig};
use artiwave_core::trajectory::CHANNEL_COUNT;
use artiwave_core::wavenet::NetworkConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Name of the resolved configuration written into every output directory.
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub frontend: FrontendSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub decode: DecodeSection,
    pub synth: SynthSection,
    pub paths: PathsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            frontend: FrontendSection::default(),
            network: NetworkSection::default(),
            train: TrainSection::default(),
            decode: DecodeSection::default(),
            synth: SynthSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendSection {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub bands: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for FrontendSection {
    fn default() -> Self {
        let f = FrontendConfig::default();
        Self {
            sample_rate: f.sample_rate,
            window: f.window,
            hop: f.hop,
            fft_size: f.fft_size,
            bands: f.bands,
            f_min: f.f_min,
            f_max: f.f_max,
            log_floor: f.log_floor,
        }
    }
}

impl FrontendSection {
    pub fn to_core(&self) -> FrontendConfig {
        FrontendConfig {
            sample_rate: self.sample_rate,
            window: self.window,
            hop: self.hop,
            fft_size: self.fft_size,
            bands: self.bands,
            f_min: self.f_min,
            f_max: self.f_max,
            log_floor: self.log_floor,
        }
    }
}

/// Input and conditioning widths are implied by the trajectory channels and
/// the frontend band count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub layers_per_stack: usize,
    pub stacks: usize,
    pub dilation_base: usize,
    pub kernel_size: usize,
    pub residual_channels: usize,
    pub gate_channels: usize,
    pub skip_channels: usize,
    pub mixture_components: usize,
    pub quantization_levels: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let n = NetworkConfig::default();
        Self {
            layers_per_stack: n.layers_per_stack,
            stacks: n.stacks,
            dilation_base: n.dilation_base,
            kernel_size: n.kernel_size,
            residual_channels: n.residual_channels,
            gate_channels: n.gate_channels,
            skip_channels: n.skip_channels,
            mixture_components: n.mixture_components,
            quantization_levels: n.quantization_levels,
        }
    }
}

impl NetworkSection {
    pub fn to_core(&self, bands: usize) -> NetworkConfig {
        NetworkConfig {
            layers_per_stack: self.layers_per_stack,
            stacks: self.stacks,
            dilation_base: self.dilation_base,
            kernel_size: self.kernel_size,
            residual_channels: self.residual_channels,
            gate_channels: self.gate_channels,
            skip_channels: self.skip_channels,
            mixture_components: self.mixture_components,
            input_channels: CHANNEL_COUNT,
            cond_channels: bands,
            quantization_levels: self.quantization_levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub minibatch_count: usize,
    pub max_timesteps_per_item: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_gradients: bool,
    pub grad_clip: f64,
    pub log_every: u64,
    pub checkpoint_every: u64,
    /// Train only on these utterance ids; the whole training split when empty.
    pub utterances: Vec<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            minibatch_count: t.minibatch_count,
            max_timesteps_per_item: t.max_timesteps_per_item,
            learning_rate: t.adam.learning_rate,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            epsilon: t.adam.epsilon,
            clip_gradients: t.grad_clip.is_some(),
            grad_clip: t.grad_clip.unwrap_or(1.0),
            log_every: t.log_every,
            checkpoint_every: t.checkpoint_every,
            utterances: Vec::new(),
        }
    }
}

impl TrainSection {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            minibatch_count: self.minibatch_count,
            max_timesteps_per_item: self.max_timesteps_per_item,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            grad_clip: self.clip_gradients.then_some(self.grad_clip),
            seed,
            log_every: self.log_every,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    /// `mean`, `mode` or `sample`.
    pub rule: String,
    pub temperature: f64,
}

impl Default for DecodeSection {
    fn default() -> Self {
        Self {
            rule: "mean".into(),
            temperature: 1.0,
        }
    }
}

impl DecodeSection {
    pub fn to_core(&self, seed: u64) -> Result<DecodeRule, CliError> {
        let rule = match self.rule.as_str() {
            "mean" => DecodeRule::MixtureMean,
            "mode" => DecodeRule::ModeBin,
            "sample" => DecodeRule::Sample {
                seed,
                temperature: self.temperature,
            },
            other => {
                return Err(CliError::Config(format!(
                    "decode.rule: expected mean, mode or sample, got {other:?}"
                )))
            }
        };
        rule.validate().map_err(|e| CliError::Config(format!("decode: {e}")))?;
        Ok(rule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    pub duration_s: f64,
    pub train_fraction: f64,
    pub max_frequency_hz: f64,
    pub sinusoids_per_channel: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            speakers: s.speakers,
            utterances_per_speaker: s.utterances_per_speaker,
            duration_s: s.duration_s,
            train_fraction: s.train_fraction,
            max_frequency_hz: s.max_frequency_hz,
            sinusoids_per_channel: s.sinusoids_per_channel,
        }
    }
}

impl SynthSection {
    pub fn to_core(&self, seed: u64, frontend: FrontendConfig) -> SynthConfig {
        SynthConfig {
            seed,
            speakers: self.speakers,
            utterances_per_speaker: self.utterances_per_speaker,
            duration_s: self.duration_s,
            train_fraction: self.train_fraction,
            max_frequency_hz: self.max_frequency_hz,
            sinusoids_per_channel: self.sinusoids_per_channel,
            frontend,
        }
    }
}

/// Paths resolved from flags, recorded for provenance of the outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults, or the file at `path` layered over them.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn frontend_config(&self) -> FrontendConfig {
        self.frontend.to_core()
    }

    pub fn network_config(&self) -> NetworkConfig {
        self.network.to_core(self.frontend.bands)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.to_core(self.seed)
    }

    pub fn decode_rule(&self) -> Result<DecodeRule, CliError> {
        self.decode.to_core(self.seed)
    }

    pub fn synth_config(&self) -> SynthConfig {
        self.synth.to_core(self.seed, self.frontend_config())
    }

    /// Checks every section; errors name the offending field.
    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |section: &str, e: artiwave_core::Error| {
            let msg = e.to_string();
            let msg = msg.strip_prefix("invalid input: ").unwrap_or(&msg).to_string();
            if msg.starts_with(&format!("{section}.")) {
                CliError::Config(msg)
            } else {
                CliError::Config(format!("{section}: {msg}"))
            }
        };
        self.frontend_config().validate().map_err(|e| wrap("frontend", e))?;
        self.network_config().validate().map_err(|e| wrap("network", e))?;
        self.train_config().validate().map_err(|e| wrap("train", e))?;
        if self.train.clip_gradients && !(self.train.grad_clip > 0.0 && self.train.grad_clip.is_finite()) {
            return Err(CliError::Config(format!(
                "train.grad_clip must be positive and finite, got {}",
                self.train.grad_clip
            )));
        }
        self.decode_rule()?;
        self.synth_config().validate().map_err(|e| wrap("synth", e))?;
        Ok(())
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        fs::write(dir.join(RUN_CONFIG_FILE), self.to_toml()).map_err(|e| CliError::Runtime(e.into()))
    }
}
