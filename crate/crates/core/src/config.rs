//! Pipeline configuration: one JSON document holding every tunable constant,
//! with defaults for anything omitted and unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{
    DiffusionSchedule, GuidanceSpec, BEND_GUIDANCE, BEND_STEPS, BETA_END, BETA_START, SYNTHESIS_GUIDANCE,
    SYNTHESIS_STEPS,
};
use crate::dsp::MelConfig;
use crate::error::{Error, Result};
use crate::evaluation::{VibratoConfig, YinConfig};
use crate::neural::{ModelConfig, Stage};
use crate::roll_codec::{HIGHEST_PITCH, LOWEST_PITCH};
use crate::synth_data::{CorpusConfig, BEND_RANGE_SEMITONES};
use crate::training::TrainConfig;

/// Environment variable consulted when no `--config` is given.
pub const CONFIG_ENV: &str = "VIOLINDIFF_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub guidance: f64,
}

impl DiffusionConfig {
    pub fn for_stage(stage: Stage) -> Self {
        let (steps, guidance) = match stage {
            Stage::Synthesis => (SYNTHESIS_STEPS, SYNTHESIS_GUIDANCE),
            Stage::Bend => (BEND_STEPS, BEND_GUIDANCE),
        };
        DiffusionConfig {
            steps,
            beta_start: BETA_START,
            beta_end: BETA_END,
            guidance,
        }
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }

    pub fn guidance(&self) -> Result<GuidanceSpec> {
        GuidanceSpec::new(self.guidance)
    }
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self::for_stage(Stage::Synthesis)
    }
}

/// Settings for one diffusion stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub model: ModelConfig,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
}

impl StageConfig {
    pub fn for_stage(stage: Stage) -> Self {
        StageConfig {
            model: ModelConfig::default(),
            diffusion: DiffusionConfig::for_stage(stage),
            train: TrainConfig::for_stage(stage),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Frames per denoising window; longer inputs use overlapped windows.
    pub window_frames: usize,
    pub overlap_frames: usize,
    pub griffin_lim_iters: usize,
    /// Stage-1 output is clamped to `±(1 - bend_clamp_eps)`.
    pub bend_clamp_eps: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            window_frames: 256,
            overlap_frames: 64,
            griffin_lim_iters: 32,
            bend_clamp_eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub mel: MelConfig,
    pub lowest_pitch: u8,
    pub highest_pitch: u8,
    pub bend_range_semitones: f64,
    pub synthesis: StageConfig,
    pub bend: StageConfig,
    pub sampling: SamplingConfig,
    pub corpus: CorpusConfig,
    pub yin: YinConfig,
    pub vibrato: VibratoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            mel: MelConfig::default(),
            lowest_pitch: LOWEST_PITCH,
            highest_pitch: HIGHEST_PITCH,
            bend_range_semitones: BEND_RANGE_SEMITONES,
            synthesis: StageConfig::for_stage(Stage::Synthesis),
            bend: StageConfig::for_stage(Stage::Bend),
            sampling: SamplingConfig::default(),
            corpus: CorpusConfig::default(),
            yin: YinConfig::default(),
            vibrato: VibratoConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn stage(&self, stage: Stage) -> &StageConfig {
        match stage {
            Stage::Synthesis => &self.synthesis,
            Stage::Bend => &self.bend,
        }
    }

    pub fn stage_mut(&mut self, stage: Stage) -> &mut StageConfig {
        match stage {
            Stage::Synthesis => &mut self.synthesis,
            Stage::Bend => &mut self.bend,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mel.validate()?;
        if (self.lowest_pitch, self.highest_pitch) != (LOWEST_PITCH, HIGHEST_PITCH) {
            return Err(Error::Config(format!(
                "pitch range is fixed at {LOWEST_PITCH}..={HIGHEST_PITCH}"
            )));
        }
        if !(self.bend_range_semitones > 0.0 && self.bend_range_semitones.is_finite()) {
            return Err(Error::Config("bend_range_semitones must be positive".into()));
        }
        for stage in [Stage::Synthesis, Stage::Bend] {
            let sc = self.stage(stage);
            sc.model.validate()?;
            sc.train.validate()?;
            sc.diffusion.schedule()?;
            sc.diffusion.guidance()?;
        }
        if self.synthesis.model.n_mels != self.mel.n_mels {
            return Err(Error::Config(format!(
                "synthesis model expects {} mel bins but mel.n_mels is {}",
                self.synthesis.model.n_mels, self.mel.n_mels
            )));
        }
        if self.yin.hop != self.mel.hop {
            return Err(Error::Config("yin.hop must equal mel.hop".into()));
        }
        let s = &self.sampling;
        if s.window_frames == 0 || s.overlap_frames >= s.window_frames {
            return Err(Error::Config("sampling needs 0 <= overlap < window".into()));
        }
        if !(0.0..0.5).contains(&s.bend_clamp_eps) {
            return Err(Error::Config("bend_clamp_eps must lie in [0, 0.5)".into()));
        }
        self.corpus.validate()?;
        Ok(())
    }

    /// Parses a possibly partial document. Missing keys take their defaults,
    /// stage-specific ones included, by overlaying the document on the full
    /// default tree before strict deserialization.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut tree = serde_json::to_value(Self::default())?;
        overlay(&mut tree, user);
        let cfg: PipelineConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_json()?)?)
    }

    /// Loads `explicit`, else the file named by `VIOLINDIFF_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let path = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        match path {
            Some(p) => Self::load(&p),
            None => Ok(Self::default()),
        }
    }
}

fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
    use serde_json::Value;
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
