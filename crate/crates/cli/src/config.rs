//! Pipeline configuration: a TOML file with one table per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spoofbench_core::corpus::{condition_names, regime, CorruptParams, SegmentConfig};
use spoofbench_core::enhancer::SeganConfig;
use spoofbench_core::signal::CqccConfig;
use spoofbench_core::tts::{ArModelConfig, LINGUISTIC_DIMS};
use spoofbench_core::vc::CycleGanConfig;
use spoofbench_core::vocoder::{GenerationMode, WaveNetConfig};

use crate::error::{config_err, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Clean utterances of the reference talker, used to build enhancer pairs.
    pub clean_utterances: usize,
    /// Utterances joined into the long found-data recording.
    pub found_utterances: usize,
    pub phones: usize,
    /// Silence inserted between found utterances, seconds.
    pub gap: f64,
    pub found_snr_db: f64,
    pub segment: SegmentConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            clean_utterances: 24,
            found_utterances: 16,
            phones: 4,
            gap: 0.4,
            found_snr_db: 10.0,
            segment: SegmentConfig { min_pause: 0.3, min_seg: 0.3, max_seg: 10.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub mode: GenerationMode,
    /// Any of "tts" and "vc".
    pub sources: Vec<String>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { mode: GenerationMode::Sample, sources: vec!["tts".into(), "vc".into()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmConfig {
    pub mixtures: usize,
    pub iterations: usize,
    pub cqcc: CqccConfig,
}

impl Default for CmConfig {
    fn default() -> Self {
        Self { mixtures: 4, iterations: 10, cqcc: CqccConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub workspace: PathBuf,
    pub seed: u64,
    /// Enhancer training regime.
    pub regime: String,
    /// Condition the synthesizer is asked for at synthesis time.
    pub condition: String,
    pub ingest: IngestConfig,
    pub corrupt: CorruptParams,
    #[serde(rename = "enhance-train")]
    pub enhance_train: SeganConfig,
    #[serde(rename = "vc-train")]
    pub vc_train: CycleGanConfig,
    #[serde(rename = "tts-train")]
    pub tts_train: ArModelConfig,
    /// Its sample rate and mel settings apply to the whole pipeline.
    #[serde(rename = "vocoder-train")]
    pub vocoder_train: WaveNetConfig,
    pub generate: GenerateConfig,
    pub cm: CmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let vocoder = WaveNetConfig { iterations: 400, ..WaveNetConfig::default() };
        let bands = vocoder.mel.bands;
        Self {
            workspace: PathBuf::from("work"),
            seed: 0,
            regime: "n".into(),
            condition: "n".into(),
            ingest: IngestConfig::default(),
            corrupt: CorruptParams::default(),
            enhance_train: SeganConfig { iterations: 300, ..SeganConfig::default() },
            vc_train: CycleGanConfig { dims: 3 * bands, iterations: 300, ..CycleGanConfig::desk() },
            tts_train: ArModelConfig { mel_dims: bands, iterations: 200, ..ArModelConfig::desk() },
            vocoder_train: vocoder,
            generate: GenerateConfig::default(),
            cm: CmConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses and validates; a relative workspace is resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if cfg.workspace.is_relative() {
            cfg.workspace = path.parent().unwrap_or(Path::new(".")).join(&cfg.workspace);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| crate::CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        if regime(&self.regime).is_err() {
            return config_err(format!("unknown regime {:?}", self.regime));
        }
        if !condition_names().contains(&self.condition.as_str()) {
            return config_err(format!("unknown condition {:?}; expected one of {:?}", self.condition, condition_names()));
        }
        let v = &self.vocoder_train;
        v.validate().map_err(|e| crate::CliError::Config(e.to_string()))?;
        self.enhance_train.validate().map_err(|e| crate::CliError::Config(e.to_string()))?;
        self.vc_train.validate().map_err(|e| crate::CliError::Config(e.to_string()))?;
        self.tts_train.validate().map_err(|e| crate::CliError::Config(e.to_string()))?;
        self.cm.cqcc.validate().map_err(|e| crate::CliError::Config(e.to_string()))?;
        if self.vc_train.dims != 3 * v.mel.bands {
            return config_err(format!("vc-train.dims must be 3 x {} mel bands (static + deltas), got {}", v.mel.bands, self.vc_train.dims));
        }
        if self.tts_train.mel_dims != v.mel.bands || self.tts_train.linguistic_dims != LINGUISTIC_DIMS {
            return config_err(format!("tts-train needs mel_dims {} and linguistic_dims {LINGUISTIC_DIMS}", v.mel.bands));
        }
        if self.ingest.clean_utterances < 2 || self.ingest.found_utterances < 4 || self.ingest.phones == 0 {
            return config_err("ingest needs at least 2 clean and 4 found utterances");
        }
        if self.cm.mixtures == 0 {
            return config_err("cm.mixtures must be positive");
        }
        if self.generate.sources.is_empty() {
            return config_err("generate.sources is empty");
        }
        if let Some(s) = self.generate.sources.iter().find(|s| !matches!(s.as_str(), "tts" | "vc")) {
            return config_err(format!("unknown generate source {s:?}"));
        }
        Ok(())
    }
}
