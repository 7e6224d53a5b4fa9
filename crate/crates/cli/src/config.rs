//! Run configuration: defaults, TOML file layer, flag overrides.
//!
//! Precedence is defaults < config file < environment < flags. The merged
//! struct is validated once, then treated as immutable for the rest of the
//! command. The same struct is snapshotted into checkpoints, so it must
//! serialize deterministically (plain fields only, no maps).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wdmir_core::data::{load_dataset, synthesize_dataset, Dataset, SynthSpec};
use wdmir_core::model::{AblationFlags, DropModality, ModelConfig};

use crate::{CliError, Result};

/// Environment variable that overrides `out_dir` (flags still win).
pub const OUT_DIR_ENV: &str = "WDMIR_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityArg {
    None,
    Text,
    Video,
    Audio,
}

impl ModalityArg {
    pub fn to_core(self) -> DropModality {
        match self {
            ModalityArg::None => DropModality::None,
            ModalityArg::Text => DropModality::Text,
            ModalityArg::Video => DropModality::Video,
            ModalityArg::Audio => DropModality::Audio,
        }
    }

    pub fn parse(s: &str) -> Option<ModalityArg> {
        match s {
            "none" => Some(ModalityArg::None),
            "text" => Some(ModalityArg::Text),
            "video" => Some(ModalityArg::Video),
            "audio" => Some(ModalityArg::Audio),
            _ => None,
        }
    }
}

/// Optional synthetic-dataset section of a config file. Unset fields fall
/// back to `SynthSpec::default()`, so a file only states what it changes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub len_text: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub len_video: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub len_audio: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim_text: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim_video: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim_audio: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_strength: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freq_strength: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_suppress_frac: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase_jitter: Option<bool>,
}

impl SynthSection {
    pub fn to_spec(&self) -> SynthSpec {
        let mut s = SynthSpec::default();
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.n {
            s.n = v;
        }
        if let Some(v) = self.classes {
            s.classes = v;
        }
        if let Some(v) = self.len_text {
            s.len_text = v;
        }
        if let Some(v) = self.len_video {
            s.len_video = v;
        }
        if let Some(v) = self.len_audio {
            s.len_audio = v;
        }
        if let Some(v) = self.dim_text {
            s.dims.text = v;
        }
        if let Some(v) = self.dim_video {
            s.dims.video = v;
        }
        if let Some(v) = self.dim_audio {
            s.dims.audio = v;
        }
        if let Some(v) = self.noise {
            s.noise = v;
        }
        if let Some(v) = self.text_strength {
            s.text_strength = v;
        }
        if let Some(v) = self.freq_strength {
            s.freq_strength = v;
        }
        if let Some(v) = self.text_suppress_frac {
            s.text_suppress_frac = v;
        }
        if let Some(v) = self.phase_jitter {
            s.phase_jitter = v;
        }
        s
    }
}

/// One run's worth of knobs. Field defaults are the documented CLI
/// defaults; a config file and then flags override them piecewise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Manifest path; mutually exclusive with `synth`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,

    /// Common video/audio length after temporal alignment.
    pub aligned_len: usize,
    pub d_model: usize,
    /// Hidden width of the raw-modality summary LSTMs.
    pub hidden: usize,
    /// Wavelet decomposition depth.
    pub levels: usize,
    pub dropout: f64,
    pub crm_projections: bool,

    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling; unset means no clipping.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,

    pub epochs: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    /// Stop after this many epochs without a validation-accuracy
    /// improvement; unset trains the full epoch budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    pub seed: u64,

    pub disable_wfm: bool,
    pub drop_flv_fla: bool,
    pub drop_fvat_favt: bool,
    pub drop_ftva: bool,
    pub drop_modality: ModalityArg,

    pub out_dir: PathBuf,
    /// Checkpoint to resume from (train) or to load (evaluate/predict).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,

    /// Inline synthetic dataset; mutually exclusive with `dataset`.
    /// Kept last: TOML requires tables after scalar keys.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSection>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            aligned_len: 64,
            d_model: 32,
            hidden: 32,
            levels: 3,
            dropout: 0.0,
            crm_projections: true,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
            epochs: 200,
            train_batch: 16,
            eval_batch: 8,
            patience: None,
            seed: 0,
            disable_wfm: false,
            drop_flv_fla: false,
            drop_fvat_favt: false,
            drop_ftva: false,
            drop_modality: ModalityArg::None,
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
            synth: None,
        }
    }
}

/// Flag-level overrides: every field optional, applied last.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub aligned_len: Option<usize>,
    pub d_model: Option<usize>,
    pub hidden: Option<usize>,
    pub levels: Option<usize>,
    pub dropout: Option<f64>,
    pub crm_projections: Option<bool>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub clip_norm: Option<f64>,
    pub epochs: Option<usize>,
    pub train_batch: Option<usize>,
    pub eval_batch: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
    pub disable_wfm: Option<bool>,
    pub drop_flv_fla: Option<bool>,
    pub drop_fvat_favt: Option<bool>,
    pub drop_ftva: Option<bool>,
    pub drop_modality: Option<ModalityArg>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Key-wise recursive table merge; the layer wins on conflicts.
fn merge_value(base: &mut toml::Value, layer: toml::Value) {
    match (base, layer) {
        (toml::Value::Table(b), toml::Value::Table(l)) => {
            for (key, value) in l {
                match b.get_mut(&key) {
                    Some(slot) => merge_value(slot, value),
                    None => {
                        b.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

impl RunConfig {
    /// Layered resolution: base < file < environment < flags. Commands
    /// that load a checkpoint pass its config snapshot as the base, so
    /// unstated knobs keep their training-time values.
    pub fn resolve_from(
        base: &RunConfig,
        file: Option<&Path>,
        over: &Overrides,
    ) -> Result<RunConfig> {
        let mut value = toml::Value::try_from(base)
            .map_err(|e| CliError::Usage(format!("config serialization: {e}")))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Data(format!("cannot read config '{}': {e}", path.display()))
            })?;
            let layer: toml::Table = text
                .parse()
                .map_err(|e| CliError::Usage(format!("config '{}': {e}", path.display())))?;
            merge_value(&mut value, toml::Value::Table(layer));
        }
        let mut cfg: RunConfig = value
            .try_into()
            .map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.out_dir = PathBuf::from(dir);
            }
        }
        cfg.apply(over);
        Ok(cfg)
    }

    /// defaults < file < environment < flags.
    pub fn resolve(file: Option<&Path>, over: &Overrides) -> Result<RunConfig> {
        RunConfig::resolve_from(&RunConfig::default(), file, over)
    }

    pub fn apply(&mut self, over: &Overrides) {
        if let Some(v) = &over.dataset {
            self.dataset = Some(v.clone());
            self.synth = None;
        }
        if let Some(v) = over.aligned_len {
            self.aligned_len = v;
        }
        if let Some(v) = over.d_model {
            self.d_model = v;
        }
        if let Some(v) = over.hidden {
            self.hidden = v;
        }
        if let Some(v) = over.levels {
            self.levels = v;
        }
        if let Some(v) = over.dropout {
            self.dropout = v;
        }
        if let Some(v) = over.crm_projections {
            self.crm_projections = v;
        }
        if let Some(v) = over.learning_rate {
            self.learning_rate = v;
        }
        if let Some(v) = over.beta1 {
            self.beta1 = v;
        }
        if let Some(v) = over.beta2 {
            self.beta2 = v;
        }
        if let Some(v) = over.epsilon {
            self.epsilon = v;
        }
        if let Some(v) = over.clip_norm {
            self.clip_norm = Some(v);
        }
        if let Some(v) = over.epochs {
            self.epochs = v;
        }
        if let Some(v) = over.train_batch {
            self.train_batch = v;
        }
        if let Some(v) = over.eval_batch {
            self.eval_batch = v;
        }
        if let Some(v) = over.patience {
            self.patience = Some(v);
        }
        if let Some(v) = over.seed {
            self.seed = v;
        }
        if let Some(v) = over.disable_wfm {
            self.disable_wfm = v;
        }
        if let Some(v) = over.drop_flv_fla {
            self.drop_flv_fla = v;
        }
        if let Some(v) = over.drop_fvat_favt {
            self.drop_fvat_favt = v;
        }
        if let Some(v) = over.drop_ftva {
            self.drop_ftva = v;
        }
        if let Some(v) = over.drop_modality {
            self.drop_modality = v;
        }
        if let Some(v) = &over.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = &over.checkpoint {
            self.checkpoint = Some(v.clone());
        }
    }

    /// Structural invariants that do not need a dataset.
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(CliError::Usage("levels must be at least 1".into()));
        }
        let divisor = 1usize << self.levels;
        if self.aligned_len == 0 || self.aligned_len % divisor.max(8) != 0 {
            return Err(CliError::Usage(format!(
                "aligned_len {} must be a positive multiple of {}",
                self.aligned_len,
                divisor.max(8)
            )));
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(CliError::Usage(format!(
                "d_model must be positive and even, got {}",
                self.d_model
            )));
        }
        if self.hidden == 0 {
            return Err(CliError::Usage("hidden width must be positive".into()));
        }
        if self.train_batch == 0 || self.eval_batch == 0 {
            return Err(CliError::Usage("batch sizes must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CliError::Usage(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(CliError::Usage(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(CliError::Usage("epsilon must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(CliError::Usage(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CliError::Usage(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.dataset.is_some() && self.synth.is_some() {
            return Err(CliError::Usage(
                "config sets both 'dataset' and 'synth'; pick one source".into(),
            ));
        }
        Ok(())
    }

    /// Load or synthesize the configured dataset.
    pub fn resolve_dataset(&self) -> Result<Dataset> {
        match (&self.dataset, &self.synth) {
            (Some(path), None) => Ok(load_dataset(path)?),
            (None, Some(section)) => Ok(synthesize_dataset(&section.to_spec())?),
            (None, None) => Err(CliError::Usage(
                "no data source: pass --dataset or a [synth] config section".into(),
            )),
            (Some(_), Some(_)) => Err(CliError::Usage(
                "config sets both 'dataset' and 'synth'; pick one source".into(),
            )),
        }
    }

    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        ModelConfig {
            dims: dataset.dims,
            classes: dataset.classes,
            aligned_len: self.aligned_len,
            d_model: self.d_model,
            hidden: self.hidden,
            levels: self.levels,
            dropout: self.dropout,
            crm_projections: self.crm_projections,
        }
    }

    pub fn ablation_flags(&self) -> AblationFlags {
        AblationFlags {
            disable_wfm: self.disable_wfm,
            drop_flv_fla: self.drop_flv_fla,
            drop_fvat_favt: self.drop_fvat_favt,
            drop_ftva: self.drop_ftva,
            drop_modality: self.drop_modality.to_core(),
        }
    }

    pub fn adam_config(&self) -> wdmir_core::optim::AdamConfig {
        wdmir_core::optim::AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.aligned_len, 64);
        assert_eq!(c.d_model, 32);
        assert_eq!(c.hidden, 32);
        assert_eq!(c.levels, 3);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.train_batch, 16);
        assert_eq!(c.eval_batch, 8);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "d_model = 8\nepochs = 3\nseed = 5\n").unwrap();
        let over = Overrides {
            epochs: Some(9),
            ..Overrides::default()
        };
        let cfg = RunConfig::resolve(Some(&path), &over).unwrap();
        assert_eq!(cfg.d_model, 8); // file layer
        assert_eq!(cfg.epochs, 9); // flag beats file
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.train_batch, 16); // untouched default
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "dmodel = 8\n").unwrap();
        let err = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{err}");
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut c = RunConfig {
            aligned_len: 60,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        c.aligned_len = 64;
        c.d_model = 7;
        assert!(c.validate().is_err());
        c.d_model = 32;
        c.train_batch = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn synth_section_fills_unset_fields_from_spec_defaults() {
        let section: SynthSection = toml::from_str("n = 32\nclasses = 2\n").unwrap();
        let spec = section.to_spec();
        let defaults = SynthSpec::default();
        assert_eq!(spec.n, 32);
        assert_eq!(spec.classes, 2);
        assert_eq!(spec.seed, defaults.seed);
        assert_eq!(spec.dims, defaults.dims);
        assert_eq!(spec.noise, defaults.noise);
    }

    #[test]
    fn dataset_and_synth_are_mutually_exclusive() {
        let cfg = RunConfig {
            dataset: Some(PathBuf::from("x")),
            synth: Some(SynthSection::default()),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(cfg.resolve_dataset().is_err());
    }

    #[test]
    fn config_snapshot_round_trips_through_toml() {
        let cfg = RunConfig {
            synth: Some(SynthSection {
                n: Some(48),
                ..SynthSection::default()
            }),
            clip_norm: Some(1.5),
            patience: Some(7),
            drop_modality: ModalityArg::Audio,
            ..RunConfig::default()
        };
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        // serialization is stable: a second round trip emits identical text
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }
}
