//! Full-model assembly: text projection into the shared width, wavelet
//! fusion of video/audio, co-representation, and the progressive head,
//! plus batch loss, a single optimizer step, and prediction entry points.
//!
//! Ablation switches zero-fill classifier slots (widths stay stable) or
//! bypass the wavelet stage entirely; missing-modality probes blank a
//! modality's features at the input.

use rand_chacha::ChaCha8Rng;

use crate::corep::{crm_forward, CrmBound, CrmOut, CrmParams};
use crate::data::{DatasetDims, FeatureRecord};
use crate::error::{Error, Result};
use crate::fusion::{align_sequences, wfm_forward, WfmBound, WfmOut, WfmParams};
use crate::optim::{clip_gradients, AdamConfig, AdamState};
use crate::progressive::{
    classify, lstm_summarize, self_attention_enhance, stack_features, PfmBound, PfmParams,
    Prediction,
};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropModality {
    #[default]
    None,
    Text,
    Video,
    Audio,
}

impl DropModality {
    pub fn as_str(&self) -> &'static str {
        match self {
            DropModality::None => "none",
            DropModality::Text => "text",
            DropModality::Video => "video",
            DropModality::Audio => "audio",
        }
    }

    pub fn parse(s: &str) -> Option<DropModality> {
        match s {
            "none" => Some(DropModality::None),
            "text" => Some(DropModality::Text),
            "video" => Some(DropModality::Video),
            "audio" => Some(DropModality::Audio),
            _ => None,
        }
    }
}

/// Ablation switches. Default is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AblationFlags {
    /// Feed aligned features straight to co-representation; no wavelet
    /// op runs (checkable via the tape's instrumentation counters).
    pub disable_wfm: bool,
    /// Zero the two LSTM summary slots of the classifier input.
    pub drop_flv_fla: bool,
    /// Zero the enhanced co-representation slots.
    pub drop_fvat_favt: bool,
    /// Zero the trimodal slot.
    pub drop_ftva: bool,
    /// Blank one modality's features at the input.
    pub drop_modality: DropModality,
}

impl AblationFlags {
    pub fn full() -> Self {
        AblationFlags::default()
    }
}

/// Dimensions and knobs that size every parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub dims: DatasetDims,
    pub classes: usize,
    /// Common video/audio length after alignment.
    pub aligned_len: usize,
    pub d_model: usize,
    /// Hidden width of the raw-modality summary LSTMs.
    pub hidden: usize,
    /// Wavelet decomposition depth.
    pub levels: usize,
    /// Dropout probability on the classifier hidden layer during training.
    pub dropout: f64,
    /// Learn Q/K/V maps inside the co-representation blocks.
    pub crm_projections: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(Error::Config(format!(
                "d_model must be a positive even number, got {}",
                self.d_model
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.levels == 0 {
            return Err(Error::Config("need at least one wavelet level".into()));
        }
        let divisor = (1usize << self.levels).max(8);
        if self.aligned_len == 0 || self.aligned_len % divisor != 0 {
            return Err(Error::Config(format!(
                "aligned length {} must be a positive multiple of {divisor} for {} levels",
                self.aligned_len, self.levels
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        for (dim, what) in [
            (self.dims.text, "text"),
            (self.dims.video, "video"),
            (self.dims.audio, "audio"),
        ] {
            if dim == 0 {
                return Err(Error::Config(format!("{what} feature width must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// [d_t, d_model] projection of text features into the shared width.
    pub text_proj: Tensor,
    pub wfm: WfmParams,
    pub crm: CrmParams,
    pub pfm: PfmParams,
}

pub struct ModelBound {
    pub config: ModelConfig,
    pub text_proj: TensorId,
    pub wfm: WfmBound,
    pub crm: CrmBound,
    pub pfm: PfmBound,
    /// Leaf ids of every parameter, in `named()` order.
    pub param_ids: Vec<TensorId>,
}

impl ModelParams {
    pub fn init(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        Ok(ModelParams {
            text_proj: Tensor::xavier(
                vec![config.dims.text, config.d_model],
                config.dims.text,
                config.d_model,
                rng,
            ),
            wfm: WfmParams::init(
                config.dims.video,
                config.dims.audio,
                config.d_model,
                config.aligned_len,
                config.levels,
                rng,
            ),
            crm: CrmParams::init(config.d_model, config.crm_projections, rng),
            pfm: PfmParams::init(
                config.d_model,
                config.dims.video,
                config.dims.audio,
                config.hidden,
                config.classes,
                config.dropout,
                rng,
            ),
            config,
        })
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        out.push(("text_proj".to_string(), &self.text_proj));
        self.wfm.visit("wfm", &mut out);
        self.crm.visit("crm", &mut out);
        self.pfm.visit("pfm", &mut out);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        out.push(("text_proj".to_string(), &mut self.text_proj));
        self.wfm.visit_mut("wfm", &mut out);
        self.crm.visit_mut("crm", &mut out);
        self.pfm.visit_mut("pfm", &mut out);
        out
    }

    /// Leaf every parameter once. Reusing the bound ids across a batch
    /// makes the backward pass accumulate over all uses.
    pub fn bind(&self, tape: &mut Tape) -> ModelBound {
        let start = tape.len();
        let text_proj = tape.leaf(&self.text_proj);
        let wfm = self.wfm.bind(tape);
        let crm = self.crm.bind(tape);
        let pfm = self.pfm.bind(tape);
        // bind() only pushes leaves, one per parameter, in visit order
        let param_ids: Vec<TensorId> = (start..tape.len()).map(TensorId).collect();
        debug_assert_eq!(param_ids.len(), self.named().len());
        ModelBound {
            config: self.config,
            text_proj,
            wfm,
            crm,
            pfm,
            param_ids,
        }
    }

    /// All parameter values in `named()` order, as one vector.
    pub fn flatten(&self) -> Vec<f64> {
        self.named()
            .iter()
            .flat_map(|(_, t)| t.values().iter().copied())
            .collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.named().iter().map(|(_, t)| t.numel()).sum();
        if flat.len() != total {
            return Err(Error::LengthMismatch {
                expected: total,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for (_, t) in self.named_mut() {
            let n = t.numel();
            t.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Copy the tape's leaf gradients into the parameter slots,
    /// replacing whatever was there.
    pub fn take_grads(&mut self, tape: &Tape, bound: &ModelBound) {
        for ((_, tensor), &id) in self.named_mut().into_iter().zip(&bound.param_ids) {
            tensor.zero_grad();
            if let Some(g) = tape.grad(id) {
                tensor.accumulate_grad(g);
            }
        }
    }
}

/// Logits plus the intermediate attention products of one sample.
pub struct ForwardOut {
    /// [1, classes]
    pub logits: TensorId,
    /// None when the wavelet stage is bypassed.
    pub wfm: Option<WfmOut>,
    pub crm: CrmOut,
    /// [3Lt, 3Lt] self-attention map of the head.
    pub head_weights: TensorId,
}

fn input_constant(tape: &mut Tape, t: &Tensor, blank: bool) -> TensorId {
    if blank {
        tape.zeros(t.shape().to_vec())
    } else {
        tape.constant(t.shape().to_vec(), t.values().to_vec())
    }
}

fn check_width(record: &FeatureRecord, t: &Tensor, expected: usize, what: &str) -> Result<()> {
    if t.shape()[1] != expected {
        return Err(Error::Config(format!(
            "record '{}': {what} width {} does not match the model's {expected}",
            record.id,
            t.shape()[1]
        )));
    }
    Ok(())
}

pub fn forward_sample(
    tape: &mut Tape,
    bound: &ModelBound,
    flags: &AblationFlags,
    record: &FeatureRecord,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardOut> {
    let cfg = &bound.config;
    check_width(record, &record.text, cfg.dims.text, "text")?;
    check_width(record, &record.video, cfg.dims.video, "video")?;
    check_width(record, &record.audio, cfg.dims.audio, "audio")?;

    let text = input_constant(tape, &record.text, flags.drop_modality == DropModality::Text);
    let video = input_constant(tape, &record.video, flags.drop_modality == DropModality::Video);
    let audio = input_constant(tape, &record.audio, flags.drop_modality == DropModality::Audio);

    let f_t = tape.matmul(text, bound.text_proj)?;
    let (f_va, f_av, wfm_out) = if flags.disable_wfm {
        let pair = align_sequences(
            tape,
            video,
            audio,
            bound.wfm.video_proj,
            bound.wfm.audio_proj,
            cfg.aligned_len,
        )?;
        (pair.v, pair.a, None)
    } else {
        let out = wfm_forward(tape, video, audio, &bound.wfm)?;
        (out.f_va, out.f_av, Some(out))
    };

    let crm = crm_forward(tape, f_t, f_va, f_av, &bound.crm)?;

    let stacked = stack_features(tape, f_t, crm.f_vat, crm.f_avt)?;
    let (ft_e, fvat_e, favt_e, head_weights) =
        self_attention_enhance(tape, stacked, &bound.pfm.attn)?;
    let ft_p = tape.mean_rows(ft_e)?;

    let zero_row = |tape: &mut Tape, w: usize| tape.zeros(vec![1, w]);
    let (f_lv, f_la) = if flags.drop_flv_fla {
        (zero_row(tape, cfg.hidden), zero_row(tape, cfg.hidden))
    } else {
        lstm_summarize(tape, video, audio, &bound.pfm.video_lstm, &bound.pfm.audio_lstm)?
    };
    let (fvat_p, favt_p) = if flags.drop_fvat_favt {
        (zero_row(tape, cfg.d_model), zero_row(tape, cfg.d_model))
    } else {
        (tape.mean_rows(fvat_e)?, tape.mean_rows(favt_e)?)
    };
    let ftva_p = if flags.drop_ftva {
        zero_row(tape, cfg.d_model)
    } else {
        tape.mean_rows(crm.f_tva)?
    };

    let logits = classify(
        tape,
        &[f_lv, f_la, ft_p, fvat_p, favt_p, ftva_p],
        &bound.pfm,
        dropout_rng,
    )?;
    Ok(ForwardOut {
        logits,
        wfm: wfm_out,
        crm,
        head_weights,
    })
}

pub struct BatchOut {
    /// Mean cross-entropy over the batch, scalar.
    pub loss: TensorId,
    /// [batch, classes]
    pub logits: TensorId,
}

/// One tape over the whole batch: every record's forward pass shares the
/// same parameter leaves, so backward sums their contributions.
pub fn batch_loss(
    tape: &mut Tape,
    bound: &ModelBound,
    flags: &AblationFlags,
    records: &[&FeatureRecord],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<BatchOut> {
    if records.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut rows = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for r in records {
        let out = forward_sample(tape, bound, flags, r, dropout_rng.as_deref_mut())?;
        rows.push(out.logits);
        labels.push(r.label);
    }
    let logits = if rows.len() == 1 {
        rows[0]
    } else {
        tape.concat(&rows, 0)?
    };
    let loss = tape.cross_entropy(logits, &labels)?;
    Ok(BatchOut { loss, logits })
}

/// Loss and raw logits observed during one optimizer step.
pub struct StepOut {
    pub loss: f64,
    /// Row-major [batch, classes], pre-update.
    pub logits: Vec<f64>,
}

/// Forward, backward, harvest gradients, optionally clip, Adam update.
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut AdamState,
    adam_cfg: &AdamConfig,
    flags: &AblationFlags,
    records: &[&FeatureRecord],
    clip: Option<f64>,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<StepOut> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = batch_loss(&mut tape, &bound, flags, records, dropout_rng)?;
    let loss = tape.scalar_value(out.loss);
    let logits = tape.value(out.logits).to_vec();
    tape.backward(out.loss)?;
    params.take_grads(&tape, &bound);
    let mut named = params.named_mut();
    if let Some(max_norm) = clip {
        clip_gradients(&mut named, max_norm);
    }
    adam.step(adam_cfg, &mut named)?;
    Ok(StepOut { loss, logits })
}

pub fn predict_record(
    params: &ModelParams,
    flags: &AblationFlags,
    record: &FeatureRecord,
) -> Result<Prediction> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward_sample(&mut tape, &bound, flags, record, None)?;
    Ok(Prediction::from_logits(tape.value(out.logits)))
}

/// Inference over many records, one tape per record; parameters frozen.
pub fn predict_batch(
    params: &ModelParams,
    flags: &AblationFlags,
    records: &[&FeatureRecord],
) -> Result<Vec<Prediction>> {
    crate::pmap::try_map(records.to_vec(), |r| predict_record(params, flags, r))
}

/// Always-sequential variant, kept for comparison benchmarks.
pub fn predict_batch_seq(
    params: &ModelParams,
    flags: &AblationFlags,
    records: &[&FeatureRecord],
) -> Result<Vec<Prediction>> {
    records
        .iter()
        .map(|r| predict_record(params, flags, r))
        .collect()
}
