//! Wavelet-driven fusion of the video and audio streams.
//!
//! Both modalities are resampled to a shared length, projected to the
//! model width, and decomposed with the multilevel Haar transform. The
//! approximation bands pass through a width-3 convolution; the detail
//! bands are concatenated, run through a BiLSTM in the opposite modality,
//! mixed multiplicatively with a residual, normalized per time step, and
//! reassembled with the enhanced approximation through the inverse
//! transform. Output sequences are time-major [L, d_model].

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::recurrent::{bilstm_pair_forward, BiLstmBound, BiLstmParams};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;
use crate::wavelet::{concat_highs, dwt_multilevel, idwt_multilevel, split_highs, WaveletPyramid};

/// Width-3 convolution parameters for one approximation band.
#[derive(Debug, Clone)]
pub struct Conv1dParams {
    /// [d_out, d_in, 3]
    pub kernel: Tensor,
    /// [d_out]
    pub bias: Tensor,
}

impl Conv1dParams {
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv1dParams {
            kernel: Tensor::xavier(vec![d, d, 3], 3 * d, d, rng),
            bias: Tensor::zeros_param(vec![d]),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Conv1dParams {
            kernel: Tensor::zeros_param(vec![d, d, 3]),
            bias: Tensor::zeros_param(vec![d]),
        }
    }

    /// Centre-tap identity: conv(x) == x.
    pub fn identity(d: usize) -> Self {
        let mut kernel = vec![0.0; d * d * 3];
        for c in 0..d {
            kernel[(c * d + c) * 3 + 1] = 1.0;
        }
        Conv1dParams {
            kernel: Tensor::new(vec![d, d, 3], kernel).unwrap().into_param(),
            bias: Tensor::zeros_param(vec![d]),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Conv1dBound {
        Conv1dBound {
            kernel: tape.leaf(&self.kernel),
            bias: tape.leaf(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.kernel"), &self.kernel));
        out.push((format!("{prefix}.bias"), &self.bias));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.kernel"), &mut self.kernel));
        out.push((format!("{prefix}.bias"), &mut self.bias));
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv1dBound {
    pub kernel: TensorId,
    pub bias: TensorId,
}

/// All fusion-stage parameters.
#[derive(Debug, Clone)]
pub struct WfmParams {
    /// [d_v, d_model] alignment projection.
    pub video_proj: Tensor,
    /// [d_a, d_model] alignment projection.
    pub audio_proj: Tensor,
    pub video_low: Conv1dParams,
    pub audio_low: Conv1dParams,
    pub video_high: BiLstmParams,
    pub audio_high: BiLstmParams,
    pub length: usize,
    pub d_model: usize,
    pub levels: usize,
}

impl WfmParams {
    pub fn init(
        d_v: usize,
        d_a: usize,
        d_model: usize,
        length: usize,
        levels: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(d_model % 2 == 0, "d_model must be even for the BiLSTM halves");
        assert!(length % (1 << levels) == 0, "length must be divisible by 2^levels");
        let h = d_model / 2;
        WfmParams {
            video_proj: Tensor::xavier(vec![d_v, d_model], d_v, d_model, rng),
            audio_proj: Tensor::xavier(vec![d_a, d_model], d_a, d_model, rng),
            video_low: Conv1dParams::init(d_model, rng),
            audio_low: Conv1dParams::init(d_model, rng),
            video_high: BiLstmParams::init(d_model, h, rng),
            audio_high: BiLstmParams::init(d_model, h, rng),
            length,
            d_model,
            levels,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> WfmBound {
        WfmBound {
            video_proj: tape.leaf(&self.video_proj),
            audio_proj: tape.leaf(&self.audio_proj),
            video_low: self.video_low.bind(tape),
            audio_low: self.audio_low.bind(tape),
            video_high: self.video_high.bind(tape),
            audio_high: self.audio_high.bind(tape),
            length: self.length,
            d_model: self.d_model,
            levels: self.levels,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.video_proj"), &self.video_proj));
        out.push((format!("{prefix}.audio_proj"), &self.audio_proj));
        self.video_low.visit(&format!("{prefix}.video_low"), out);
        self.audio_low.visit(&format!("{prefix}.audio_low"), out);
        self.video_high.visit(&format!("{prefix}.video_high"), out);
        self.audio_high.visit(&format!("{prefix}.audio_high"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.video_proj"), &mut self.video_proj));
        out.push((format!("{prefix}.audio_proj"), &mut self.audio_proj));
        self.video_low.visit_mut(&format!("{prefix}.video_low"), out);
        self.audio_low.visit_mut(&format!("{prefix}.audio_low"), out);
        self.video_high.visit_mut(&format!("{prefix}.video_high"), out);
        self.audio_high.visit_mut(&format!("{prefix}.audio_high"), out);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WfmBound {
    pub video_proj: TensorId,
    pub audio_proj: TensorId,
    pub video_low: Conv1dBound,
    pub audio_low: Conv1dBound,
    pub video_high: BiLstmBound,
    pub audio_high: BiLstmBound,
    pub length: usize,
    pub d_model: usize,
    pub levels: usize,
}

/// Video and audio brought to a common [L, d_model] frame.
#[derive(Debug, Clone, Copy)]
pub struct AlignedPair {
    pub v: TensorId,
    pub a: TensorId,
}

/// Resample both modalities to `length` rows and project to `d_model`.
pub fn align_sequences(
    tape: &mut Tape,
    f_v: TensorId,
    f_a: TensorId,
    video_proj: TensorId,
    audio_proj: TensorId,
    length: usize,
) -> Result<AlignedPair> {
    if length % 8 != 0 {
        return Err(Error::Config(format!(
            "aligned length must be a multiple of 8, got {length}"
        )));
    }
    if tape.shape(f_v)[0] == 0 || tape.shape(f_a)[0] == 0 {
        return Err(Error::EmptySequence {
            op: "align_sequences",
        });
    }
    let v_time = tape.resample_rows(f_v, length)?;
    let a_time = tape.resample_rows(f_a, length)?;
    let v = tape.matmul(v_time, video_proj)?;
    let a = tape.matmul(a_time, audio_proj)?;
    Ok(AlignedPair { v, a })
}

/// Same-shape convolution of an approximation band [d, L/2^J].
pub fn enhance_low(tape: &mut Tape, low: TensorId, conv: &Conv1dBound) -> Result<TensorId> {
    tape.conv1d_same(low, conv.kernel, conv.bias)
}

/// BiLSTM over the time-major concatenated detail bands; the output
/// width 2h must equal the input width so later products are shape-legal.
pub fn cross_map(tape: &mut Tape, fh: TensorId, bilstm: &BiLstmBound) -> Result<TensorId> {
    let width = tape.shape(fh)[1];
    if 2 * bilstm.fwd.hidden != width {
        return Err(Error::Config(format!(
            "cross_map BiLSTM output width {} must equal feature width {width}",
            2 * bilstm.fwd.hidden
        )));
    }
    bilstm_pair_forward(tape, fh, bilstm)
}

/// Multiplicative mixing with residual, normalized per time step:
/// softmax over features of (self ⊙ other + self).
pub fn freq_interact(
    tape: &mut Tape,
    f_h_self: TensorId,
    h_prime_other: TensorId,
) -> Result<TensorId> {
    let prod = tape.mul(f_h_self, h_prime_other)?;
    let mixed = tape.add(prod, f_h_self)?;
    tape.softmax(mixed, 1)
}

/// Reassemble a pyramid from an enhanced low band [d, L/2^J] and fused
/// channel-major details [d, (2^J-1)L/2^J], then invert the transform.
pub fn reconstruct(
    tape: &mut Tape,
    low: TensorId,
    h_fused: TensorId,
    length: usize,
    levels: usize,
) -> Result<TensorId> {
    let highs = split_highs(tape, h_fused, length, levels)?;
    let d = tape.shape(low)[0];
    let expected_low = length >> levels;
    if tape.shape(low)[1] != expected_low {
        return Err(Error::BandLength {
            level: levels,
            expected: expected_low,
            got: tape.shape(low)[1],
        });
    }
    let p = WaveletPyramid {
        low,
        highs,
        levels,
        original_length: length,
    };
    let out = idwt_multilevel(tape, &p)?;
    debug_assert_eq!(tape.shape(out), &[d, length]);
    Ok(out)
}

/// Fused outputs plus the normalized interaction maps (time-major rows
/// of the latter are probability distributions over features).
#[derive(Debug, Clone, Copy)]
pub struct WfmOut {
    /// [L, d_model]; video approximation path.
    pub f_va: TensorId,
    /// [L, d_model]; audio approximation path.
    pub f_av: TensorId,
    /// [7L/8, d_model] interaction map feeding f_va.
    pub h_va: TensorId,
    /// [7L/8, d_model] interaction map feeding f_av.
    pub h_av: TensorId,
}

/// Full fusion pipeline over raw video [L_v, d_v] and audio [L_a, d_a].
pub fn wfm_forward(tape: &mut Tape, f_v: TensorId, f_a: TensorId, p: &WfmBound) -> Result<WfmOut> {
    let aligned = align_sequences(tape, f_v, f_a, p.video_proj, p.audio_proj, p.length)?;

    // channel-major for the transform
    let v_cm = tape.transpose(aligned.v)?;
    let a_cm = tape.transpose(aligned.a)?;
    let pv = dwt_multilevel(tape, v_cm, p.levels)?;
    let pa = dwt_multilevel(tape, a_cm, p.levels)?;

    let low_v = enhance_low(tape, pv.low, &p.video_low)?;
    let low_a = enhance_low(tape, pa.low, &p.audio_low)?;

    let fhv_cm = concat_highs(tape, &pv)?;
    let fha_cm = concat_highs(tape, &pa)?;
    let fhv = tape.transpose(fhv_cm)?; // [7L/8, d_model]
    let fha = tape.transpose(fha_cm)?;

    let hv_prime = cross_map(tape, fhv, &p.video_high)?;
    let ha_prime = cross_map(tape, fha, &p.audio_high)?;

    // audio details modulated by the video map, and vice versa
    let h_av = freq_interact(tape, fha, hv_prime)?;
    let h_va = freq_interact(tape, fhv, ha_prime)?;

    let h_av_cm = tape.transpose(h_av)?;
    let h_va_cm = tape.transpose(h_va)?;
    let f_av_cm = reconstruct(tape, low_a, h_av_cm, p.length, p.levels)?;
    let f_va_cm = reconstruct(tape, low_v, h_va_cm, p.length, p.levels)?;
    let f_av = tape.transpose(f_av_cm)?;
    let f_va = tape.transpose(f_va_cm)?;
    Ok(WfmOut {
        f_va,
        f_av,
        h_va,
        h_av,
    })
}
