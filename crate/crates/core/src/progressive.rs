//! Progressive fusion head: the text and co-representation sequences are
//! stacked along time, enhanced by one self-attention block, and split
//! back; the raw video/audio sequences are summarized by LSTMs; the six
//! resulting vectors are concatenated and classified by a two-layer MLP.

use rand_chacha::ChaCha8Rng;

use crate::attention::scaled_dot_attention;
use crate::corep::{AttnProj, AttnProjBound};
use crate::error::{Error, Result};
use crate::recurrent::{lstm_forward, LstmBound, LstmParams};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct PfmParams {
    pub attn: AttnProj,
    pub video_lstm: LstmParams,
    pub audio_lstm: LstmParams,
    /// [in_width, hidden]
    pub mlp_w1: Tensor,
    /// [hidden]
    pub mlp_b1: Tensor,
    /// [hidden, classes]
    pub mlp_w2: Tensor,
    /// [classes]
    pub mlp_b2: Tensor,
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
}

/// MLP input width: four mean-pooled d_model sequences plus two LSTM
/// summaries of width h.
pub fn classifier_input_width(d_model: usize, h: usize) -> usize {
    4 * d_model + 2 * h
}

/// Hidden width of the classifier MLP: two thirds of its input, rounded up.
pub fn classifier_hidden_width(in_width: usize) -> usize {
    (2 * in_width).div_ceil(3)
}

impl PfmParams {
    pub fn init(
        d_model: usize,
        d_v: usize,
        d_a: usize,
        h: usize,
        classes: usize,
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let in_width = classifier_input_width(d_model, h);
        let hidden = classifier_hidden_width(in_width);
        PfmParams {
            attn: AttnProj::init(d_model, rng),
            video_lstm: LstmParams::init(d_v, h, rng),
            audio_lstm: LstmParams::init(d_a, h, rng),
            mlp_w1: Tensor::xavier(vec![in_width, hidden], in_width, hidden, rng),
            mlp_b1: Tensor::zeros_param(vec![hidden]),
            mlp_w2: Tensor::xavier(vec![hidden, classes], hidden, classes, rng),
            mlp_b2: Tensor::zeros_param(vec![classes]),
            hidden,
            classes,
            dropout,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> PfmBound {
        PfmBound {
            attn: self.attn.bind(tape),
            video_lstm: self.video_lstm.bind(tape),
            audio_lstm: self.audio_lstm.bind(tape),
            mlp_w1: tape.leaf(&self.mlp_w1),
            mlp_b1: tape.leaf(&self.mlp_b1),
            mlp_w2: tape.leaf(&self.mlp_w2),
            mlp_b2: tape.leaf(&self.mlp_b2),
            classes: self.classes,
            dropout: self.dropout,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.attn.visit(&format!("{prefix}.attn"), out);
        self.video_lstm.visit(&format!("{prefix}.video_lstm"), out);
        self.audio_lstm.visit(&format!("{prefix}.audio_lstm"), out);
        out.push((format!("{prefix}.mlp_w1"), &self.mlp_w1));
        out.push((format!("{prefix}.mlp_b1"), &self.mlp_b1));
        out.push((format!("{prefix}.mlp_w2"), &self.mlp_w2));
        out.push((format!("{prefix}.mlp_b2"), &self.mlp_b2));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.attn.visit_mut(&format!("{prefix}.attn"), out);
        self.video_lstm.visit_mut(&format!("{prefix}.video_lstm"), out);
        self.audio_lstm.visit_mut(&format!("{prefix}.audio_lstm"), out);
        out.push((format!("{prefix}.mlp_w1"), &mut self.mlp_w1));
        out.push((format!("{prefix}.mlp_b1"), &mut self.mlp_b1));
        out.push((format!("{prefix}.mlp_w2"), &mut self.mlp_w2));
        out.push((format!("{prefix}.mlp_b2"), &mut self.mlp_b2));
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PfmBound {
    pub attn: AttnProjBound,
    pub video_lstm: LstmBound,
    pub audio_lstm: LstmBound,
    pub mlp_w1: TensorId,
    pub mlp_b1: TensorId,
    pub mlp_w2: TensorId,
    pub mlp_b2: TensorId,
    pub classes: usize,
    pub dropout: f64,
}

/// Temporal concatenation of three equal [Lt, d] sequences -> [3Lt, d].
pub fn stack_features(
    tape: &mut Tape,
    f_t: TensorId,
    f_vat: TensorId,
    f_avt: TensorId,
) -> Result<TensorId> {
    let s = tape.shape(f_t).to_vec();
    for other in [f_vat, f_avt] {
        if tape.shape(other) != s.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "stack_features",
                lhs: s,
                rhs: tape.shape(other).to_vec(),
            });
        }
    }
    tape.concat(&[f_t, f_vat, f_avt], 0)
}

/// Self-attention over the stacked matrix, then a split back into the
/// three segments. Also returns the attention weights [3Lt, 3Lt].
pub fn self_attention_enhance(
    tape: &mut Tape,
    f_m: TensorId,
    proj: &AttnProjBound,
) -> Result<(TensorId, TensorId, TensorId, TensorId)> {
    let q = tape.matmul(f_m, proj.q)?;
    let k = tape.matmul(f_m, proj.k)?;
    let v = tape.matmul(f_m, proj.v)?;
    let (enhanced, weights) = scaled_dot_attention(tape, q, k, v)?;
    let total = tape.shape(enhanced)[0];
    debug_assert_eq!(total % 3, 0, "stack length must be divisible by 3");
    let lt = total / 3;
    let f_t = tape.slice(enhanced, 0, 0, lt)?;
    let f_vat = tape.slice(enhanced, 0, lt, lt)?;
    let f_avt = tape.slice(enhanced, 0, 2 * lt, lt)?;
    Ok((f_t, f_vat, f_avt, weights))
}

/// Final hidden states of LSTMs over the raw modality sequences.
pub fn lstm_summarize(
    tape: &mut Tape,
    f_v_raw: TensorId,
    f_a_raw: TensorId,
    video: &LstmBound,
    audio: &LstmBound,
) -> Result<(TensorId, TensorId)> {
    let (_, f_lv) = lstm_forward(tape, f_v_raw, video)?;
    let (_, f_la) = lstm_forward(tape, f_a_raw, audio)?;
    Ok((f_lv, f_la))
}

/// Concatenate the six row vectors and run the two-layer MLP.
/// Dropout is applied to the hidden activation only when a stream is given.
pub fn classify(
    tape: &mut Tape,
    parts: &[TensorId; 6],
    p: &PfmBound,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<TensorId> {
    for &part in parts {
        if tape.shape(part)[0] != 1 {
            return Err(Error::ShapeMismatch {
                op: "classify",
                lhs: tape.shape(part).to_vec(),
                rhs: vec![1, 0],
            });
        }
    }
    let joined = tape.concat(parts, 1)?;
    let expected = tape.shape(p.mlp_w1)[0];
    if tape.shape(joined)[1] != expected {
        return Err(Error::Config(format!(
            "classifier expects input width {expected}, got {}",
            tape.shape(joined)[1]
        )));
    }
    let h_pre = tape.matmul(joined, p.mlp_w1)?;
    let h_pre = tape.add_row(h_pre, p.mlp_b1)?;
    let mut hidden = tape.relu(h_pre);
    if let Some(rng) = dropout_rng {
        hidden = tape.dropout(hidden, p.dropout, rng);
    }
    let logits = tape.matmul(hidden, p.mlp_w2)?;
    tape.add_row(logits, p.mlp_b2)
}

/// Softmaxed class scores with the argmax label (ties break low).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub label: usize,
}

impl Prediction {
    pub fn from_logits(logits: &[f64]) -> Self {
        assert!(!logits.is_empty());
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probabilities: Vec<f64> = exps.iter().map(|e| e / z).collect();
        let mut label = 0;
        for (i, &l) in logits.iter().enumerate() {
            if l > logits[label] {
                label = i;
            }
        }
        Prediction {
            logits: logits.to_vec(),
            probabilities,
            label,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamKind::Init, 5);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn tiny_params(seed: u64) -> PfmParams {
        let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamKind::Init, 0);
        PfmParams::init(3, 2, 2, 2, 4, 0.0, &mut rng)
    }

    #[test]
    fn stack_and_split_roundtrip() {
        let d = 3;
        let a = random(4 * d, 1);
        let b = random(4 * d, 2);
        let c = random(4 * d, 3);
        let mut tape = Tape::new();
        let ta = tape.constant(vec![4, d], a.clone());
        let tb = tape.constant(vec![4, d], b.clone());
        let tc = tape.constant(vec![4, d], c.clone());
        let stacked = stack_features(&mut tape, ta, tb, tc).unwrap();
        assert_eq!(tape.shape(stacked), &[12, d]);
        // slice offsets [0, Lt, 2Lt] recover the originals exactly
        for (offset, want) in [(0, &a), (4, &b), (8, &c)] {
            let seg = tape.slice(stacked, 0, offset, 4).unwrap();
            assert_eq!(tape.value(seg), want.as_slice());
        }
    }

    #[test]
    fn stack_rejects_mismatched_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(vec![4, 3], vec![0.0; 12]);
        let b = tape.constant(vec![3, 3], vec![0.0; 9]);
        assert!(stack_features(&mut tape, a, b, a).is_err());
    }

    #[test]
    fn zero_value_projection_zeroes_enhancement() {
        let d = 3;
        let proj = AttnProj {
            q: Tensor::xavier(vec![d, d], d, d, &mut crate::rng::stream_rng(4, crate::rng::StreamKind::Init, 0)),
            k: Tensor::xavier(vec![d, d], d, d, &mut crate::rng::stream_rng(5, crate::rng::StreamKind::Init, 0)),
            v: Tensor::zeros_param(vec![d, d]),
        };
        let mut tape = Tape::new();
        let bound = proj.bind(&mut tape);
        let f_m = tape.constant(vec![6, d], random(6 * d, 6));
        let (a, b, c, _) = self_attention_enhance(&mut tape, f_m, &bound).unwrap();
        for id in [a, b, c] {
            assert!(tape.value(id).iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn identical_rows_attend_to_common_projected_row() {
        let d = 2;
        let proj = AttnProj::identity(d);
        let mut tape = Tape::new();
        let bound = proj.bind(&mut tape);
        let row = [0.4, -0.6];
        let mut vals = Vec::new();
        for _ in 0..6 {
            vals.extend_from_slice(&row);
        }
        let f_m = tape.constant(vec![6, d], vals);
        let (a, b, c, w) = self_attention_enhance(&mut tape, f_m, &bound).unwrap();
        for id in [a, b, c] {
            for r in tape.value(id).chunks(d) {
                assert!((r[0] - row[0]).abs() <= 1e-12 && (r[1] - row[1]).abs() <= 1e-12);
            }
        }
        // uniform attention over identical keys
        for v in tape.value(w) {
            assert!((v - 1.0 / 6.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn enhancement_matches_direct_attention_oracle() {
        let d = 3;
        let mut rng = crate::rng::stream_rng(7, crate::rng::StreamKind::Init, 0);
        let proj = AttnProj::init(d, &mut rng);
        let vals = random(6 * d, 7);

        // oracle: project, dense attention, slice
        let matmul = |x: &[f64], w: &[f64], r: usize| -> Vec<f64> {
            let mut out = vec![0.0; r * d];
            for i in 0..r {
                for j in 0..d {
                    for p in 0..d {
                        out[i * d + j] += x[i * d + p] * w[p * d + j];
                    }
                }
            }
            out
        };
        let q = matmul(&vals, proj.q.values(), 6);
        let k = matmul(&vals, proj.k.values(), 6);
        let v = matmul(&vals, proj.v.values(), 6);
        let mut expect = vec![0.0; 6 * d];
        for i in 0..6 {
            let mut scores = vec![0.0; 6];
            for j in 0..6 {
                for p in 0..d {
                    scores[j] += q[i * d + p] * k[j * d + p];
                }
                scores[j] /= (d as f64).sqrt();
            }
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for j in 0..6 {
                let w = scores[j].exp() / z;
                for p in 0..d {
                    expect[i * d + p] += w * v[j * d + p];
                }
            }
        }

        let mut tape = Tape::new();
        let bound = proj.bind(&mut tape);
        let f_m = tape.constant(vec![6, d], vals);
        let (a, b, c, _) = self_attention_enhance(&mut tape, f_m, &bound).unwrap();
        let got: Vec<f64> = tape
            .value(a)
            .iter()
            .chain(tape.value(b))
            .chain(tape.value(c))
            .copied()
            .collect();
        for (g, w) in got.iter().zip(&expect) {
            assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn lstm_summaries_have_width_h_and_match_oracle() {
        let p = tiny_params(8);
        let mut tape = Tape::new();
        let vb = p.video_lstm.bind(&mut tape);
        let ab = p.audio_lstm.bind(&mut tape);
        let f_v = tape.constant(vec![5, 2], random(10, 9));
        let f_a = tape.constant(vec![3, 2], random(6, 10));
        let (f_lv, f_la) = lstm_summarize(&mut tape, f_v, f_a, &vb, &ab).unwrap();
        assert_eq!(tape.shape(f_lv), &[1, 2]);
        assert_eq!(tape.shape(f_la), &[1, 2]);
        // equals the full forward's last row
        let (out, _) = lstm_forward(&mut tape, f_v, &vb).unwrap();
        let last = tape.slice(out, 0, 4, 1).unwrap();
        assert_eq!(tape.value(f_lv), tape.value(last));
    }

    #[test]
    fn classify_zero_weights_is_uniform_and_bias_only_is_softmax_bias() {
        let mut p = tiny_params(11);
        for t in [&mut p.mlp_w1, &mut p.mlp_w2] {
            t.values_mut().fill(0.0);
        }
        p.mlp_b1.values_mut().fill(0.0);
        p.mlp_b2.values_mut().fill(0.0);

        let make_parts = |tape: &mut Tape| -> [TensorId; 6] {
            [
                tape.constant(vec![1, 2], random(2, 12)),
                tape.constant(vec![1, 2], random(2, 13)),
                tape.constant(vec![1, 3], random(3, 14)),
                tape.constant(vec![1, 3], random(3, 15)),
                tape.constant(vec![1, 3], random(3, 16)),
                tape.constant(vec![1, 3], random(3, 17)),
            ]
        };

        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let parts = make_parts(&mut tape);
        let logits = classify(&mut tape, &parts, &bound, None).unwrap();
        let pred = Prediction::from_logits(tape.value(logits));
        for prob in &pred.probabilities {
            assert!((prob - 0.25).abs() <= 1e-12);
        }
        assert_eq!(pred.label, 0); // tie broken toward the lowest index

        // bias-only: probabilities equal softmax of the bias, independent of input
        let bias = [0.3, -0.4, 1.2, 0.0];
        p.mlp_b2.values_mut().copy_from_slice(&bias);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let parts = make_parts(&mut tape);
        let logits = classify(&mut tape, &parts, &bound, None).unwrap();
        assert_eq!(tape.value(logits), &bias);
    }

    #[test]
    fn classify_matches_mlp_oracle() {
        let p = tiny_params(18);
        let widths = [2usize, 2, 3, 3, 3, 3];
        let seeds = [19u64, 20, 21, 22, 23, 24];
        let inputs: Vec<Vec<f64>> = widths
            .iter()
            .zip(seeds)
            .map(|(w, s)| random(*w, s))
            .collect();
        let joined: Vec<f64> = inputs.iter().flatten().copied().collect();

        // affine + relu + affine by hand
        let in_w = joined.len();
        let hid = p.hidden;
        let mut hvec = p.mlp_b1.values().to_vec();
        for j in 0..hid {
            for i in 0..in_w {
                hvec[j] += joined[i] * p.mlp_w1.values()[i * hid + j];
            }
            hvec[j] = hvec[j].max(0.0);
        }
        let mut expect = p.mlp_b2.values().to_vec();
        for c in 0..p.classes {
            for j in 0..hid {
                expect[c] += hvec[j] * p.mlp_w2.values()[j * p.classes + c];
            }
        }

        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let parts: Vec<TensorId> = inputs
            .iter()
            .zip(widths)
            .map(|(v, w)| tape.constant(vec![1, w], v.clone()))
            .collect();
        let parts: [TensorId; 6] = parts.try_into().unwrap();
        let logits = classify(&mut tape, &parts, &bound, None).unwrap();
        for (got, want) in tape.value(logits).iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn classify_rejects_wrong_widths() {
        let p = tiny_params(25);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let parts = [
            tape.constant(vec![1, 2], vec![0.0; 2]),
            tape.constant(vec![1, 2], vec![0.0; 2]),
            tape.constant(vec![1, 3], vec![0.0; 3]),
            tape.constant(vec![1, 3], vec![0.0; 3]),
            tape.constant(vec![1, 3], vec![0.0; 3]),
            tape.constant(vec![1, 4], vec![0.0; 4]), // one too wide
        ];
        assert!(matches!(
            classify(&mut tape, &parts, &bound, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn prediction_simplex_and_tiebreak() {
        let pred = Prediction::from_logits(&[1.0, 3.0, 3.0, -2.0]);
        let sum: f64 = pred.probabilities.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-6);
        assert_eq!(pred.label, 1); // first of the tied maxima
    }
}
