//! LSTM and bidirectional LSTM recorded on the autodiff tape.
//!
//! Gate weights are packed column-wise in the order (input, forget, cell,
//! output), so one matmul per step covers all four gates. The input
//! projection for the whole sequence is hoisted out of the time loop.
//! Sequences are time-major [L, d_in]; hidden states are rows [1, h].

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LstmParams {
    /// [d_in, 4h]
    pub w_x: Tensor,
    /// [h, 4h]
    pub w_h: Tensor,
    /// [4h]
    pub b: Tensor,
    pub hidden: usize,
}

impl LstmParams {
    /// Xavier-uniform weights, zero biases except the forget gate at +1,
    /// which keeps early cell states from being erased.
    pub fn init(d_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_x = Tensor::xavier(vec![d_in, 4 * hidden], d_in, hidden, rng);
        let w_h = Tensor::xavier(vec![hidden, 4 * hidden], hidden, hidden, rng);
        let mut b = vec![0.0; 4 * hidden];
        for v in &mut b[hidden..2 * hidden] {
            *v = 1.0;
        }
        LstmParams {
            w_x,
            w_h,
            b: Tensor::new(vec![4 * hidden], b).unwrap().into_param(),
            hidden,
        }
    }

    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        LstmParams {
            w_x: Tensor::zeros_param(vec![d_in, 4 * hidden]),
            w_h: Tensor::zeros_param(vec![hidden, 4 * hidden]),
            b: Tensor::zeros_param(vec![4 * hidden]),
            hidden,
        }
    }

    pub fn input_width(&self) -> usize {
        self.w_x.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape) -> LstmBound {
        LstmBound {
            w_x: tape.leaf(&self.w_x),
            w_h: tape.leaf(&self.w_h),
            b: tape.leaf(&self.b),
            hidden: self.hidden,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w_x"), &self.w_x));
        out.push((format!("{prefix}.w_h"), &self.w_h));
        out.push((format!("{prefix}.b"), &self.b));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w_x"), &mut self.w_x));
        out.push((format!("{prefix}.w_h"), &mut self.w_h));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

/// Tape handles for one bound LSTM parameter set.
#[derive(Debug, Clone, Copy)]
pub struct LstmBound {
    pub w_x: TensorId,
    pub w_h: TensorId,
    pub b: TensorId,
    pub hidden: usize,
}

/// Forward/backward parameter pair for a bidirectional pass.
#[derive(Debug, Clone)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn init(d_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        BiLstmParams {
            fwd: LstmParams::init(d_in, hidden, rng),
            bwd: LstmParams::init(d_in, hidden, rng),
        }
    }

    pub fn zeros(d_in: usize, hidden: usize) -> Self {
        BiLstmParams {
            fwd: LstmParams::zeros(d_in, hidden),
            bwd: LstmParams::zeros(d_in, hidden),
        }
    }

    /// Width of the concatenated output.
    pub fn output_width(&self) -> usize {
        2 * self.fwd.hidden
    }

    pub fn bind(&self, tape: &mut Tape) -> BiLstmBound {
        BiLstmBound {
            fwd: self.fwd.bind(tape),
            bwd: self.bwd.bind(tape),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        self.fwd.visit(&format!("{prefix}.fwd"), out);
        self.bwd.visit(&format!("{prefix}.bwd"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.fwd.visit_mut(&format!("{prefix}.fwd"), out);
        self.bwd.visit_mut(&format!("{prefix}.bwd"), out);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmBound {
    pub fwd: LstmBound,
    pub bwd: LstmBound,
}

/// `bilstm_forward` over a bound pair.
pub fn bilstm_pair_forward(tape: &mut Tape, x: TensorId, p: &BiLstmBound) -> Result<TensorId> {
    bilstm_forward(tape, x, &p.fwd, &p.bwd)
}

/// Standard LSTM over a time-major sequence.
/// Returns (outputs [L, h], last hidden state [1, h]).
pub fn lstm_forward(
    tape: &mut Tape,
    x: TensorId,
    p: &LstmBound,
) -> Result<(TensorId, TensorId)> {
    let shape = tape.shape(x);
    let (len, d_in) = (shape[0], shape[1]);
    if len == 0 {
        return Err(Error::EmptySequence { op: "lstm_forward" });
    }
    if tape.shape(p.w_x)[0] != d_in {
        return Err(Error::ShapeMismatch {
            op: "lstm_forward",
            lhs: vec![len, d_in],
            rhs: tape.shape(p.w_x).to_vec(),
        });
    }
    let h = p.hidden;
    let xw = tape.matmul(x, p.w_x)?; // [L, 4h]
    let mut h_prev = tape.zeros(vec![1, h]);
    let mut c_prev = tape.zeros(vec![1, h]);
    let mut rows = Vec::with_capacity(len);
    for t in 0..len {
        let xt = tape.slice(xw, 0, t, 1)?; // [1, 4h]
        let hw = tape.matmul(h_prev, p.w_h)?; // [1, 4h]
        let pre = tape.add(xt, hw)?;
        let gates = tape.add_row(pre, p.b)?;
        let i_pre = tape.slice(gates, 1, 0, h)?;
        let f_pre = tape.slice(gates, 1, h, h)?;
        let g_pre = tape.slice(gates, 1, 2 * h, h)?;
        let o_pre = tape.slice(gates, 1, 3 * h, h)?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);
        let fc = tape.mul(f, c_prev)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let ht = tape.mul(o, tc)?;
        rows.push(ht);
        h_prev = ht;
        c_prev = c;
    }
    let outputs = tape.concat(&rows, 0)?;
    Ok((outputs, rows[len - 1]))
}

/// Forward pass concatenated with a time-reversed pass, [L, 2h].
pub fn bilstm_forward(
    tape: &mut Tape,
    x: TensorId,
    fwd: &LstmBound,
    bwd: &LstmBound,
) -> Result<TensorId> {
    let (f_out, _) = lstm_forward(tape, x, fwd)?;
    let x_rev = tape.reverse_rows(x)?;
    let (b_out_rev, _) = lstm_forward(tape, x_rev, bwd)?;
    let b_out = tape.reverse_rows(b_out_rev)?;
    tape.concat(&[f_out, b_out], 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_params(d_in: usize, h: usize, seed: u64) -> LstmParams {
        let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamKind::Init, 0);
        LstmParams::init(d_in, h, &mut rng)
    }

    fn random_seq(len: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamKind::Init, 1);
        (0..len * d).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Plain-loop LSTM oracle over flat slices.
    fn oracle_lstm(
        x: &[f64],
        len: usize,
        d_in: usize,
        h: usize,
        w_x: &[f64],
        w_h: &[f64],
        b: &[f64],
    ) -> Vec<f64> {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut hs = vec![0.0; len * h];
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for t in 0..len {
            let mut gates = b.to_vec();
            for g in 0..4 * h {
                for j in 0..d_in {
                    gates[g] += x[t * d_in + j] * w_x[j * 4 * h + g];
                }
                for j in 0..h {
                    gates[g] += h_prev[j] * w_h[j * 4 * h + g];
                }
            }
            for k in 0..h {
                let i = sig(gates[k]);
                let f = sig(gates[h + k]);
                let g = gates[2 * h + k].tanh();
                let o = sig(gates[3 * h + k]);
                let c = f * c_prev[k] + i * g;
                let hv = o * c.tanh();
                c_prev[k] = c;
                h_prev[k] = hv;
                hs[t * h + k] = hv;
            }
        }
        hs
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let p = LstmParams::zeros(3, 2);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(vec![4, 3], random_seq(4, 3, 1));
        let (out, last) = lstm_forward(&mut tape, x, &bound).unwrap();
        assert!(tape.value(out).iter().all(|v| *v == 0.0));
        assert!(tape.value(last).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_step_equals_last_hidden() {
        let p = random_params(3, 2, 2);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(vec![1, 3], random_seq(1, 3, 3));
        let (out, last) = lstm_forward(&mut tape, x, &bound).unwrap();
        assert_eq!(tape.value(out), tape.value(last));
    }

    #[test]
    fn three_step_case_matches_unrolled_oracle() {
        let (len, d_in, h) = (3, 2, 3);
        let p = random_params(d_in, h, 4);
        let xs = random_seq(len, d_in, 5);
        let expect = oracle_lstm(
            &xs,
            len,
            d_in,
            h,
            p.w_x.values(),
            p.w_h.values(),
            p.b.values(),
        );
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(vec![len, d_in], xs);
        let (out, _) = lstm_forward(&mut tape, x, &bound).unwrap();
        for (got, want) in tape.value(out).iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn bilstm_zero_weights_and_width() {
        let fwd = LstmParams::zeros(3, 2);
        let bwd = LstmParams::zeros(3, 2);
        let mut tape = Tape::new();
        let bf = fwd.bind(&mut tape);
        let bb = bwd.bind(&mut tape);
        let x = tape.constant(vec![5, 3], random_seq(5, 3, 6));
        let out = bilstm_forward(&mut tape, x, &bf, &bb).unwrap();
        assert_eq!(tape.shape(out), &[5, 4]);
        assert!(tape.value(out).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tied_weights_on_palindrome_give_palindrome() {
        let p = random_params(2, 2, 7);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        // rows read the same forward and backward
        let x = tape.constant(
            vec![5, 2],
            vec![0.3, -0.1, 0.9, 0.5, 0.2, 0.2, 0.9, 0.5, 0.3, -0.1],
        );
        let out = bilstm_forward(&mut tape, x, &bound, &bound).unwrap();
        let v = tape.value(out);
        let (len, w) = (5, 4);
        // row t of the forward half equals row L-1-t of the backward half
        for t in 0..len {
            for j in 0..2 {
                let fwd_v = v[t * w + j];
                let bwd_v = v[(len - 1 - t) * w + 2 + j];
                assert!((fwd_v - bwd_v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bilstm_matches_compositional_oracle() {
        let (len, d_in, h) = (4, 3, 2);
        let fwd = random_params(d_in, h, 8);
        let bwd = random_params(d_in, h, 9);
        let xs = random_seq(len, d_in, 10);

        let f_half = oracle_lstm(&xs, len, d_in, h, fwd.w_x.values(), fwd.w_h.values(), fwd.b.values());
        let mut xs_rev = vec![0.0; xs.len()];
        for t in 0..len {
            xs_rev[t * d_in..(t + 1) * d_in]
                .copy_from_slice(&xs[(len - 1 - t) * d_in..(len - t) * d_in]);
        }
        let b_half_rev = oracle_lstm(&xs_rev, len, d_in, h, bwd.w_x.values(), bwd.w_h.values(), bwd.b.values());

        let mut tape = Tape::new();
        let bf = fwd.bind(&mut tape);
        let bb = bwd.bind(&mut tape);
        let x = tape.constant(vec![len, d_in], xs);
        let out = bilstm_forward(&mut tape, x, &bf, &bb).unwrap();
        let v = tape.value(out);
        for t in 0..len {
            for k in 0..h {
                assert!((v[t * 2 * h + k] - f_half[t * h + k]).abs() <= 1e-10);
                let want = b_half_rev[(len - 1 - t) * h + k];
                assert!((v[t * 2 * h + h + k] - want).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let p = LstmParams::zeros(3, 2);
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let x = tape.constant(vec![0, 3], vec![]);
        assert!(matches!(
            lstm_forward(&mut tape, x, &bound),
            Err(Error::EmptySequence { .. })
        ));
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        let (len, d_in, h) = (3, 2, 2);
        let xs = random_seq(len, d_in, 11);
        let p = random_params(d_in, h, 12);
        let flat: Vec<f64> = p
            .w_x
            .values()
            .iter()
            .chain(p.w_h.values())
            .chain(p.b.values())
            .copied()
            .collect();

        let eval = |theta: &[f64]| -> crate::error::Result<(f64, Vec<f64>)> {
            let (n_wx, n_wh) = (d_in * 4 * h, h * 4 * h);
            let mut q = LstmParams::zeros(d_in, h);
            q.w_x.values_mut().copy_from_slice(&theta[..n_wx]);
            q.w_h.values_mut().copy_from_slice(&theta[n_wx..n_wx + n_wh]);
            q.b.values_mut().copy_from_slice(&theta[n_wx + n_wh..]);
            let mut tape = Tape::new();
            let bound = q.bind(&mut tape);
            let x = tape.constant(vec![len, d_in], xs.clone());
            let (out, _) = lstm_forward(&mut tape, x, &bound)?;
            let loss = tape.sum_all(out);
            tape.backward(loss)?;
            let mut grads = Vec::with_capacity(theta.len());
            grads.extend_from_slice(tape.grad(bound.w_x).unwrap());
            grads.extend_from_slice(tape.grad(bound.w_h).unwrap());
            grads.extend_from_slice(tape.grad(bound.b).unwrap());
            Ok((tape.scalar_value(loss), grads))
        };

        let (_, analytic) = eval(&flat).unwrap();
        let report = crate::gradcheck::check(
            &flat,
            &analytic,
            &crate::gradcheck::GradCheckConfig::default(),
            |theta| eval(theta).map(|(l, _)| l),
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }
}
