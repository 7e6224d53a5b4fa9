//! Single-head scaled dot-product attention.
//!
//! Attention weights are returned alongside the output so callers can
//! assert the rows form probability distributions.

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};

/// softmax(Q Kᵀ / √d_k) V over the key axis.
/// Returns (output [Lq, d], weights [Lq, Lk]).
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
) -> Result<(TensorId, TensorId)> {
    let (lk, dk) = (tape.shape(k)[0], tape.shape(k)[1]);
    let (lv, dv) = (tape.shape(v)[0], tape.shape(v)[1]);
    if lk != lv {
        return Err(Error::ShapeMismatch {
            op: "scaled_dot_attention",
            lhs: vec![lk, dk],
            rhs: vec![lv, dv],
        });
    }
    let dq = tape.shape(q)[1];
    if dq != dk {
        return Err(Error::ShapeMismatch {
            op: "scaled_dot_attention",
            lhs: tape.shape(q).to_vec(),
            rhs: vec![lk, dk],
        });
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = tape.softmax(scaled, 1)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamKind::Init, 2);
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
    }

    #[test]
    fn single_key_value_row_is_replicated() {
        let mut tape = Tape::new();
        let q = tape.constant(vec![3, 2], random(6, 1));
        let k = tape.constant(vec![1, 2], vec![0.4, -0.9]);
        let v = tape.constant(vec![1, 2], vec![5.0, 7.0]);
        let (out, w) = scaled_dot_attention(&mut tape, q, k, v).unwrap();
        assert_eq!(tape.value(out), &[5.0, 7.0, 5.0, 7.0, 5.0, 7.0]);
        assert_eq!(tape.value(w), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn identical_keys_give_mean_of_values() {
        let mut tape = Tape::new();
        let q = tape.constant(vec![2, 2], random(4, 2));
        let k = tape.constant(vec![3, 2], vec![0.3, 0.3, 0.3, 0.3, 0.3, 0.3]);
        let v = tape.constant(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (out, _) = scaled_dot_attention(&mut tape, q, k, v).unwrap();
        for row in tape.value(out).chunks(2) {
            assert!((row[0] - 3.0).abs() <= 1e-12 && (row[1] - 4.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn matches_direct_formula_oracle() {
        let (lq, lk, d) = (2, 3, 3);
        let qs = random(lq * d, 3);
        let ks = random(lk * d, 4);
        let vs = random(lk * d, 5);
        // direct evaluation with exp/sum
        let mut expect = vec![0.0; lq * d];
        for i in 0..lq {
            let mut scores = vec![0.0; lk];
            for j in 0..lk {
                for p in 0..d {
                    scores[j] += qs[i * d + p] * ks[j * d + p];
                }
                scores[j] /= (d as f64).sqrt();
            }
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for j in 0..lk {
                let w = scores[j].exp() / z;
                for p in 0..d {
                    expect[i * d + p] += w * vs[j * d + p];
                }
            }
        }
        let mut tape = Tape::new();
        let q = tape.constant(vec![lq, d], qs);
        let k = tape.constant(vec![lk, d], ks);
        let v = tape.constant(vec![lk, d], vs);
        let (out, w) = scaled_dot_attention(&mut tape, q, k, v).unwrap();
        for (got, want) in tape.value(out).iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-12);
        }
        for row in tape.value(w).chunks(lk) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-6);
            assert!(row.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn joint_key_value_permutation_is_invariant() {
        let (lq, lk, d) = (2, 4, 2);
        let qs = random(lq * d, 6);
        let ks = random(lk * d, 7);
        let vs = random(lk * d, 8);
        let perm = [2usize, 0, 3, 1];
        let mut kp = vec![0.0; lk * d];
        let mut vp = vec![0.0; lk * d];
        for (dst, &src) in perm.iter().enumerate() {
            kp[dst * d..(dst + 1) * d].copy_from_slice(&ks[src * d..(src + 1) * d]);
            vp[dst * d..(dst + 1) * d].copy_from_slice(&vs[src * d..(src + 1) * d]);
        }
        let mut tape = Tape::new();
        let q = tape.constant(vec![lq, d], qs);
        let k1 = tape.constant(vec![lk, d], ks);
        let v1 = tape.constant(vec![lk, d], vs);
        let k2 = tape.constant(vec![lk, d], kp);
        let v2 = tape.constant(vec![lk, d], vp);
        let (o1, _) = scaled_dot_attention(&mut tape, q, k1, v1).unwrap();
        let (o2, _) = scaled_dot_attention(&mut tape, q, k2, v2).unwrap();
        for (a, b) in tape.value(o1).iter().zip(tape.value(o2)) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn key_value_length_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let q = tape.constant(vec![2, 2], vec![0.0; 4]);
        let k = tape.constant(vec![3, 2], vec![0.0; 6]);
        let v = tape.constant(vec![2, 2], vec![0.0; 4]);
        assert!(scaled_dot_attention(&mut tape, q, k, v).is_err());
    }
}
