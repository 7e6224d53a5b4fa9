//! Multilevel orthonormal Haar analysis/synthesis per feature channel,
//! recorded on the autodiff tape, plus the high-band concatenate/split
//! plumbing the fusion stage needs.
//!
//! Band layout is channel-major [d, time]. `highs[0]` is the finest level
//! (length L/2) and the list descends to L/2^J. The transform never pads;
//! the caller must supply lengths divisible by 2^levels.

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};

#[derive(Debug, Clone)]
pub struct WaveletPyramid {
    pub low: TensorId,
    /// Detail bands, index 0 = level 1 = finest (temporal length L/2).
    pub highs: Vec<TensorId>,
    pub levels: usize,
    pub original_length: usize,
}

/// Repeated Haar analysis on the low band, `levels` times.
pub fn dwt_multilevel(tape: &mut Tape, x: TensorId, levels: usize) -> Result<WaveletPyramid> {
    assert!(levels >= 1, "dwt needs at least one level");
    let shape = tape.shape(x);
    assert_eq!(shape.len(), 2, "dwt expects channel-major [d, L]");
    let original_length = shape[1];
    let divisor = 1usize << levels;
    if original_length % divisor != 0 {
        return Err(Error::NotDivisible {
            len: original_length,
            divisor,
            padded: original_length.div_ceil(divisor) * divisor,
        });
    }
    let mut highs = Vec::with_capacity(levels);
    let mut current = x;
    for _ in 0..levels {
        let high = tape.haar_high(current)?;
        let low = tape.haar_low(current)?;
        highs.push(high);
        current = low;
    }
    Ok(WaveletPyramid {
        low: current,
        highs,
        levels,
        original_length,
    })
}

/// Exact inverse of `dwt_multilevel`, coarsest level first.
pub fn idwt_multilevel(tape: &mut Tape, p: &WaveletPyramid) -> Result<TensorId> {
    let mut current = p.low;
    for (j, &high) in p.highs.iter().enumerate().rev() {
        let expected = p.original_length >> (j + 1);
        let got = tape.shape(high)[1];
        if got != expected {
            return Err(Error::BandLength {
                level: j + 1,
                expected,
                got,
            });
        }
        current = tape.haar_synth(current, high)?;
    }
    Ok(current)
}

/// Temporal concatenation of the detail bands, finest first.
/// For J levels the output length is (2^J - 1) * L / 2^J.
pub fn concat_highs(tape: &mut Tape, p: &WaveletPyramid) -> Result<TensorId> {
    tape.concat(&p.highs, 1)
}

/// Inverse of `concat_highs`: recover the per-level bands of a pyramid
/// with the given original length and level count.
pub fn split_highs(
    tape: &mut Tape,
    h: TensorId,
    original_length: usize,
    levels: usize,
) -> Result<Vec<TensorId>> {
    let expected: usize = (1..=levels).map(|j| original_length >> j).sum();
    let got = tape.shape(h)[1];
    if got != expected {
        return Err(Error::LengthMismatch { expected, got });
    }
    let mut out = Vec::with_capacity(levels);
    let mut offset = 0;
    for j in 1..=levels {
        let len = original_length >> j;
        out.push(tape.slice(h, 1, offset, len)?);
        offset += len;
    }
    Ok(out)
}
