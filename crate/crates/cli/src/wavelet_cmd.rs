//! Wavelet introspection: resample a stored feature sequence, split it
//! into approximation and detail bands, write each band as a feature
//! file, and verify the files reconstruct the input.

use std::path::{Path, PathBuf};

use wdmir_core::data::{read_feature_file, write_feature_file};
use wdmir_core::wavelet::{dwt_multilevel, idwt_multilevel, WaveletPyramid};
use wdmir_core::Tape;

use crate::{CliError, Result};

#[derive(Debug)]
pub struct BandFile {
    /// "low" or "high_<level>" with level 1 the finest.
    pub name: String,
    pub path: PathBuf,
    /// Temporal length of the band.
    pub len: usize,
    /// Sum of squares of the stored coefficients.
    pub energy: f64,
}

#[derive(Debug)]
pub struct WaveletArtifacts {
    pub bands: Vec<BandFile>,
    /// Max abs difference between the resampled input and the
    /// reconstruction read back from the band files.
    pub recon_error: f64,
}

pub fn format_band(b: &BandFile) -> String {
    format!(
        "band={} path={} len={} energy={:.6}",
        b.name,
        b.path.display(),
        b.len,
        b.energy
    )
}

fn energy(values: &[f64]) -> f64 {
    values.iter().map(|x| x * x).sum()
}

/// The `wavelet` command body.
pub fn cmd_wavelet(
    input: &Path,
    dim: usize,
    length: usize,
    levels: usize,
    out_dir: &Path,
) -> Result<WaveletArtifacts> {
    if dim == 0 {
        return Err(CliError::Usage("dim must be positive".into()));
    }
    if levels == 0 {
        return Err(CliError::Usage("levels must be at least 1".into()));
    }
    let divisor = 1usize << levels;
    if length == 0 || length % divisor != 0 {
        return Err(CliError::Usage(format!(
            "length {length} is not divisible by 2^levels = {divisor}"
        )));
    }
    let x = read_feature_file(input, dim)?;

    // analysis: [T, dim] -> resample -> [dim, L] -> J-level pyramid
    let mut tape = Tape::new();
    let rows = tape.constant(x.shape().to_vec(), x.values().to_vec());
    let resampled = tape.resample_rows(rows, length)?;
    let channel_major = tape.transpose(resampled)?;
    let pyramid = dwt_multilevel(&mut tape, channel_major, levels)?;
    let reference = tape.value(resampled).to_vec();

    std::fs::create_dir_all(out_dir)?;
    let mut bands = Vec::new();
    let write_band = |tape: &mut Tape, id, name: String| -> Result<BandFile> {
        let time_major = tape.transpose(id)?;
        let tensor = tape.to_tensor(time_major);
        let path = out_dir.join(format!("{name}.f32"));
        write_feature_file(&path, &tensor)?;
        Ok(BandFile {
            name,
            path,
            len: tensor.rows(),
            energy: energy(tensor.values()),
        })
    };
    bands.push(write_band(&mut tape, pyramid.low, "low".to_string())?);
    for (j, &high) in pyramid.highs.iter().enumerate() {
        bands.push(write_band(&mut tape, high, format!("high_{}", j + 1))?);
    }

    // synthesis from the files themselves, so storage precision counts
    let mut tape = Tape::new();
    let read_band = |tape: &mut Tape, band: &BandFile| -> Result<_> {
        let t = read_feature_file(&band.path, dim)?;
        let id = tape.constant(t.shape().to_vec(), t.values().to_vec());
        Ok(tape.transpose(id)?)
    };
    let low = read_band(&mut tape, &bands[0])?;
    let mut highs = Vec::new();
    for band in &bands[1..] {
        highs.push(read_band(&mut tape, band)?);
    }
    let recon = idwt_multilevel(
        &mut tape,
        &WaveletPyramid {
            low,
            highs,
            levels,
            original_length: length,
        },
    )?;
    let recon_time_major = tape.transpose(recon)?;
    let recon_error = tape
        .value(recon_time_major)
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    Ok(WaveletArtifacts { bands, recon_error })
}
