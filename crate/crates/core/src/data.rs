//! Dataset ingestion and synthesis.
//!
//! On disk a dataset is a plain-text manifest next to raw feature files.
//! The manifest holds `key = value` headers (`classes`, `dims.text`,
//! `dims.video`, `dims.audio`, optional `class_names`) followed by one
//! record line per sample:
//!
//! ```text
//! id, split, label, text_path, text_len, video_path, video_len, audio_path, audio_len
//! ```
//!
//! Paths are relative to the manifest's directory. Feature files are raw
//! little-endian 32-bit floats, row-major [time, dim], no header. Records
//! are kept sorted by id so iteration order never depends on the
//! filesystem.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetDims {
    pub text: usize,
    pub video: usize,
    pub audio: usize,
}

#[derive(Debug, Clone)]
pub struct FeatureRecord {
    pub id: String,
    pub split: Split,
    pub label: usize,
    /// [Lt, d_t]
    pub text: Tensor,
    /// [Lv, d_v]
    pub video: Tensor,
    /// [La, d_a]
    pub audio: Tensor,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: usize,
    pub class_names: Vec<String>,
    pub dims: DatasetDims,
    /// Sorted by id.
    pub records: Vec<FeatureRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&FeatureRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

// ── feature file IO ─────────────────────────────────────────────────────

/// Read a raw f32 little-endian feature file as [time, dim].
pub fn read_feature_file(path: &Path, dim: usize) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!(
            "{}: size {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    let floats = bytes.len() / 4;
    if dim == 0 || floats % dim != 0 {
        return Err(Error::Data(format!(
            "{}: {floats} floats do not divide into rows of width {dim}",
            path.display()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(vec![floats / dim, dim], values)
}

/// Write a [time, dim] tensor as raw f32 little-endian.
pub fn write_feature_file(path: &Path, t: &Tensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(t.numel() * 4);
    for v in t.values() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

// ── manifest ────────────────────────────────────────────────────────────

struct RecordLine {
    id: String,
    split: Split,
    label: usize,
    text_path: String,
    text_len: usize,
    video_path: String,
    video_len: usize,
    audio_path: String,
    audio_len: usize,
}

fn parse_usize(field: &str, what: &str, line_no: usize) -> Result<usize> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("manifest line {line_no}: bad {what} '{field}'")))
}

/// Load and fully validate a dataset. Every failure names the record id
/// (or manifest line) it came from.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let content = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut classes: Option<usize> = None;
    let mut class_names: Option<Vec<String>> = None;
    let mut dim_text: Option<usize> = None;
    let mut dim_video: Option<usize> = None;
    let mut dim_audio: Option<usize> = None;
    let mut lines = Vec::new();

    for (i, raw) in content.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        // header entries have an identifier-like key before the first '='
        let header_key = line.split_once('=').and_then(|(k, v)| {
            let k = k.trim();
            let ok = !k.is_empty()
                && k.chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_');
            ok.then_some((k, v.trim()))
        });
        if let Some((key, value)) = header_key {
            match key {
                "classes" => classes = Some(parse_usize(value, "classes", line_no)?),
                "class_names" => {
                    class_names =
                        Some(value.split(',').map(|s| s.trim().to_string()).collect())
                }
                "dims.text" => dim_text = Some(parse_usize(value, "dims.text", line_no)?),
                "dims.video" => dim_video = Some(parse_usize(value, "dims.video", line_no)?),
                "dims.audio" => dim_audio = Some(parse_usize(value, "dims.audio", line_no)?),
                other => {
                    return Err(Error::Data(format!(
                        "manifest line {line_no}: unknown header key '{other}'"
                    )))
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != 9 {
            return Err(Error::Data(format!(
                "manifest line {line_no}: expected 9 fields, got {}",
                fields.len()
            )));
        }
        let split = Split::parse(fields[1]).ok_or_else(|| {
            Error::Data(format!(
                "manifest line {line_no}: unknown split '{}'",
                fields[1]
            ))
        })?;
        lines.push(RecordLine {
            id: fields[0].to_string(),
            split,
            label: parse_usize(fields[2], "label", line_no)?,
            text_path: fields[3].to_string(),
            text_len: parse_usize(fields[4], "text_len", line_no)?,
            video_path: fields[5].to_string(),
            video_len: parse_usize(fields[6], "video_len", line_no)?,
            audio_path: fields[7].to_string(),
            audio_len: parse_usize(fields[8], "audio_len", line_no)?,
        });
    }

    let classes = classes.ok_or_else(|| Error::Data("manifest missing 'classes'".into()))?;
    let dims = DatasetDims {
        text: dim_text.ok_or_else(|| Error::Data("manifest missing 'dims.text'".into()))?,
        video: dim_video.ok_or_else(|| Error::Data("manifest missing 'dims.video'".into()))?,
        audio: dim_audio.ok_or_else(|| Error::Data("manifest missing 'dims.audio'".into()))?,
    };
    if classes == 0 {
        return Err(Error::Data("classes must be positive".into()));
    }
    if lines.is_empty() {
        return Err(Error::Data("no records in manifest".into()));
    }
    let class_names = match class_names {
        Some(names) => {
            if names.len() != classes {
                return Err(Error::Data(format!(
                    "class_names lists {} names for {classes} classes",
                    names.len()
                )));
            }
            names
        }
        None => (0..classes).map(|c| format!("class_{c}")).collect(),
    };

    let mut seen = BTreeSet::new();
    for l in &lines {
        if !seen.insert(l.id.clone()) {
            return Err(Error::Data(format!("duplicate record id '{}'", l.id)));
        }
        if l.label >= classes {
            return Err(Error::Data(format!(
                "record '{}': label {} out of range for {classes} classes",
                l.id, l.label
            )));
        }
    }

    let load_one = |l: RecordLine| -> Result<FeatureRecord> {
        let read = |rel: &str, len: usize, dim: usize, what: &str| -> Result<Tensor> {
            let t = read_feature_file(&base.join(rel), dim)
                .map_err(|e| Error::Data(format!("record '{}' ({what}): {e}", l.id)))?;
            if t.shape()[0] != len {
                return Err(Error::Data(format!(
                    "record '{}' ({what}): declared length {len}, file has {}",
                    l.id,
                    t.shape()[0]
                )));
            }
            if t.shape()[0] == 0 {
                return Err(Error::Data(format!("record '{}' ({what}): empty sequence", l.id)));
            }
            Ok(t)
        };
        Ok(FeatureRecord {
            text: read(&l.text_path, l.text_len, dims.text, "text")?,
            video: read(&l.video_path, l.video_len, dims.video, "video")?,
            audio: read(&l.audio_path, l.audio_len, dims.audio, "audio")?,
            id: l.id,
            split: l.split,
            label: l.label,
        })
    };
    let mut records = crate::pmap::try_map(lines, load_one)?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Dataset {
        classes,
        class_names,
        dims,
        records,
    })
}

/// Write `dataset` under `dir` (created if needed): feature files in
/// `features/`, manifest at `dir/manifest.txt`. Returns the manifest path.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", feat_dir.display())))?;
    let mut manifest = String::new();
    manifest.push_str(&format!("classes = {}\n", dataset.classes));
    manifest.push_str(&format!("class_names = {}\n", dataset.class_names.join(", ")));
    manifest.push_str(&format!("dims.text = {}\n", dataset.dims.text));
    manifest.push_str(&format!("dims.video = {}\n", dataset.dims.video));
    manifest.push_str(&format!("dims.audio = {}\n", dataset.dims.audio));
    manifest.push('\n');
    for r in &dataset.records {
        let text_rel = format!("features/{}.text.f32", r.id);
        let video_rel = format!("features/{}.video.f32", r.id);
        let audio_rel = format!("features/{}.audio.f32", r.id);
        write_feature_file(&dir.join(&text_rel), &r.text)?;
        write_feature_file(&dir.join(&video_rel), &r.video)?;
        write_feature_file(&dir.join(&audio_rel), &r.audio)?;
        manifest.push_str(&format!(
            "{}, {}, {}, {}, {}, {}, {}, {}, {}\n",
            r.id,
            r.split,
            r.label,
            text_rel,
            r.text.shape()[0],
            video_rel,
            r.video.shape()[0],
            audio_rel,
            r.audio.shape()[0],
        ));
    }
    let path = dir.join("manifest.txt");
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(manifest.as_bytes()))
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

// ── synthesis ───────────────────────────────────────────────────────────

/// Parameters of the synthetic generator. Each class plants a fixed unit
/// direction in the text features and an alternating-sign square wave at
/// dyadic scale (class mod 3) + 1 in the video and audio features; the
/// wave rides on a fresh random unit channel direction per record, so the
/// only class information in video/audio is the alternation rate itself.
/// Gaussian noise is added everywhere and a configurable fraction of
/// samples has the text signal suppressed.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n: usize,
    pub classes: usize,
    pub len_text: usize,
    pub len_video: usize,
    pub len_audio: usize,
    pub dims: DatasetDims,
    /// Gaussian noise standard deviation on every feature entry.
    pub noise: f64,
    /// Amplitude of the class direction in text rows.
    pub text_strength: f64,
    /// Amplitude of the square-wave signature in video/audio.
    pub freq_strength: f64,
    /// Fraction of samples whose text carries no class signal.
    pub text_suppress_frac: f64,
    /// Randomly flip the square wave's sign per record (a half-period
    /// shift). Per-level band energy is unchanged, so the wavelet
    /// signature stays intact while positional cues wash out.
    pub phase_jitter: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            n: 64,
            classes: 4,
            len_text: 16,
            len_video: 40,
            len_audio: 48,
            dims: DatasetDims {
                text: 16,
                video: 24,
                audio: 20,
            },
            noise: 0.1,
            text_strength: 1.0,
            freq_strength: 1.0,
            text_suppress_frac: 0.25,
            phase_jitter: false,
        }
    }
}

/// +1/-1 square wave with period 2^scale (sign flips every 2^(scale-1)
/// samples), evaluated at position t.
fn dyadic_signature(t: usize, scale: usize) -> f64 {
    let half = 1usize << (scale - 1);
    if (t / half) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Deterministic unit vector for a (class, modality) pair.
fn class_direction(seed: u64, class: usize, slot: u64, dim: usize) -> Vec<f64> {
    // class streams live far above any record index
    let index = (1u64 << 48) | ((class as u64) << 8) | slot;
    let mut rng = stream_rng(seed, StreamKind::Synth, index);
    unit_vector(&mut rng, dim)
}

fn unit_vector(rng: &mut rand_chacha::ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Round through f32 so in-memory values equal a disk round trip.
fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

pub fn synthesize_dataset(spec: &SynthSpec) -> Result<Dataset> {
    if spec.n < spec.classes {
        return Err(Error::Data(format!(
            "need at least one sample per class: n={} < classes={}",
            spec.n, spec.classes
        )));
    }
    if spec.classes == 0 {
        return Err(Error::Data("classes must be positive".into()));
    }
    for (dim, what) in [
        (spec.dims.text, "text"),
        (spec.dims.video, "video"),
        (spec.dims.audio, "audio"),
    ] {
        if dim == 0 {
            return Err(Error::Data(format!("{what} dim must be positive")));
        }
    }

    let text_dirs: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| class_direction(spec.seed, c, 0, spec.dims.text))
        .collect();

    // splits cycle train,train,train,val,test within each class
    const SPLIT_CYCLE: [Split; 5] = [Split::Train, Split::Train, Split::Train, Split::Val, Split::Test];

    let noise_dist = if spec.noise > 0.0 {
        Some(Normal::new(0.0, spec.noise).map_err(|e| Error::Data(format!("bad noise sigma: {e}")))?)
    } else {
        None
    };

    let make_record = |i: usize| -> Result<FeatureRecord> {
        let class = i % spec.classes;
        let scale = (class % 3) + 1;
        let mut rng = stream_rng(spec.seed, StreamKind::Synth, i as u64);
        // draw order is part of the format: suppression coin, video and
        // audio carrier directions, phase coins, then noise per modality
        let suppressed = rng.random::<f64>() < spec.text_suppress_frac;
        let video_dir = unit_vector(&mut rng, spec.dims.video);
        let audio_dir = unit_vector(&mut rng, spec.dims.audio);
        let half = 1usize << (scale - 1);
        let (video_phase, audio_phase) = if spec.phase_jitter {
            (
                if rng.random::<bool>() { half } else { 0 },
                if rng.random::<bool>() { half } else { 0 },
            )
        } else {
            (0, 0)
        };
        let noise = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 {
            match &noise_dist {
                Some(d) => d.sample(rng),
                None => 0.0,
            }
        };

        let mut text = Vec::with_capacity(spec.len_text * spec.dims.text);
        for _t in 0..spec.len_text {
            for j in 0..spec.dims.text {
                let signal = if suppressed {
                    0.0
                } else {
                    spec.text_strength * text_dirs[class][j]
                };
                text.push(quantize(signal + noise(&mut rng)));
            }
        }
        let mut video = Vec::with_capacity(spec.len_video * spec.dims.video);
        for t in 0..spec.len_video {
            let sig = spec.freq_strength * dyadic_signature(t + video_phase, scale);
            for j in 0..spec.dims.video {
                video.push(quantize(sig * video_dir[j] + noise(&mut rng)));
            }
        }
        let mut audio = Vec::with_capacity(spec.len_audio * spec.dims.audio);
        for t in 0..spec.len_audio {
            let sig = spec.freq_strength * dyadic_signature(t + audio_phase, scale);
            for j in 0..spec.dims.audio {
                audio.push(quantize(sig * audio_dir[j] + noise(&mut rng)));
            }
        }

        let width = (spec.n.max(2) as f64).log10().ceil() as usize;
        Ok(FeatureRecord {
            id: format!("synth_{i:0width$}"),
            split: SPLIT_CYCLE[(i / spec.classes) % SPLIT_CYCLE.len()],
            label: class,
            text: Tensor::new(vec![spec.len_text, spec.dims.text], text)?,
            video: Tensor::new(vec![spec.len_video, spec.dims.video], video)?,
            audio: Tensor::new(vec![spec.len_audio, spec.dims.audio], audio)?,
        })
    };

    let mut records = crate::pmap::try_map((0..spec.n).collect(), make_record)?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Dataset {
        classes: spec.classes,
        class_names: (0..spec.classes).map(|c| format!("class_{c}")).collect(),
        dims: spec.dims,
        records,
    })
}
