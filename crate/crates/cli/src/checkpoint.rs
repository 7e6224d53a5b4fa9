//! Checkpoint container: a little-endian binary file holding the run
//! configuration snapshot, the model shape, every named parameter tensor,
//! and the Adam moment buffers.
//!
//! Layout: magic, format version, two length-prefixed TOML documents
//! (run config, model shape), epoch counter, best validation accuracy,
//! then the parameter and optimizer payloads as raw f64 bits. Field order
//! is fixed and every number is little-endian, so save -> load -> save is
//! byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wdmir_core::data::DatasetDims;
use wdmir_core::model::{ModelConfig, ModelParams};
use wdmir_core::optim::AdamState;
use wdmir_core::rng::{stream_rng, StreamKind};

use crate::config::RunConfig;
use crate::{CliError, Result};

const MAGIC: &[u8; 8] = b"WDMIRCKP";
const VERSION: u32 = 1;

/// Model shape snapshot; the part of a checkpoint that must match before
/// its tensors can be loaded into a freshly built model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDesc {
    pub dim_text: usize,
    pub dim_video: usize,
    pub dim_audio: usize,
    pub classes: usize,
    pub aligned_len: usize,
    pub d_model: usize,
    pub hidden: usize,
    pub levels: usize,
    pub dropout: f64,
    pub crm_projections: bool,
}

impl ModelDesc {
    pub fn from_config(c: &ModelConfig) -> ModelDesc {
        ModelDesc {
            dim_text: c.dims.text,
            dim_video: c.dims.video,
            dim_audio: c.dims.audio,
            classes: c.classes,
            aligned_len: c.aligned_len,
            d_model: c.d_model,
            hidden: c.hidden,
            levels: c.levels,
            dropout: c.dropout,
            crm_projections: c.crm_projections,
        }
    }

    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            dims: DatasetDims {
                text: self.dim_text,
                video: self.dim_video,
                audio: self.dim_audio,
            },
            classes: self.classes,
            aligned_len: self.aligned_len,
            d_model: self.d_model,
            hidden: self.hidden,
            levels: self.levels,
            dropout: self.dropout,
            crm_projections: self.crm_projections,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: ModelDesc,
    pub epoch: usize,
    /// Best validation accuracy seen so far; NEG_INFINITY before the
    /// first validation pass.
    pub best_val_acc: f64,
    /// (name, shape, values) in the model's canonical visit order.
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub adam_t: u64,
    /// (name, first moments, second moments), name-sorted.
    pub adam_slots: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn capture(
        config: &RunConfig,
        model: &ModelConfig,
        params: &ModelParams,
        adam: &AdamState,
        epoch: usize,
        best_val_acc: f64,
    ) -> Checkpoint {
        let params = params
            .named()
            .into_iter()
            .map(|(name, t)| (name, t.shape().to_vec(), t.values().to_vec()))
            .collect();
        let adam_slots = adam
            .slots()
            .map(|(name, m, v)| (name.to_string(), m.to_vec(), v.to_vec()))
            .collect();
        Checkpoint {
            config: config.clone(),
            model: ModelDesc::from_config(model),
            epoch,
            best_val_acc,
            params,
            adam_t: adam.timestep(),
            adam_slots,
        }
    }

    /// Rebuild the parameter tree from the stored tensors.
    pub fn restore_params(&self) -> Result<ModelParams> {
        let config = self.model.to_config();
        // init values are overwritten below; the rng only shapes the tree
        let mut params = ModelParams::init(config, &mut stream_rng(0, StreamKind::Init, 0))?;
        let mut named = params.named_mut();
        if named.len() != self.params.len() {
            return Err(CliError::Data(format!(
                "checkpoint holds {} tensors, model expects {}",
                self.params.len(),
                named.len()
            )));
        }
        for ((name, tensor), (ck_name, ck_shape, ck_values)) in
            named.iter_mut().zip(&self.params)
        {
            if name != ck_name {
                return Err(CliError::Data(format!(
                    "checkpoint tensor '{ck_name}' does not match model slot '{name}'"
                )));
            }
            if tensor.shape() != ck_shape.as_slice() {
                return Err(CliError::Data(format!(
                    "checkpoint tensor '{ck_name}' has shape {ck_shape:?}, model expects {:?}",
                    tensor.shape()
                )));
            }
            tensor.values_mut().copy_from_slice(ck_values);
        }
        drop(named);
        Ok(params)
    }

    pub fn restore_adam(&self) -> AdamState {
        AdamState::restore(
            self.adam_t,
            self.adam_slots
                .iter()
                .map(|(n, m, v)| (n.clone(), m.clone(), v.clone())),
        )
    }

    /// Error unless the stored model shape equals `expected`.
    pub fn verify_model(&self, expected: &ModelConfig) -> Result<()> {
        let expected = ModelDesc::from_config(expected);
        if self.model != expected {
            return Err(CliError::Data(format!(
                "checkpoint model {:?} does not match configured model {:?}",
                self.model, expected
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config_toml = toml::to_string(&self.config)
            .map_err(|e| CliError::Data(format!("config snapshot: {e}")))?;
        write_bytes(&mut out, config_toml.as_bytes());
        let model_toml = toml::to_string(&self.model)
            .map_err(|e| CliError::Data(format!("model snapshot: {e}")))?;
        write_bytes(&mut out, model_toml.as_bytes());
        out.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        out.extend_from_slice(&self.best_val_acc.to_bits().to_le_bytes());

        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, shape, values) in &self.params {
            write_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in values {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }

        out.extend_from_slice(&self.adam_t.to_le_bytes());
        out.extend_from_slice(&(self.adam_slots.len() as u64).to_le_bytes());
        for (name, m, v) in &self.adam_slots {
            write_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(m.len() as u64).to_le_bytes());
            for &x in m {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
            for &x in v {
                out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(CliError::Data("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(CliError::Data(format!(
                "unsupported checkpoint version {version}, expected {VERSION}"
            )));
        }
        let config_text = r.take_string()?;
        let config: RunConfig = toml::from_str(&config_text)
            .map_err(|e| CliError::Data(format!("checkpoint config: {e}")))?;
        let model_text = r.take_string()?;
        let model: ModelDesc = toml::from_str(&model_text)
            .map_err(|e| CliError::Data(format!("checkpoint model: {e}")))?;
        let epoch = r.take_u64()? as usize;
        let best_val_acc = f64::from_bits(r.take_u64()?);

        let n_params = r.take_u64()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name = r.take_string()?;
            let ndim = r.take_u64()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.take_u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            params.push((name, shape, r.take_f64s(numel)?));
        }

        let adam_t = r.take_u64()?;
        let n_slots = r.take_u64()? as usize;
        let mut adam_slots = Vec::with_capacity(n_slots);
        for _ in 0..n_slots {
            let name = r.take_string()?;
            let len = r.take_u64()? as usize;
            let m = r.take_f64s(len)?;
            let v = r.take_f64s(len)?;
            adam_slots.push((name, m, v));
        }
        if r.pos != bytes.len() {
            return Err(CliError::Data(format!(
                "checkpoint has {} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            config,
            model,
            epoch,
            best_val_acc,
            params,
            adam_t,
            adam_slots,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| {
            CliError::Data(format!("cannot read checkpoint '{}': {e}", path.display()))
        })?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn write_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::Data("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_string(&mut self) -> Result<String> {
        let len = self.take_u64()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| CliError::Data("checkpoint holds invalid utf-8".into()))
    }

    fn take_f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(8 * n)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wdmir_core::data::DatasetDims;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            dims: DatasetDims {
                text: 3,
                video: 3,
                audio: 2,
            },
            classes: 3,
            aligned_len: 8,
            d_model: 4,
            hidden: 2,
            levels: 3,
            dropout: 0.0,
            crm_projections: true,
        }
    }

    fn tiny_checkpoint() -> Checkpoint {
        let model = tiny_model();
        let params = ModelParams::init(model, &mut stream_rng(3, StreamKind::Init, 0)).unwrap();
        let adam = AdamState::restore(
            5,
            vec![("wfm.video_proj".to_string(), vec![0.25; 12], vec![0.5; 12])],
        );
        let config = RunConfig {
            seed: 3,
            epochs: 7,
            ..RunConfig::default()
        };
        Checkpoint::capture(&config, &model, &params, &adam, 7, 0.75)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = tiny_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn restore_reproduces_every_parameter_bit() {
        let ck = tiny_checkpoint();
        let params = ck.restore_params().unwrap();
        for ((name, t), (ck_name, _, ck_values)) in params.named().iter().zip(&ck.params) {
            assert_eq!(name, ck_name);
            assert_eq!(t.values(), ck_values.as_slice());
        }
        let adam = ck.restore_adam();
        assert_eq!(adam.timestep(), 5);
    }

    #[test]
    fn mismatched_model_is_rejected() {
        let ck = tiny_checkpoint();
        let mut other = tiny_model();
        other.d_model = 8;
        assert!(ck.verify_model(&other).is_err());
        assert!(ck.verify_model(&tiny_model()).is_ok());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ck = tiny_checkpoint();
        let mut bytes = ck.to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let bytes = ck.to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bytes = ck.to_bytes().unwrap();
        bytes.push(0);
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }

    #[test]
    fn negative_infinity_best_accuracy_survives() {
        let mut ck = tiny_checkpoint();
        ck.best_val_acc = f64::NEG_INFINITY;
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.best_val_acc, f64::NEG_INFINITY);
    }
}
