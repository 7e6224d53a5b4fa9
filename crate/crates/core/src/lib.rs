//! Core model library: tensors, reverse-mode autodiff, the orthonormal
//! Haar transform, the fusion modules, data handling, and metrics.

pub mod attention;
pub mod corep;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod progressive;
pub mod recurrent;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use tape::{OpKind, Tape, TensorId};
pub use tensor::Tensor;

/// Order-preserving map helpers that fan out across records when the
/// `parallel` feature is on and fall back to plain iteration otherwise.
pub(crate) mod pmap {
    use crate::error::Result;

    #[cfg(feature = "parallel")]
    pub fn try_map<T, U, F>(items: Vec<T>, f: F) -> Result<Vec<U>>
    where
        T: Send,
        U: Send,
        F: Fn(T) -> Result<U> + Sync + Send,
    {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    }

    #[cfg(not(feature = "parallel"))]
    pub fn try_map<T, U, F>(items: Vec<T>, f: F) -> Result<Vec<U>>
    where
        F: Fn(T) -> Result<U>,
    {
        items.into_iter().map(f).collect()
    }
}
