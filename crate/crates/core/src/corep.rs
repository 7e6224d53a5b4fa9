//! Collaborative representation: text-queried cross-attention over the
//! fused video/audio sequences, then a trimodal block that attends the
//! text over one co-representation and reads values from the other.
//!
//! Q/K/V projections are optional (weight-only, no bias); with them
//! disabled the blocks evaluate the bare attention equations, which is
//! what the oracle tests pin down.

use rand_chacha::ChaCha8Rng;

use crate::attention::scaled_dot_attention;
use crate::error::Result;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

/// One attention block's optional projections, all [d, d].
#[derive(Debug, Clone)]
pub struct AttnProj {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
}

impl AttnProj {
    pub fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        AttnProj {
            q: Tensor::xavier(vec![d, d], d, d, rng),
            k: Tensor::xavier(vec![d, d], d, d, rng),
            v: Tensor::xavier(vec![d, d], d, d, rng),
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        let t = Tensor::new(vec![d, d], eye).unwrap().into_param();
        AttnProj {
            q: t.clone(),
            k: t.clone(),
            v: t,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> AttnProjBound {
        AttnProjBound {
            q: tape.leaf(&self.q),
            k: tape.leaf(&self.k),
            v: tape.leaf(&self.v),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.q"), &self.q));
        out.push((format!("{prefix}.k"), &self.k));
        out.push((format!("{prefix}.v"), &self.v));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.q"), &mut self.q));
        out.push((format!("{prefix}.k"), &mut self.k));
        out.push((format!("{prefix}.v"), &mut self.v));
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttnProjBound {
    pub q: TensorId,
    pub k: TensorId,
    pub v: TensorId,
}

/// Collaborative-representation parameters. `proj` is None for the
/// bare-equation variant.
#[derive(Debug, Clone)]
pub struct CrmParams {
    pub proj: Option<CrmProjections>,
    pub d_model: usize,
}

#[derive(Debug, Clone)]
pub struct CrmProjections {
    /// text ← fused-video-audio block
    pub va: AttnProj,
    /// text ← fused-audio-video block
    pub av: AttnProj,
    /// trimodal block
    pub tri: AttnProj,
}

impl CrmParams {
    pub fn init(d_model: usize, with_projections: bool, rng: &mut ChaCha8Rng) -> Self {
        let proj = with_projections.then(|| CrmProjections {
            va: AttnProj::init(d_model, rng),
            av: AttnProj::init(d_model, rng),
            tri: AttnProj::init(d_model, rng),
        });
        CrmParams { proj, d_model }
    }

    pub fn bind(&self, tape: &mut Tape) -> CrmBound {
        CrmBound {
            proj: self.proj.as_ref().map(|p| CrmProjectionsBound {
                va: p.va.bind(tape),
                av: p.av.bind(tape),
                tri: p.tri.bind(tape),
            }),
            d_model: self.d_model,
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        if let Some(p) = &self.proj {
            p.va.visit(&format!("{prefix}.va"), out);
            p.av.visit(&format!("{prefix}.av"), out);
            p.tri.visit(&format!("{prefix}.tri"), out);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        if let Some(p) = &mut self.proj {
            p.va.visit_mut(&format!("{prefix}.va"), out);
            p.av.visit_mut(&format!("{prefix}.av"), out);
            p.tri.visit_mut(&format!("{prefix}.tri"), out);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CrmBound {
    pub proj: Option<CrmProjectionsBound>,
    pub d_model: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct CrmProjectionsBound {
    pub va: AttnProjBound,
    pub av: AttnProjBound,
    pub tri: AttnProjBound,
}

/// Co-representations plus the attention maps that produced them.
#[derive(Debug, Clone, Copy)]
pub struct CrmOut {
    pub f_vat: TensorId,
    pub f_avt: TensorId,
    pub f_tva: TensorId,
    pub w_vat: TensorId,
    pub w_avt: TensorId,
    pub w_tva: TensorId,
}

fn project(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    proj: Option<&AttnProjBound>,
) -> Result<(TensorId, TensorId, TensorId)> {
    match proj {
        None => Ok((q, k, v)),
        Some(p) => Ok((
            tape.matmul(q, p.q)?,
            tape.matmul(k, p.k)?,
            tape.matmul(v, p.v)?,
        )),
    }
}

/// Text-queried cross-attention with the block's optional projections.
pub fn cross_attention(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    proj: Option<&AttnProjBound>,
) -> Result<(TensorId, TensorId)> {
    let (q, k, v) = project(tape, q, k, v, proj)?;
    scaled_dot_attention(tape, q, k, v)
}

/// F_vat = CA(F_t, F_VA, F_VA); F_avt = CA(F_t, F_AV, F_AV);
/// F_tva = softmax(F_t F_vatᵀ / √d_k) F_avt. Outputs all [Lt, d_model].
pub fn crm_forward(
    tape: &mut Tape,
    f_t: TensorId,
    f_va: TensorId,
    f_av: TensorId,
    p: &CrmBound,
) -> Result<CrmOut> {
    let (f_vat, w_vat) =
        cross_attention(tape, f_t, f_va, f_va, p.proj.as_ref().map(|x| &x.va))?;
    let (f_avt, w_avt) =
        cross_attention(tape, f_t, f_av, f_av, p.proj.as_ref().map(|x| &x.av))?;
    let (f_tva, w_tva) =
        cross_attention(tape, f_t, f_vat, f_avt, p.proj.as_ref().map(|x| &x.tri))?;
    Ok(CrmOut {
        f_vat,
        f_avt,
        f_tva,
        w_vat,
        w_avt,
        w_tva,
    })
}
