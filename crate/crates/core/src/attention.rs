//! Soft attention over source annotations and over spatial image
//! features, plus the scalar gate that scales the image context.

use serde::Serialize;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// `e_k = vᵀ·tanh(U·s' + W·a_k)` with `v: d_att×1`, `U: d_dec×d_att`,
/// `W: d_ann×d_att`. One independent instance per modality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionParams<P> {
    pub v: P,
    pub u: P,
    pub w: P,
}

impl<P: Copy> AttentionParams<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(P) -> Q) -> AttentionParams<Q> {
        AttentionParams {
            v: f(self.v),
            u: f(self.u),
            w: f(self.w),
        }
    }
}

/// `β = σ(s_{t−1}·W_β + b_β)` with `W_β: d_dec×1`, `b_β: 1×1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateParams<P> {
    pub w: P,
    pub b: P,
}

impl<P: Copy> GateParams<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(P) -> Q) -> GateParams<Q> {
        GateParams { w: f(self.w), b: f(self.b) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Src,
    Img,
}

/// A normalised alignment over annotation positions.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentRow<T> {
    pub weights: Vec<T>,
    pub modality: Modality,
}

impl<T: Real> AlignmentRow<T> {
    pub fn from_tensor(t: &Tensor<T>, modality: Modality) -> Self {
        Self {
            weights: t.data().to_vec(),
            modality,
        }
    }

    pub fn total(&self) -> T {
        self.weights.iter().copied().sum()
    }
}

/// `annotations·W`, shared by every decoding step of one sentence.
pub fn project_keys<T: Real>(tape: &Tape<T>, p: &AttentionParams<Var>, annotations: Var) -> Result<Var> {
    Ok(tape.matmul(annotations, p.w)?)
}

/// Energies against precomputed keys, as a `1×K` row.
pub fn energies_from_keys<T: Real>(tape: &Tape<T>, p: &AttentionParams<Var>, s_prop: Var, keys: Var) -> Result<Var> {
    let query = tape.matmul(s_prop, p.u)?;
    let hidden = tape.tanh(tape.add_row_broadcast(keys, query)?)?;
    let column = tape.matmul(hidden, p.v)?;
    let k = tape.shape(column)[0];
    Ok(tape.reshape(column, &[1, k])?)
}

pub fn alignment_energies<T: Real>(tape: &Tape<T>, p: &AttentionParams<Var>, s_prop: Var, annotations: Var) -> Result<Var> {
    let keys = project_keys(tape, p, annotations)?;
    energies_from_keys(tape, p, s_prop, keys)
}

pub fn normalize_alignment<T: Real>(tape: &Tape<T>, energies: Var) -> Result<Var> {
    Ok(tape.softmax_rows(energies)?)
}

/// `c_t = Σ_i α_i h_i`; no gate on the source side.
pub fn source_context<T: Real>(tape: &Tape<T>, alpha: Var, annotations: Var) -> Result<Var> {
    Ok(tape.matmul(alpha, annotations)?)
}

/// Gate from the previous final decoder state, not the proposal.
pub fn gate_beta<T: Real>(tape: &Tape<T>, p: &GateParams<Var>, s_prev: Var) -> Result<Var> {
    Ok(tape.sigmoid(tape.add(tape.matmul(s_prev, p.w)?, p.b)?)?)
}

/// `i_t = β Σ_l α_l a_l`.
pub fn image_context<T: Real>(tape: &Tape<T>, beta: Var, alpha: Var, features: Var) -> Result<Var> {
    let pooled = tape.matmul(alpha, features)?;
    Ok(tape.scale_by(pooled, beta)?)
}
