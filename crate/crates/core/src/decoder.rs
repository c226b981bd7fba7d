//! Conditional and doubly-conditional GRU decoding.
//!
//! One step runs REC1 on the previous state and word to get a proposal
//! `s'_t`, queries source attention (and, in multimodal mode, gated image
//! attention) with `s'_t`, then runs REC2 over the contexts to produce
//! `s_t` and the next-word logits.

use crate::attention::{
    energies_from_keys, gate_beta, image_context, normalize_alignment, source_context, AttentionParams, GateParams,
};
use crate::encoder::{gru_step, interpolate, GruCellParams, InitMlpParams};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Image-side input weights of REC2, `D×d_dec` each.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rec2ImageParams<P> {
    pub w_z: P,
    pub w_r: P,
    pub w: P,
}

/// Second transition of the conditional GRU. `w_src*` are `2d_h×d_dec`,
/// `u*` are `d_dec×d_dec`; `image` is present only in multimodal mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rec2Params<P> {
    pub w_src_z: P,
    pub w_src_r: P,
    pub w_src: P,
    pub image: Option<Rec2ImageParams<P>>,
    pub u_z: P,
    pub u_r: P,
    pub u: P,
}

impl<P: Copy> Rec2Params<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(P) -> Q) -> Rec2Params<Q> {
        Rec2Params {
            w_src_z: f(self.w_src_z),
            w_src_r: f(self.w_src_r),
            w_src: f(self.w_src),
            image: self.image.map(|i| Rec2ImageParams {
                w_z: f(i.w_z),
                w_r: f(i.w_r),
                w: f(i.w),
            }),
            u_z: f(self.u_z),
            u_r: f(self.u_r),
            u: f(self.u),
        }
    }
}

/// Deep output layer. `l_c` is `L_c` in text-only mode and `L_cs` in
/// multimodal mode, where `l_ci` (`L_ci`) is also present. No biases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutputParams<P> {
    /// `d_proj×|V_y|`
    pub l_o: P,
    /// `d_dec×d_proj`
    pub l_s: P,
    /// `d_y×d_proj`
    pub l_w: P,
    /// `2d_h×d_proj`
    pub l_c: P,
    /// `D×d_proj`
    pub l_ci: Option<P>,
}

impl<P: Copy> OutputParams<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(P) -> Q) -> OutputParams<Q> {
        OutputParams {
            l_o: f(self.l_o),
            l_s: f(self.l_s),
            l_w: f(self.l_w),
            l_c: f(self.l_c),
            l_ci: self.l_ci.map(&mut f),
        }
    }
}

/// Image attention and its gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisualParams<P> {
    pub attention: AttentionParams<P>,
    pub gate: GateParams<P>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderParams<P> {
    /// Target embedding table `E_y`, `|V_y|×d_y`.
    pub embedding: P,
    pub init: InitMlpParams<P>,
    pub rec1: GruCellParams<P>,
    pub source_attention: AttentionParams<P>,
    pub visual: Option<VisualParams<P>>,
    pub rec2: Rec2Params<P>,
    pub output: OutputParams<P>,
}

impl<P: Copy> DecoderParams<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(P) -> Q) -> DecoderParams<Q> {
        DecoderParams {
            embedding: f(self.embedding),
            init: self.init.map(&mut f),
            rec1: self.rec1.map(&mut f),
            source_attention: self.source_attention.map(&mut f),
            visual: self.visual.map(|v| VisualParams {
                attention: v.attention.map(&mut f),
                gate: v.gate.map(&mut f),
            }),
            rec2: self.rec2.map(&mut f),
            output: self.output.map(&mut f),
        }
    }
}

/// Decoder position during inference.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderState<T> {
    pub s: Tensor<T>,
    pub prev_token: usize,
    pub step: usize,
}

/// REC1: a plain GRU step over the previous word embedding.
pub fn rec1_proposal<T: Real>(
    tape: &Tape<T>,
    p: &GruCellParams<Var>,
    s_prev: Var,
    y_prev_emb: Var,
    recurrent_mask: Option<Var>,
) -> Result<Var> {
    gru_step(tape, p, y_prev_emb, s_prev, recurrent_mask)
}

/// REC2 over the source context and, in multimodal mode, the image
/// context. Supplying an image context to text-only weights (or omitting
/// it for multimodal weights) is a contract error.
pub fn rec2_step<T: Real>(
    tape: &Tape<T>,
    p: &Rec2Params<Var>,
    s_prop: Var,
    c: Var,
    i: Option<Var>,
) -> Result<Var> {
    let image = match (p.image, i) {
        (Some(w), Some(i)) => Some((w, i)),
        (None, None) => None,
        (None, Some(_)) => {
            return Err(Error::Input("image context given to a text-only decoder".into()));
        }
        (Some(_), None) => {
            return Err(Error::Input("multimodal decoder needs an image context".into()));
        }
    };
    let gate = |w_src: Var, w_img: Option<Var>, extra: Var| -> Result<Var> {
        let mut terms = vec![tape.matmul(c, w_src)?];
        if let (Some(w), Some((_, i))) = (w_img, image) {
            terms.push(tape.matmul(i, w)?);
        }
        terms.push(extra);
        Ok(tape.add_n(&terms)?)
    };
    let z = tape.sigmoid(gate(p.w_src_z, image.map(|(w, _)| w.w_z), tape.matmul(s_prop, p.u_z)?)?)?;
    let r = tape.sigmoid(gate(p.w_src_r, image.map(|(w, _)| w.w_r), tape.matmul(s_prop, p.u_r)?)?)?;
    let gated = tape.mul(r, tape.matmul(s_prop, p.u)?)?;
    let candidate = tape.tanh(gate(p.w_src, image.map(|(w, _)| w.w), gated)?)?;
    interpolate(tape, z, candidate, s_prop)
}

/// Unnormalised next-word scores, `1×|V_y|`.
pub fn output_logits<T: Real>(
    tape: &Tape<T>,
    p: &OutputParams<Var>,
    s: Var,
    y_prev_emb: Var,
    c: Var,
    i: Option<Var>,
    readout_mask: Option<Var>,
) -> Result<Var> {
    let mut terms = vec![
        tape.matmul(s, p.l_s)?,
        tape.matmul(y_prev_emb, p.l_w)?,
        tape.matmul(c, p.l_c)?,
    ];
    match (p.l_ci, i) {
        (Some(l_ci), Some(i)) => terms.push(tape.matmul(i, l_ci)?),
        (None, None) => {}
        _ => return Err(Error::Input("output layer mode does not match image context".into())),
    }
    let mut hidden = tape.tanh(tape.add_n(&terms)?)?;
    if let Some(m) = readout_mask {
        hidden = tape.mul(hidden, m)?;
    }
    Ok(tape.matmul(hidden, p.l_o)?)
}

pub fn output_distribution<T: Real>(
    tape: &Tape<T>,
    p: &OutputParams<Var>,
    s: Var,
    y_prev_emb: Var,
    c: Var,
    i: Option<Var>,
) -> Result<Var> {
    let logits = output_logits(tape, p, s, y_prev_emb, c, i, None)?;
    Ok(tape.softmax_rows(logits)?)
}

/// Per-sentence values the decoder attends over.
#[derive(Clone, Copy, Debug)]
pub struct StepMemory {
    pub annotations: Var,
    pub source_keys: Var,
    pub image: Option<ImageMemory>,
}

#[derive(Clone, Copy, Debug)]
pub struct ImageMemory {
    pub features: Var,
    pub keys: Var,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct DecoderMasks {
    pub recurrent: Option<Var>,
    pub readout: Option<Var>,
}

/// Everything one step computes, for loss evaluation and introspection.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub logits: Var,
    pub proposal: Var,
    pub state: Var,
    pub alpha_src: Var,
    pub context: Var,
    pub alpha_img: Option<Var>,
    pub beta: Option<Var>,
    pub image_context: Option<Var>,
}

pub fn decode_step<T: Real>(
    tape: &Tape<T>,
    p: &DecoderParams<Var>,
    memory: &StepMemory,
    s_prev: Var,
    y_prev: usize,
    masks: DecoderMasks,
) -> Result<StepVars> {
    if memory.image.is_some() != p.visual.is_some() {
        return Err(Error::Input(
            "image features must be supplied exactly when the model is multimodal".into(),
        ));
    }
    let y_emb = tape.gather_rows(p.embedding, &[y_prev])?;
    let proposal = rec1_proposal(tape, &p.rec1, s_prev, y_emb, masks.recurrent)?;

    let src_energy = energies_from_keys(tape, &p.source_attention, proposal, memory.source_keys)?;
    let alpha_src = normalize_alignment(tape, src_energy)?;
    let context = source_context(tape, alpha_src, memory.annotations)?;

    let (alpha_img, beta, image_ctx) = match (p.visual, memory.image) {
        (Some(v), Some(img)) => {
            let beta = gate_beta(tape, &v.gate, s_prev)?;
            let energy = energies_from_keys(tape, &v.attention, proposal, img.keys)?;
            let alpha = normalize_alignment(tape, energy)?;
            let ctx = image_context(tape, beta, alpha, img.features)?;
            (Some(alpha), Some(beta), Some(ctx))
        }
        _ => (None, None, None),
    };

    let state = rec2_step(tape, &p.rec2, proposal, context, image_ctx)?;
    let logits = output_logits(tape, &p.output, state, y_emb, context, image_ctx, masks.readout)?;
    Ok(StepVars {
        logits,
        proposal,
        state,
        alpha_src,
        context,
        alpha_img,
        beta,
        image_context: image_ctx,
    })
}
