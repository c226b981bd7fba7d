//! Bidirectional GRU encoder and the decoder-state initialiser.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Weights of one GRU cell: input-to-hidden `w_*` (`d_in×d_h`),
/// hidden-to-hidden `u_*` (`d_h×d_h`) and biases `b_*` (`1×d_h`).
///
/// Generic over the handle type so the same layout describes stored
/// parameters (`ParamId`) and parameters bound on a tape (`Var`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GruCellParams<P> {
    pub w_z: P,
    pub w_r: P,
    pub w_h: P,
    pub u_z: P,
    pub u_r: P,
    pub u_h: P,
    pub b_z: P,
    pub b_r: P,
    pub b_h: P,
}

impl<P: Copy> GruCellParams<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(P) -> Q) -> GruCellParams<Q> {
        GruCellParams {
            w_z: f(self.w_z),
            w_r: f(self.w_r),
            w_h: f(self.w_h),
            u_z: f(self.u_z),
            u_r: f(self.u_r),
            u_h: f(self.u_h),
            b_z: f(self.b_z),
            b_r: f(self.b_r),
            b_h: f(self.b_h),
        }
    }
}

/// Affine + tanh map from `[→h_N; ←h_1]` to the first decoder state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitMlpParams<P> {
    pub w: P,
    pub b: P,
}

impl<P: Copy> InitMlpParams<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(P) -> Q) -> InitMlpParams<Q> {
        InitMlpParams { w: f(self.w), b: f(self.b) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderParams<P> {
    /// Source embedding table `E_x`, `|V_x|×d_x`.
    pub embedding: P,
    pub forward: GruCellParams<P>,
    pub backward: GruCellParams<P>,
}

impl<P: Copy> EncoderParams<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(P) -> Q) -> EncoderParams<Q> {
        EncoderParams {
            embedding: f(self.embedding),
            forward: self.forward.map(&mut f),
            backward: self.backward.map(&mut f),
        }
    }
}

/// One GRU step. The reset gate multiplies `U_h·h` (as in the decoder's
/// second transition), and `recurrent_mask`, when given, is applied to
/// `h_prev` before it enters the gates.
pub fn gru_step<T: Real>(
    tape: &Tape<T>,
    p: &GruCellParams<Var>,
    x: Var,
    h_prev: Var,
    recurrent_mask: Option<Var>,
) -> Result<Var> {
    let h_in = match recurrent_mask {
        Some(m) => tape.mul(h_prev, m)?,
        None => h_prev,
    };
    let z = tape.sigmoid(tape.add_n(&[
        tape.matmul(x, p.w_z)?,
        tape.matmul(h_in, p.u_z)?,
        p.b_z,
    ])?)?;
    let r = tape.sigmoid(tape.add_n(&[
        tape.matmul(x, p.w_r)?,
        tape.matmul(h_in, p.u_r)?,
        p.b_r,
    ])?)?;
    let candidate = tape.tanh(tape.add_n(&[
        tape.matmul(x, p.w_h)?,
        tape.mul(r, tape.matmul(h_in, p.u_h)?)?,
        p.b_h,
    ])?)?;
    interpolate(tape, z, candidate, h_prev)
}

/// `(1 − z)⊙candidate + z⊙keep`.
pub(crate) fn interpolate<T: Real>(tape: &Tape<T>, z: Var, candidate: Var, keep: Var) -> Result<Var> {
    let one_minus_z = tape.affine(z, -T::one(), T::one())?;
    Ok(tape.add(tape.mul(one_minus_z, candidate)?, tape.mul(z, keep)?)?)
}

/// Annotation vectors of one source sentence, on a tape.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    /// `N×2d_h` matrix whose row `i` is `[→h_i; ←h_i]`.
    pub annotations: Var,
    /// Forward states in source order.
    pub forward: Vec<Var>,
    /// Backward states in source order (`backward[0]` is `←h_1`).
    pub backward: Vec<Var>,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }
}

/// Plain-tensor view of the annotation matrix `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSet<T> {
    pub matrix: Tensor<T>,
}

impl<T: Real> AnnotationSet<T> {
    pub fn source_length(&self) -> usize {
        self.matrix.rows()
    }
}

/// Per-direction recurrent dropout masks, reused at every position.
#[derive(Clone, Copy, Debug)]
pub struct EncoderMasks {
    pub forward: Var,
    pub backward: Var,
}

/// Runs both directions from zero initial states.
pub fn encode_bidirectional<T: Real>(
    tape: &Tape<T>,
    p: &EncoderParams<Var>,
    src: &[usize],
    masks: Option<EncoderMasks>,
) -> Result<EncodedSource> {
    if src.is_empty() {
        return Err(Error::Input("cannot encode an empty source sentence".into()));
    }
    let table = tape.value(p.embedding);
    let vocab = table.rows();
    if let Some(&bad) = src.iter().find(|&&id| id >= vocab) {
        return Err(Error::Input(format!(
            "source token id {bad} outside vocabulary of size {vocab}"
        )));
    }
    let hidden = tape.shape(p.forward.u_z)[0];
    let inputs: Vec<Var> = src
        .iter()
        .map(|&id| tape.gather_rows(p.embedding, &[id]))
        .collect::<std::result::Result<_, _>>()?;

    let mut forward = Vec::with_capacity(src.len());
    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    for &x in &inputs {
        h = gru_step(tape, &p.forward, x, h, masks.map(|m| m.forward))?;
        forward.push(h);
    }

    let mut backward = Vec::with_capacity(src.len());
    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    for &x in inputs.iter().rev() {
        h = gru_step(tape, &p.backward, x, h, masks.map(|m| m.backward))?;
        backward.push(h);
    }
    backward.reverse();

    let rows: Vec<Var> = forward
        .iter()
        .zip(&backward)
        .map(|(&f, &b)| tape.concat_cols(&[f, b]))
        .collect::<std::result::Result<_, _>>()?;
    let annotations = tape.stack_rows(&rows)?;
    Ok(EncodedSource {
        annotations,
        forward,
        backward,
    })
}

/// `s_0 = tanh([→h_N; ←h_1]·W_init + b_init)`.
pub fn init_decoder_state<T: Real>(
    tape: &Tape<T>,
    p: &InitMlpParams<Var>,
    encoded: &EncodedSource,
) -> Result<Var> {
    let (Some(&last_fwd), Some(&first_bwd)) = (encoded.forward.last(), encoded.backward.first()) else {
        return Err(Error::Input("decoder initialisation needs a nonempty annotation set".into()));
    };
    let joined = tape.concat_cols(&[last_fwd, first_bwd])?;
    Ok(tape.tanh(tape.add(tape.matmul(joined, p.w)?, p.b)?)?)
}
