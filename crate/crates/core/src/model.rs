//! Model configuration, parameter layout and sentence-level entry points.

use std::collections::BTreeMap;

use crate::attention::{project_keys, AlignmentRow, AttentionParams, GateParams, Modality};
use crate::data::vocab::{BOS, EOS};
use crate::decoder::{
    decode_step, DecoderMasks, DecoderParams, DecoderState, ImageMemory, OutputParams, Rec2ImageParams, Rec2Params,
    StepMemory, VisualParams,
};
use crate::encoder::{encode_bidirectional, init_decoder_state, EncoderMasks, EncoderParams, GruCellParams, InitMlpParams};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamSet};
use crate::tape::{softmax_rows, Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::training::dropout::DropoutMasks;
use crate::training::init::init_params;

/// Network dimensions. Source and target embeddings may differ in width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub src_emb: usize,
    pub tgt_emb: usize,
    /// Hidden size of each encoder direction.
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub att_dim: usize,
    /// Width of the tanh layer before the output softmax.
    pub proj_dim: usize,
    /// Image regions `L`.
    pub feat_len: usize,
    /// Image feature width `D`.
    pub feat_dim: usize,
    pub multimodal: bool,
}

impl ModelConfig {
    /// Full-size dimensions: 620-d embeddings, 1024-d GRUs and
    /// 196×1024 spatial features.
    pub fn full_size(multimodal: bool) -> Self {
        Self {
            src_vocab: 83_093,
            tgt_vocab: 91_141,
            src_emb: 620,
            tgt_emb: 620,
            enc_hidden: 1024,
            dec_hidden: 1024,
            att_dim: 1024,
            proj_dim: 620,
            feat_len: 196,
            feat_dim: 1024,
            multimodal,
        }
    }

    /// Small dimensions for tests and toy corpora.
    pub fn tiny(src_vocab: usize, tgt_vocab: usize, multimodal: bool) -> Self {
        Self {
            src_vocab,
            tgt_vocab,
            src_emb: 8,
            tgt_emb: 8,
            enc_hidden: 8,
            dec_hidden: 8,
            att_dim: 8,
            proj_dim: 8,
            feat_len: 4,
            feat_dim: 6,
            multimodal,
        }
    }

    pub fn annotation_dim(&self) -> usize {
        2 * self.enc_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("src_emb", self.src_emb),
            ("tgt_emb", self.tgt_emb),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("att_dim", self.att_dim),
            ("proj_dim", self.proj_dim),
            ("feat_len", self.feat_len),
            ("feat_dim", self.feat_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.tgt_vocab <= EOS {
            return Err(Error::Config("target vocabulary must include the reserved tokens".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("src_vocab", self.src_vocab.to_string()),
            ("tgt_vocab", self.tgt_vocab.to_string()),
            ("src_emb", self.src_emb.to_string()),
            ("tgt_emb", self.tgt_emb.to_string()),
            ("enc_hidden", self.enc_hidden.to_string()),
            ("dec_hidden", self.dec_hidden.to_string()),
            ("att_dim", self.att_dim.to_string()),
            ("proj_dim", self.proj_dim.to_string()),
            ("feat_len", self.feat_len.to_string()),
            ("feat_dim", self.feat_dim.to_string()),
            ("multimodal", self.multimodal.to_string()),
        ]
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<V> {
            map.get(key)
                .ok_or_else(|| Error::Config(format!("missing model key `{key}`")))?
                .parse()
                .map_err(|_| Error::Config(format!("bad value for `{key}`")))
        }
        let cfg = Self {
            src_vocab: get(map, "src_vocab")?,
            tgt_vocab: get(map, "tgt_vocab")?,
            src_emb: get(map, "src_emb")?,
            tgt_emb: get(map, "tgt_emb")?,
            enc_hidden: get(map, "enc_hidden")?,
            dec_hidden: get(map, "dec_hidden")?,
            att_dim: get(map, "att_dim")?,
            proj_dim: get(map, "proj_dim")?,
            feat_len: get(map, "feat_len")?,
            feat_dim: get(map, "feat_dim")?,
            multimodal: get(map, "multimodal")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every parameter with its shape and initialisation class, in
    /// canonical order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        declare(self).1
    }
}

/// Initialisation class of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    Weight,
    /// Square hidden-to-hidden matrix, initialised orthogonal.
    Recurrent,
    Bias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: [usize; 2],
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn elements(&self) -> usize {
        self.shape[0] * self.shape[1]
    }
}

/// All model parameters, addressed by handle type `P`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layout<P> {
    pub encoder: EncoderParams<P>,
    pub decoder: DecoderParams<P>,
}

impl<P: Copy> Layout<P> {
    pub fn map<Q>(&self, mut f: impl FnMut(P) -> Q) -> Layout<Q> {
        Layout {
            encoder: self.encoder.map(&mut f),
            decoder: self.decoder.map(&mut f),
        }
    }
}

struct Declare {
    specs: Vec<ParamSpec>,
}

impl Declare {
    fn add(&mut self, name: &str, rows: usize, cols: usize, kind: ParamKind) -> ParamId {
        self.specs.push(ParamSpec {
            name: name.to_string(),
            shape: [rows, cols],
            kind,
        });
        ParamId(self.specs.len() - 1)
    }

    fn gru(&mut self, prefix: &str, d_in: usize, d_h: usize) -> GruCellParams<ParamId> {
        use ParamKind::*;
        let mut w = |n: &str, r, c, k| self.add(&format!("{prefix}.{n}"), r, c, k);
        GruCellParams {
            w_z: w("W_z", d_in, d_h, Weight),
            w_r: w("W_r", d_in, d_h, Weight),
            w_h: w("W_h", d_in, d_h, Weight),
            u_z: w("U_z", d_h, d_h, Recurrent),
            u_r: w("U_r", d_h, d_h, Recurrent),
            u_h: w("U_h", d_h, d_h, Recurrent),
            b_z: w("b_z", 1, d_h, Bias),
            b_r: w("b_r", 1, d_h, Bias),
            b_h: w("b_h", 1, d_h, Bias),
        }
    }

    fn attention(&mut self, prefix: &str, d_dec: usize, d_ann: usize, d_att: usize) -> AttentionParams<ParamId> {
        AttentionParams {
            v: self.add(&format!("{prefix}.v"), d_att, 1, ParamKind::Weight),
            u: self.add(&format!("{prefix}.U"), d_dec, d_att, ParamKind::Weight),
            w: self.add(&format!("{prefix}.W"), d_ann, d_att, ParamKind::Weight),
        }
    }
}

fn declare(c: &ModelConfig) -> (Layout<ParamId>, Vec<ParamSpec>) {
    use ParamKind::*;
    let mut d = Declare { specs: Vec::new() };
    let ann = c.annotation_dim();

    let encoder = EncoderParams {
        embedding: d.add("enc.embedding", c.src_vocab, c.src_emb, Embedding),
        forward: d.gru("enc.fwd", c.src_emb, c.enc_hidden),
        backward: d.gru("enc.bwd", c.src_emb, c.enc_hidden),
    };

    let embedding = d.add("dec.embedding", c.tgt_vocab, c.tgt_emb, Embedding);
    let init = InitMlpParams {
        w: d.add("dec.init.W", ann, c.dec_hidden, Weight),
        b: d.add("dec.init.b", 1, c.dec_hidden, Bias),
    };
    let rec1 = d.gru("dec.rec1", c.tgt_emb, c.dec_hidden);
    let source_attention = d.attention("dec.att_src", c.dec_hidden, ann, c.att_dim);
    let visual = c.multimodal.then(|| VisualParams {
        attention: d.attention("dec.att_img", c.dec_hidden, c.feat_dim, c.att_dim),
        gate: GateParams {
            w: d.add("dec.gate.W", c.dec_hidden, 1, Weight),
            b: d.add("dec.gate.b", 1, 1, Bias),
        },
    });
    let rec2 = Rec2Params {
        w_src_z: d.add("dec.rec2.W_src_z", ann, c.dec_hidden, Weight),
        w_src_r: d.add("dec.rec2.W_src_r", ann, c.dec_hidden, Weight),
        w_src: d.add("dec.rec2.W_src", ann, c.dec_hidden, Weight),
        image: c.multimodal.then(|| Rec2ImageParams {
            w_z: d.add("dec.rec2.W_img_z", c.feat_dim, c.dec_hidden, Weight),
            w_r: d.add("dec.rec2.W_img_r", c.feat_dim, c.dec_hidden, Weight),
            w: d.add("dec.rec2.W_img", c.feat_dim, c.dec_hidden, Weight),
        }),
        u_z: d.add("dec.rec2.U_z", c.dec_hidden, c.dec_hidden, Recurrent),
        u_r: d.add("dec.rec2.U_r", c.dec_hidden, c.dec_hidden, Recurrent),
        u: d.add("dec.rec2.U", c.dec_hidden, c.dec_hidden, Recurrent),
    };
    let output = OutputParams {
        l_o: d.add("dec.out.L_o", c.proj_dim, c.tgt_vocab, Weight),
        l_s: d.add("dec.out.L_s", c.dec_hidden, c.proj_dim, Weight),
        l_w: d.add("dec.out.L_w", c.tgt_emb, c.proj_dim, Weight),
        l_c: d.add(if c.multimodal { "dec.out.L_cs" } else { "dec.out.L_c" }, ann, c.proj_dim, Weight),
        l_ci: c
            .multimodal
            .then(|| d.add("dec.out.L_ci", c.feat_dim, c.proj_dim, Weight)),
    };

    let layout = Layout {
        encoder,
        decoder: DecoderParams {
            embedding,
            init,
            rec1,
            source_attention,
            visual,
            rec2,
            output,
        },
    };
    (layout, d.specs)
}

/// Encoder outputs and attention keys for one sentence, as plain tensors.
#[derive(Clone, Debug)]
pub struct SentenceMemory<T> {
    pub annotations: Tensor<T>,
    pub source_keys: Tensor<T>,
    pub initial_state: Tensor<T>,
    pub image: Option<(Tensor<T>, Tensor<T>)>,
}

/// Result of one inference step.
#[derive(Clone, Debug)]
pub struct StepOutcome<T> {
    pub distribution: Tensor<T>,
    pub state: DecoderState<T>,
    pub alpha_src: AlignmentRow<T>,
    pub alpha_img: Option<AlignmentRow<T>>,
    pub beta: Option<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamSet<T>,
    layout: Layout<ParamId>,
}

impl<T: Real> Model<T> {
    /// Freshly initialised model (Gaussian weights, orthogonal recurrent
    /// matrices, zero biases).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.param_specs(), seed)?;
        Self::from_params(config, params)
    }

    /// Every parameter zero; useful as a neutral starting point in tests.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for spec in config.param_specs() {
            params.insert(&spec.name, Tensor::zeros(&spec.shape))?;
        }
        Self::from_params(config, params)
    }

    /// Wraps existing parameters, checking names, order and shapes.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let (layout, specs) = declare(&config);
        if specs.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, (_, name, value)) in specs.iter().zip(params.iter()) {
            if spec.name != name || value.shape() != spec.shape {
                return Err(Error::Config(format!(
                    "parameter `{name}` {:?} does not match expected `{}` {:?}",
                    value.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout<ParamId> {
        &self.layout
    }

    pub fn is_multimodal(&self) -> bool {
        self.config.multimodal
    }

    /// Binds every parameter on `tape`; `trainable` controls whether
    /// gradients are tracked.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Layout<Var> {
        self.layout.map(|id| {
            if trainable {
                tape.param(&self.params, id)
            } else {
                tape.frozen_param(&self.params, id)
            }
        })
    }

    fn check_image(&self, image: Option<&Tensor<T>>) -> Result<()> {
        match (self.config.multimodal, image) {
            (true, Some(a)) => {
                let expected = [self.config.feat_len, self.config.feat_dim];
                if a.shape() != expected {
                    return Err(Error::Input(format!(
                        "image features have shape {:?}, model expects {expected:?}",
                        a.shape()
                    )));
                }
                Ok(())
            }
            (false, None) => Ok(()),
            (true, None) => Err(Error::Input("multimodal model needs image features".into())),
            (false, Some(_)) => Err(Error::Input("text-only model given image features".into())),
        }
    }

    /// Teacher-forced negative log-likelihood of `tgt` (followed by the
    /// end-of-sentence token) on `tape`. Returns the loss node and the
    /// number of predicted tokens.
    pub fn sentence_loss_on(
        &self,
        tape: &Tape<T>,
        vars: &Layout<Var>,
        src: &[usize],
        tgt: &[usize],
        image: Option<&Tensor<T>>,
        masks: Option<&DropoutMasks<T>>,
    ) -> Result<(Var, usize)> {
        self.check_image(image)?;
        if let Some(&bad) = tgt.iter().find(|&&id| id >= self.config.tgt_vocab) {
            return Err(Error::Input(format!("target token id {bad} outside vocabulary")));
        }
        let enc_masks = masks.map(|m| EncoderMasks {
            forward: tape.constant(m.encoder_forward.clone()),
            backward: tape.constant(m.encoder_backward.clone()),
        });
        let dec_masks = DecoderMasks {
            recurrent: masks.map(|m| tape.constant(m.decoder.clone())),
            readout: masks.map(|m| tape.constant(m.readout.clone())),
        };

        let encoded = encode_bidirectional(tape, &vars.encoder, src, enc_masks)?;
        let memory = self.memory_on(tape, vars, &encoded.annotations, image, masks)?;
        let mut s = init_decoder_state(tape, &vars.decoder.init, &encoded)?;

        let mut prev = BOS;
        let mut nll_terms = Vec::with_capacity(tgt.len() + 1);
        for &gold in tgt.iter().chain(std::iter::once(&EOS)) {
            let step = decode_step(tape, &vars.decoder, &memory, s, prev, dec_masks)?;
            let logp = tape.log_softmax_rows(step.logits)?;
            nll_terms.push(tape.pick(logp, gold)?);
            s = step.state;
            prev = gold;
        }
        let total = tape.add_n(&nll_terms)?;
        Ok((tape.affine(total, -T::one(), T::zero())?, nll_terms.len()))
    }

    fn memory_on(
        &self,
        tape: &Tape<T>,
        vars: &Layout<Var>,
        annotations: &Var,
        image: Option<&Tensor<T>>,
        masks: Option<&DropoutMasks<T>>,
    ) -> Result<StepMemory> {
        let source_keys = project_keys(tape, &vars.decoder.source_attention, *annotations)?;
        let image = match (image, vars.decoder.visual) {
            (Some(a), Some(visual)) => {
                let mut features = tape.constant(a.clone());
                if let Some(m) = masks.and_then(|m| m.image.as_ref()) {
                    features = tape.mul(features, tape.constant(m.clone()))?;
                }
                let keys = project_keys(tape, &visual.attention, features)?;
                Some(ImageMemory { features, keys })
            }
            _ => None,
        };
        Ok(StepMemory {
            annotations: *annotations,
            source_keys,
            image,
        })
    }

    /// Total negative log-likelihood of one pair, without dropout.
    pub fn sentence_loss(&self, src: &[usize], tgt: &[usize], image: Option<&Tensor<T>>) -> Result<T> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let (loss, _) = self.sentence_loss_on(&tape, &vars, src, tgt, image, None)?;
        Ok(tape.scalar(loss))
    }

    /// Encodes a source sentence and precomputes attention keys.
    pub fn prepare(&self, src: &[usize], image: Option<&Tensor<T>>) -> Result<SentenceMemory<T>> {
        self.check_image(image)?;
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let encoded = encode_bidirectional(&tape, &vars.encoder, src, None)?;
        let memory = self.memory_on(&tape, &vars, &encoded.annotations, image, None)?;
        let s0 = init_decoder_state(&tape, &vars.decoder.init, &encoded)?;
        let owned = |v: Var| (*tape.value(v)).clone();
        Ok(SentenceMemory {
            annotations: owned(encoded.annotations),
            source_keys: owned(memory.source_keys),
            initial_state: owned(s0),
            image: memory.image.map(|m| (owned(m.features), owned(m.keys))),
        })
    }

    pub fn initial_state(&self, memory: &SentenceMemory<T>) -> DecoderState<T> {
        DecoderState {
            s: memory.initial_state.clone(),
            prev_token: BOS,
            step: 0,
        }
    }

    /// One inference step: next-word distribution, new state and the
    /// attention weights and gate value it used.
    pub fn decode_step(&self, memory: &SentenceMemory<T>, state: &DecoderState<T>) -> Result<StepOutcome<T>> {
        if memory.image.is_some() != self.config.multimodal {
            return Err(Error::Input("sentence memory does not match model mode".into()));
        }
        if state.prev_token >= self.config.tgt_vocab {
            return Err(Error::Input(format!("previous token {} outside vocabulary", state.prev_token)));
        }
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let mem = StepMemory {
            annotations: tape.constant(memory.annotations.clone()),
            source_keys: tape.constant(memory.source_keys.clone()),
            image: memory.image.as_ref().map(|(f, k)| ImageMemory {
                features: tape.constant(f.clone()),
                keys: tape.constant(k.clone()),
            }),
        };
        let s_prev = tape.constant(state.s.clone());
        let step = decode_step(&tape, &vars.decoder, &mem, s_prev, state.prev_token, DecoderMasks::default())?;
        let distribution = softmax_rows(&tape.value(step.logits));
        Ok(StepOutcome {
            distribution,
            state: DecoderState {
                s: (*tape.value(step.state)).clone(),
                prev_token: state.prev_token,
                step: state.step + 1,
            },
            alpha_src: AlignmentRow::from_tensor(&tape.value(step.alpha_src), Modality::Src),
            alpha_img: step
                .alpha_img
                .map(|a| AlignmentRow::from_tensor(&tape.value(a), Modality::Img)),
            beta: step.beta.map(|b| tape.scalar(b)),
        })
    }

    /// The text-only model obtained by dropping every image-specific
    /// parameter and using `L_cs` as `L_c`.
    pub fn text_only_counterpart(&self) -> Result<Model<T>> {
        let mut config = self.config.clone();
        config.multimodal = false;
        let mut params = ParamSet::new();
        for spec in config.param_specs() {
            let source_name = if spec.name == "dec.out.L_c" && self.config.multimodal {
                "dec.out.L_cs"
            } else {
                spec.name.as_str()
            };
            let value = self
                .params
                .by_name(source_name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{source_name}`")))?;
            params.insert(&spec.name, value.clone())?;
        }
        Model::from_params(config, params)
    }
}
