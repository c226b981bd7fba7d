//! Binary checkpoint container.
//!
//! ```text
//! magic "MMNMTCK\0" | u16 version | u8 element width (4 or 8)
//! u32 length + UTF-8 metadata (`key = value` lines)
//! u32 parameter count, then per parameter:
//!     u16 name length | name | u32 rows | u32 cols | rows·cols values
//! if state.present: E[g²] then E[Δx²] values for every parameter, in order
//! if preprocess.present: three u32-length-prefixed texts (BPE table,
//!     source vocabulary, target vocabulary)
//! ```
//!
//! All integers and values are little-endian. Randomness during training
//! is derived from `train.seed` and the epoch counter, so those two fields
//! fully describe the generator state.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{AdadeltaState, EarlyStopState, TrainConfig, TrainState};
use crate::data::bpe::BpeModel;
use crate::data::corpus::Preprocessor;
use crate::data::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::kv::{format_kv, parse_kv, section};
use crate::model::{Model, ModelConfig};
use crate::params::ParamSet;
use crate::tensor::{Precision, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"MMNMTCK\0";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub train_config: Option<TrainConfig>,
    pub state: Option<TrainState<T>>,
    pub preprocessor: Option<Preprocessor>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format("checkpoint", "field exceeds 32 bits"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_text(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_values<T: Real>(out: &mut Vec<u8>, t: &Tensor<T>) {
    for &v in t.data() {
        v.write_le(out);
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<usize> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn text(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::format("checkpoint", "text is not UTF-8"))
    }

    fn values<T: Real>(&mut self, shape: &[usize]) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(T::BYTES).ok_or_else(|| Error::format("checkpoint", "tensor too large"))?)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        Ok(Tensor::new(shape, data)?)
    }
}

/// Element width recorded in a checkpoint header.
pub fn peek_precision(bytes: &[u8]) -> Result<Precision> {
    if bytes.len() < 11 || &bytes[..8] != MAGIC {
        return Err(Error::format("checkpoint", "bad magic bytes"));
    }
    match bytes[10] {
        4 => Ok(Precision::F32),
        8 => Ok(Precision::F64),
        w => Err(Error::format("checkpoint", format!("unsupported element width {w}"))),
    }
}

pub fn peek_precision_file(path: &Path) -> Result<Precision> {
    peek_precision(&fs::read(path)?)
}

fn get<V: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<V> {
    map.get(key)
        .ok_or_else(|| Error::format("checkpoint", format!("missing metadata `{key}`")))?
        .parse()
        .map_err(|_| Error::format("checkpoint", format!("bad metadata `{key}`")))
}

impl<T: Real> Checkpoint<T> {
    pub fn new(model: Model<T>) -> Self {
        Self {
            model,
            train_config: None,
            state: None,
            preprocessor: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta: Vec<(String, String)> = self
            .model
            .config()
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (format!("model.{k}"), v))
            .collect();
        if let Some(tc) = &self.train_config {
            meta.extend(tc.to_pairs().into_iter().map(|(k, v)| (format!("train.{k}"), v)));
        }
        meta.push(("state.present".into(), self.state.is_some().to_string()));
        if let Some(s) = &self.state {
            let es = &s.early_stop;
            meta.extend([
                ("state.epoch".into(), s.epoch.to_string()),
                ("state.rho".into(), s.optimizer.rho.to_string()),
                ("state.epsilon".into(), s.optimizer.epsilon.to_string()),
                ("state.best_bleu".into(), es.best_bleu.to_string()),
                ("state.best_epoch".into(), es.best_epoch.to_string()),
                ("state.epochs_since_improvement".into(), es.epochs_since_improvement.to_string()),
                ("state.patience".into(), es.patience.to_string()),
            ]);
        }
        meta.push(("preprocess.present".into(), self.preprocessor.is_some().to_string()));
        if let Some(p) = &self.preprocessor {
            meta.push(("preprocess.max_len".into(), p.max_len.to_string()));
        }
        let meta_text = format_kv(meta.iter().map(|(k, v)| (k.as_str(), v.clone())));

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::BYTES as u8);
        put_text(&mut out, &meta_text)?;
        let params = self.model.params();
        put_u32(&mut out, params.len())?;
        for (_, name, t) in params.iter() {
            let name_len = u16::try_from(name.len()).map_err(|_| Error::format("checkpoint", "parameter name too long"))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rows())?;
            put_u32(&mut out, t.cols())?;
            put_values(&mut out, t);
        }
        if let Some(s) = &self.state {
            if s.optimizer.grad_sq.len() != params.len() || s.optimizer.update_sq.len() != params.len() {
                return Err(Error::format("checkpoint", "optimizer state does not cover every parameter"));
            }
            for t in s.optimizer.grad_sq.iter().chain(&s.optimizer.update_sq) {
                put_values(&mut out, t);
            }
        }
        if let Some(p) = &self.preprocessor {
            put_text(&mut out, &p.bpe.to_text())?;
            put_text(&mut out, &p.src_vocab.to_text())?;
            put_text(&mut out, &p.tgt_vocab.to_text())?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let precision = peek_precision(bytes)?;
        if precision.bytes() != T::BYTES {
            return Err(Error::format(
                "checkpoint",
                format!("stored as {precision}, requested {}", T::NAME),
            ));
        }
        let mut c = Cursor { bytes, pos: 8 };
        let version = c.u16()?;
        if version != VERSION as usize {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        c.take(1)?;
        let meta = parse_kv(c.text()?)?;
        let config = ModelConfig::from_map(&section(&meta, "model"))?;
        let train_section = section(&meta, "train");
        let train_config = if train_section.is_empty() {
            None
        } else {
            let mut tc = TrainConfig::recipe(config.multimodal);
            tc.update_from(&train_section)?;
            Some(tc)
        };

        let count = c.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let n = c.u16()?;
            let name = std::str::from_utf8(c.take(n)?)
                .map_err(|_| Error::format("checkpoint", "parameter name is not UTF-8"))?
                .to_string();
            let rows = c.u32()?;
            let cols = c.u32()?;
            let t = c.values(&[rows, cols])?;
            params.insert(&name, t)?;
        }
        let model = Model::from_params(config.clone(), params)?;

        let state = if get::<bool>(&meta, "state.present")? {
            let shapes: Vec<Vec<usize>> = model.params().iter().map(|(_, _, t)| t.shape().to_vec()).collect();
            let mut read_all = || -> Result<Vec<Tensor<T>>> { shapes.iter().map(|s| c.values(s)).collect() };
            let grad_sq = read_all()?;
            let update_sq = read_all()?;
            Some(TrainState {
                optimizer: AdadeltaState {
                    grad_sq,
                    update_sq,
                    rho: get(&meta, "state.rho")?,
                    epsilon: get(&meta, "state.epsilon")?,
                },
                early_stop: EarlyStopState {
                    best_bleu: get(&meta, "state.best_bleu")?,
                    best_epoch: get(&meta, "state.best_epoch")?,
                    epochs_since_improvement: get(&meta, "state.epochs_since_improvement")?,
                    patience: get(&meta, "state.patience")?,
                },
                epoch: get(&meta, "state.epoch")?,
            })
        } else {
            None
        };

        let preprocessor = if get::<bool>(&meta, "preprocess.present")? {
            Some(Preprocessor {
                bpe: BpeModel::from_text(c.text()?)?,
                src_vocab: Vocabulary::from_text(c.text()?)?,
                tgt_vocab: Vocabulary::from_text(c.text()?)?,
                max_len: get(&meta, "preprocess.max_len")?,
            })
        } else {
            None
        };
        if c.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Self {
            model,
            train_config,
            state,
            preprocessor,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
