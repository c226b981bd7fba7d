//! `mmnmt train`: corpus preparation, training and checkpointing driven
//! by a flat key-value config file.
//!
//! Recognised keys (paths are relative to the config file):
//!
//! ```text
//! data.train_src, data.train_tgt, data.valid_src, data.valid_tgt
//! data.valid_index            image index for validation lines (multimodal)
//! output.dir                  checkpoint directory (default `checkpoints`)
//! resume                      checkpoint to continue from
//! corpus.num_merges, corpus.min_frequency, corpus.max_len,
//! corpus.src_vocab_size, corpus.tgt_vocab_size, corpus.shared_vocab
//! model.<dimension>           overrides of the full-size dimensions
//! train.<field>               overrides of the training recipe
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mmnmt::data::corpus::{build_corpus, CorpusConfig};
use mmnmt::data::{Discard, Preprocessor, TrainingTriple};
use mmnmt::kv::{parse_kv, section};
use mmnmt::training::checkpoint::{peek_precision_file, Checkpoint};
use mmnmt::training::{train, TrainConfig, TrainData, TrainState};
use mmnmt::vision::{load_features, read_index};
use mmnmt::{Error, Model, ModelConfig, Precision, Real, Result};

struct Settings {
    dir: PathBuf,
    map: BTreeMap<String, String>,
}

impl Settings {
    fn path(&self, key: &str) -> Option<PathBuf> {
        self.map.get(key).map(|p| self.dir.join(p))
    }

    fn required(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| Error::Config(format!("missing `{key}` in the config file")))
    }

    fn parse<V: std::str::FromStr>(&self, key: &str, slot: &mut V) -> Result<()> {
        if let Some(v) = self.map.get(key) {
            *slot = v
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))?;
        }
        Ok(())
    }
}

fn lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn corpus_config(s: &Settings) -> Result<CorpusConfig> {
    let mut c = CorpusConfig::default();
    s.parse("corpus.num_merges", &mut c.num_merges)?;
    s.parse("corpus.min_frequency", &mut c.min_frequency)?;
    s.parse("corpus.max_len", &mut c.max_len)?;
    s.parse("corpus.shared_vocab", &mut c.shared_vocab)?;
    let cap = |key: &str| -> Result<Option<usize>> {
        let mut v = 0usize;
        s.parse(key, &mut v)?;
        Ok((v > 0).then_some(v))
    };
    c.src_vocab_size = cap("corpus.src_vocab_size")?;
    c.tgt_vocab_size = cap("corpus.tgt_vocab_size")?;
    Ok(c)
}

fn model_config(s: &Settings, pre: &Preprocessor, multimodal: bool) -> Result<ModelConfig> {
    let mut pairs: BTreeMap<String, String> = ModelConfig::full_size(multimodal)
        .to_pairs()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    pairs.extend(section(&s.map, "model"));
    pairs.insert("src_vocab".into(), pre.src_vocab.len().to_string());
    pairs.insert("tgt_vocab".into(), pre.tgt_vocab.len().to_string());
    pairs.insert("multimodal".into(), multimodal.to_string());
    ModelConfig::from_map(&pairs)
}

fn report(which: &str, discards: &[Discard]) {
    for d in discards {
        eprintln!("{which} line {} discarded: {}", d.line, d.reason);
    }
}

/// Preprocessing and model shape stored in a checkpoint.
fn resume_info(path: &Path) -> Result<(Preprocessor, ModelConfig)> {
    fn read<T: Real>(path: &Path) -> Result<(Preprocessor, ModelConfig)> {
        let ck = Checkpoint::<T>::load(path)?;
        let pre = ck
            .preprocessor
            .ok_or_else(|| Error::Input(format!("{} has no tokenizer or vocabularies", path.display())))?;
        Ok((pre, ck.model.config().clone()))
    }
    match peek_precision_file(path)? {
        Precision::F32 => read::<f32>(path),
        Precision::F64 => read::<f64>(path),
    }
}

/// Everything the training loop needs, before the precision is fixed.
struct Prepared {
    preprocessor: Preprocessor,
    train: Vec<TrainingTriple>,
    valid: Vec<TrainingTriple>,
    train_config: TrainConfig,
    model_config: ModelConfig,
    resume: Option<PathBuf>,
    out_dir: PathBuf,
}

pub fn run(config: &Path, multimodal: bool, features: Option<&Path>, index: Option<&Path>) -> Result<()> {
    let settings = Settings {
        dir: config.parent().map(Path::to_path_buf).unwrap_or_default(),
        map: parse_kv(&fs::read_to_string(config)?)?,
    };
    if multimodal != (features.is_some() && index.is_some()) {
        return Err(Error::Input("--multimodal needs both --features and --index (and vice versa)".into()));
    }
    let train_index = index.map(read_index).transpose()?;
    let valid_index = match (multimodal, settings.path("data.valid_index")) {
        (true, Some(p)) => Some(read_index(&p)?),
        (true, None) => return Err(Error::Config("multimodal training needs `data.valid_index`".into())),
        (false, _) => None,
    };

    let train_src = lines(&settings.required("data.train_src")?)?;
    let train_tgt = lines(&settings.required("data.train_tgt")?)?;
    let valid_src = lines(&settings.required("data.valid_src")?)?;
    let valid_tgt = lines(&settings.required("data.valid_tgt")?)?;

    let resume = settings.path("resume");
    let (preprocessor, train_triples, train_discards, resumed_config) = match &resume {
        Some(path) => {
            let (pre, config) = resume_info(path)?;
            let (t, d) = pre.encode_pairs(&train_src, &train_tgt, train_index.as_ref())?;
            (pre, t, d, Some(config))
        }
        None => {
            let prepared = build_corpus(&train_src, &train_tgt, train_index.as_ref(), &corpus_config(&settings)?)?;
            (prepared.preprocessor, prepared.triples, prepared.discards, None)
        }
    };
    report("training", &train_discards);
    let (valid, valid_discards) = preprocessor.encode_pairs(&valid_src, &valid_tgt, valid_index.as_ref())?;
    report("validation", &valid_discards);

    let model_config = match resumed_config {
        Some(c) => c,
        None => model_config(&settings, &preprocessor, multimodal)?,
    };
    if model_config.multimodal != multimodal {
        return Err(Error::Config("checkpoint and --multimodal disagree".into()));
    }
    let mut train_config = TrainConfig::recipe(multimodal);
    train_config.update_from(&section(&settings.map, "train"))?;
    let out_dir = settings.path("output.dir").unwrap_or_else(|| settings.dir.join("checkpoints"));
    fs::create_dir_all(&out_dir)?;
    eprintln!(
        "{} training pairs, {} validation pairs, vocabularies {} / {}",
        train_triples.len(),
        valid.len(),
        preprocessor.src_vocab.len(),
        preprocessor.tgt_vocab.len()
    );

    let prepared = Prepared {
        preprocessor,
        train: train_triples,
        valid,
        train_config,
        model_config,
        resume,
        out_dir,
    };
    match prepared.train_config.precision {
        Precision::F32 => run_at::<f32>(prepared, features),
        Precision::F64 => run_at::<f64>(prepared, features),
    }
}

fn run_at<T: Real>(p: Prepared, features: Option<&Path>) -> Result<()> {
    let store = features
        .map(|f| load_features::<T>(f, p.model_config.feat_len, p.model_config.feat_dim))
        .transpose()?;
    let (mut model, state) = match &p.resume {
        Some(path) => {
            let ck = Checkpoint::<T>::load(path).map_err(|e| {
                Error::Input(format!("{}: {e} (resume needs the precision it was saved with)", path.display()))
            })?;
            (ck.model, ck.state)
        }
        None => {
            let seed = p.train_config.seed;
            (Model::<T>::new(p.model_config.clone(), seed)?, None::<TrainState<T>>)
        }
    };
    let data = TrainData {
        train: &p.train,
        valid: &p.valid,
        features: store.as_ref(),
    };
    let save = |model: &Model<T>, state: Option<&TrainState<T>>, name: &str| -> Result<()> {
        let mut ck = Checkpoint::new(model.clone());
        ck.train_config = Some(p.train_config.clone());
        ck.state = state.cloned();
        ck.preprocessor = Some(p.preprocessor.clone());
        ck.save(&p.out_dir.join(name))
    };
    let outcome = train(&mut model, data, &p.train_config, state, |record, model, state| {
        println!("{}", serde_json::to_string(record).expect("serialisable record"));
        save(model, Some(state), "last.ckpt")?;
        if record.improved {
            save(model, None, "best.ckpt")?;
        }
        Ok(())
    })?;
    let last = outcome.history.last();
    eprintln!(
        "finished after epoch {} ({}); best validation BLEU {:.2} at epoch {}",
        outcome.state.epoch,
        if outcome.stopped_early { "early stop" } else { "epoch limit" },
        last.map_or(0.0, |r| r.best_bleu),
        last.map_or(0, |r| r.best_epoch)
    );
    Ok(())
}
