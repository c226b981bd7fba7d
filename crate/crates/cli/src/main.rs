//! `mmnmt` command-line interface.

mod train;

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mmnmt::data::{back_translate, dump_attention, AttentionRecord, DumpSummary, ImageLookup, Preprocessor};
use mmnmt::kv::{parse_kv, section};
use mmnmt::metrics::bleu::bleu4;
use mmnmt::metrics::chrf::chrf;
use mmnmt::metrics::significance::{approx_randomization, Metric};
use mmnmt::metrics::ter::ter;
use mmnmt::training::checkpoint::{peek_precision_file, Checkpoint};
use mmnmt::training::param_count;
use mmnmt::vision::{load_features, read_index, FeatureStore};
use mmnmt::{beam_search, Error, Model, ModelConfig, Precision, Real, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mmnmt", version, about = "Multimodal neural machine translation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreMetric {
    Bleu,
    Chrf,
    Ter,
    All,
}

/// Image inputs shared by every command that runs a multimodal model.
#[derive(clap::Args, Clone)]
struct ImageArgs {
    /// Feature file in SPFT format.
    #[arg(long)]
    features: Option<PathBuf>,
    /// `line<TAB>image_id` index for the input lines.
    #[arg(long)]
    index: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Prepare a corpus and train a model from a key-value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        multimodal: bool,
        #[command(flatten)]
        images: ImageArgs,
    },
    /// Translate source lines with a checkpoint.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, default_value_t = 100)]
        max_len: usize,
        #[command(flatten)]
        images: ImageArgs,
    },
    /// Corpus-level scores, one JSON line per metric.
    Score {
        #[arg(long, value_enum)]
        metric: ScoreMetric,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Approximate randomization test between two systems.
    Significance {
        #[arg(long)]
        metric: Metric,
        #[arg(long)]
        hyp_a: PathBuf,
        #[arg(long)]
        hyp_b: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Translate target-language text back into the source language with
    /// a reverse model, producing synthetic parallel data.
    Backtranslate {
        /// Checkpoint of a target-to-source model.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Where to write the synthetic source side (stdout if absent).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long, default_value_t = 100)]
        max_len: usize,
        #[command(flatten)]
        images: ImageArgs,
    },
    /// Greedy decoding with per-step attention weights and gate values as
    /// JSON lines, followed by a summary line.
    DumpAttention {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 100)]
        max_len: usize,
        #[command(flatten)]
        images: ImageArgs,
    },
    /// Parameter totals per component for a model configuration.
    ParamCount {
        /// Key-value file whose `model.*` entries override the full-size
        /// dimensions.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        multimodal: bool,
    },
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn aligned(hyp: &Path, reference: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let (h, r) = (read_lines(hyp)?, read_lines(reference)?);
    if h.len() != r.len() {
        return Err(Error::Input(format!(
            "{} has {} lines but {} has {}",
            hyp.display(),
            h.len(),
            reference.display(),
            r.len()
        )));
    }
    Ok((h, r))
}

fn words(lines: &[String]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

fn score(metric: ScoreMetric, hyp: &Path, reference: &Path) -> Result<()> {
    let (h, r) = aligned(hyp, reference)?;
    let want = |m: ScoreMetric| metric == m || metric == ScoreMetric::All;
    if want(ScoreMetric::Bleu) {
        println!("{}", json!({"metric": "bleu", "score": bleu4(&words(&h), &words(&r))?}));
    }
    if want(ScoreMetric::Chrf) {
        let s = chrf(&h, &r, 3.0, 6)?;
        println!(
            "{}",
            json!({"metric": "chrf", "score": s.f_score, "precision": s.precision, "recall": s.recall})
        );
    }
    if want(ScoreMetric::Ter) {
        println!("{}", json!({"metric": "ter", "score": ter(&words(&h), &words(&r))?}));
    }
    Ok(())
}

fn significance(metric: Metric, a: &Path, b: &Path, reference: &Path, trials: usize, seed: u64) -> Result<()> {
    let (sys_a, refs) = aligned(a, reference)?;
    let (sys_b, _) = aligned(b, reference)?;
    let result = approx_randomization(metric, &sys_a, &sys_b, &refs, trials, seed)?;
    println!("{}", serde_json::to_string(&result).expect("serialisable result"));
    Ok(())
}

struct Images<T> {
    features: FeatureStore<T>,
    index: HashMap<usize, String>,
}

impl<T: Real> Images<T> {
    fn load(args: &ImageArgs, config: &ModelConfig) -> Result<Option<Self>> {
        match (config.multimodal, &args.features, &args.index) {
            (false, None, None) => Ok(None),
            (false, _, _) => Err(Error::Input("text-only model does not take --features or --index".into())),
            (true, Some(f), Some(i)) => Ok(Some(Self {
                features: load_features(f, config.feat_len, config.feat_dim)?,
                index: read_index(i)?,
            })),
            (true, _, _) => Err(Error::Input("multimodal model needs --features and --index".into())),
        }
    }

    fn lookup(&self) -> ImageLookup<'_, T> {
        ImageLookup {
            features: &self.features,
            index: &self.index,
        }
    }
}

/// A loaded checkpoint that must carry its preprocessing.
fn load_for_inference<T: Real>(path: &Path) -> Result<(Model<T>, Preprocessor)> {
    let ck = Checkpoint::<T>::load(path)?;
    let pre = ck
        .preprocessor
        .ok_or_else(|| Error::Input(format!("{} has no tokenizer or vocabularies", path.display())))?;
    Ok((ck.model, pre))
}

fn translate<T: Real>(model: &Path, input: &Path, beam: usize, max_len: usize, images: &ImageArgs) -> Result<()> {
    let (model, pre) = load_for_inference::<T>(model)?;
    let images = Images::<T>::load(images, model.config())?;
    let lines = read_lines(input)?;
    let out = io::stdout();
    let mut out = BufWriter::new(out.lock());
    for (i, line) in lines.iter().enumerate() {
        let ids = pre.encode_source(line);
        if ids.is_empty() {
            writeln!(out)?;
            continue;
        }
        let image = match &images {
            Some(im) => Some(image_for(&im.lookup(), i + 1)?),
            None => None,
        };
        let hyp = beam_search(&model, &ids, image, beam, max_len)?;
        writeln!(out, "{}", pre.decode_target(&hyp.tokens))?;
    }
    out.flush()?;
    Ok(())
}

fn image_for<'a, T: Real>(lookup: &ImageLookup<'a, T>, line: usize) -> Result<&'a mmnmt::Tensor<T>> {
    let id = lookup
        .index
        .get(&line)
        .ok_or_else(|| Error::Input(format!("line {line} has no image in the index")))?;
    lookup.features.get(id).ok_or_else(|| Error::Feature {
        image_id: id.clone(),
        detail: format!("referenced by line {line} but not in the feature file"),
    })
}

fn backtranslate<T: Real>(
    model: &Path,
    input: &Path,
    output: Option<&Path>,
    beam: usize,
    max_len: usize,
    images: &ImageArgs,
) -> Result<()> {
    let (model, pre) = load_for_inference::<T>(model)?;
    let images = Images::<T>::load(images, model.config())?;
    let lines = read_lines(input)?;
    let synthetic = back_translate(&model, &pre, &lines, images.as_ref().map(Images::lookup), beam, max_len)?;
    let text: String = synthetic.iter().map(|l| format!("{l}\n")).collect();
    match output {
        Some(path) => fs::write(path, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn dump<T: Real>(model: &Path, input: &Path, max_len: usize, images: &ImageArgs) -> Result<()> {
    let (model, pre) = load_for_inference::<T>(model)?;
    let images = Images::<T>::load(images, model.config())?;
    let lines = read_lines(input)?;
    let out = io::stdout();
    let mut out = BufWriter::new(out.lock());
    let mut records: Vec<AttentionRecord> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let ids = pre.encode_source(line);
        if ids.is_empty() {
            eprintln!("line {}: empty after tokenization, skipped", i + 1);
            continue;
        }
        let image = match &images {
            Some(im) => Some(image_for(&im.lookup(), i + 1)?),
            None => None,
        };
        let record = dump_attention(&model, i + 1, &ids, image, max_len)?.with_tokens(&pre);
        writeln!(out, "{}", serde_json::to_string(&record).expect("serialisable record"))?;
        records.push(record);
    }
    let summary = DumpSummary::from_records(&records);
    writeln!(out, "{}", json!({ "summary": summary }))?;
    out.flush()?;
    Ok(())
}

fn count(config: Option<&Path>, multimodal: bool) -> Result<()> {
    let mut pairs: std::collections::BTreeMap<String, String> = ModelConfig::full_size(multimodal)
        .to_pairs()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    if let Some(path) = config {
        pairs.extend(section(&parse_kv(&fs::read_to_string(path)?)?, "model"));
        pairs.insert("multimodal".into(), multimodal.to_string());
    }
    let cfg = ModelConfig::from_map(&pairs)?;
    println!("{}", serde_json::to_string(&param_count(&cfg)).expect("serialisable count"));
    Ok(())
}

/// Runs `f` at the precision recorded in the checkpoint header.
macro_rules! at_precision {
    ($path:expr, $f:ident($($arg:expr),*)) => {
        match peek_precision_file($path)? {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            multimodal,
            images,
        } => train::run(&config, multimodal, images.features.as_deref(), images.index.as_deref()),
        Command::Translate {
            model,
            input,
            beam,
            max_len,
            images,
        } => at_precision!(&model, translate(&model, &input, beam, max_len, &images)),
        Command::Score { metric, hyp, reference } => score(metric, &hyp, &reference),
        Command::Significance {
            metric,
            hyp_a,
            hyp_b,
            reference,
            trials,
            seed,
        } => significance(metric, &hyp_a, &hyp_b, &reference, trials, seed),
        Command::Backtranslate {
            model,
            input,
            output,
            beam,
            max_len,
            images,
        } => at_precision!(&model, backtranslate(&model, &input, output.as_deref(), beam, max_len, &images)),
        Command::DumpAttention {
            model,
            input,
            max_len,
            images,
        } => at_precision!(&model, dump(&model, &input, max_len, &images)),
        Command::ParamCount { config, multimodal } => count(config.as_deref(), multimodal),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
