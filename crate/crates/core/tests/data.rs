mod common;

use std::collections::HashMap;

use mmnmt::data::bpe::{join, word_symbols, BpeModel};
use mmnmt::data::corpus::{build_corpus, CorpusConfig};
use mmnmt::data::{back_translate, dump_attention, tokenize, DumpSummary, Vocabulary, EOS, PAD, UNK};
use mmnmt::training::{train, TrainConfig, TrainData};
use mmnmt::{Model, ModelConfig};

const FIXTURE_IN: &str = include_str!("fixtures/tokenize_input.txt");
const FIXTURE_OUT: &str = include_str!("fixtures/tokenize_expected.txt");

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn tokenizer_basics() {
    assert_eq!(tokenize("a man."), ["a", "man", "."]);
    assert!(tokenize("").is_empty());
    assert_eq!(tokenize("Don't STOP-now, 3.5!"), ["Don't", "STOP-now", ",", "3.5", "!"]);
}

#[test]
fn tokenizer_golden_fixture() {
    let inputs: Vec<&str> = FIXTURE_IN.lines().collect();
    let expected: Vec<&str> = FIXTURE_OUT.lines().collect();
    assert_eq!(inputs.len(), 20);
    assert_eq!(expected.len(), 20);
    for (i, (inp, exp)) in inputs.iter().zip(&expected).enumerate() {
        assert_eq!(tokenize(inp).join(" "), *exp, "fixture line {}", i + 1);
    }
}

#[test]
fn zero_merges_gives_characters() {
    let bpe = BpeModel::learn([toks("cat cat dog").as_slice()], 0, 2);
    assert!(bpe.merges().is_empty());
    assert_eq!(bpe.apply(&["cat"]), ["c@@", "a@@", "t"]);
    assert_eq!(word_symbols("cat"), ["c", "a", "t</w>"]);
}

#[test]
fn repeated_letter_first_merge() {
    for k in [1, 3, 10] {
        let corpus = vec!["aaaa".to_string(); k];
        let bpe = BpeModel::learn([corpus.as_slice()], 1, 1);
        assert_eq!(bpe.merges(), [("a".to_string(), "a".to_string())]);
    }
}

#[test]
fn bpe_matches_brute_force_on_fixture() {
    let corpus: Vec<Vec<String>> = FIXTURE_OUT.lines().map(toks).collect();
    let learned = BpeModel::learn(corpus.iter().map(Vec::as_slice), 60, 2);
    assert_eq!(learned.merges(), common::oracles::brute_force_merges(&corpus, 60, 2).as_slice());
}

#[test]
fn apply_join_identity_on_fixture() {
    let corpus: Vec<Vec<String>> = FIXTURE_OUT.lines().map(toks).collect();
    let bpe = BpeModel::learn(corpus.iter().map(Vec::as_slice), 80, 2);
    for sentence in &corpus {
        assert_eq!(&join(&bpe.apply(sentence)), sentence);
    }
    let restored = BpeModel::from_text(&bpe.to_text()).unwrap();
    assert_eq!(restored, bpe);
}

#[test]
fn segmentation_follows_manual_trace() {
    let merges = [("l", "o"), ("lo", "w"), ("e", "r</w>"), ("low", "er</w>")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect::<Vec<_>>();
    // l o w e r</w> → lo w e r</w> → low e r</w> → low er</w> → lower</w>
    let full = BpeModel::from_merges(merges.clone(), 2);
    assert_eq!(full.segment_word("lower"), ["lower</w>"]);
    assert_eq!(full.apply(&["lower"]), ["lower"]);
    let partial = BpeModel::from_merges(merges[..3].to_vec(), 2);
    assert_eq!(partial.segment_word("lower"), ["low", "er</w>"]);
    assert_eq!(partial.apply(&["lower", "lowest"]), ["low@@", "er", "low@@", "e@@", "s@@", "t"]);
    assert_eq!(partial.apply(&["xyz"]), ["x@@", "y@@", "z"]);
}

#[test]
fn long_sentences_are_discarded_and_reported() {
    let long81 = vec!["a"; 81].join(" ");
    let long80 = vec!["a"; 80].join(" ");
    let src = vec!["a b".to_string(), long81.clone(), long80.clone(), "c".to_string()];
    let tgt = vec!["x y".to_string(), "x".to_string(), "y".to_string(), long81];
    let cfg = CorpusConfig {
        num_merges: 0,
        ..CorpusConfig::default()
    };
    let prepared = build_corpus(&src, &tgt, None, &cfg).unwrap();
    let lines: Vec<usize> = prepared.triples.iter().map(|t| t.line).collect();
    assert_eq!(lines, [1, 3]);
    assert_eq!(prepared.discards.len(), 2);
    assert_eq!(prepared.discards[0].line, 2);
    assert!(prepared.discards[0].reason.contains("81"));
    assert_eq!(prepared.discards[1].line, 4);
    for t in &prepared.triples {
        assert!(t.src.iter().all(|&id| id < prepared.preprocessor.src_vocab.len()));
        assert!(t.tgt.iter().all(|&id| id < prepared.preprocessor.tgt_vocab.len()));
    }
}

#[test]
fn short_corpus_has_no_discards_and_is_deterministic() {
    let src: Vec<String> = FIXTURE_IN.lines().map(String::from).collect();
    let tgt: Vec<String> = FIXTURE_IN.lines().rev().map(String::from).collect();
    let cfg = CorpusConfig {
        num_merges: 40,
        ..CorpusConfig::default()
    };
    let a = build_corpus(&src, &tgt, None, &cfg).unwrap();
    let b = build_corpus(&src, &tgt, None, &cfg).unwrap();
    assert!(a.discards.is_empty());
    assert_eq!(a.triples, b.triples);
    assert_eq!(a.preprocessor, b.preprocessor);
}

#[test]
fn index_controls_image_ids_and_shared_vocab_flag() {
    let src = vec!["a b".to_string(), "c d".to_string()];
    let tgt = vec!["w x".to_string(), "y z".to_string()];
    let index: HashMap<usize, String> = [(2, "img7".to_string())].into();
    let cfg = CorpusConfig {
        num_merges: 0,
        shared_vocab: true,
        ..CorpusConfig::default()
    };
    let p = build_corpus(&src, &tgt, Some(&index), &cfg).unwrap();
    assert_eq!(p.triples.len(), 1);
    assert_eq!(p.triples[0].image_id.as_deref(), Some("img7"));
    assert_eq!(p.discards[0].line, 1);
    assert_eq!(p.preprocessor.src_vocab, p.preprocessor.tgt_vocab);
    assert!(p.preprocessor.src_vocab.get("y").is_some());
}

#[test]
fn vocabulary_round_trip() {
    let v = Vocabulary::build([toks("b a b").as_slice()], None);
    assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
}

#[test]
fn back_translation_reproduces_overfit_sources() {
    let src: Vec<String> = ["a dog runs", "two men sit", "a red car", "the boy jumps", "cats sleep"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let tgt: Vec<String> = ["ein Hund rennt", "zwei Männer sitzen", "ein rotes Auto", "der Junge springt", "Katzen schlafen"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cfg = CorpusConfig {
        num_merges: 1000,
        min_frequency: 1,
        ..CorpusConfig::default()
    };
    // reverse direction: target language in, source language out
    let prepared = build_corpus(&tgt, &src, None, &cfg).unwrap();
    let pre = &prepared.preprocessor;
    let mc = common::desk_config(pre.src_vocab.len(), pre.tgt_vocab.len(), false);
    let mut model = Model::<f32>::new(mc, 3).unwrap();
    let mut tc = TrainConfig::recipe(false);
    tc.batch_size = 1;
    tc.dropout = 0.0;
    tc.patience = 3000;
    tc.max_epochs = 3000;
    tc.max_decode_len = 30;
    let data = TrainData {
        train: &prepared.triples,
        valid: &prepared.triples,
        features: None,
    };
    let expected: Vec<String> = src.iter().map(|s| tokenize(s).join(" ")).collect();
    // too short for any 4-gram, so validation BLEU cannot signal convergence
    let outcome = train(&mut model, data, &tc, None, |_, m, _| {
        if back_translate(m, pre, &tgt, None, 1, 40)? == expected {
            Err(mmnmt::Error::Input("converged".into()))
        } else {
            Ok(())
        }
    });
    assert!(matches!(outcome, Err(mmnmt::Error::Input(_))), "reverse model did not converge: {:?}", back_translate(&model, pre, &tgt, None, 1, 40));

    let out = back_translate(&model, pre, &tgt, None, 3, 40).unwrap();
    assert_eq!(out, expected);

    let with_blank = vec!["ein Hund rennt".to_string(), String::new(), "Katzen schlafen".to_string()];
    let out = back_translate(&model, pre, &with_blank, None, 2, 40).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(out[1], "");
    assert!(back_translate(&model, pre, &Vec::<String>::new(), None, 2, 40).unwrap().is_empty());
}

#[test]
fn attention_dump_is_consistent_with_stepwise_decoding() {
    let mut cfg = ModelConfig::tiny(12, 14, true);
    cfg.feat_len = 5;
    let model: Model<f64> = common::randomized(cfg.clone(), 4, 0.6);
    let image = mmnmt::vision::synth_features::<f64>(2, cfg.feat_len, cfg.feat_dim, 1)
        .remove(0)
        .features;
    let src = [4, 7, 9, 5];
    let record = dump_attention(&model, 0, &src, Some(&image), 12).unwrap();
    assert_eq!(record.steps.len(), record.target_ids.len());

    let memory = model.prepare(&src, Some(&image)).unwrap();
    let mut state = model.initial_state(&memory);
    for step in &record.steps {
        let out = model.decode_step(&memory, &state).unwrap();
        assert_eq!(out.distribution.argmax(), step.token);
        let alpha: Vec<f64> = out.alpha_src.weights.clone();
        assert_eq!(alpha, step.alpha_src);
        assert_eq!(out.alpha_img.unwrap().weights, step.alpha_img.clone().unwrap());
        assert_eq!(out.beta, step.beta);
        assert!((step.alpha_src.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        assert!((step.alpha_img.as_ref().unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-5);
        state = out.state;
        state.prev_token = step.token;
        if step.token == EOS {
            break;
        }
    }

    let summary = DumpSummary::from_records(&[record]);
    let (a, b) = (summary.beta_above_05.unwrap(), summary.beta_above_08.unwrap());
    assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
    assert!(b <= a);
}

#[test]
fn reserved_ids_are_stable() {
    let v = Vocabulary::build([toks("b a b c").as_slice()], None);
    assert_eq!(v.token(PAD), Some("<pad>"));
    assert_eq!(v.id("</s>"), EOS);
    assert_eq!(v.id("b"), 4);
    assert_eq!(v.id("a"), 5);
    assert_eq!(v.id("zzz"), UNK);
}

#[test]
fn size_cap_and_round_trip() {
    let v = Vocabulary::build([toks("x x y y z").as_slice()], Some(6));
    assert_eq!(v.len(), 6);
    assert_eq!(v.id("z"), UNK);
    assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    assert_eq!(v.decode(&v.encode(&["x", "y"])), vec!["x", "y"]);
}

#[test]
fn rejects_duplicates() {
    assert!(Vocabulary::from_tokens(["a", "a"]).is_err());
    assert!(Vocabulary::from_text("a\nb\n").is_err());
}
