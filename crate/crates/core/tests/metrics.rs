mod common;

use common::oracles::{exhaustive_ter_edits, plain_edit_distance};
use mmnmt::metrics::bleu::{bleu4, BleuStats, NGramCounts};
use mmnmt::metrics::chrf::chrf;
use mmnmt::metrics::significance::{approx_randomization, exact_randomization, Metric};
use mmnmt::metrics::ter::{edit_distance, ter, ter_script, EditOp};
use proptest::prelude::*;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
    lines.iter().map(|l| words(l)).collect()
}

fn lines(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

#[test]
fn bleu_identity_is_100() {
    let c = corpus(&["a man rides a horse", "two dogs play in the snow"]);
    assert!((bleu4(&c, &c).unwrap() - 100.0).abs() < 1e-12);
}

#[test]
fn bleu_without_four_gram_matches_is_zero() {
    let h = corpus(&["the cat sat on the mat"]);
    let r = corpus(&["the cat is on the mat"]);
    assert_eq!(bleu4(&h, &r).unwrap(), 0.0);
}

#[test]
fn bleu_two_sentence_hand_computation() {
    let h = corpus(&["the cat sat on the mat", "a dog runs in the park"]);
    let r = corpus(&["the cat is on the mat", "a dog runs in a park today"]);
    // clipped matches 10/12, 6/10, 3/8, 1/6; c = 12, r = 13
    let bp = (1.0f64 - 13.0 / 12.0).exp();
    let geo = (10.0f64 / 12.0 * 6.0 / 10.0 * 3.0 / 8.0 * 1.0 / 6.0).powf(0.25);
    let expected = 100.0 * bp * geo;
    assert!((bleu4(&h, &r).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn clipped_counts_never_exceed_hypothesis_counts() {
    let c = NGramCounts::new(&words("the the the cat"), &words("the cat"));
    assert_eq!(c.clipped[0][&words("the")], 1);
    for (n, clipped) in c.clipped.iter().enumerate() {
        for (g, &k) in clipped {
            assert!(k <= c.hypothesis[n][g]);
        }
    }
}

#[test]
fn bleu_is_order_invariant_and_length_checked() {
    let h = corpus(&["a b c d e", "x y z w v u"]);
    let r = corpus(&["a b c d f", "x y z w v q"]);
    let hr: Vec<_> = h.iter().rev().cloned().collect();
    let rr: Vec<_> = r.iter().rev().cloned().collect();
    assert_eq!(bleu4(&h, &r).unwrap(), bleu4(&hr, &rr).unwrap());
    assert!(bleu4(&h, &r[..1]).is_err());
}

#[test]
fn brevity_penalty_only_for_short_output() {
    let s = BleuStats::sentence(&words("a b c d"), &words("a b c d e f g h"));
    assert!((s.brevity_penalty() - (1.0f64 - 2.0).exp()).abs() < 1e-15);
    let long = BleuStats::sentence(&words("a b c d e f"), &words("a b c"));
    assert_eq!(long.brevity_penalty(), 1.0);
}

#[test]
fn chrf_identity_and_disjoint() {
    let s = chrf(&["ein Hund läuft"], &["ein Hund läuft"], 3.0, 6).unwrap();
    assert_eq!((s.f_score, s.precision, s.recall), (100.0, 100.0, 100.0));
    let d = chrf(&["abc abc"], &["xyz"], 3.0, 6).unwrap();
    assert_eq!((d.f_score, d.precision, d.recall), (0.0, 0.0, 0.0));
}

/// Multiset n-gram overlap by repeated linear search.
fn brute_chrf(hyp: &str, reference: &str, beta: f64, max_n: usize) -> (f64, f64, f64) {
    let h: Vec<char> = hyp.chars().filter(|c| *c != ' ').collect();
    let r: Vec<char> = reference.chars().filter(|c| *c != ' ').collect();
    let grams = |s: &[char], n: usize| -> Vec<String> {
        (0..s.len().saturating_sub(n - 1)).map(|i| s[i..i + n].iter().collect()).collect()
    };
    let (mut ps, mut rs) = (Vec::new(), Vec::new());
    for n in 1..=max_n {
        let hg = grams(&h, n);
        let mut rg = grams(&r, n);
        let total_r = rg.len();
        let mut matched = 0;
        for g in &hg {
            if let Some(pos) = rg.iter().position(|x| x == g) {
                rg.remove(pos);
                matched += 1;
            }
        }
        if !hg.is_empty() {
            ps.push(matched as f64 / hg.len() as f64);
        }
        if total_r > 0 {
            rs.push(matched as f64 / total_r as f64);
        }
    }
    let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let (p, rc) = (avg(&ps), avg(&rs));
    let b2 = beta * beta;
    let f = if p + rc == 0.0 { 0.0 } else { (1.0 + b2) * p * rc / (b2 * p + rc) };
    (100.0 * f, 100.0 * p, 100.0 * rc)
}

#[test]
fn chrf_matches_brute_force() {
    for (h, r) in [
        ("a man is riding a bike", "a man rides a bicycle"),
        ("zwei Hunde spielen im Schnee", "zwei Hunde im Schnee"),
        ("aaaa", "aa"),
    ] {
        let s = chrf(&[h], &[r], 3.0, 6).unwrap();
        let (f, p, rc) = brute_chrf(h, r, 3.0, 6);
        assert!((s.f_score - f).abs() < 1e-9, "{h}");
        assert!((s.precision - p).abs() < 1e-9);
        assert!((s.recall - rc).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn chrf_bounds(h in "[a-d ]{0,12}", r in "[a-d ]{1,12}") {
        let s = chrf(&[h.as_str()], &[r.as_str()], 3.0, 6).unwrap();
        prop_assert!((0.0..=100.0).contains(&s.precision));
        prop_assert!((0.0..=100.0).contains(&s.recall));
        prop_assert!(s.f_score >= s.precision.min(s.recall) - 1e-9);
        prop_assert!(s.f_score <= s.precision.max(s.recall) + 1e-9);
    }
}

#[test]
fn ter_identity_and_single_substitution() {
    let c = corpus(&["one two three four five six seven eight nine ten"]);
    assert_eq!(ter(&c, &c).unwrap(), 0.0);
    let h = corpus(&["one two three four five six seven eight nine eleven"]);
    assert!((ter(&h, &c).unwrap() - 0.1).abs() < 1e-15);
}

#[test]
fn single_shift_beats_two_edits() {
    for (h, r) in [
        ("the big cat sat", "the cat sat big"),
        ("a b c d e f", "c d e f a b"),
        ("sat on the mat the cat", "the cat sat on the mat"),
    ] {
        let (h, r) = (words(h), words(r));
        let script = ter_script(&h, &r);
        let optimum = exhaustive_ter_edits(&h, &r, 3);
        assert_eq!(script.cost(), optimum, "{h:?}");
        assert!(script.shifts() >= 1);
        assert!(optimum < plain_edit_distance(&h, &r));
        assert_eq!(script.apply(&h), r);
    }
}

#[test]
fn greedy_shift_search_is_an_upper_bound() {
    let (h, r) = (words("on the mat sat the cat"), words("the cat sat on the mat"));
    let script = ter_script(&h, &r);
    assert!(script.cost() >= exhaustive_ter_edits(&h, &r, 3));
    assert!(script.cost() <= plain_edit_distance(&h, &r));
}

proptest! {
    #[test]
    fn ter_script_is_valid_and_never_worse_than_edit_distance(
        h in proptest::collection::vec(0u8..4, 0..8),
        r in proptest::collection::vec(0u8..4, 1..8),
    ) {
        let script = ter_script(&h, &r);
        prop_assert_eq!(script.apply(&h), r.clone());
        prop_assert!(script.cost() <= edit_distance(&h, &r));
        let edits = script.ops.iter().filter(|o| !matches!(o, EditOp::Match)).count();
        prop_assert_eq!(edits, script.cost());
    }
}

#[test]
fn significance_identical_systems_give_p_one() {
    let sys = lines(&["a man rides a horse", "two dogs run"]);
    let refs = lines(&["a man rides a brown horse", "two dogs are running"]);
    for metric in [Metric::Bleu, Metric::Chrf, Metric::Ter] {
        let r = approx_randomization(metric, &sys, &sys, &refs, 200, 1).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.observed_delta, 0.0);
    }
}

#[test]
fn significance_is_seed_deterministic() {
    let a = lines(&["a b c d e", "f g h i j", "k l m n o", "p q r s t"]);
    let b = lines(&["a b c x e", "f g y i j", "k l m n z", "p w r s t"]);
    let refs = lines(&["a b c d e", "f g h i j", "k l m n o", "p q r s u"]);
    let r1 = approx_randomization(Metric::Bleu, &a, &b, &refs, 500, 42).unwrap();
    let r2 = approx_randomization(Metric::Bleu, &a, &b, &refs, 500, 42).unwrap();
    assert_eq!(r1, r2);
}

#[test]
fn two_sentence_exact_enumeration() {
    let a = lines(&["the cat sat on the mat", "a dog runs in the park"]);
    let b = lines(&["the cat is on a mat", "dog runs in park"]);
    let refs = lines(&["the cat sat on the mat", "a dog runs in a park"]);
    let toks = |v: &[String]| v.iter().map(|s| words(s)).collect::<Vec<_>>();
    let refs_t = toks(&refs);
    let observed = (bleu4(&toks(&a), &refs_t).unwrap() - bleu4(&toks(&b), &refs_t).unwrap()).abs();
    let mut hits = 0;
    for mask in 0..4u32 {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for i in 0..2 {
            if mask >> i & 1 == 1 {
                x.push(b[i].clone());
                y.push(a[i].clone());
            } else {
                x.push(a[i].clone());
                y.push(b[i].clone());
            }
        }
        let d = (bleu4(&toks(&x), &refs_t).unwrap() - bleu4(&toks(&y), &refs_t).unwrap()).abs();
        if d >= observed {
            hits += 1;
        }
    }
    let oracle = hits as f64 / 4.0;
    assert_eq!(exact_randomization(Metric::Bleu, &a, &b, &refs).unwrap(), oracle);
    let approx = approx_randomization(Metric::Bleu, &a, &b, &refs, 20_000, 9).unwrap();
    assert!((approx.p_value - oracle).abs() < 0.02, "{} vs {oracle}", approx.p_value);
}
