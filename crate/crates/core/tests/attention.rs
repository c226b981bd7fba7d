use mmnmt::attention::*;
use mmnmt::{Tape, Tensor};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

struct Fixture {
    v: Tensor<f64>,
    u: Tensor<f64>,
    w: Tensor<f64>,
}

fn fixture(rng: &mut ChaCha8Rng, d_dec: usize, d_ann: usize, d_att: usize) -> Fixture {
    Fixture {
        v: random(rng, &[d_att, 1]),
        u: random(rng, &[d_dec, d_att]),
        w: random(rng, &[d_ann, d_att]),
    }
}

fn energies(f: &Fixture, s: &Tensor<f64>, ann: &Tensor<f64>) -> Vec<f64> {
    let tape = Tape::new();
    let p = AttentionParams {
        v: tape.constant(f.v.clone()),
        u: tape.constant(f.u.clone()),
        w: tape.constant(f.w.clone()),
    };
    let e = alignment_energies(&tape, &p, tape.constant(s.clone()), tape.constant(ann.clone())).unwrap();
    tape.value(e).data().to_vec()
}

#[test]
fn zero_v_gives_zero_energies() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut f = fixture(&mut rng, 3, 4, 5);
    f.v = Tensor::zeros(&[5, 1]);
    let e = energies(&f, &random(&mut rng, &[1, 3]), &random(&mut rng, &[6, 4]));
    assert_eq!(e, vec![0.0; 6]);
}

#[test]
fn identical_rows_identical_energies() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = fixture(&mut rng, 3, 4, 5);
    let row = random(&mut rng, &[1, 4]);
    let ann = Tensor::from_rows(&vec![row.data().to_vec(); 3]).unwrap();
    let e = energies(&f, &random(&mut rng, &[1, 3]), &ann);
    assert!(e.iter().all(|&x| x == e[0]));
}

#[test]
fn energies_match_per_row_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = fixture(&mut rng, 3, 4, 5);
    let s = random(&mut rng, &[1, 3]);
    let ann = random(&mut rng, &[3, 4]);
    let e = energies(&f, &s, &ann);
    for k in 0..3 {
        let mut total = 0.0;
        for j in 0..5 {
            let mut pre = 0.0;
            for i in 0..3 {
                pre += s.data()[i] * f.u.at(i, j);
            }
            for i in 0..4 {
                pre += ann.at(k, i) * f.w.at(i, j);
            }
            total += f.v.data()[j] * pre.tanh();
        }
        assert!((e[k] - total).abs() < 1e-12);
    }
}

fn softmax(e: &[f64]) -> Vec<f64> {
    let tape = Tape::new();
    let x = tape.constant(Tensor::row(e.to_vec()));
    tape.value(normalize_alignment(&tape, x).unwrap()).data().to_vec()
}

#[test]
fn normalisation_cases() {
    assert!(softmax(&[0.7; 4]).iter().all(|&w| (w - 0.25).abs() < 1e-15));
    let peaked = softmax(&[0.0, 20.0, 0.0]);
    assert!(peaked[1] > 0.999);
    let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
    for (w, k) in softmax(&[1.0, 2.0, 3.0]).iter().zip([1.0f64, 2.0, 3.0]) {
        assert!((w - k.exp() / z).abs() < 1e-15);
    }
}

fn context(alpha: &[f64], ann: &Tensor<f64>) -> Vec<f64> {
    let tape = Tape::new();
    let a = tape.constant(Tensor::row(alpha.to_vec()));
    tape.value(source_context(&tape, a, tape.constant(ann.clone())).unwrap()).data().to_vec()
}

#[test]
fn context_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let ann = random(&mut rng, &[3, 4]);
    assert_eq!(context(&[0.0, 1.0, 0.0], &ann), ann.row_slice(1));

    let row = random(&mut rng, &[1, 4]);
    let same = Tensor::from_rows(&vec![row.data().to_vec(); 3]).unwrap();
    for (a, b) in context(&[1.0 / 3.0; 3], &same).iter().zip(row.data()) {
        assert!((a - b).abs() < 1e-15);
    }

    let alpha = [0.2, 0.5, 0.3];
    let got = context(&alpha, &ann);
    for j in 0..4 {
        let expected: f64 = (0..3).map(|i| alpha[i] * ann.at(i, j)).sum();
        assert!((got[j] - expected).abs() < 1e-15);
    }
}

fn beta(w: Tensor<f64>, b: f64, s: Tensor<f64>) -> f64 {
    let tape = Tape::new();
    let p = GateParams {
        w: tape.constant(w),
        b: tape.constant(Tensor::scalar(b)),
    };
    tape.scalar(gate_beta(&tape, &p, tape.constant(s)).unwrap())
}

#[test]
fn gate_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = random(&mut rng, &[1, 4]);
    assert_eq!(beta(Tensor::zeros(&[4, 1]), 0.0, s.clone()), 0.5);
    assert!(beta(Tensor::zeros(&[4, 1]), 20.0, s.clone()) > 0.999);
    let w = random(&mut rng, &[4, 1]);
    let pre: f64 = s.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>() - 0.3;
    assert!((beta(w, -0.3, s) - 1.0 / (1.0 + (-pre).exp())).abs() < 1e-15);
}

fn img_ctx(b: f64, alpha: &[f64], feats: &Tensor<f64>) -> Vec<f64> {
    let tape = Tape::new();
    let out = image_context(
        &tape,
        tape.constant(Tensor::scalar(b)),
        tape.constant(Tensor::row(alpha.to_vec())),
        tape.constant(feats.clone()),
    )
    .unwrap();
    tape.value(out).data().to_vec()
}

#[test]
fn image_context_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let feats = random(&mut rng, &[4, 3]);
    assert_eq!(img_ctx(0.0, &[0.1, 0.2, 0.3, 0.4], &feats), vec![0.0; 3]);
    assert_eq!(img_ctx(1.0, &[0.0, 0.0, 1.0, 0.0], &feats), feats.row_slice(2));
    let alpha = [0.1, 0.2, 0.3, 0.4];
    let got = img_ctx(0.37, &alpha, &feats);
    for j in 0..3 {
        let e: f64 = 0.37 * (0..4).map(|l| alpha[l] * feats.at(l, j)).sum::<f64>();
        assert!((got[j] - e).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn permuting_rows_permutes_weights_and_keeps_context(seed in 0u64..1000, shift in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = fixture(&mut rng, 3, 4, 5);
        let s = random(&mut rng, &[1, 3]);
        let ann = random(&mut rng, &[5, 4]);
        let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
        let permuted = Tensor::from_rows(&perm.iter().map(|&i| ann.row_slice(i).to_vec()).collect::<Vec<_>>()).unwrap();

        let a = softmax(&energies(&f, &s, &ann));
        let b = softmax(&energies(&f, &s, &permuted));
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((b[k] - a[i]).abs() < 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ca = context(&a, &ann);
        let cb = context(&b, &permuted);
        for (x, y) in ca.iter().zip(&cb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn image_context_norm_is_bounded(seed in 0u64..1000, b in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = random(&mut rng, &[6, 4]);
        let alpha = softmax(&random(&mut rng, &[1, 6]).data().to_vec());
        let ctx = img_ctx(b, &alpha, &feats);
        let norm = ctx.iter().map(|x| x * x).sum::<f64>().sqrt();
        let max_row = (0..6).map(|l| feats.row_slice(l).iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
        prop_assert!(norm <= b * max_row + 1e-12);
    }
}
