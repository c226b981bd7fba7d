use mmnmt::gradcheck::{grad_check, GradCheckError};
use mmnmt::{ParamSet, Tensor};

#[test]
fn quadratic() {
    let mut p = ParamSet::<f64>::new();
    let w = p.insert("w", Tensor::scalar(3.0)).unwrap();
    let r = grad_check(&p, 1e-5, |t, p| {
        let v = t.param(p, w);
        t.mul(v, v)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-9, "{r:?}");
}

#[test]
fn rejects_single_precision() {
    let p = ParamSet::<f32>::new();
    let r = grad_check(&p, 1e-3, |t, _| Ok(t.constant(Tensor::scalar(0.0))));
    assert_eq!(r.unwrap_err(), GradCheckError::Precision("f32"));
}

#[test]
fn corrupted_backward_rule_is_detected() {
    let mut p = ParamSet::<f64>::new();
    let w = p
        .insert("w", Tensor::from_f64(&[1, 3], &[0.4, -0.7, 1.1]).unwrap())
        .unwrap();
    // tanh forward with the sigmoid-style derivative x(1−x) on the input
    let r = grad_check(&p, 1e-5, |t, p| {
        let v = t.param(p, w);
        let y = t.custom_unary(v, f64::tanh, |x| x * (1.0 - x))?;
        t.sum(y)
    })
    .unwrap();
    assert!(r.max_rel_error > 1e-2, "{r:?}");
}

#[test]
fn names_the_offending_parameter() {
    let mut p = ParamSet::<f64>::new();
    let w = p.insert("w", Tensor::scalar(707.0)).unwrap();
    let r = grad_check(&p, 5.0, |t, p| {
        let v = t.param(p, w);
        t.custom_unary(v, f64::exp, f64::exp)
    });
    assert!(matches!(r, Err(GradCheckError::NonFinite { ref param, .. }) if param == "w"), "{r:?}");
}
