//! Every differentiable primitive checked against central differences in f64.

use corrnet_core::autograd::{primitive_checks, GradCheckOptions, Graph, ParamStore};
use corrnet_core::tensor::ops::NormMode;
use corrnet_core::Tensor;

const TOL: f64 = 1e-6;

#[test]
fn every_primitive_matches_central_differences() {
    let results = primitive_checks(&GradCheckOptions::default(), None).unwrap();
    assert!(results.len() >= 30);
    let failures: Vec<String> = results
        .iter()
        .filter(|r| !r.passed(TOL))
        .map(|r| {
            format!(
                "{}: {:e} at {:?}",
                r.name,
                r.report.max_rel_err(),
                r.report.worst()
            )
        })
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
    for r in &results {
        assert!(r.report.checked() > 0, "{} checked nothing", r.name);
    }
}

#[test]
fn a_cut_backward_is_reported_by_name() {
    let results = primitive_checks(&GradCheckOptions::default(), Some("conv2d/dilated")).unwrap();
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed(TOL))
        .map(|r| r.name.as_str())
        .collect();
    assert_eq!(failed, ["conv2d/dilated"]);
    let worst = results
        .iter()
        .find(|r| r.name == "conv2d/dilated")
        .unwrap()
        .report
        .worst()
        .unwrap();
    assert_eq!(worst.name, "p0");
    assert_eq!(worst.worst.1, 0.0);
    assert!(primitive_checks(&GradCheckOptions::default(), Some("no_such_op")).is_err());
}

#[test]
fn fan_out_doubles_gradient() {
    let mut store = ParamStore::<f64>::new();
    let w = store
        .add_param("w", Tensor::from_vec(vec![1.0, 2.0, 3.0]))
        .unwrap();
    let x = Tensor::from_vec(vec![0.5, -1.0, 4.0]);
    let mut g = Graph::new(&store, NormMode::Train);
    let wv = g.param(w);
    let xv = g.input(x.clone());
    let a = g.mul(wv, xv).unwrap();
    let b = g.mul(wv, xv).unwrap();
    let s = g.add(a, b).unwrap();
    let loss = g.sum(s).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &[1.0, -2.0, 8.0]);
}

#[test]
fn unreachable_parameter_keeps_zero_grad() {
    let mut store = ParamStore::<f64>::new();
    let w = store
        .add_param("w", Tensor::from_vec(vec![1.0, 2.0]))
        .unwrap();
    let unused = store
        .add_param("unused", Tensor::from_vec(vec![5.0]))
        .unwrap();
    let grads = {
        let mut g = Graph::new(&store, NormMode::Train);
        let wv = g.param(w);
        let loss = g.sum(wv).unwrap();
        g.backward(loss).unwrap()
    };
    assert!(grads.get(unused).is_none());
    store.accumulate(&grads);
    assert_eq!(store.param(unused).grad.data(), &[0.0]);
    assert_eq!(store.param(w).grad.data(), &[1.0, 1.0]);
}

#[test]
fn backward_without_forward_fails() {
    let store = ParamStore::<f64>::new();
    let mut other = ParamStore::<f64>::new();
    let id = other.add_param("w", Tensor::from_vec(vec![1.0])).unwrap();
    let mut scratch = Graph::new(&other, NormMode::Train);
    let v = scratch.param(id);
    let g = Graph::new(&store, NormMode::Train);
    assert!(g.backward(v).is_err());
}

#[test]
fn backward_requires_scalar_loss() {
    let mut store = ParamStore::<f64>::new();
    let w = store
        .add_param("w", Tensor::from_vec(vec![1.0, 2.0]))
        .unwrap();
    let mut g = Graph::new(&store, NormMode::Train);
    let wv = g.param(w);
    let y = g.scale(wv, 2.0).unwrap();
    assert!(g.backward(y).is_err());
}
