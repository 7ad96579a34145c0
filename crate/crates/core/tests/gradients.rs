mod common;

use common::*;
use spamgraph::autodiff::Tape;
use spamgraph::model::{record_forward, ForwardInputs};
use spamgraph::tensor::Matrix;
use spamgraph::trainer::loss_and_gradients;

#[test]
fn every_tensor_matches_finite_differences() {
    let inst = six_node_instance(17);
    for (name, err) in gradient_errors(&inst, 1e-3, 1e-3) {
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}

#[test]
fn unused_risk_rows_get_zero_gradient() {
    let mut inst = six_node_instance(3);
    inst.risk = vec![2; 6];
    let x = to_embedding(&inst.x);
    let risk = risk_of(&inst.risk);
    let inputs = ForwardInputs {
        embeddings: &x,
        features: None,
        risk: &risk,
        graph: &inst.graph,
    };
    let (_, g) = loss_and_gradients(&inst.params, &inst.cfg, inputs, &inst.batch, &inst.targets).unwrap();
    assert!(g.risk_table.row(0).iter().all(|v| *v == 0.0));
    assert!(g.risk_table.row(1).iter().all(|v| *v == 0.0));
    assert!(g.risk_table.row(2).iter().any(|v| *v != 0.0));
}

#[test]
fn doubling_the_loss_doubles_gradients() {
    let inst = six_node_instance(8);
    let x = to_embedding(&inst.x);
    let risk = risk_of(&inst.risk);
    let inputs = ForwardInputs {
        embeddings: &x,
        features: None,
        risk: &risk,
        graph: &inst.graph,
    };
    let grads_for = |factor: f64| {
        let mut tape = Tape::new();
        let trace = record_forward(&mut tape, &inst.params, &inst.cfg, inputs).unwrap();
        let loss = tape.bce(trace.probabilities, inst.batch.clone(), inst.targets.clone());
        let scaled = tape.scale(loss, factor);
        let g = tape.backward(scaled);
        trace
            .params
            .vars()
            .into_iter()
            .map(|v| g.wrt(&tape, v))
            .collect::<Vec<Matrix<f64>>>()
    };
    let one = grads_for(1.0);
    let two = grads_for(2.0);
    for (a, b) in one.iter().zip(&two) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(2.0 * x, *y);
        }
    }
}

#[test]
fn nan_input_is_reported() {
    let inst = six_node_instance(2);
    let mut params = inst.params.clone();
    params.mlp_output.data_mut()[0] = f64::NAN;
    let x = to_embedding(&inst.x);
    let risk = risk_of(&inst.risk);
    let inputs = ForwardInputs {
        embeddings: &x,
        features: None,
        risk: &risk,
        graph: &inst.graph,
    };
    assert!(loss_and_gradients(&params, &inst.cfg, inputs, &inst.batch, &inst.targets).is_err());
}
