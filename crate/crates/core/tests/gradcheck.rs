mod common;

use common::gradcheck::{self, Worst, TOL};

fn assert_ok(w: Worst) {
    assert!(w.checked > 0);
    assert!(w.err < TOL, "relative error {} at {}", w.err, w.at);
}

#[test]
fn elementwise_primitives() {
    assert_ok(gradcheck::elementwise_primitives());
}

#[test]
fn matrix_primitives() {
    assert_ok(gradcheck::matrix_primitives());
}

#[test]
fn softmax_family() {
    assert_ok(gradcheck::softmax_family());
}

#[test]
fn causal_attention() {
    assert_ok(gradcheck::causal_attention());
}

#[test]
fn two_layer_transformer_clm_loss() {
    assert_ok(gradcheck::two_layer_transformer_clm_loss());
}

#[test]
fn every_transformer_parameter_tensor_gets_checked() {
    assert_ok(gradcheck::every_parameter_tensor());
}

#[test]
fn two_layer_transformer_ppo_loss() {
    assert_ok(gradcheck::two_layer_transformer_ppo_loss());
}
