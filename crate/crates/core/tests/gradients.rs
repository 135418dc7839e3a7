//! Analytic gradients against central finite differences in f64.

mod common;

use common::gradcheck::{self, Worst, TOL};

fn check(run: fn(&mut Worst)) {
    let mut worst = Worst::default();
    run(&mut worst);
    for (what, e) in worst.0 {
        assert!(e < TOL, "{what}: relative error {e:e}");
    }
}

#[test]
fn conv2d() {
    check(gradcheck::conv2d);
}

#[test]
fn maxpool() {
    check(gradcheck::maxpool);
}

#[test]
fn relu() {
    check(gradcheck::relu);
}

#[test]
fn flatten() {
    check(gradcheck::flatten);
}

#[test]
fn pad_crop() {
    check(gradcheck::pad_crop);
}

#[test]
fn fully_connected() {
    check(gradcheck::fully_connected);
}

#[test]
fn softmax_cross_entropy() {
    check(gradcheck::softmax_cross_entropy);
}

#[test]
fn whole_network() {
    check(gradcheck::whole_network);
}
