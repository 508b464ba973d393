mod common;

use common::*;
use degenctrl_core::scenarios::suite;

fn check(study: Study, adjoint: bool) {
    let levels: &[(usize, usize)] = match study {
        Study::Space => &SPACE_LEVELS,
        Study::Time => &TIME_LEVELS,
    };
    for sc in suite() {
        let errs: Vec<f64> = levels
            .iter()
            .map(|&(nx, na)| {
                if adjoint {
                    adjoint_mms_error(&sc.profile, study, nx, na)
                } else {
                    forward_mms_error(&sc.profile, study, nx, na)
                }
            })
            .collect();
        let orders = observed_orders(&errs);
        assert!(orders.iter().all(|&p| p >= 0.9), "{} {:?} adjoint={adjoint}: errors {errs:?}, orders {orders:?}", sc.name, study);
    }
}

#[test]
fn forward_space_order() {
    check(Study::Space, false);
}

#[test]
fn forward_time_order() {
    check(Study::Time, false);
}

#[test]
fn adjoint_space_order() {
    check(Study::Space, true);
}

#[test]
fn adjoint_time_order() {
    check(Study::Time, true);
}

#[test]
fn characteristic_formula_agrees_at_first_order() {
    for sc in suite() {
        let errs: Vec<f64> = FORMULA_LEVELS.iter().map(|&na| formula_disagreement(&sc, na)).collect();
        for w in errs.windows(2) {
            let r = w[0] / w[1];
            assert!((1.7..=2.3).contains(&r), "{}: errors {errs:?}", sc.name);
        }
    }
}
