use degenctrl_core::coefficients::{AdmissibilitySample, DEFAULT_GRADING};
use degenctrl_core::*;
use proptest::prelude::*;

fn lattice() -> Vec<f64> {
    (0..8).map(|i| 0.25 * i as f64).collect()
}

// x k'/k for x^m1 (1-x)^m2, written out independently of the crate
fn ratio_oracle(m1: f64, m2: f64, x: f64) -> f64 {
    m1 - m2 * x / (1.0 - x)
}

#[test]
fn power_law_lattice_is_admissible_on_every_mesh() {
    for &m1 in &lattice() {
        for &m2 in &lattice() {
            let prof = power_law_profile(m1, m2).unwrap();
            for points in [50, 200, 800] {
                let mesh = validation_mesh(&prof, points, DEFAULT_GRADING);
                let rep = validate_profile(&prof, &mesh);
                assert!(rep.passed(), "({m1}, {m2}) on {points}: {:?}", rep.violations.first());
                for &x in &mesh {
                    let got = x * prof.k_prime(x) / prof.k(x);
                    let want = ratio_oracle(m1, m2, x);
                    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "({m1},{m2}) x={x}: {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn exponents_of_two_or_more_are_rejected() {
    for m in [2.0, 2.25, 2.5, 3.0] {
        assert!(matches!(power_law_profile(m, 0.0), Err(Error::ExponentOutOfRange { endpoint: 0, .. })));
        assert!(matches!(power_law_profile(0.0, m), Err(Error::ExponentOutOfRange { endpoint: 1, .. })));
    }
}

#[test]
fn wrong_claimed_exponent_is_caught() {
    let prof = power_law_profile(1.5, 0.0).unwrap().with_claimed_exponents(1.25, 0.0).unwrap();
    let mesh = validation_mesh(&prof, 200, DEFAULT_GRADING);
    assert!(validate_profile(&prof, &mesh).violated("x k' <= M1 k"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn class_flips_only_across_one(m_lo in 0.01f64..0.99, m_hi in 1.0f64..1.99, m2 in 0.0f64..1.99) {
        let lo = power_law_profile(m_lo, m2).unwrap();
        let hi = power_law_profile(m_hi, m2).unwrap();
        prop_assert_eq!(lo.class[0], EndpointClass::Weak);
        prop_assert_eq!(hi.class[0], EndpointClass::Strong);
        prop_assert_eq!(lo.class[1], hi.class[1]);
        let mesh = validation_mesh(&lo, 200, DEFAULT_GRADING);
        prop_assert!(validate_profile(&lo, &mesh).passed());
        let mesh = validation_mesh(&hi, 200, DEFAULT_GRADING);
        prop_assert!(validate_profile(&hi, &mesh).passed());
    }

    #[test]
    fn admissibility_grows_with_s(amp in 1e-3f64..1.0, width in 0.05f64..0.5, s1 in 1e-4f64..1e-2, f in 1.0f64..5.0) {
        let kernel = MemoryKernel::gaussian(amp, 0.5, width);
        let sample = AdmissibilitySample { nt: 8, ns: 4, na: 8, nx: 4 };
        let c1 = check_memory_admissibility(&kernel, s1, 0.7, 1.0, 1.0, sample);
        let c2 = check_memory_admissibility(&kernel, s1 * f, 0.7, 1.0, 1.0, sample);
        prop_assert!(c2 >= c1, "{} < {}", c2, c1);
    }
}
