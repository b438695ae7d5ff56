use corrugate::driver::schedule::{beta_exponent, exponent_threshold, Schedule};
use num_rational::Ratio;

// Reference values from a 50-digit evaluation of the closed forms for the
// default schedule (a = 4, b = 1.1, delta0 = 0.1, lambda0 = 1, K = 4, J = 3, n = 2).
const DELTA: [f64; 6] = [
    0.1,
    0.08705505632961241,
    0.07474246243174691,
    0.06320015492264032,
    0.052551359784019,
    0.042897931825702465,
];
const LAMBDA: [f64; 6] = [
    1.0,
    1.4810975522865648,
    2.281527431736849,
    3.6697115478822946,
    6.18983091291507,
    11.0009534849008,
];
const BIG_LAMBDA: [f64; 6] = [
    4.189176491282507,
    4.208579392802866,
    4.230026397934043,
    4.253744359993188,
    4.2799877477901065,
    4.309042516554434,
];

fn ulps(a: f64, b: f64) -> u64 {
    (a.to_bits() as i64 - b.to_bits() as i64).unsigned_abs()
}

#[test]
fn schedule_matches_extended_precision() {
    let s = Schedule::default();
    for q in 0..6 {
        assert!(ulps(s.delta(q), DELTA[q]) <= 1, "delta_{q}: {}", s.delta(q));
        assert!(
            ulps(s.lambda(2, q), LAMBDA[q]) <= 1,
            "lambda_{q}: {}",
            s.lambda(2, q)
        );
        assert!(
            ulps(s.big_lambda(q), BIG_LAMBDA[q]) <= 1,
            "Lambda_{q}: {}",
            s.big_lambda(q)
        );
    }
}

#[test]
fn beta_for_default_schedule() {
    assert_eq!(Schedule::default().beta(2), Ratio::new(3, 17));
    assert!(Schedule::default().beta(2) < exponent_threshold(2));
    assert_eq!(beta_exponent(2, 10), Ratio::new(10, 38));
}

#[test]
fn rejects_b_outside_window() {
    for b in [1.0, 1.25, 1.6] {
        let s = Schedule {
            b_exponent: b,
            ..Schedule::default()
        };
        assert!(s.validate(2).is_err(), "b = {b}");
    }
    let s = Schedule {
        alpha_target: 0.2,
        ..Schedule::default()
    };
    assert!(s.validate(2).is_err());
}
