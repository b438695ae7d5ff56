use astro_float_num::{BigFloat, Consts, RoundingMode};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-stage schedule
/// `delta_q = delta0 a^{1 - b^q}`, `lambda_q = lambda0 a^{(b^q - 1)/(2 beta)}`,
/// `Lambda_q = K (delta_q / delta_{q+1})^{1/J}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub delta0: f64,
    pub lambda0: f64,
    /// The growth base `a`.
    pub growth_base: f64,
    /// The exponent `b`, `1 < b < 1 + tau/2`.
    pub b_exponent: f64,
    pub tau: f64,
    pub depth: usize,
    pub k_factor: f64,
    /// Hölder exponent the schedule is meant to reach; must lie below beta.
    pub alpha_target: f64,
    pub stages: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            delta0: 0.1,
            lambda0: 1.0,
            growth_base: 4.0,
            b_exponent: 1.1,
            tau: 0.5,
            depth: 3,
            k_factor: 4.0,
            alpha_target: 0.1,
            stages: 3,
        }
    }
}

/// `beta = J / (J (1 + 2 (n_star - n)) + 4 n)`.
pub fn beta_exponent(n: usize, depth: usize) -> Ratio<i64> {
    let n_star = n * (n + 1) / 2;
    let j = depth as i64;
    Ratio::new(j, j * (1 + 2 * (n_star - n) as i64) + 4 * n as i64)
}

/// `1 / (1 + n^2 - n)`, the exponent threshold of the construction.
pub fn exponent_threshold(n: usize) -> Ratio<i64> {
    let n = n as i64;
    Ratio::new(1, 1 + n * n - n)
}

fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Working precision for the schedule formulas, in bits.
const PRECISION: usize = 192;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, PRECISION)
}

/// Rounds to the nearest double through a long decimal expansion.
fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().unwrap_or(f64::NAN)
}

fn consts() -> Consts {
    Consts::new().expect("constant cache allocation")
}

impl Schedule {
    pub fn beta(&self, n: usize) -> Ratio<i64> {
        beta_exponent(n, self.depth)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Param(format!("tau = {} outside (0, 1)", self.tau)));
        }
        if !(self.b_exponent > 1.0 && self.b_exponent < 1.0 + self.tau / 2.0) {
            return Err(Error::Param(format!(
                "b = {} must satisfy 1 < b < 1 + tau/2 = {}",
                self.b_exponent,
                1.0 + self.tau / 2.0
            )));
        }
        if self.depth == 0 {
            return Err(Error::Param("J must be at least 1".into()));
        }
        let beta = ratio_to_f64(self.beta(n));
        if !(self.alpha_target > 0.0 && self.alpha_target < beta) {
            return Err(Error::Param(format!(
                "alpha_target = {} must lie in (0, beta = {beta})",
                self.alpha_target
            )));
        }
        for (name, v) in [
            ("delta0", self.delta0),
            ("lambda0", self.lambda0),
            ("k_factor", self.k_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.growth_base > 1.0) {
            return Err(Error::Param(format!(
                "growth base a = {} must exceed 1",
                self.growth_base
            )));
        }
        Ok(())
    }

    fn a_pow(&self, e: &BigFloat, cc: &mut Consts) -> BigFloat {
        e.mul(&big(self.growth_base).ln(PRECISION, RM, cc), PRECISION, RM)
            .exp(PRECISION, RM, cc)
    }

    fn b_pow(&self, q: usize) -> BigFloat {
        big(self.b_exponent).powi(q, PRECISION, RM)
    }

    /// `delta_q`, evaluated in extended precision and rounded once.
    pub fn delta(&self, q: usize) -> f64 {
        let mut cc = consts();
        let e = big(1.0).sub(&self.b_pow(q), PRECISION, RM);
        to_f64(&big(self.delta0).mul(&self.a_pow(&e, &mut cc), PRECISION, RM))
    }

    /// `lambda_q` for the given dimension, evaluated in extended precision.
    pub fn lambda(&self, n: usize, q: usize) -> f64 {
        let mut cc = consts();
        let beta = self.beta(n);
        let e = self
            .b_pow(q)
            .sub(&big(1.0), PRECISION, RM)
            .mul(&big(*beta.denom() as f64), PRECISION, RM)
            .div(&big(2.0 * *beta.numer() as f64), PRECISION, RM);
        to_f64(&big(self.lambda0).mul(&self.a_pow(&e, &mut cc), PRECISION, RM))
    }

    /// `Lambda_q = K (delta_q / delta_{q+1})^{1/J}`.
    pub fn big_lambda(&self, q: usize) -> f64 {
        let mut cc = consts();
        // delta_q / delta_{q+1} = a^{b^{q+1} - b^q}.
        let e = self.b_pow(q + 1).sub(&self.b_pow(q), PRECISION, RM).div(
            &big(self.depth as f64),
            PRECISION,
            RM,
        );
        to_f64(&big(self.k_factor).mul(&self.a_pow(&e, &mut cc), PRECISION, RM))
    }

    /// `2^{-q} eta0`.
    pub fn eta(&self, eta0: f64, q: usize) -> f64 {
        eta0 * 0.5f64.powi(q as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_values() {
        assert_eq!(beta_exponent(2, 10), Ratio::new(5, 19));
        assert_eq!(beta_exponent(2, 10), Ratio::new(10, 38));
        assert_eq!(beta_exponent(3, 6), Ratio::new(1, 9));
        assert!(beta_exponent(2, 10) < exponent_threshold(2));
        assert!(beta_exponent(3, 6) < exponent_threshold(3));
        assert_eq!(exponent_threshold(2), Ratio::new(1, 3));
    }

    #[test]
    fn b_guard() {
        let s = Schedule {
            b_exponent: 1.6,
            tau: 0.5,
            ..Schedule::default()
        };
        assert!(matches!(s.validate(2), Err(Error::Param(_))));
        assert!(Schedule::default().validate(2).is_ok());
    }

    #[test]
    fn monotone() {
        let s = Schedule::default();
        for q in 0..5 {
            assert!(s.delta(q + 1) < s.delta(q));
            assert!(s.lambda(2, q + 1) > s.lambda(2, q));
        }
        assert_eq!(s.delta(0), s.delta0);
        assert_eq!(s.lambda(2, 0), s.lambda0);
    }
}
