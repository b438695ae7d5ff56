//! `2 pi`-periodic corrugation profiles as finite trigonometric polynomials.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest mean accepted by [`CorrugationProfile::antiderivative`].
pub const MEAN_TOLERANCE: f64 = 1e-12;

/// Period average of `gamma_2^2`; the constant subtracted in `gamma_4` and
/// carried by the slow gradient term of the decomposition.
pub const GAMMA2_SQUARE_MEAN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub freq: u32,
    pub cos: f64,
    pub sin: f64,
}

/// `c + sum_k (a_k cos(k t) + b_k sin(k t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrugationProfile {
    constant: f64,
    modes: Vec<Mode>,
}

impl CorrugationProfile {
    pub fn new(constant: f64, modes: Vec<Mode>) -> Self {
        Self { constant, modes }
    }

    pub fn sine(freq: u32, amp: f64) -> Self {
        Self::new(
            0.0,
            vec![Mode {
                freq,
                cos: 0.0,
                sin: amp,
            }],
        )
    }

    pub fn cosine(freq: u32, amp: f64) -> Self {
        Self::new(
            0.0,
            vec![Mode {
                freq,
                cos: amp,
                sin: 0.0,
            }],
        )
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mean(&self) -> f64 {
        self.constant
    }

    pub fn value(&self, t: f64) -> f64 {
        self.modes.iter().fold(self.constant, |acc, m| {
            let (s, c) = (m.freq as f64 * t).sin_cos();
            acc + m.cos * c + m.sin * s
        })
    }

    pub fn derivative(&self) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let k = m.freq as f64;
                Mode {
                    freq: m.freq,
                    cos: k * m.sin,
                    sin: -k * m.cos,
                }
            })
            .collect();
        Self::new(0.0, modes)
    }

    pub fn derivative_value(&self, t: f64) -> f64 {
        self.derivative().value(t)
    }

    /// Mean of the square over one period.
    pub fn mean_square(&self) -> f64 {
        self.constant * self.constant
            + self
                .modes
                .iter()
                .map(|m| 0.5 * (m.cos * m.cos + m.sin * m.sin))
                .sum::<f64>()
    }

    /// `sum |coefficients|`, an upper bound of the sup norm.
    pub fn sup_bound(&self) -> f64 {
        self.constant.abs() + self.modes.iter().map(|m| m.cos.hypot(m.sin)).sum::<f64>()
    }

    /// The periodic antiderivative with zero mean.
    pub fn antiderivative(&self) -> Result<Self> {
        if self.constant.abs() > MEAN_TOLERANCE {
            return Err(Error::Mean {
                mean: self.constant,
                tolerance: MEAN_TOLERANCE,
            });
        }
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let k = m.freq as f64;
                Mode {
                    freq: m.freq,
                    cos: -m.sin / k,
                    sin: m.cos / k,
                }
            })
            .collect();
        Ok(Self::new(0.0, modes))
    }

    /// `[p, p^1, ..., p^depth]` with `p^{k+1}` the zero-mean antiderivative of `p^k`.
    pub fn antiderivative_chain(&self, depth: usize) -> Result<Vec<Self>> {
        let mut chain = vec![self.clone()];
        for _ in 0..depth {
            let next = chain
                .last()
                .expect("chain starts non-empty")
                .antiderivative()?;
            chain.push(next);
        }
        Ok(chain)
    }
}

/// The four corrugation profiles, `k = 1..=4`.
pub fn gamma(k: usize) -> Result<CorrugationProfile> {
    match k {
        1 => Ok(CorrugationProfile::sine(2, -0.25)),
        2 => Ok(CorrugationProfile::sine(1, std::f64::consts::SQRT_2)),
        3 => Ok(CorrugationProfile::sine(2, 1.0)),
        4 => Ok(CorrugationProfile::cosine(2, -1.0)),
        _ => Err(Error::Index(k)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, SQRT_2};

    fn g(k: usize) -> CorrugationProfile {
        gamma(k).unwrap()
    }

    #[test]
    fn gamma1_at_quarter_pi() {
        assert!((g(1).value(PI / 4.0) + 0.25).abs() < 1e-16);
    }

    #[test]
    fn inclusion_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (d1, d2) = (g(1).derivative(), g(2).derivative());
        for _ in 0..1000 {
            let t: f64 = rng.random_range(-50.0..50.0);
            let lhs = 2.0 * d1.value(t) + d2.value(t).powi(2);
            assert!((lhs - 1.0).abs() <= 1e-14, "t = {t}");
        }
    }

    #[test]
    fn gamma4_and_products() {
        assert!((g(4).value(0.0) + 1.0).abs() < 1e-16);
        let mean_sq: f64 = (0..4096)
            .map(|i| g(2).value(2.0 * PI * i as f64 / 4096.0).powi(2))
            .sum::<f64>()
            / 4096.0;
        assert!((mean_sq - GAMMA2_SQUARE_MEAN).abs() < 1e-14);
        assert!((g(2).mean_square() - GAMMA2_SQUARE_MEAN).abs() < 1e-15);
        let d2 = g(2).derivative();
        for i in 0..100 {
            let t = 0.137 * i as f64;
            let v2 = g(2).value(t);
            assert!((g(3).value(t) - v2 * d2.value(t)).abs() < 1e-14);
            assert!((g(4).value(t) - (v2 * v2 - GAMMA2_SQUARE_MEAN)).abs() < 1e-14);
        }
    }

    #[test]
    fn bad_index() {
        assert_eq!(gamma(0), Err(Error::Index(0)));
        assert_eq!(gamma(5), Err(Error::Index(5)));
    }

    #[test]
    fn antiderivative_examples() {
        for t in [0.0, 0.3, 1.7, -2.2] {
            let a1 = g(1).antiderivative().unwrap();
            assert!((a1.value(t) - (2.0 * t).cos() / 8.0).abs() < 1e-15);
            let a2 = g(2).antiderivative().unwrap();
            assert!((a2.value(t) + SQRT_2 * t.cos()).abs() < 1e-15);
            let a4 = g(4).antiderivative().unwrap();
            assert!((a4.value(t) + (2.0 * t).sin() / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn nonzero_mean_rejected() {
        let p = CorrugationProfile::new(0.1, vec![]);
        assert!(matches!(p.antiderivative(), Err(Error::Mean { .. })));
    }

    #[test]
    fn chains_stay_periodic_and_bounded() {
        for k in 1..=4 {
            let chain = g(k).antiderivative_chain(12).unwrap();
            let base = chain[0].sup_bound();
            for w in chain.windows(2) {
                let (p, q) = (&w[0], &w[1]);
                let quad: f64 = (0..4096)
                    .map(|i| q.value(2.0 * PI * i as f64 / 4096.0))
                    .sum::<f64>()
                    / 4096.0;
                assert!(quad.abs() <= 1e-13);
                assert!(q.sup_bound() <= base + 1e-15);
                let mut err: f64 = 0.0;
                for i in 0..200 {
                    let t = 0.0317 * i as f64;
                    err = err.max((q.derivative_value(t) - p.value(t)).abs());
                    assert!((q.value(t + 2.0 * PI) - q.value(t)).abs() < 1e-12);
                }
                assert!(err <= 1e-9);
            }
        }
    }
}
