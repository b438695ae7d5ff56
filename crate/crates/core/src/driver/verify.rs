//! Fast identity checks behind `corrugate verify`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::schedule::{beta_exponent, exponent_threshold};
use crate::basis::{PrimitiveBasis, SymMatrix, DEFAULT_DIRECTION_THRESHOLD};
use crate::corrugation::gamma;
use crate::error::Result;
use crate::fields::{self, GridDomain, ScalarField, SymField, VectorField};
use crate::ibp::{identity_residual, integrate_by_parts, IbpOptions};
use crate::step::{fd_identity_bound, frame, perturbation_parts, step_ordinary, StepOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

fn basis_roundtrip() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for n in 2..=4 {
        let b = PrimitiveBasis::new(n)?;
        let m = SymMatrix::from_fn(n, |i, j| {
            ((i + 1) as f64 * 0.37 + (j + 1) as f64 * 1.13).sin()
        });
        worst = worst.max(b.reconstruct(&b.coefficients(&m)).sub(&m).max_abs());
        for nu in b
            .directions()
            .iter()
            .filter(|nu| nu[0].abs() > DEFAULT_DIRECTION_THRESHOLD)
        {
            let map = b.psi_map(nu, DEFAULT_DIRECTION_THRESHOLD)?;
            worst = worst.max(map.phi(&map.psi(&m)).sub(&m).max_abs());
        }
    }
    Ok(worst)
}

fn corrugation_identity() -> Result<f64> {
    let (g1, g2) = (gamma(1)?.derivative(), gamma(2)?.derivative());
    Ok((0..1000)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / 1000.0;
            (2.0 * g1.value(t) + g2.value(t).powi(2) - 1.0).abs()
        })
        .fold(0.0, f64::max))
}

fn ibp_identity() -> Result<f64> {
    let b = PrimitiveBasis::new(2)?;
    let d = GridDomain::new(&[0.0, 0.0], &[1.0, 1.0], &[2049, 9])?;
    let m = SymField::from_fn(&d, 2, |x| {
        SymMatrix::sym_outer(&[1.0, 0.0], &[0.0, 1.0]).scaled((2.0 * PI * x[0]).sin())
    });
    let g = gamma(2)?;
    let r = integrate_by_parts(
        &m,
        &g,
        &[1.0, 0.0],
        64.0,
        2.0 * PI,
        2,
        &b,
        &IbpOptions::default(),
    )?;
    Ok(identity_residual(&r, &m, &g, &b)?.sup_norm())
}

/// Returns `(residual, fd bound)` for an ordinary step on a flat strip.
fn step_identity() -> Result<(f64, f64)> {
    let d = GridDomain::new(&[0.0, 0.0], &[1.0, 1.0], &[2049, 9])?;
    let u = VectorField::from_fn(&d, 3, |x, o| {
        o[0] = x[0];
        o[1] = x[1];
        o[2] = 0.0;
    });
    let a = ScalarField::from_fn(&d, |x| 1.0 + 0.2 * (2.0 * PI * x[0]).sin());
    let (lambda, nu) = (64.0, [1.0, 0.0]);
    let (delta, opts) = (0.1, StepOptions::default());
    let out = step_ordinary(&u, &a, &nu, lambda, delta, &opts)?;
    let res = fields::induced_metric(&out.v)?
        .sub(&out.expansion.rhs)
        .sup_norm();
    let (tan, nor) = perturbation_parts(&frame(&u, &opts)?, &a, &nu, lambda, delta, None, &opts)?;
    Ok((
        res,
        fd_identity_bound(&u, &tan, &nor, lambda, &nu)?.max(1e-8),
    ))
}

fn beta_arithmetic() -> f64 {
    let ok = [(2, 10), (3, 6)]
        .iter()
        .all(|&(n, j)| beta_exponent(n, j) < exponent_threshold(n));
    if ok {
        0.0
    } else {
        1.0
    }
}

/// Runs every check; all of them finish in a few seconds.
pub fn run_checks() -> Result<Vec<Check>> {
    let (step_res, step_tol) = step_identity()?;
    Ok(vec![
        Check::new("basis roundtrip", basis_roundtrip()?, 1e-12),
        Check::new("corrugation identity", corrugation_identity()?, 1e-12),
        Check::new("ibp identity (depth 2, lambda 64)", ibp_identity()?, 1e-6),
        Check::new("step metric identity (lambda 64)", step_res, step_tol),
        Check::new("beta below exponent threshold", beta_arithmetic(), 0.0),
    ])
}
