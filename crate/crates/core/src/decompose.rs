//! Picard decomposition of a metric field near `h0` into primitive metrics
//! plus slow gradient corrections.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{packed_index, PrimitiveBasis};
use crate::corrugation::GAMMA2_SQUARE_MEAN;
use crate::error::{Error, Result};
use crate::fields::{self, GridField, ScalarField, SymField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KaellenOptions {
    /// Largest admissible `|H - h0|_inf`.
    pub nearness_threshold: f64,
    /// Smallest admissible `L_i(H - p)` before taking square roots.
    pub positivity_threshold: f64,
}

impl Default for KaellenOptions {
    fn default() -> Self {
        Self {
            nearness_threshold: 0.1,
            positivity_threshold: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KaellenResult {
    pub amplitudes: Vec<ScalarField>,
    /// `H - sum a_i^2 nu_i (x) nu_i - sum_l (cbar / lambda_l^2) grad a_l (x) grad a_l`.
    pub residual: SymField,
    pub iterations_used: usize,
    /// Sup norm of the residual after each round, starting with the initial one.
    pub residual_history: Vec<f64>,
    /// Measured `|DH|_0 / |H - mean H|_0`, floored at 1.
    pub frequency_scale: f64,
}

/// `L_j` applied node by node; one channel per direction.
pub fn coefficient_fields(basis: &PrimitiveBasis, h: &SymField) -> Vec<Vec<f64>> {
    let dual = basis.dual_coeffs();
    let chans = h.channels();
    (0..basis.n_star())
        .map(|j| {
            (0..h.domain().len())
                .into_par_iter()
                .map(|idx| {
                    chans
                        .iter()
                        .enumerate()
                        .map(|(k, c)| dual[(j, k)] * c[idx])
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// `sum_j c_j nu_j (x) nu_j` node by node.
pub fn primitive_sum(
    basis: &PrimitiveBasis,
    domain: &fields::GridDomain,
    coeffs: &[Vec<f64>],
) -> SymField {
    let n = basis.n();
    let mut out = SymField::zeros(domain, n).into_packed();
    for i in 0..n {
        for j in i..n {
            let k = packed_index(n, i, j);
            let weights: Vec<f64> = basis.directions().iter().map(|nu| nu[i] * nu[j]).collect();
            out[k].par_iter_mut().enumerate().for_each(|(idx, v)| {
                *v = coeffs.iter().zip(&weights).map(|(c, w)| w * c[idx]).sum();
            });
        }
    }
    SymField::from_raw(domain.clone(), n, out)
}

/// `|DH|_0 / |H - mean H|_0`, floored at 1.
pub fn frequency_scale(h: &SymField) -> Result<f64> {
    let mut grad: f64 = 0.0;
    let mut osc: f64 = 0.0;
    for c in h.channels() {
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        osc = osc.max(c.iter().fold(0.0, |m: f64, x| m.max((x - mean).abs())));
    }
    for channel in fields::gradients_of(h)? {
        for g in channel {
            grad = grad.max(g.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
        }
    }
    Ok(if osc > 0.0 {
        (grad / osc).max(1.0)
    } else {
        1.0
    })
}

fn sqrt_coefficients(coeffs: Vec<Vec<f64>>, sweep: usize, threshold: f64) -> Result<Vec<Vec<f64>>> {
    for (index, c) in coeffs.iter().enumerate() {
        if let Some(node) = c.par_iter().position_first(|v| !(*v >= threshold)) {
            return Err(Error::NegativeCoefficient {
                sweep,
                index,
                node,
                value: c[node],
            });
        }
    }
    Ok(coeffs
        .into_iter()
        .map(|c| c.into_par_iter().map(f64::sqrt).collect())
        .collect())
}

/// `sum_{l < n} (cbar / lambda_l^2) grad a_l (x) grad a_l`.
fn gradient_term(
    domain: &fields::GridDomain,
    n: usize,
    amps: &[Vec<f64>],
    lambdas: &[f64],
) -> SymField {
    let grads: Vec<Vec<Vec<f64>>> = amps[..n]
        .iter()
        .map(|a| {
            (0..n)
                .map(|k| fields::diff_channel(domain, a, k, 1))
                .collect()
        })
        .collect();
    let mut out = SymField::zeros(domain, n).into_packed();
    for i in 0..n {
        for j in i..n {
            let k = packed_index(n, i, j);
            out[k].par_iter_mut().enumerate().for_each(|(idx, v)| {
                *v = grads
                    .iter()
                    .zip(lambdas)
                    .map(|(g, lam)| GAMMA2_SQUARE_MEAN / (lam * lam) * g[i][idx] * g[j][idx])
                    .sum();
            });
        }
    }
    SymField::from_raw(domain.clone(), n, out)
}

/// Runs `sweeps + 1` rounds of `a_i = sqrt(L_i(H - p(a)))` starting from
/// `p = 0`, with the residual obtained by substituting the final amplitudes.
pub fn kaellen_decompose(
    h: &SymField,
    lambdas: &[f64],
    sweeps: usize,
    basis: &PrimitiveBasis,
    options: &KaellenOptions,
) -> Result<KaellenResult> {
    let n = basis.n();
    let domain = h.domain().clone();
    if h.dim() != n || domain.dim() != n {
        return Err(Error::Dimension(format!(
            "H must be a Sym_{n} field on an {n}-dimensional grid"
        )));
    }
    if lambdas.len() != n {
        return Err(Error::Dimension(format!(
            "{} frequencies for {n} gradient terms",
            lambdas.len()
        )));
    }
    if lambdas.windows(2).any(|w| w[0] > w[1]) || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::Param(format!(
            "frequencies {lambdas:?} must be positive and nondecreasing"
        )));
    }
    h.check_finite()?;
    fields::check_stencil(&domain)?;
    let distance = h.sub_constant(basis.h0()).sup_norm();
    if distance > options.nearness_threshold {
        return Err(Error::NearH0Violation {
            distance,
            threshold: options.nearness_threshold,
        });
    }

    let residual_of = |amps: &[Vec<f64>], p: &SymField| {
        let squares: Vec<Vec<f64>> = amps
            .iter()
            .map(|a| a.par_iter().map(|x| x * x).collect())
            .collect();
        h.sub(&primitive_sum(basis, &domain, &squares)).sub(p)
    };

    let mut amps = sqrt_coefficients(
        coefficient_fields(basis, h),
        0,
        options.positivity_threshold,
    )?;
    let mut p = gradient_term(&domain, n, &amps, lambdas);
    let mut history = vec![residual_of(&amps, &p).sup_norm()];
    for sweep in 1..=sweeps {
        amps = sqrt_coefficients(
            coefficient_fields(basis, &h.sub(&p)),
            sweep,
            options.positivity_threshold,
        )?;
        p = gradient_term(&domain, n, &amps, lambdas);
        history.push(residual_of(&amps, &p).sup_norm());
    }
    let residual = residual_of(&amps, &p);
    log::debug!("kaellen residual history {history:?}");
    Ok(KaellenResult {
        amplitudes: amps
            .into_iter()
            .map(|a| ScalarField::from_raw(domain.clone(), a))
            .collect(),
        residual,
        iterations_used: sweeps,
        residual_history: history,
        frequency_scale: frequency_scale(h)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::SymMatrix;
    use crate::fields::GridDomain;
    use std::f64::consts::PI;

    fn grid() -> GridDomain {
        GridDomain::new(&[0.0, 0.0], &[1.0, 1.0], &[257, 9]).unwrap()
    }

    #[test]
    fn constant_h0_is_trivial() {
        let b = PrimitiveBasis::new(2).unwrap();
        let h = SymField::constant(&grid(), b.h0());
        let r = kaellen_decompose(&h, &[40.0, 80.0], 3, &b, &KaellenOptions::default()).unwrap();
        for a in &r.amplitudes {
            assert!(a.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
        assert!(r.residual.sup_norm() < 1e-12);
        assert_eq!(r.residual_history.len(), 4);
    }

    #[test]
    fn far_from_h0_rejected() {
        let b = PrimitiveBasis::new(2).unwrap();
        let h = SymField::constant(&grid(), &b.h0().scaled(2.0));
        let err = kaellen_decompose(&h, &[40.0, 80.0], 1, &b, &KaellenOptions::default());
        assert!(matches!(err, Err(Error::NearH0Violation { .. })));
    }

    #[test]
    fn sinusoidal_residual_decays() {
        let b = PrimitiveBasis::new(2).unwrap();
        let h0 = b.h0().clone();
        let h = SymField::from_fn(&grid(), 2, |x| {
            h0.add(&SymMatrix::outer(&[1.0, 0.0]).scaled(0.05 * (2.0 * PI * x[0]).sin()))
        });
        let r = kaellen_decompose(&h, &[40.0, 80.0], 3, &b, &KaellenOptions::default()).unwrap();
        let bound = 4.0 * (r.frequency_scale / 40.0).powi(2);
        assert!((r.frequency_scale - 2.0 * PI).abs() < 0.05);
        for w in r.residual_history.windows(2) {
            assert!(w[1] <= bound * w[0], "history {:?}", r.residual_history);
        }
        let floor = 0.5 * b.positivity_radius().sqrt();
        assert!(r
            .amplitudes
            .iter()
            .all(|a| a.values().iter().all(|v| *v >= floor)));
    }

    #[test]
    fn identity_holds_by_substitution() {
        let b = PrimitiveBasis::new(2).unwrap();
        let h0 = b.h0().clone();
        let h = SymField::from_fn(&grid(), 2, |x| {
            h0.add(&SymMatrix::identity(2).scaled(0.03 * (2.0 * PI * x[0]).cos()))
        });
        let lams = [20.0, 30.0];
        let r = kaellen_decompose(&h, &lams, 2, &b, &KaellenOptions::default()).unwrap();
        let amps: Vec<Vec<f64>> = r.amplitudes.iter().map(|a| a.values().to_vec()).collect();
        let squares: Vec<Vec<f64>> = amps
            .iter()
            .map(|a| a.iter().map(|x| x * x).collect())
            .collect();
        let recon = primitive_sum(&b, h.domain(), &squares)
            .add(&gradient_term(h.domain(), 2, &amps, &lams))
            .add(&r.residual);
        assert!(recon.sub(&h).sup_norm() < 1e-14);
    }
}
