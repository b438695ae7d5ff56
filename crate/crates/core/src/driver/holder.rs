//! Empirical Hölder exponent of a sequence of iterates.
//!
//! Protocol: all iterates are restricted to the domain of the last one. For
//! each requested `alpha` the increment `u_{q+1} - u_q` is measured in
//! `C^{1,alpha}` as `|d|_{C^1} + [Dd]_alpha`, with the seminorm taken as the
//! dyadic-pair lower bound of the fields module. `alpha_hat` is the largest
//! `alpha` whose consecutive increment ratios all stay below
//! [`SUMMABILITY_RATIO`]. This is an estimate, not a membership proof.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{self, holder_seminorm_channels, restrict, GridField, VectorField};

pub const SUMMABILITY_RATIO: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderRow {
    pub alpha: f64,
    /// Dyadic estimate of `[Du_Q]_alpha`.
    pub seminorm: f64,
    /// `|u_{q+1} - u_q|_{C^{1,alpha}}` for each consecutive pair.
    pub increments: Vec<f64>,
    pub summable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderTable {
    pub rows: Vec<HolderRow>,
    /// `None` when fewer than two iterates are given.
    pub alpha_hat: Option<f64>,
}

fn looks_summable(increments: &[f64]) -> bool {
    increments.windows(2).all(|w| {
        if w[0] == 0.0 {
            w[1] == 0.0
        } else {
            w[1] / w[0] < SUMMABILITY_RATIO
        }
    })
}

pub fn estimate_holder(iterates: &[VectorField], alphas: &[f64]) -> Result<HolderTable> {
    let last = iterates
        .last()
        .ok_or_else(|| Error::Param("Hölder estimate needs at least one iterate".into()))?;
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(Error::Param(format!("Hölder exponent {a} outside (0, 1]")));
    }
    let domain = last.domain();
    let du_last = fields::jacobian(last)?;
    let restricted: Vec<VectorField> = iterates
        .iter()
        .map(|u| restrict(u, domain))
        .collect::<Result<_>>()?;
    let mut c1 = Vec::new();
    let mut d_incr = Vec::new();
    for pair in restricted.windows(2) {
        let d = pair[1].sub(&pair[0]);
        c1.push(fields::ck_norm(&d, 1)?);
        d_incr.push(fields::jacobian(&d)?);
    }
    let rows: Vec<HolderRow> = alphas
        .iter()
        .map(|&alpha| {
            let increments: Vec<f64> = c1
                .iter()
                .zip(&d_incr)
                .map(|(c, dd)| c + holder_seminorm_channels(dd, alpha))
                .collect();
            HolderRow {
                alpha,
                seminorm: holder_seminorm_channels(&du_last, alpha),
                summable: looks_summable(&increments),
                increments,
            }
        })
        .collect();
    let alpha_hat = if iterates.len() < 2 {
        None
    } else {
        rows.iter()
            .filter(|r| r.summable)
            .map(|r| r.alpha)
            .fold(None, |acc: Option<f64>, a| {
                Some(acc.map_or(a, |b| b.max(a)))
            })
    };
    Ok(HolderTable { rows, alpha_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::GridDomain;

    #[test]
    fn identical_iterates_give_largest_alpha() {
        let d = GridDomain::cube(2, 0.0, 1.0, 33).unwrap();
        let u = VectorField::from_fn(&d, 3, |x, o| {
            o[0] = x[0];
            o[1] = x[1];
            o[2] = (x[0] * x[1]).sin();
        });
        let t = estimate_holder(&[u.clone(), u.clone(), u], &[0.2, 0.4]).unwrap();
        assert_eq!(t.alpha_hat, Some(0.4));
        assert!(t
            .rows
            .iter()
            .all(|r| r.increments.iter().all(|i| *i == 0.0)));
    }

    #[test]
    fn single_iterate_has_no_estimate() {
        let d = GridDomain::cube(2, 0.0, 1.0, 17).unwrap();
        let u = VectorField::zeros(&d, 3);
        let t = estimate_holder(&[u], &[0.3]).unwrap();
        assert_eq!(t.alpha_hat, None);
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].increments.is_empty());
    }
}
