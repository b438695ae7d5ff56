//! Iterative integration by parts of a fast oscillation `gamma(lambda x.nu) M(x)`.
//!
//! Each level splits the current slow matrix `S_k` as
//! `alpha_k . nu + sum_j beta_kj nu_j (x) nu_j`, absorbs the first part into a
//! symmetric gradient and the second into the span remainder `F`, and passes
//! `E_k = -(1/mu) sym(D alpha_k)` to the next level with one more
//! antiderivative on the profile and one more factor `mu / lambda`.

use rayon::prelude::*;

use crate::basis::{packed_len, PrimitiveBasis, DEFAULT_DIRECTION_THRESHOLD};
use crate::corrugation::{CorrugationProfile, MEAN_TOLERANCE};
use crate::decompose::primitive_sum;
use crate::error::{Error, Result};
use crate::fields::{
    self, GridDomain, GridField, MatrixField, ScalarField, SymField, VectorField,
    DEFAULT_SAMPLES_PER_PERIOD,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbpOptions {
    pub direction_threshold: f64,
    pub max_depth: usize,
    pub samples_per_period: f64,
}

impl Default for IbpOptions {
    fn default() -> Self {
        Self {
            direction_threshold: DEFAULT_DIRECTION_THRESHOLD,
            max_depth: 12,
            samples_per_period: DEFAULT_SAMPLES_PER_PERIOD,
        }
    }
}

/// `lambda x . nu` at every node.
pub fn phase(domain: &GridDomain, lambda: f64, nu: &[f64]) -> Vec<f64> {
    let n = domain.dim();
    (0..domain.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |x, idx| {
                domain.node_coords(idx, x);
                lambda * x.iter().zip(nu).map(|(a, b)| a * b).sum::<f64>()
            },
        )
        .collect()
}

pub(crate) fn profile_values(p: &CorrugationProfile, theta: &[f64]) -> Vec<f64> {
    theta.par_iter().map(|t| p.value(*t)).collect()
}

#[derive(Debug, Clone)]
pub struct IbpResult {
    pub w: VectorField,
    /// `Dw` assembled from the recursion, exact up to the finite differences
    /// of the slow fields `alpha_k`.
    pub dw: MatrixField,
    /// Normalized final error `E^I`; the identity carries it as
    /// `gamma_final(lambda x.nu) (mu/lambda)^I E^I`.
    pub residual: SymField,
    /// Coordinates of `F` along `nu_j (x) nu_j`, `j = n+1..n_star`.
    pub f_coeffs: Vec<ScalarField>,
    pub gamma_final: CorrugationProfile,
    pub depth: usize,
    pub lambda: f64,
    pub mu: f64,
    pub nu: Vec<f64>,
}

impl IbpResult {
    pub fn domain(&self) -> &GridDomain {
        self.w.domain()
    }

    /// `F` as a symmetric matrix field.
    pub fn f_field(&self, basis: &PrimitiveBasis) -> SymField {
        let n = basis.n();
        let mut coeffs = vec![vec![0.0; self.domain().len()]; n];
        coeffs.extend(self.f_coeffs.iter().map(|c| c.values().to_vec()));
        primitive_sum(basis, self.domain(), &coeffs)
    }

    /// `gamma_final(lambda x.nu) (mu/lambda)^I E^I`.
    pub fn residual_term(&self) -> SymField {
        let theta = phase(self.domain(), self.lambda, &self.nu);
        let g = profile_values(&self.gamma_final, &theta);
        let s = (self.mu / self.lambda).powi(self.depth as i32);
        let packed = self
            .residual
            .packed()
            .iter()
            .map(|c| c.par_iter().zip(&g).map(|(e, gv)| s * gv * e).collect())
            .collect();
        SymField::from_raw(self.domain().clone(), self.residual.dim(), packed)
    }

    /// `2 sym(Dw)` from the assembled `dw`.
    pub fn symmetric_gradient(&self) -> SymField {
        sym_of(&self.dw, 2.0)
    }
}

/// `scale * sym(A)` for a square matrix field.
pub(crate) fn sym_of(a: &MatrixField, scale: f64) -> SymField {
    let n = a.cols();
    let mut packed = Vec::with_capacity(packed_len(n));
    for i in 0..n {
        for j in i..n {
            let (x, y) = (a.entry(i, j), a.entry(j, i));
            packed.push(
                x.par_iter()
                    .zip(y)
                    .map(|(p, q)| 0.5 * scale * (p + q))
                    .collect(),
            );
        }
    }
    SymField::from_raw(a.domain().clone(), n, packed)
}

#[allow(clippy::too_many_arguments)]
pub fn integrate_by_parts(
    m: &SymField,
    gamma: &CorrugationProfile,
    nu: &[f64],
    lambda: f64,
    mu: f64,
    depth: usize,
    basis: &PrimitiveBasis,
    options: &IbpOptions,
) -> Result<IbpResult> {
    let n = basis.n();
    let domain = m.domain().clone();
    if m.dim() != n || domain.dim() != n {
        return Err(Error::Dimension(format!(
            "M must be a Sym_{n} field on an {n}-dimensional grid"
        )));
    }
    if gamma.mean().abs() > MEAN_TOLERANCE {
        return Err(Error::Mean {
            mean: gamma.mean(),
            tolerance: MEAN_TOLERANCE,
        });
    }
    if depth == 0 || depth > options.max_depth {
        return Err(Error::Param(format!(
            "depth {depth} outside 1..={}",
            options.max_depth
        )));
    }
    if !(mu >= 1.0 && lambda >= mu) {
        return Err(Error::Param(format!(
            "need lambda >= mu >= 1, got lambda={lambda}, mu={mu}"
        )));
    }
    let psi_map = basis.psi_map(nu, options.direction_threshold)?;
    fields::check_resolution_along(&domain, lambda, nu, options.samples_per_period)?;
    fields::check_stencil(&domain)?;

    let len = domain.len();
    let n_star = basis.n_star();
    let psi = psi_map.psi_matrix();
    let chain = gamma.antiderivative_chain(depth)?;
    let theta = phase(&domain, lambda, nu);
    let gvals: Vec<Vec<f64>> = chain.iter().map(|p| profile_values(p, &theta)).collect();

    let mut w = vec![vec![0.0; len]; n];
    let mut dw = vec![vec![0.0; len]; n * n];
    let mut f = vec![vec![0.0; len]; n_star - n];
    let mut current: Vec<Vec<f64>> = m.packed().to_vec();
    let mut s = 1.0;
    for k in 1..=depth {
        let coords: Vec<Vec<f64>> = (0..n_star)
            .map(|r| {
                (0..len)
                    .into_par_iter()
                    .map(|idx| {
                        current
                            .iter()
                            .enumerate()
                            .map(|(c, v)| psi[(r, c)] * v[idx])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let (alpha, beta) = coords.split_at(n);
        let d_alpha: Vec<Vec<f64>> = alpha
            .iter()
            .flat_map(|a| {
                (0..n)
                    .map(|b| {
                        let cells = fields::slow_spacing_cells(&domain, b, lambda);
                        fields::diff_channel_spaced(&domain, a, b, 1, cells)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let (g_prev, g_k) = (&gvals[k - 1], &gvals[k]);
        let c_w = s / (2.0 * lambda);
        for a in 0..n {
            w[a].par_iter_mut()
                .enumerate()
                .for_each(|(idx, v)| *v += c_w * g_k[idx] * alpha[a][idx]);
            for b in 0..n {
                let nb = nu[b];
                let da = &d_alpha[a * n + b];
                dw[a * n + b]
                    .par_iter_mut()
                    .enumerate()
                    .for_each(|(idx, v)| {
                        *v +=
                            s * (0.5 * g_prev[idx] * alpha[a][idx] * nb) + c_w * g_k[idx] * da[idx];
                    });
            }
        }
        for (fm, bm) in f.iter_mut().zip(beta) {
            fm.par_iter_mut()
                .enumerate()
                .for_each(|(idx, v)| *v += s * g_prev[idx] * bm[idx]);
        }
        let mut next = Vec::with_capacity(n_star);
        for i in 0..n {
            for j in i..n {
                let (x, y) = (&d_alpha[i * n + j], &d_alpha[j * n + i]);
                next.push(
                    x.par_iter()
                        .zip(y)
                        .map(|(p, q)| -0.5 * (p + q) / mu)
                        .collect(),
                );
            }
        }
        debug_assert_eq!(next.len(), packed_len(n));
        current = next;
        s *= mu / lambda;
    }
    Ok(IbpResult {
        w: VectorField::from_raw(domain.clone(), w),
        dw: MatrixField::from_raw(domain.clone(), n, n, dw),
        residual: SymField::from_raw(domain.clone(), n, current),
        f_coeffs: f
            .into_iter()
            .map(|c| ScalarField::from_raw(domain.clone(), c))
            .collect(),
        gamma_final: chain[depth].clone(),
        depth,
        lambda,
        mu,
        nu: nu.to_vec(),
    })
}

/// `gamma(lambda x.nu) M - 2 sym(Dw) - gamma_I (mu/lambda)^I E - F`, with
/// `Dw` taken by finite differences of the returned `w` (direct substitution).
pub fn identity_residual(
    r: &IbpResult,
    m: &SymField,
    gamma: &CorrugationProfile,
    basis: &PrimitiveBasis,
) -> Result<SymField> {
    let theta = phase(r.domain(), r.lambda, &r.nu);
    let g = profile_values(gamma, &theta);
    let n = basis.n();
    let dw = fields::jacobian(&r.w)?;
    let lhs = SymField::from_raw(
        r.domain().clone(),
        n,
        m.packed()
            .iter()
            .map(|c| c.par_iter().zip(&g).map(|(x, gv)| gv * x).collect())
            .collect(),
    );
    Ok(lhs
        .sub(&sym_of(&dw, 2.0))
        .sub(&r.residual_term())
        .sub(&r.f_field(basis)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::SymMatrix;
    use crate::corrugation::gamma;
    use crate::decompose::coefficient_fields;
    use std::f64::consts::PI;

    fn strip(points: usize) -> GridDomain {
        GridDomain::new(&[0.0, 0.0], &[1.0, 1.0], &[points, 9]).unwrap()
    }

    #[test]
    fn constant_m_depth_one() {
        let b = PrimitiveBasis::new(2).unwrap();
        let d = GridDomain::cube(2, 0.0, 1.0, 129).unwrap();
        let m0 = SymMatrix::from_fn(2, |i, j| [[0.3, -0.2], [-0.2, 0.7]][i][j]);
        let m = SymField::constant(&d, &m0);
        let nu = [0.6, 0.8];
        let g = gamma(2).unwrap();
        let r = integrate_by_parts(&m, &g, &nu, 20.0, 2.0, 1, &b, &IbpOptions::default()).unwrap();
        assert!(r.residual.sup_norm() < 1e-12);
        let c = b.psi_map(&nu, 1e-8).unwrap().psi(&m0);
        let g1 = g.antiderivative().unwrap();
        let theta = phase(&d, 20.0, &nu);
        for idx in (0..d.len()).step_by(97) {
            for a in 0..2 {
                let expect = g1.value(theta[idx]) / 40.0 * c.alpha[a];
                assert!((r.w.comp(a)[idx] - expect).abs() < 1e-14);
            }
            let expect_f = g.value(theta[idx]) * c.beta[0];
            assert!((r.f_coeffs[0].values()[idx] - expect_f).abs() < 1e-14);
        }
        let analytic = m0.packed().len();
        let resid = {
            let lhs_g = profile_values(&g, &theta);
            let mut worst: f64 = 0.0;
            let sg = r.symmetric_gradient();
            let ff = r.f_field(&b);
            for k in 0..analytic {
                for idx in 0..d.len() {
                    let v =
                        lhs_g[idx] * m.packed()[k][idx] - sg.packed()[k][idx] - ff.packed()[k][idx];
                    worst = worst.max(v.abs());
                }
            }
            worst
        };
        assert!(resid <= 1e-12, "{resid}");
    }

    #[test]
    fn f_stays_in_span() {
        let b = PrimitiveBasis::new(2).unwrap();
        let d = GridDomain::cube(2, 0.0, 1.0, 257).unwrap();
        let m = SymField::from_fn(&d, 2, |x| {
            SymMatrix::from_fn(2, |i, j| {
                (1.0 + i as f64 + j as f64) * (2.0 * PI * x[0]).sin()
            })
        });
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let r = integrate_by_parts(
            &m,
            &gamma(4).unwrap(),
            &[s, s],
            40.0,
            2.0 * PI,
            2,
            &b,
            &IbpOptions::default(),
        )
        .unwrap();
        let coeffs = coefficient_fields(&b, &r.f_field(&b));
        for c in &coeffs[..2] {
            assert!(c.iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn guards() {
        let b = PrimitiveBasis::new(2).unwrap();
        let d = strip(257);
        let m = SymField::zeros(&d, 2);
        let opts = IbpOptions::default();
        let g = gamma(2).unwrap();
        let e = integrate_by_parts(&m, &g, &[0.0, 1.0], 10.0, 1.0, 1, &b, &opts);
        assert!(matches!(e, Err(Error::Direction { .. })));
        let biased = CorrugationProfile::new(0.5, vec![]);
        let e = integrate_by_parts(&m, &biased, &[1.0, 0.0], 10.0, 1.0, 1, &b, &opts);
        assert!(matches!(e, Err(Error::Mean { .. })));
        let e = integrate_by_parts(&m, &g, &[1.0, 0.0], 400.0, 1.0, 1, &b, &opts);
        assert!(matches!(e, Err(Error::Resolution(_))));
        let e = integrate_by_parts(&m, &g, &[1.0, 0.0], 10.0, 1.0, 13, &b, &opts);
        assert!(matches!(e, Err(Error::Param(_))));
    }

    #[test]
    fn identity_on_smooth_input() {
        let b = PrimitiveBasis::new(2).unwrap();
        let d = strip(2049);
        let m = SymField::from_fn(&d, 2, |x| {
            SymMatrix::sym_outer(&[1.0, 0.0], &[0.0, 1.0]).scaled((2.0 * PI * x[0]).sin())
        });
        let g = gamma(2).unwrap();
        for depth in 1..=3 {
            let r = integrate_by_parts(
                &m,
                &g,
                &[1.0, 0.0],
                64.0,
                2.0 * PI,
                depth,
                &b,
                &IbpOptions::default(),
            )
            .unwrap();
            let res = identity_residual(&r, &m, &g, &b).unwrap().sup_norm();
            assert!(res <= 1e-6, "depth {depth}: {res}");
            assert!(fields::sup_norm(&r.w) <= 2.0 * m.sup_norm() / 64.0);
        }
    }
}
