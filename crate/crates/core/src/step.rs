//! One corrugation step: perturb an immersion `u` along direction `nu` at
//! frequency `lambda` so that its induced metric grows by about `delta a^2 nu (x) nu`.
//!
//! The perturbation is
//! `v = u + delta T (a^2 gamma_1(lambda x.nu)/lambda nu + w) + delta^{1/2} a gamma_2(lambda x.nu)/lambda zeta`
//! with `T = Du (Du^t Du)^{-1}` and `zeta` the unit normal. The ordinary step
//! uses `w = 0`; the sharper step builds `w` by integration by parts so that
//! the fast error collapses to a remainder confined to `span{nu_j (x) nu_j : j > n}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{packed_index, packed_len, PrimitiveBasis, DEFAULT_DIRECTION_THRESHOLD};
use crate::corrugation::{gamma, CorrugationProfile, GAMMA2_SQUARE_MEAN};
use crate::decompose::primitive_sum;
use crate::error::{Error, Result};
use crate::fields::{
    self, GridDomain, GridField, MatrixField, ScalarField, SymField, VectorField,
    DEFAULT_SAMPLES_PER_PERIOD,
};
use crate::ibp::{integrate_by_parts, phase, profile_values, IbpOptions};

const MAX_N: usize = 3;
const MAX_M: usize = MAX_N + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    /// Floor on the smallest eigenvalue of `Du^t Du`.
    pub immersion_threshold: f64,
    pub direction_threshold: f64,
    pub samples_per_period: f64,
    pub max_depth: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            immersion_threshold: 1e-6,
            direction_threshold: DEFAULT_DIRECTION_THRESHOLD,
            samples_per_period: DEFAULT_SAMPLES_PER_PERIOD,
            max_depth: 12,
        }
    }
}

impl StepOptions {
    fn ibp(&self) -> IbpOptions {
        IbpOptions {
            direction_threshold: self.direction_threshold,
            max_depth: self.max_depth,
            samples_per_period: self.samples_per_period,
        }
    }
}

/// `Du`, `T = Du (Du^t Du)^{-1}` and the unit normal `zeta`.
#[derive(Debug, Clone)]
pub struct ImmersionFrame {
    pub du: MatrixField,
    pub gram: SymField,
    pub t: MatrixField,
    pub zeta: VectorField,
    /// Largest `lambda_max / lambda_min` of `Du^t Du` over the grid.
    pub gram_condition: f64,
    /// Smallest eigenvalue of `Du^t Du` over the grid.
    pub min_eigenvalue: f64,
}

fn sym_eigen_range(g: &[[f64; MAX_N]; MAX_N], n: usize) -> (f64, f64) {
    if n == 2 {
        let (a, b, c) = (g[0][0], g[0][1], g[1][1]);
        let mid = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        return (mid - rad, mid + rad);
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| g[i][j]);
    let e = m.symmetric_eigenvalues();
    (e.min(), e.max())
}

fn invert_small(g: &[[f64; MAX_N]; MAX_N], n: usize) -> [[f64; MAX_N]; MAX_N] {
    let mut out = [[0.0; MAX_N]; MAX_N];
    if n == 2 {
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        out[0][0] = g[1][1] / det;
        out[1][1] = g[0][0] / det;
        out[0][1] = -g[0][1] / det;
        out[1][0] = -g[1][0] / det;
        return out;
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| g[i][j]);
    let inv = m
        .try_inverse()
        .unwrap_or_else(|| nalgebra::DMatrix::zeros(n, n));
    for i in 0..n {
        for j in 0..n {
            out[i][j] = inv[(i, j)];
        }
    }
    out
}

fn det_small(a: &[[f64; MAX_N]; MAX_N], n: usize) -> f64 {
    match n {
        1 => a[0][0],
        2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
        _ => {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        }
    }
}

/// Generalized cross product of the `n` columns of an `(n+1) x n` matrix.
fn cofactor_normal(du: &[[f64; MAX_N]; MAX_M], n: usize) -> [f64; MAX_M] {
    let mut z = [0.0; MAX_M];
    for (r, zr) in z.iter_mut().enumerate().take(n + 1) {
        let mut minor = [[0.0; MAX_N]; MAX_N];
        for (mi, row) in (0..=n).filter(|&q| q != r).enumerate() {
            minor[mi][..n].copy_from_slice(&du[row][..n]);
        }
        let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
        *zr = sign * det_small(&minor, n);
    }
    z
}

fn check_shape(u: &VectorField) -> Result<(usize, usize)> {
    let n = u.domain().dim();
    if !(2..=MAX_N).contains(&n) || u.dim() != n + 1 {
        return Err(Error::Dimension(format!(
            "steps need u: R^n -> R^(n+1) with 2 <= n <= {MAX_N}; got n = {n}, target {}",
            u.dim()
        )));
    }
    Ok((n, n + 1))
}

#[inline]
fn load_mat(f: &MatrixField, idx: usize) -> [[f64; MAX_N]; MAX_M] {
    let mut out = [[0.0; MAX_N]; MAX_M];
    for r in 0..f.rows() {
        for c in 0..f.cols() {
            out[r][c] = f.entry(r, c)[idx];
        }
    }
    out
}

/// Frame of an immersion with the orientation of `zeta` fixed globally so
/// that the summed last component is nonnegative.
pub fn frame(u: &VectorField, options: &StepOptions) -> Result<ImmersionFrame> {
    let (n, m) = check_shape(u)?;
    u.check_finite()?;
    let du = fields::jacobian(u)?;
    let domain = u.domain().clone();
    let len = domain.len();

    let (pl, mn) = (packed_len(n), m * n);
    // Channels: packed gram, T row-major, zeta, then the eigenvalue range.
    let mut chans = fields::fill_channels(len, pl + mn + m + 2, |idx, out| {
        let d = load_mat(&du, idx);
        let mut g = [[0.0; MAX_N]; MAX_N];
        for i in 0..n {
            for j in 0..n {
                g[i][j] = (0..m).map(|r| d[r][i] * d[r][j]).sum();
            }
        }
        for i in 0..n {
            for j in i..n {
                out[packed_index(n, i, j)] = g[i][j];
            }
        }
        let gi = invert_small(&g, n);
        for r in 0..m {
            for c in 0..n {
                out[pl + r * n + c] = (0..n).map(|k| d[r][k] * gi[k][c]).sum();
            }
        }
        let z = cofactor_normal(&d, n);
        let norm = z[..m].iter().map(|x| x * x).sum::<f64>().sqrt();
        for r in 0..m {
            out[pl + mn + r] = z[r] / norm;
        }
        let (lo, hi) = sym_eigen_range(&g, n);
        out[pl + mn + m] = lo;
        out[pl + mn + m + 1] = hi;
    });
    let hi = chans.pop().unwrap_or_default();
    let lo = chans.pop().unwrap_or_default();

    let (mut worst_node, mut worst) = (0, f64::INFINITY);
    let mut condition: f64 = 1.0;
    for (idx, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
        if !(l >= worst) {
            worst = l;
            worst_node = idx;
        }
        condition = condition.max(h / l);
    }
    if !(worst >= options.immersion_threshold) {
        return Err(Error::NonImmersion {
            node: worst_node,
            eigenvalue: worst,
        });
    }
    let zeta: Vec<Vec<f64>> = chans.split_off(pl + mn);
    let t = chans.split_off(pl);
    let gram = chans;
    let flip = if zeta[m - 1].iter().sum::<f64>() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let zeta = zeta
        .into_iter()
        .map(|c| c.into_iter().map(|x| flip * x).collect())
        .collect();
    Ok(ImmersionFrame {
        du,
        gram: SymField::from_raw(domain.clone(), n, gram),
        t: MatrixField::from_raw(domain.clone(), m, n, t),
        zeta: VectorField::from_raw(domain, zeta),
        gram_condition: condition,
        min_eigenvalue: worst,
    })
}

/// Vector field `w` together with its Jacobian, used as the tangential corrector.
#[derive(Debug, Clone)]
pub struct Corrector {
    pub w: VectorField,
    pub dw: MatrixField,
}

impl Corrector {
    /// Corrector with `Dw` taken by finite differences.
    pub fn from_field(w: VectorField) -> Result<Self> {
        let dw = fields::jacobian(&w)?;
        Ok(Self { w, dw })
    }
}

fn check_step_params(
    domain: &GridDomain,
    nu: &[f64],
    lambda: f64,
    delta: f64,
    spp: f64,
) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Param(format!("delta = {delta} outside (0, 1]")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Param(format!("frequency {lambda} must be positive")));
    }
    if nu.len() != domain.dim() {
        return Err(Error::Dimension(format!(
            "direction of length {} on a {}-d grid",
            nu.len(),
            domain.dim()
        )));
    }
    let norm = nu.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Param(format!(
            "direction is not a unit vector (|nu| = {norm})"
        )));
    }
    fields::check_resolution_along(domain, lambda, nu, spp)
}

/// Tangential `delta T (a^2 gamma_1/lambda nu + w)` and normal
/// `delta^{1/2} a gamma_2/lambda zeta` addends of the perturbation.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_parts(
    frame: &ImmersionFrame,
    a: &ScalarField,
    nu: &[f64],
    lambda: f64,
    delta: f64,
    w: Option<&VectorField>,
    options: &StepOptions,
) -> Result<(VectorField, VectorField)> {
    let domain = frame.zeta.domain().clone();
    check_step_params(&domain, nu, lambda, delta, options.samples_per_period)?;
    a.check_finite()?;
    let (m, n) = (frame.t.rows(), frame.t.cols());
    let theta = phase(&domain, lambda, nu);
    let g1 = profile_values(&gamma(1)?, &theta);
    let g2 = profile_values(&gamma(2)?, &theta);
    let av = a.values();
    let sd = delta.sqrt();
    let tangential = (0..m)
        .map(|r| {
            (0..domain.len())
                .into_par_iter()
                .map(|idx| {
                    let coef = av[idx] * av[idx] * g1[idx] / lambda;
                    let mut s = 0.0;
                    for k in 0..n {
                        let wk = w.map_or(0.0, |w| w.comp(k)[idx]);
                        s += frame.t.entry(r, k)[idx] * (coef * nu[k] + wk);
                    }
                    delta * s
                })
                .collect()
        })
        .collect();
    let normal = (0..m)
        .map(|r| {
            let z = frame.zeta.comp(r);
            (0..domain.len())
                .into_par_iter()
                .map(|idx| sd * av[idx] * g2[idx] / lambda * z[idx])
                .collect()
        })
        .collect();
    Ok((
        VectorField::from_raw(domain.clone(), tangential),
        VectorField::from_raw(domain, normal),
    ))
}

/// The perturbed immersion `v`.
#[allow(clippy::too_many_arguments)]
pub fn perturb(
    u: &VectorField,
    frame: &ImmersionFrame,
    a: &ScalarField,
    nu: &[f64],
    lambda: f64,
    delta: f64,
    w: Option<&VectorField>,
    options: &StepOptions,
) -> Result<VectorField> {
    let (tan, nor) = perturbation_parts(frame, a, nu, lambda, delta, w, options)?;
    let comps = (0..u.dim())
        .map(|r| {
            let (x, p, q) = (u.comp(r), tan.comp(r), nor.comp(r));
            x.par_iter()
                .zip(p)
                .zip(q)
                .map(|((x, p), q)| x + p + q)
                .collect()
        })
        .collect();
    Ok(VectorField::from_raw(u.domain().clone(), comps))
}

/// Slow derivatives shared by the error matrices and the metric expansion.
struct SlowFields {
    grad_a: Vec<Vec<f64>>,
    /// `D(a^2 T nu)`, `m x n`.
    d_a2tnu: MatrixField,
    /// `D zeta`, `m x n`.
    d_zeta: MatrixField,
}

/// Derivative of a slow channel, with the stencil widened to the phase frequency.
fn slow_diff(domain: &GridDomain, data: &[f64], axis: usize, lambda: f64) -> Vec<f64> {
    fields::diff_channel_spaced(
        domain,
        data,
        axis,
        1,
        fields::slow_spacing_cells(domain, axis, lambda),
    )
}

fn slow_jacobian(u: &VectorField, lambda: f64) -> MatrixField {
    let d = u.domain();
    let n = d.dim();
    let entries = u
        .comps()
        .iter()
        .flat_map(|c| {
            (0..n)
                .map(|k| slow_diff(d, c, k, lambda))
                .collect::<Vec<_>>()
        })
        .collect();
    MatrixField::from_raw(d.clone(), u.dim(), n, entries)
}

fn slow_fields(
    frame: &ImmersionFrame,
    a: &ScalarField,
    nu: &[f64],
    lambda: f64,
) -> Result<SlowFields> {
    let domain = a.domain();
    let (m, n) = (frame.t.rows(), frame.t.cols());
    let av = a.values();
    let grad_a = (0..n).map(|k| slow_diff(domain, av, k, lambda)).collect();
    let a2tnu: Vec<Vec<f64>> = (0..m)
        .map(|r| {
            (0..domain.len())
                .into_par_iter()
                .map(|idx| {
                    av[idx]
                        * av[idx]
                        * (0..n)
                            .map(|k| frame.t.entry(r, k)[idx] * nu[k])
                            .sum::<f64>()
                })
                .collect()
        })
        .collect();
    let d_a2tnu = slow_jacobian(&VectorField::from_raw(domain.clone(), a2tnu), lambda);
    let d_zeta = slow_jacobian(&frame.zeta, lambda);
    Ok(SlowFields {
        grad_a,
        d_a2tnu,
        d_zeta,
    })
}

fn sym_into(out: &mut [f64; 6], n: usize, scale: f64, f: impl Fn(usize, usize) -> f64) {
    for i in 0..n {
        for j in i..n {
            out[packed_index(n, i, j)] = scale * 0.5 * (f(i, j) + f(j, i));
        }
    }
}

/// Per-node error matrices `M_1..M_4`.
#[allow(clippy::too_many_arguments)]
fn node_error_matrices(
    n: usize,
    m: usize,
    du: &[[f64; MAX_N]; MAX_M],
    dq: &[[f64; MAX_N]; MAX_M],
    dz: &[[f64; MAX_N]; MAX_M],
    a: f64,
    ga: &[f64; MAX_N],
    nu: &[f64],
    lambda: f64,
    delta: f64,
) -> [[f64; 6]; 4] {
    let mut mats = [[0.0; 6]; 4];
    let dut = |x: &[[f64; MAX_N]; MAX_M], i: usize, j: usize| {
        (0..m).map(|r| du[r][i] * x[r][j]).sum::<f64>()
    };
    sym_into(&mut mats[0], n, 2.0 / lambda, |i, j| dut(dq, i, j));
    sym_into(
        &mut mats[1],
        n,
        2.0 * a / (delta.sqrt() * lambda),
        |i, j| dut(dz, i, j),
    );
    sym_into(&mut mats[2], n, 2.0 * a / lambda, |i, j| nu[i] * ga[j]);
    sym_into(&mut mats[3], n, 1.0 / (lambda * lambda), |i, j| {
        ga[i] * ga[j]
    });
    mats
}

/// The four fast error matrices `M_1..M_4` of the step expansion.
pub fn error_matrices(
    frame: &ImmersionFrame,
    a: &ScalarField,
    nu: &[f64],
    lambda: f64,
    delta: f64,
) -> Result<[SymField; 4]> {
    let slow = slow_fields(frame, a, nu, lambda)?;
    let domain = a.domain().clone();
    let (m, n) = (frame.t.rows(), frame.t.cols());
    let pl = packed_len(n);
    let mut chans = fields::fill_channels(domain.len(), 4 * pl, |idx, out| {
        let mut ga = [0.0; MAX_N];
        for k in 0..n {
            ga[k] = slow.grad_a[k][idx];
        }
        let mats = node_error_matrices(
            n,
            m,
            &load_mat(&frame.du, idx),
            &load_mat(&slow.d_a2tnu, idx),
            &load_mat(&slow.d_zeta, idx),
            a.values()[idx],
            &ga,
            nu,
            lambda,
            delta,
        );
        for (q, mat) in mats.iter().enumerate() {
            out[q * pl..(q + 1) * pl].copy_from_slice(&mat[..pl]);
        }
    });
    let mut build = || SymField::from_raw(domain.clone(), n, chans.split_off(chans.len() - pl));
    let (m4, m3, m2, m1) = (build(), build(), build(), build());
    Ok([m1, m2, m3, m4])
}

/// Term-by-term evaluation of `Dv^t Dv` for the perturbation with corrector `w`.
#[derive(Debug, Clone)]
pub struct MetricExpansion {
    /// `Du^t Du + delta a^2 nu (x) nu + R + delta cbar/lambda^2 grad a (x) grad a
    ///  + 2 delta sym(Dw) + delta sum_i gamma_i M_i`.
    pub rhs: SymField,
    /// `R = R_1 + R_2`, from the explicit quadratic expansion.
    pub remainder: SymField,
    /// `delta sum_i gamma_i(lambda x.nu) M_i`.
    pub oscillatory: SymField,
    /// `delta cbar / lambda^2 grad a (x) grad a`.
    pub slow_gradient: SymField,
}

/// Evaluates every term of the step expansion from `u`'s frame, the
/// amplitude and the corrector. `B_2 = delta (DT) w` uses finite differences
/// of the slow field `T`; all fast factors are evaluated in closed form.
pub fn predicted_metric_rhs(
    frame: &ImmersionFrame,
    a: &ScalarField,
    nu: &[f64],
    lambda: f64,
    delta: f64,
    corrector: Option<&Corrector>,
    options: &StepOptions,
) -> Result<MetricExpansion> {
    let domain = a.domain().clone();
    check_step_params(&domain, nu, lambda, delta, options.samples_per_period)?;
    let slow = slow_fields(frame, a, nu, lambda)?;
    let (m, n) = (frame.t.rows(), frame.t.cols());
    let len = domain.len();

    // (DT) w, streamed one column of T at a time.
    let dtw = corrector.map(|c| {
        let mut dtw = vec![vec![0.0; len]; m * n];
        for k in 0..n {
            let wk = c.w.comp(k);
            for r in 0..m {
                for col in 0..n {
                    let d = slow_diff(&domain, frame.t.entry(r, k), col, lambda);
                    dtw[r * n + col]
                        .par_iter_mut()
                        .enumerate()
                        .for_each(|(idx, v)| *v += d[idx] * wk[idx]);
                }
            }
        }
        dtw
    });

    let theta = phase(&domain, lambda, nu);
    let profiles: Vec<CorrugationProfile> = (1..=4).map(gamma).collect::<Result<_>>()?;
    let (g1p, g2p) = (profiles[0].derivative(), profiles[1].derivative());
    let cbar = GAMMA2_SQUARE_MEAN;
    let sd = delta.sqrt();

    let pl = packed_len(n);
    let mut chans = fields::fill_channels(len, 4 * pl, |idx, out| {
        let t = theta[idx];
        let (v1, v1p, v2, v2p) = (
            profiles[0].value(t),
            g1p.value(t),
            profiles[1].value(t),
            g2p.value(t),
        );
        let (v3, v4) = (profiles[2].value(t), profiles[3].value(t));
        let du = load_mat(&frame.du, idx);
        let tm = load_mat(&frame.t, idx);
        let dq = load_mat(&slow.d_a2tnu, idx);
        let dz = load_mat(&slow.d_zeta, idx);
        let av = a.values()[idx];
        let mut ga = [0.0; MAX_N];
        for k in 0..n {
            ga[k] = slow.grad_a[k][idx];
        }
        let mut z = [0.0; MAX_M];
        for r in 0..m {
            z[r] = frame.zeta.comp(r)[idx];
        }
        let mut dw = [[0.0; MAX_N]; MAX_N];
        if let Some(c) = corrector {
            for k in 0..n {
                for col in 0..n {
                    dw[k][col] = c.dw.entry(k, col)[idx];
                }
            }
        }
        let mut tnu = [0.0; MAX_M];
        for r in 0..m {
            tnu[r] = (0..n).map(|k| tm[r][k] * nu[k]).sum();
        }
        // S = A + B + E, and B_2 alone for R_1.
        let mut s = [[0.0; MAX_N]; MAX_M];
        let mut b2 = [[0.0; MAX_N]; MAX_M];
        for r in 0..m {
            for c in 0..n {
                let a_rc = delta * av * av * v1p * tnu[r] * nu[c] + sd * av * v2p * z[r] * nu[c];
                b2[r][c] = dtw.as_ref().map_or(0.0, |d| delta * d[r * n + c][idx]);
                let b1 = delta * (0..n).map(|k| tm[r][k] * dw[k][c]).sum::<f64>();
                let daz = z[r] * ga[c] + av * dz[r][c];
                let e_rc = delta * v1 / lambda * dq[r][c] + sd * v2 / lambda * daz;
                s[r][c] = a_rc + b1 + b2[r][c] + e_rc;
            }
        }
        let mats = node_error_matrices(n, m, &du, &dq, &dz, av, &ga, nu, lambda, delta);
        for i in 0..n {
            for j in i..n {
                let k = packed_index(n, i, j);
                let r1: f64 = (0..m)
                    .map(|r| du[r][i] * b2[r][j] + du[r][j] * b2[r][i])
                    .sum();
                let ss: f64 = (0..m).map(|r| s[r][i] * s[r][j]).sum();
                let nn = nu[i] * nu[j];
                let sg = delta * cbar / (lambda * lambda) * ga[i] * ga[j];
                let r2 = ss
                    - delta * av * av * v2p * v2p * nn
                    - delta * (v3 * mats[2][k] + v4 * mats[3][k])
                    - sg;
                let o =
                    delta * (v1 * mats[0][k] + v2 * mats[1][k] + v3 * mats[2][k] + v4 * mats[3][k]);
                let g: f64 = (0..m).map(|r| du[r][i] * du[r][j]).sum();
                out[k] =
                    g + delta * av * av * nn + r1 + r2 + sg + delta * (dw[i][j] + dw[j][i]) + o;
                out[pl + k] = r1 + r2;
                out[2 * pl + k] = o;
                out[3 * pl + k] = sg;
            }
        }
    });
    let mut build = || SymField::from_raw(domain.clone(), n, chans.split_off(chans.len() - pl));
    let (slow_gradient, oscillatory, remainder, rhs) = (build(), build(), build(), build());
    Ok(MetricExpansion {
        rhs,
        remainder,
        oscillatory,
        slow_gradient,
    })
}

/// Largest relative error of the grid's first-derivative stencil on the
/// plane wave `sin(lambda x . nu)`.
pub fn plane_wave_derivative_error(domain: &GridDomain, lambda: f64, nu: &[f64]) -> Result<f64> {
    fields::check_stencil(domain)?;
    let theta = phase(domain, lambda, nu);
    let wave: Vec<f64> = theta.par_iter().map(|t| t.sin()).collect();
    let mut worst: f64 = 0.0;
    for (k, nu_k) in nu.iter().enumerate() {
        let d = fields::diff_channel(domain, &wave, k, 1);
        let err = d
            .par_iter()
            .zip(&theta)
            .map(|(d, t)| (d - lambda * nu_k * t.cos()).abs() / lambda)
            .reduce(|| 0.0, f64::max);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Tolerance for `|Dv^t Dv - RHS|_inf` implied by finite-differencing the
/// perturbation: the normal part oscillates at `lambda`, the tangential part
/// (through `gamma_1` and the IBP corrector) up to `2 lambda`.
pub fn fd_identity_bound(
    u: &VectorField,
    tangential: &VectorField,
    normal: &VectorField,
    lambda: f64,
    nu: &[f64],
) -> Result<f64> {
    let d = u.domain();
    let eps1 = plane_wave_derivative_error(d, lambda, nu)?;
    let eps2 = plane_wave_derivative_error(d, 2.0 * lambda, nu)?;
    let fast = eps1 * lambda * fields::sup_norm(normal)
        + eps2 * 2.0 * lambda * fields::sup_norm(tangential);
    let dv = fields::sup_norm(&fields::jacobian(u)?)
        + lambda * (fields::sup_norm(normal) + 2.0 * fields::sup_norm(tangential));
    Ok(4.0 * fast * (dv + fast))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Ordinary,
    Sharper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub kind: StepKind,
    pub direction: Vec<f64>,
    pub lambda: f64,
    pub mu: Option<f64>,
    pub delta: f64,
    pub depth: Option<usize>,
    /// `|measured_error|_inf`.
    pub error_sup: f64,
    /// `|R|_inf`; of order `delta^{3/2}`.
    pub floor_sup: f64,
    /// `|measured_error - R|_inf`: the part driven by the frequency ratio.
    pub fast_sup: f64,
    pub increment_sup: f64,
    pub f_sup: f64,
    pub w_sup: f64,
    /// `|M_i|_inf` for the sharper step.
    pub error_matrix_sup: Vec<f64>,
    pub c0_increment: f64,
    pub c1_increment: f64,
    pub gram_condition: f64,
    pub min_eigenvalue_before: f64,
    pub min_eigenvalue_after: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub v: VectorField,
    pub predicted_increment: SymField,
    pub measured_error: SymField,
    /// `delta sum_i F_i`, sharper step only.
    pub f: Option<SymField>,
    /// `L_j` coordinates of `f` for `j = n+1..n_star`, sharper step only.
    pub f_coeffs: Option<Vec<ScalarField>>,
    pub expansion: MetricExpansion,
    pub diagnostics: StepDiagnostics,
}

fn min_eigenvalue(g: &SymField) -> f64 {
    let n = g.dim();
    (0..g.domain().len())
        .into_par_iter()
        .map(|idx| {
            let mut mat = [[0.0; MAX_N]; MAX_N];
            for i in 0..n {
                for j in 0..n {
                    mat[i][j] = g.entry(i, j)[idx];
                }
            }
            sym_eigen_range(&mat, n).0
        })
        .reduce(|| f64::INFINITY, f64::min)
}

#[allow(clippy::too_many_arguments)]
fn finish_step(
    u: &VectorField,
    frame: &ImmersionFrame,
    a: &ScalarField,
    nu: &[f64],
    lambda: f64,
    delta: f64,
    corrector: Option<Corrector>,
    f: Option<(SymField, Vec<ScalarField>)>,
    kind: StepKind,
    mu: Option<f64>,
    depth: Option<usize>,
    error_matrix_sup: Vec<f64>,
    options: &StepOptions,
) -> Result<StepOutcome> {
    let v = perturb(
        u,
        frame,
        a,
        nu,
        lambda,
        delta,
        corrector.as_ref().map(|c| &c.w),
        options,
    )?;
    let expansion = predicted_metric_rhs(frame, a, nu, lambda, delta, corrector.as_ref(), options)?;
    let metric_v = fields::induced_metric(&v)?;
    let n = nu.len();
    let av = a.values();
    let mut increment = Vec::with_capacity(packed_len(n));
    for i in 0..n {
        for j in i..n {
            let nn = delta * nu[i] * nu[j];
            let sg = expansion.slow_gradient.entry(i, j);
            increment.push(
                (0..av.len())
                    .into_par_iter()
                    .map(|idx| {
                        nn * av[idx] * av[idx]
                            + if kind == StepKind::Sharper {
                                sg[idx]
                            } else {
                                0.0
                            }
                    })
                    .collect(),
            );
        }
    }
    let predicted_increment = SymField::from_raw(u.domain().clone(), n, increment);
    let mut measured_error = metric_v.sub(&frame.gram).sub(&predicted_increment);
    if let Some((ff, _)) = &f {
        measured_error = measured_error.sub(ff);
    }
    let diff = v.sub(u);
    let diagnostics = StepDiagnostics {
        kind,
        direction: nu.to_vec(),
        lambda,
        mu,
        delta,
        depth,
        error_sup: measured_error.sup_norm(),
        floor_sup: expansion.remainder.sup_norm(),
        fast_sup: measured_error.sub(&expansion.remainder).sup_norm(),
        increment_sup: predicted_increment.sup_norm(),
        f_sup: f.as_ref().map_or(0.0, |(ff, _)| ff.sup_norm()),
        w_sup: corrector.as_ref().map_or(0.0, |c| fields::sup_norm(&c.w)),
        error_matrix_sup,
        c0_increment: fields::sup_norm(&diff),
        c1_increment: fields::ck_norm(&diff, 1)?,
        gram_condition: frame.gram_condition,
        min_eigenvalue_before: frame.min_eigenvalue,
        min_eigenvalue_after: min_eigenvalue(&metric_v),
    };
    log::debug!(
        "{kind:?} step nu={nu:?} lambda={lambda:.4e}: error {:.3e} (floor {:.3e}, fast {:.3e})",
        diagnostics.error_sup,
        diagnostics.floor_sup,
        diagnostics.fast_sup
    );
    let (f_field, f_coeffs) = match f {
        Some((ff, c)) => (Some(ff), Some(c)),
        None => (None, None),
    };
    Ok(StepOutcome {
        v,
        predicted_increment,
        measured_error,
        f: f_field,
        f_coeffs,
        expansion,
        diagnostics,
    })
}

/// Step without integration by parts; any unit direction is admissible.
pub fn step_ordinary(
    u: &VectorField,
    a: &ScalarField,
    nu: &[f64],
    lambda: f64,
    delta: f64,
    options: &StepOptions,
) -> Result<StepOutcome> {
    check_shape(u)?;
    check_step_params(u.domain(), nu, lambda, delta, options.samples_per_period)?;
    let fr = frame(u, options)?;
    finish_step(
        u,
        &fr,
        a,
        nu,
        lambda,
        delta,
        None,
        None,
        StepKind::Ordinary,
        None,
        None,
        vec![],
        options,
    )
}

/// Step with the corrector `w = -sum_i w_i`, where `w_i` integrates
/// `gamma_i M_i` by parts to depth `depth`.
#[allow(clippy::too_many_arguments)]
pub fn step_sharper(
    u: &VectorField,
    a: &ScalarField,
    nu: &[f64],
    lambda: f64,
    mu: f64,
    delta: f64,
    depth: usize,
    basis: &PrimitiveBasis,
    options: &StepOptions,
) -> Result<StepOutcome> {
    let (n, _) = check_shape(u)?;
    check_step_params(u.domain(), nu, lambda, delta, options.samples_per_period)?;
    basis.psi_map(nu, options.direction_threshold)?;
    let fr = frame(u, options)?;
    let domain = u.domain().clone();
    let len = domain.len();
    let mats = error_matrices(&fr, a, nu, lambda, delta)?;
    let error_matrix_sup: Vec<f64> = mats.iter().map(|m| m.sup_norm()).collect();

    let mut w = vec![vec![0.0; len]; n];
    let mut dw = vec![vec![0.0; len]; n * n];
    let mut f_coeffs = vec![vec![0.0; len]; basis.n_star() - n];
    for (i, mi) in mats.into_iter().enumerate() {
        let r = integrate_by_parts(
            &mi,
            &gamma(i + 1)?,
            nu,
            lambda,
            mu,
            depth,
            basis,
            &options.ibp(),
        )?;
        for k in 0..n {
            w[k].par_iter_mut()
                .zip(r.w.comp(k))
                .for_each(|(acc, x)| *acc -= x);
        }
        for (acc, e) in dw.iter_mut().zip(r.dw.entries()) {
            acc.par_iter_mut().zip(e).for_each(|(acc, x)| *acc -= x);
        }
        for (acc, c) in f_coeffs.iter_mut().zip(&r.f_coeffs) {
            acc.par_iter_mut()
                .zip(c.values())
                .for_each(|(acc, x)| *acc += delta * x);
        }
    }
    let corrector = Corrector {
        w: VectorField::from_raw(domain.clone(), w),
        dw: MatrixField::from_raw(domain.clone(), n, n, dw),
    };
    let mut coeffs = vec![vec![0.0; len]; n];
    coeffs.extend(f_coeffs.iter().cloned());
    let f_field = primitive_sum(basis, &domain, &coeffs);
    let f_scalar = f_coeffs
        .into_iter()
        .map(|c| ScalarField::from_raw(domain.clone(), c))
        .collect();
    finish_step(
        u,
        &fr,
        a,
        nu,
        lambda,
        delta,
        Some(corrector),
        Some((f_field, f_scalar)),
        StepKind::Sharper,
        Some(mu),
        Some(depth),
        error_matrix_sup,
        options,
    )
}
