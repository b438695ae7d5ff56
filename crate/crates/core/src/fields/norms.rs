use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diff::{check_stencil, diff_channel};
use super::{GridDomain, GridField, ScalarField};
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLES_PER_PERIOD: f64 = 16.0;

/// Nyquist guard: every axis must sample a period `2 pi / lambda` with at
/// least `samples_per_period` nodes.
pub fn check_resolution(domain: &GridDomain, lambda: f64, samples_per_period: f64) -> Result<()> {
    check_resolution_along(domain, lambda, &vec![1.0; domain.dim()], samples_per_period)
}

/// Nyquist guard for the phase `lambda x . nu`, whose frequency along axis
/// `k` is `lambda |nu_k|`.
pub fn check_resolution_along(
    domain: &GridDomain,
    lambda: f64,
    nu: &[f64],
    samples_per_period: f64,
) -> Result<()> {
    for (k, h) in domain.spacing().iter().enumerate() {
        let freq = lambda * nu[k].abs();
        if freq * h * samples_per_period > 2.0 * std::f64::consts::PI * (1.0 + 1e-12) {
            return Err(Error::Resolution(format!(
                "axis {k}: spacing {h:e} samples frequency {freq} with fewer than {samples_per_period} points per period"
            )));
        }
    }
    Ok(())
}

fn channel_max_abs(c: &[f64]) -> f64 {
    c.par_iter().map(|x| x.abs()).reduce(|| 0.0, f64::max)
}

/// Maximum absolute entry over all nodes and channels.
pub fn sup_norm<F: GridField>(f: &F) -> f64 {
    f.channels()
        .iter()
        .map(|c| channel_max_abs(c))
        .fold(0.0, f64::max)
}

fn channel_holder(domain: &GridDomain, c: &[f64], alpha: f64) -> f64 {
    let mut best: f64 = 0.0;
    for axis in 0..domain.dim() {
        let p = domain.points()[axis];
        let stride = domain.stride(axis);
        let h = domain.spacing()[axis];
        let mut sep = 1;
        while sep < p {
            let denom = (sep as f64 * h).powf(alpha);
            let m = (0..c.len())
                .into_par_iter()
                .filter(|idx| (idx / stride) % p + sep < p)
                .map(|idx| (c[idx + sep * stride] - c[idx]).abs() / denom)
                .reduce(|| 0.0, f64::max);
            best = best.max(m);
            sep *= 2;
        }
    }
    best
}

/// Lower bound of `[f]_alpha`: the maximum of `|f(x) - f(y)| / |x - y|^alpha`
/// over axis-aligned node pairs at separations of 1, 2, 4, ... cells.
pub fn holder_seminorm(f: &ScalarField, alpha: f64) -> f64 {
    channel_holder(f.domain(), f.values(), alpha)
}

/// Dyadic Hölder estimate maximized over all channels of `f`.
pub fn holder_seminorm_channels<F: GridField>(f: &F, alpha: f64) -> f64 {
    f.channels()
        .iter()
        .map(|c| channel_holder(f.domain(), c, alpha))
        .fold(0.0, f64::max)
}

/// `|f|_k = sum_{j <= k} max_{|b| = j} |d^b f|_0` for `k <= 2`, maximized over channels.
pub fn ck_norm<F: GridField>(f: &F, k: usize) -> Result<f64> {
    Ok(ck_norms(f, k)?.last().copied().unwrap_or(0.0))
}

fn ck_norms<F: GridField>(f: &F, k_max: usize) -> Result<Vec<f64>> {
    if k_max > 2 {
        return Err(Error::Param(format!(
            "C^{k_max} estimates are not supported (max 2)"
        )));
    }
    let d = f.domain();
    let mut level = vec![0.0f64; k_max + 1];
    if k_max > 0 {
        check_stencil(d)?;
    }
    for c in f.channels() {
        level[0] = level[0].max(channel_max_abs(c));
        if k_max == 0 {
            continue;
        }
        for a in 0..d.dim() {
            let da = diff_channel(d, c, a, 1);
            level[1] = level[1].max(channel_max_abs(&da));
            if k_max == 2 {
                level[2] = level[2].max(channel_max_abs(&diff_channel(d, c, a, 2)));
                for b in a + 1..d.dim() {
                    level[2] = level[2].max(channel_max_abs(&diff_channel(d, &da, b, 1)));
                }
            }
        }
    }
    let mut acc = 0.0;
    Ok(level
        .into_iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub sup_norm: f64,
    /// `ck_norms[k - 1]` is the `C^k` norm.
    pub ck_norms: Vec<f64>,
    /// `(alpha, dyadic lower bound of [f]_alpha)`.
    pub holder: Vec<(f64, f64)>,
}

pub fn norm_report<F: GridField>(f: &F, k_max: usize, alphas: &[f64]) -> Result<NormReport> {
    let all = ck_norms(f, k_max)?;
    Ok(NormReport {
        sup_norm: all[0],
        ck_norms: all[1..].to_vec(),
        holder: alphas
            .iter()
            .map(|&a| (a, holder_seminorm_channels(f, a)))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holder_examples() {
        let d = GridDomain::cube(2, 0.0, 1.0, 33).unwrap();
        assert_eq!(holder_seminorm(&ScalarField::constant(&d, 4.0), 0.5), 0.0);
        let f = ScalarField::from_fn(&d, |x| x[0]);
        assert!((holder_seminorm(&f, 1.0) - 1.0).abs() < 1e-12);
    }

    fn brute_force_holder_1d(xs: &[f64], fs: &[f64], alpha: f64) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..xs.len() {
            for j in i + 1..xs.len() {
                best = best.max((fs[j] - fs[i]).abs() / (xs[j] - xs[i]).powf(alpha));
            }
        }
        best
    }

    #[test]
    fn square_root_cusp() {
        let cusp = |t: f64| (t - 0.5).abs().sqrt();
        // Oracle on a coarse grid: all pairs, which is the true grid supremum.
        let coarse: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        let vals: Vec<f64> = coarse.iter().map(|&t| cusp(t)).collect();
        let oracle = brute_force_holder_1d(&coarse, &vals, 0.5);
        assert!(oracle <= 1.0 + 1e-12);
        let coarse_grid = GridDomain::new(&[0.0, 0.0], &[1.0, 1.0], &[64, 9]).unwrap();
        let dyadic = holder_seminorm(&ScalarField::from_fn(&coarse_grid, |x| cusp(x[0])), 0.5);
        assert!(dyadic <= oracle + 1e-12 && dyadic >= 0.8 * oracle);

        let d = GridDomain::new(&[0.0, 0.0], &[1.0, 1.0], &[1024, 9]).unwrap();
        let f = ScalarField::from_fn(&d, |x| cusp(x[0]));
        let est = holder_seminorm(&f, 0.5);
        assert!((0.9..=1.0).contains(&est), "estimate {est}");
    }

    #[test]
    fn ck_of_quadratic() {
        let d = GridDomain::cube(2, 0.0, 1.0, 21).unwrap();
        let f = ScalarField::from_fn(&d, |x| x[0] * x[0]);
        let r = norm_report(&f, 2, &[1.0]).unwrap();
        assert!((r.sup_norm - 1.0).abs() < 1e-12);
        assert!((r.ck_norms[0] - 3.0).abs() < 1e-10);
        assert!((r.ck_norms[1] - 5.0).abs() < 1e-8);
    }

    #[test]
    fn nyquist_guard() {
        let d = GridDomain::cube(2, 0.0, 1.0, 1025).unwrap();
        let h = 1.0 / 1024.0;
        let lam_ok = 2.0 * std::f64::consts::PI / (16.0 * h);
        assert!(check_resolution(&d, lam_ok, 16.0).is_ok());
        assert!(matches!(
            check_resolution(&d, lam_ok * 1.01, 16.0),
            Err(Error::Resolution(_))
        ));
        let strip = GridDomain::new(&[0.0, 0.0], &[1.0, 1.0], &[1025, 9]).unwrap();
        assert!(check_resolution_along(&strip, lam_ok, &[1.0, 0.0], 16.0).is_ok());
        assert!(check_resolution_along(&strip, lam_ok, &[0.0, 1.0], 16.0).is_err());
    }
}
