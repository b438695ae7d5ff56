use rayon::prelude::*;

use super::{GridDomain, GridField};
use crate::error::{Error, Result};

/// Cells dropped per side when mollifying at `ell` with spacing `h`.
pub fn mollify_margin_cells(ell: f64, h: f64) -> usize {
    (ell / h - 1e-9).ceil() as usize
}

/// Discretely normalized weights of the bump `(1 - (r/ell)^2)^4` on the
/// nodes `-m..=m`.
pub fn kernel_weights(ell: f64, h: f64) -> Vec<f64> {
    let m = mollify_margin_cells(ell, h) as isize;
    let raw: Vec<f64> = (-m..=m)
        .map(|k| {
            let r = k as f64 * h / ell;
            if r.abs() < 1.0 {
                (1.0 - r * r).powi(4)
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn convolve_axis(domain: &GridDomain, data: &[f64], axis: usize, w: &[f64]) -> Vec<f64> {
    let m = (w.len() - 1) / 2;
    let p_in = domain.points()[axis];
    let p_out = p_in - 2 * m;
    let s = domain.stride(axis);
    let out_len = data.len() / p_in * p_out;
    (0..out_len)
        .into_par_iter()
        .map(|idx| {
            let inner = idx % s;
            let i = (idx / s) % p_out;
            let outer = idx / (s * p_out);
            let base = outer * p_in * s + i * s + inner;
            let mut acc = 0.0;
            for (t, wt) in w.iter().enumerate() {
                acc += wt * data[base + t * s];
            }
            acc
        })
        .collect()
}

/// Separable convolution with the bump kernel of radius `ell`. The result
/// lives on the domain shrunk by [`mollify_margin_cells`] nodes per side, so
/// every output value uses only genuine samples.
pub fn mollify<F: GridField>(f: &F, ell: f64) -> Result<F> {
    let d = f.domain();
    for k in 0..d.dim() {
        let h = d.spacing()[k];
        if ell < 2.0 * h * (1.0 - 1e-12) {
            return Err(Error::Resolution(format!(
                "mollification length {ell:e} below two cells ({:e}) on axis {k}",
                2.0 * h
            )));
        }
        let extent = h * (d.points()[k] - 1) as f64;
        if extent <= 4.0 * ell {
            return Err(Error::DomainTooSmall(format!(
                "axis {k} extent {extent:e} is not larger than 4 ell = {:e}",
                4.0 * ell
            )));
        }
    }
    let weights: Vec<Vec<f64>> = (0..d.dim())
        .map(|k| kernel_weights(ell, d.spacing()[k]))
        .collect();
    let mut out_domain = d.clone();
    let mut steps = Vec::with_capacity(d.dim());
    for (k, w) in weights.iter().enumerate() {
        let m = (w.len() - 1) / 2;
        let before = out_domain.clone();
        let mut lower = before.lower().to_vec();
        let mut points = before.points().to_vec();
        if points[k] < 2 * m + super::MIN_STENCIL_POINTS {
            return Err(Error::DomainTooSmall(format!(
                "axis {k}: {} points leave fewer than {} after mollification",
                points[k],
                super::MIN_STENCIL_POINTS
            )));
        }
        lower[k] = before.coord(k, m);
        points[k] -= 2 * m;
        out_domain = GridDomain {
            lower,
            spacing: before.spacing().to_vec(),
            points,
        };
        steps.push(before);
    }
    Ok(f.map_channels(out_domain, |c| {
        let mut cur = c.to_vec();
        for (k, w) in weights.iter().enumerate() {
            cur = convolve_axis(&steps[k], &cur, k, w);
        }
        cur
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{restrict, ScalarField};
    use std::f64::consts::PI;

    #[test]
    fn kernel_is_even_and_normalized() {
        let w = kernel_weights(0.05, 0.01);
        assert_eq!(w.len(), 11);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for k in 0..w.len() {
            assert_eq!(w[k], w[w.len() - 1 - k]);
            assert!(w[k] >= 0.0);
        }
    }

    #[test]
    fn constants_and_affine() {
        let d = GridDomain::cube(2, 0.0, 1.0, 101).unwrap();
        let c = ScalarField::constant(&d, 1.7);
        let mc = mollify(&c, 0.05).unwrap();
        assert_eq!(mc.domain().points(), &[91, 91]);
        assert!(mc.values().iter().all(|v| (v - 1.7).abs() < 1e-14));

        let f = ScalarField::from_fn(&d, |x| x[0]);
        let mf = mollify(&f, 0.05).unwrap();
        let mut x = [0.0; 2];
        for (idx, v) in mf.values().iter().enumerate() {
            mf.domain().node_coords(idx, &mut x);
            assert!((v - x[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_matches_brute_force() {
        let d = GridDomain::cube(2, 0.0, 1.0, 81).unwrap();
        let ell = 0.05;
        let f = ScalarField::from_fn(&d, |x| (2.0 * PI * x[0]).sin());
        let mf = mollify(&f, ell).unwrap();

        // Independent oracle: full 2-D sum with the unnormalized bump,
        // normalized by its own total weight.
        let h = d.spacing()[0];
        let m = 4isize;
        let bump = |k: isize| {
            let r = k as f64 * h / ell;
            if r.abs() < 1.0 {
                (1.0 - r * r).powi(4)
            } else {
                0.0
            }
        };
        let out = mf.domain();
        let mut max_dev: f64 = 0.0;
        let mut amp: f64 = 0.0;
        for i in 0..out.points()[0] {
            for j in 0..out.points()[1] {
                let (pi, pj) = (i as isize + m, j as isize + m);
                let (mut acc, mut tot) = (0.0, 0.0);
                for a in -m..=m {
                    for b in -m..=m {
                        let wgt = bump(a) * bump(b);
                        let idx = d.flat_index(&[(pi + a) as usize, (pj + b) as usize]);
                        acc += wgt * f.values()[idx];
                        tot += wgt;
                    }
                }
                let v = mf.values()[out.flat_index(&[i, j])];
                max_dev = max_dev.max((v - acc / tot).abs());
                amp = amp.max(v.abs());
            }
        }
        assert!(max_dev <= 1e-12, "deviation {max_dev}");
        // The Fourier factor of the kernel damps but does not kill the mode.
        assert!(amp < 1.0 && amp > 0.9);
    }

    #[test]
    fn commutes_with_restriction() {
        let d = GridDomain::cube(2, 0.0, 1.0, 61).unwrap();
        let f = ScalarField::from_fn(&d, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let ell = 0.05;
        let full = mollify(&f, ell).unwrap();
        let sub = d.shrink(10).unwrap();
        let part = mollify(&restrict(&f, &sub).unwrap(), ell).unwrap();
        let common = restrict(&full, part.domain()).unwrap();
        for (a, b) in common.values().iter().zip(part.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn guards() {
        let d = GridDomain::cube(2, 0.0, 1.0, 21).unwrap();
        let f = ScalarField::constant(&d, 1.0);
        assert!(matches!(mollify(&f, 0.3), Err(Error::DomainTooSmall(_))));
        assert!(matches!(mollify(&f, 0.06), Err(Error::Resolution(_))));
    }
}
