use rayon::prelude::*;

use super::{GridDomain, GridField, MatrixField, ScalarField, SymField, VectorField};
use crate::basis::packed_len;
use crate::error::{Error, Result};

/// Fewest nodes per axis on which the order-4 stencils are applied.
pub const MIN_STENCIL_POINTS: usize = 9;

// Weights scaled by 12h (first derivative) or 12h^2 (second). The one-sided
// first-derivative rows use six points, scaled by 60h, so the boundary error
// constant does not dominate the interior one on oscillatory data.
const D1_CENTER: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];
const D1_EDGE0: [f64; 6] = [-137.0, 300.0, -300.0, 200.0, -75.0, 12.0];
const D1_EDGE1: [f64; 6] = [-12.0, -65.0, 120.0, -60.0, 20.0, -3.0];
const D2_CENTER: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
const D2_EDGE0: [f64; 6] = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
const D2_EDGE1: [f64; 6] = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];

#[inline]
fn apply(data: &[f64], base: usize, stride: usize, start: isize, dir: isize, w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (k, wk) in w.iter().enumerate() {
        let off = (start + dir * k as isize) * stride as isize;
        acc += wk * data[(base as isize + off) as usize];
    }
    acc
}

pub(crate) fn diff_channel(domain: &GridDomain, data: &[f64], axis: usize, order: u8) -> Vec<f64> {
    diff_channel_spaced(domain, data, axis, order, 1)
}

/// Target `spacing * lambda` for derivatives of fields that vary slowly
/// against a phase of frequency `lambda`.
pub const SLOW_STENCIL_RESOLUTION: f64 = 0.1;

/// Stencil spacing, in cells along `axis`, for slow fields next to a phase
/// of frequency `lambda`.
pub(crate) fn slow_spacing_cells(domain: &GridDomain, axis: usize, lambda: f64) -> usize {
    let cells = (SLOW_STENCIL_RESOLUTION / (domain.spacing()[axis] * lambda)).floor();
    if cells.is_finite() && cells >= 1.0 {
        cells as usize
    } else {
        1
    }
}

/// Widest stencil spacing (in cells) that still fits the one-sided rows.
pub(crate) fn max_spacing_cells(domain: &GridDomain, axis: usize) -> usize {
    ((domain.points()[axis] - 1) / 6).max(1)
}

/// Same stencils as [`diff_channel`] with nodes `cells` apart. Wider spacing
/// trades truncation error on slow data for less amplification of rounding
/// noise when derivatives are nested.
pub(crate) fn diff_channel_spaced(
    domain: &GridDomain,
    data: &[f64],
    axis: usize,
    order: u8,
    cells: usize,
) -> Vec<f64> {
    let p = domain.points()[axis];
    let k = cells.clamp(1, max_spacing_cells(domain, axis));
    let s = domain.stride(axis);
    let ks = k * s;
    let h = domain.spacing()[axis] * k as f64;
    let scale = match order {
        1 => 1.0 / (12.0 * h),
        _ => 1.0 / (12.0 * h * h),
    };
    let (center, edge0, edge1, sign, div) = match order {
        1 => (&D1_CENTER, &D1_EDGE0, &D1_EDGE1, -1.0, 5.0),
        _ => (&D2_CENTER, &D2_EDGE0, &D2_EDGE1, 1.0, 1.0),
    };
    (0..data.len())
        .into_par_iter()
        .map(|idx| {
            let i = (idx / s) % p;
            let v = if i >= 2 * k && i + 2 * k < p {
                apply(data, idx, ks, -2, 1, center)
            } else if i < k {
                apply(data, idx, ks, 0, 1, edge0) / div
            } else if i < 2 * k {
                apply(data, idx, ks, -1, 1, edge1) / div
            } else if i + k >= p {
                sign * apply(data, idx, ks, 0, -1, edge0) / div
            } else {
                sign * apply(data, idx, ks, 1, -1, edge1) / div
            };
            v * scale
        })
        .collect()
}

pub(crate) fn check_stencil(domain: &GridDomain) -> Result<()> {
    if let Some(k) = domain.points().iter().position(|&p| p < MIN_STENCIL_POINTS) {
        return Err(Error::Resolution(format!(
            "axis {k} has {} points; differentiation needs {MIN_STENCIL_POINTS}",
            domain.points()[k]
        )));
    }
    Ok(())
}

/// `d f / d x_axis` (`order = 1`) or `d^2 f / d x_axis^2` (`order = 2`).
pub fn derivative(f: &ScalarField, axis: usize, order: u8) -> Result<ScalarField> {
    let d = f.domain();
    if axis >= d.dim() {
        return Err(Error::Dimension(format!(
            "axis {axis} on a {}-dimensional grid",
            d.dim()
        )));
    }
    if !(order == 1 || order == 2) {
        return Err(Error::Param(format!(
            "derivative order {order} not supported"
        )));
    }
    check_stencil(d)?;
    Ok(ScalarField::from_raw(
        d.clone(),
        diff_channel(d, f.values(), axis, order),
    ))
}

/// Gradient of every channel of `f`, as `[channel][axis]`.
pub(crate) fn gradients<F: GridField>(f: &F) -> Result<Vec<Vec<Vec<f64>>>> {
    let d = f.domain();
    check_stencil(d)?;
    Ok(f.channels()
        .iter()
        .map(|c| (0..d.dim()).map(|k| diff_channel(d, c, k, 1)).collect())
        .collect())
}

/// `Du` with entry `(r, c) = d u_r / d x_c`.
pub fn jacobian(u: &VectorField) -> Result<MatrixField> {
    let d = u.domain();
    let n = d.dim();
    let entries: Vec<Vec<f64>> = gradients(u)?.into_iter().flatten().collect();
    Ok(MatrixField::from_raw(d.clone(), u.dim(), n, entries))
}

/// `A^t A` per node.
pub fn gram(a: &MatrixField) -> SymField {
    let n = a.cols();
    let len = a.domain().len();
    let mut packed = Vec::with_capacity(packed_len(n));
    for i in 0..n {
        for j in i..n {
            let v: Vec<f64> = (0..len)
                .into_par_iter()
                .map(|idx| {
                    (0..a.rows())
                        .map(|r| a.entry(r, i)[idx] * a.entry(r, j)[idx])
                        .sum()
                })
                .collect();
            packed.push(v);
        }
    }
    SymField::from_raw(a.domain().clone(), n, packed)
}

/// Pull-back metric `Du^t Du`.
pub fn induced_metric(u: &VectorField) -> Result<SymField> {
    Ok(gram(&jacobian(u)?))
}
