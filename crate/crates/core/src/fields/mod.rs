//! Fields sampled on uniform rectangular grids.
//!
//! Storage is struct-of-arrays: every field is a list of channels, one
//! `Vec<f64>` per component, indexed row-major with the last axis fastest.

mod diff;
mod mollify;
mod norms;

pub use diff::SLOW_STENCIL_RESOLUTION;
pub(crate) use diff::{
    check_stencil, diff_channel, diff_channel_spaced, gradients as gradients_of, slow_spacing_cells,
};
pub use diff::{derivative, gram, induced_metric, jacobian, MIN_STENCIL_POINTS};
pub use mollify::{kernel_weights, mollify, mollify_margin_cells};
pub use norms::{
    check_resolution, check_resolution_along, ck_norm, holder_seminorm, holder_seminorm_channels,
    norm_report, sup_norm, NormReport, DEFAULT_SAMPLES_PER_PERIOD,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{packed_index, packed_len, SymMatrix};
use crate::error::{Error, Result};

/// Axis-aligned box sampled at `points[k]` nodes per axis, endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    lower: Vec<f64>,
    spacing: Vec<f64>,
    points: Vec<usize>,
}

impl GridDomain {
    pub fn new(lower: &[f64], upper: &[f64], points: &[usize]) -> Result<Self> {
        let n = lower.len();
        if n == 0 || upper.len() != n || points.len() != n {
            return Err(Error::Dimension(
                "domain corners and point counts disagree".into(),
            ));
        }
        let mut spacing = Vec::with_capacity(n);
        for k in 0..n {
            if points[k] < 2 {
                return Err(Error::Resolution(format!(
                    "axis {k} has {} points",
                    points[k]
                )));
            }
            let h = (upper[k] - lower[k]) / (points[k] - 1) as f64;
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Dimension(format!("axis {k} has nonpositive extent")));
            }
            spacing.push(h);
        }
        Ok(Self {
            lower: lower.to_vec(),
            spacing,
            points: points.to_vec(),
        })
    }

    /// Square grid `[lo, hi]^n` with `points` nodes per axis.
    pub fn cube(n: usize, lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::new(&vec![lo; n], &vec![hi; n], &vec![points; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|k| self.coord(k, self.points[k] - 1))
            .collect()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distance between consecutive flat indices along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.points[axis + 1..].iter().product()
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.spacing[axis]
    }

    /// Position of node `idx` along `axis`.
    #[inline]
    pub fn axis_index(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.points[axis]
    }

    pub fn node_coords(&self, idx: usize, out: &mut [f64]) {
        let mut rem = idx;
        for k in (0..self.dim()).rev() {
            let i = rem % self.points[k];
            rem /= self.points[k];
            out[k] = self.coord(k, i);
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.points)
            .fold(0, |acc, (i, p)| acc * p + i)
    }

    /// Drops `cells` nodes from both ends of every axis.
    pub fn shrink(&self, cells: usize) -> Result<Self> {
        let mut lower = self.lower.clone();
        let mut points = self.points.clone();
        for k in 0..self.dim() {
            if self.points[k] <= 2 * cells {
                return Err(Error::DomainTooSmall(format!(
                    "axis {k}: {} points cannot lose {cells} per side",
                    self.points[k]
                )));
            }
            lower[k] = self.coord(k, cells);
            points[k] = self.points[k] - 2 * cells;
        }
        Ok(Self {
            lower,
            spacing: self.spacing.clone(),
            points,
        })
    }

    /// Node offsets of `sub` inside `self`, if `sub` is node-aligned and contained.
    pub fn offsets_of(&self, sub: &GridDomain) -> Result<Vec<usize>> {
        if sub.dim() != self.dim() {
            return Err(Error::Alignment("dimension mismatch".into()));
        }
        let mut offsets = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let h = self.spacing[k];
            if ((sub.spacing[k] - h) / h).abs() > 1e-9 {
                return Err(Error::Alignment(format!("axis {k}: spacing differs")));
            }
            let shift = (sub.lower[k] - self.lower[k]) / h;
            let rounded = shift.round();
            if (shift - rounded).abs() > 1e-6 || rounded < 0.0 {
                return Err(Error::Alignment(format!(
                    "axis {k}: offset {shift} is not a node"
                )));
            }
            let off = rounded as usize;
            if off + sub.points[k] > self.points[k] {
                return Err(Error::Alignment(format!(
                    "axis {k}: sub-domain leaves parent"
                )));
            }
            offsets.push(off);
        }
        Ok(offsets)
    }
}

/// Common channel access so that grid operations apply to every field kind.
pub trait GridField: Sized {
    fn domain(&self) -> &GridDomain;
    fn channels(&self) -> Vec<&[f64]>;
    /// Same field kind and shape with new channel data.
    fn rebuild(&self, domain: GridDomain, channels: Vec<Vec<f64>>) -> Self;

    /// Applies `f` to each channel independently.
    fn map_channels(&self, domain: GridDomain, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Self {
        let chans = self.channels();
        let out = chans.iter().map(|c| f(c)).collect();
        self.rebuild(domain, out)
    }

    /// Index of the first non-finite entry, if any.
    fn first_non_finite(&self) -> Option<usize> {
        self.channels()
            .iter()
            .filter_map(|c| c.par_iter().position_first(|x| !x.is_finite()))
            .min()
    }

    fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(i) => Err(Error::NonFinite(i)),
            None => Ok(()),
        }
    }
}

/// Exact sample extraction onto a node-aligned sub-domain.
pub fn restrict<F: GridField>(f: &F, sub: &GridDomain) -> Result<F> {
    let parent = f.domain();
    let offsets = parent.offsets_of(sub)?;
    let n = parent.dim();
    let len = sub.len();
    let map: Vec<usize> = (0..len)
        .into_par_iter()
        .map(|idx| {
            let mut rem = idx;
            let mut multi = vec![0; n];
            for k in (0..n).rev() {
                multi[k] = rem % sub.points[k] + offsets[k];
                rem /= sub.points[k];
            }
            parent.flat_index(&multi)
        })
        .collect();
    Ok(f.map_channels(sub.clone(), |c| map.iter().map(|&i| c[i]).collect()))
}

fn sample_nodes(
    domain: &GridDomain,
    width: usize,
    f: impl Fn(&[f64], &mut [f64]) + Sync,
) -> Vec<Vec<f64>> {
    let len = domain.len();
    let n = domain.dim();
    let mut node_major = vec![0.0; len * width];
    node_major
        .par_chunks_mut(width.max(1))
        .enumerate()
        .for_each(|(idx, out)| {
            let mut x = vec![0.0; n];
            domain.node_coords(idx, &mut x);
            f(&x, out);
        });
    (0..width)
        .map(|c| (0..len).map(|i| node_major[i * width + c]).collect())
        .collect()
}

fn check_len(domain: &GridDomain, c: &[f64]) -> Result<()> {
    if c.len() != domain.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} nodes",
            c.len(),
            domain.len()
        )));
    }
    if let Some(i) = c.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    domain: GridDomain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self> {
        check_len(&domain, &values)?;
        Ok(Self { domain, values })
    }

    pub(crate) fn from_raw(domain: GridDomain, values: Vec<f64>) -> Self {
        debug_assert_eq!(domain.len(), values.len());
        Self { domain, values }
    }

    pub fn constant(domain: &GridDomain, c: f64) -> Self {
        Self {
            domain: domain.clone(),
            values: vec![c; domain.len()],
        }
    }

    pub fn from_fn(domain: &GridDomain, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let values = sample_nodes(domain, 1, |x, out| out[0] = f(x))
            .pop()
            .unwrap_or_default();
        Self {
            domain: domain.clone(),
            values,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self::from_raw(
            self.domain.clone(),
            self.values.par_iter().map(|x| f(*x)).collect(),
        )
    }
}

impl GridField for ScalarField {
    fn domain(&self) -> &GridDomain {
        &self.domain
    }
    fn channels(&self) -> Vec<&[f64]> {
        vec![&self.values]
    }
    fn rebuild(&self, domain: GridDomain, mut channels: Vec<Vec<f64>>) -> Self {
        Self::from_raw(domain, channels.remove(0))
    }
}

/// `R^d`-valued field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    domain: GridDomain,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(domain: GridDomain, comps: Vec<Vec<f64>>) -> Result<Self> {
        for c in &comps {
            check_len(&domain, c)?;
        }
        Ok(Self { domain, comps })
    }

    pub(crate) fn from_raw(domain: GridDomain, comps: Vec<Vec<f64>>) -> Self {
        Self { domain, comps }
    }

    pub fn zeros(domain: &GridDomain, dim: usize) -> Self {
        Self {
            domain: domain.clone(),
            comps: vec![vec![0.0; domain.len()]; dim],
        }
    }

    pub fn from_fn(domain: &GridDomain, dim: usize, f: impl Fn(&[f64], &mut [f64]) + Sync) -> Self {
        Self {
            domain: domain.clone(),
            comps: sample_nodes(domain, dim, f),
        }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn comp(&self, k: usize) -> &[f64] {
        &self.comps[k]
    }

    pub fn comps(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn into_comps(self) -> Vec<Vec<f64>> {
        self.comps
    }

    pub fn at(&self, idx: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c[idx]).collect()
    }

    pub fn sub(&self, other: &Self) -> Self {
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.par_iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        Self::from_raw(self.domain.clone(), comps)
    }
}

impl GridField for VectorField {
    fn domain(&self) -> &GridDomain {
        &self.domain
    }
    fn channels(&self) -> Vec<&[f64]> {
        self.comps.iter().map(|c| c.as_slice()).collect()
    }
    fn rebuild(&self, domain: GridDomain, channels: Vec<Vec<f64>>) -> Self {
        Self::from_raw(domain, channels)
    }
}

/// `rows x cols` matrix field, entries stored row-major as channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    domain: GridDomain,
    rows: usize,
    cols: usize,
    entries: Vec<Vec<f64>>,
}

impl MatrixField {
    pub(crate) fn from_raw(
        domain: GridDomain,
        rows: usize,
        cols: usize,
        entries: Vec<Vec<f64>>,
    ) -> Self {
        debug_assert_eq!(entries.len(), rows * cols);
        Self {
            domain,
            rows,
            cols,
            entries,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entry(&self, r: usize, c: usize) -> &[f64] {
        &self.entries[r * self.cols + c]
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    /// Column `c` as a vector field.
    pub fn column(&self, c: usize) -> VectorField {
        let comps = (0..self.rows).map(|r| self.entry(r, c).to_vec()).collect();
        VectorField::from_raw(self.domain.clone(), comps)
    }

    pub fn at(&self, idx: usize) -> Vec<f64> {
        self.entries.iter().map(|e| e[idx]).collect()
    }
}

impl GridField for MatrixField {
    fn domain(&self) -> &GridDomain {
        &self.domain
    }
    fn channels(&self) -> Vec<&[f64]> {
        self.entries.iter().map(|c| c.as_slice()).collect()
    }
    fn rebuild(&self, domain: GridDomain, channels: Vec<Vec<f64>>) -> Self {
        Self::from_raw(domain, self.rows, self.cols, channels)
    }
}

/// Field of symmetric `n x n` matrices in packed upper-triangle channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SymField {
    domain: GridDomain,
    n: usize,
    packed: Vec<Vec<f64>>,
}

impl SymField {
    pub fn new(domain: GridDomain, n: usize, packed: Vec<Vec<f64>>) -> Result<Self> {
        if packed.len() != packed_len(n) {
            return Err(Error::Dimension(format!(
                "{} channels for Sym_{n}",
                packed.len()
            )));
        }
        for c in &packed {
            check_len(&domain, c)?;
        }
        Ok(Self { domain, n, packed })
    }

    pub(crate) fn from_raw(domain: GridDomain, n: usize, packed: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(packed.len(), packed_len(n));
        Self { domain, n, packed }
    }

    pub fn zeros(domain: &GridDomain, n: usize) -> Self {
        Self::from_raw(
            domain.clone(),
            n,
            vec![vec![0.0; domain.len()]; packed_len(n)],
        )
    }

    pub fn constant(domain: &GridDomain, m: &SymMatrix) -> Self {
        let packed = m.packed().iter().map(|&x| vec![x; domain.len()]).collect();
        Self::from_raw(domain.clone(), m.dim(), packed)
    }

    pub fn from_fn(domain: &GridDomain, n: usize, f: impl Fn(&[f64]) -> SymMatrix + Sync) -> Self {
        let packed = sample_nodes(domain, packed_len(n), |x, out| {
            out.copy_from_slice(f(x).packed());
        });
        Self::from_raw(domain.clone(), n, packed)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> &[f64] {
        &self.packed[packed_index(self.n, i, j)]
    }

    pub fn packed(&self) -> &[Vec<f64>] {
        &self.packed
    }

    pub fn into_packed(self) -> Vec<Vec<f64>> {
        self.packed
    }

    pub fn at(&self, idx: usize) -> SymMatrix {
        SymMatrix::from_packed(self.n, self.packed.iter().map(|c| c[idx]).collect())
    }

    fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Sync + Send) -> Self {
        assert_eq!(self.n, other.n);
        assert_eq!(self.domain.len(), other.domain.len());
        let packed = self
            .packed
            .iter()
            .zip(&other.packed)
            .map(|(a, b)| a.par_iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
            .collect();
        Self::from_raw(self.domain.clone(), self.n, packed)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let packed = self
            .packed
            .iter()
            .map(|c| c.par_iter().map(|x| s * x).collect())
            .collect();
        Self::from_raw(self.domain.clone(), self.n, packed)
    }

    pub fn sub_constant(&self, m: &SymMatrix) -> Self {
        let packed = self
            .packed
            .iter()
            .zip(m.packed())
            .map(|(c, v)| c.par_iter().map(|x| x - v).collect())
            .collect();
        Self::from_raw(self.domain.clone(), self.n, packed)
    }

    /// Entrywise maximum norm over all nodes.
    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }
}

impl GridField for SymField {
    fn domain(&self) -> &GridDomain {
        &self.domain
    }
    fn channels(&self) -> Vec<&[f64]> {
        self.packed.iter().map(|c| c.as_slice()).collect()
    }
    fn rebuild(&self, domain: GridDomain, channels: Vec<Vec<f64>>) -> Self {
        Self::from_raw(domain, self.n, channels)
    }
}

/// Evaluates `k` channels node by node, writing each node's values through
/// a scratch slice straight into the channel buffers.
pub(crate) fn fill_channels<F>(len: usize, k: usize, f: F) -> Vec<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    const BLOCK: usize = 4096;
    let mut out = vec![vec![0.0; len]; k];
    let mut blocks: Vec<Vec<&mut [f64]>> = (0..len.div_ceil(BLOCK))
        .map(|_| Vec::with_capacity(k))
        .collect();
    for channel in out.iter_mut() {
        for (b, chunk) in channel.chunks_mut(BLOCK).enumerate() {
            blocks[b].push(chunk);
        }
    }
    blocks
        .into_par_iter()
        .enumerate()
        .for_each(|(b, mut slices)| {
            let mut scratch = vec![0.0; k];
            let count = slices.first().map_or(0, |s| s.len());
            for i in 0..count {
                f(b * BLOCK + i, &mut scratch);
                for (s, v) in slices.iter_mut().zip(&scratch) {
                    s[i] = *v;
                }
            }
        });
    out
}
