//! One stage: mollify, decompose the rescaled deficit, run `n` sharper steps,
//! cancel their span remainder through adjusted amplitudes, then run the
//! `n_star - n` ordinary steps.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::PrimitiveBasis;
use crate::decompose::{kaellen_decompose, KaellenOptions};
use crate::error::{Error, Result};
use crate::fields::{self, restrict, GridDomain, GridField, ScalarField, SymField, VectorField};
use crate::step::{step_ordinary, step_sharper, StepDiagnostics, StepOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageParams {
    pub delta: f64,
    pub delta_hat: f64,
    /// IBP depth and Källén sweep count `J`.
    pub depth: usize,
    /// Frequency ratio `Lambda`.
    pub lambda_ratio: f64,
    /// `C_hat` in `ell = eta / (C_hat lambda_in)`.
    pub moll_constant: f64,
    /// `C` in `lambda_0 = C / ell`.
    pub lambda0_constant: f64,
    /// Closeness tolerance `r` in `|g - Du^t Du - delta h0| <= r delta`.
    pub r_threshold: f64,
    pub lambda_in: f64,
    pub eta: f64,
    /// Smallest admissible adjusted `b_j^2`.
    pub amplitude_floor: f64,
    /// Largest admissible `|H - h0|_inf` in the decomposition.
    pub nearness_threshold: f64,
    pub step: StepOptions,
}

impl Default for StageParams {
    fn default() -> Self {
        Self {
            delta: 0.1,
            delta_hat: 0.025,
            depth: 3,
            lambda_ratio: 4.0,
            moll_constant: 4.0,
            lambda0_constant: 1.0,
            r_threshold: 0.5,
            lambda_in: 1.0,
            eta: 1.0 / 32.0,
            amplitude_floor: 1e-3,
            nearness_threshold: 0.5,
            step: StepOptions::default(),
        }
    }
}

impl StageParams {
    pub fn ell(&self) -> f64 {
        self.eta / (self.moll_constant * self.lambda_in)
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0_constant / self.ell()
    }

    /// Exponent of `Lambda` in `lambda_i / lambda_0`: `i` up to `n`, then
    /// `J (i - n) + n`.
    pub fn frequency_exponent(&self, n: usize, i: usize) -> usize {
        if i <= n {
            i
        } else {
            self.depth * (i - n) + n
        }
    }

    /// `lambda_0, ..., lambda_{n_star}`.
    pub fn frequencies(&self, n: usize, n_star: usize) -> Vec<f64> {
        let l0 = self.lambda0();
        (0..=n_star)
            .map(|i| l0 * self.lambda_ratio.powi(self.frequency_exponent(n, i) as i32))
            .collect()
    }

    pub fn validate(&self, basis: &PrimitiveBasis) -> Result<()> {
        let h0_norm = basis.h0().max_abs();
        let bound = self.r_threshold * self.delta / h0_norm;
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Param(format!(
                "delta = {} outside (0, 1]",
                self.delta
            )));
        }
        if !(self.delta_hat > 0.0 && self.delta_hat < bound) {
            return Err(Error::Param(format!(
                "delta_hat = {} must lie in (0, r delta / |h0|) = (0, {bound})",
                self.delta_hat
            )));
        }
        if !(self.lambda_ratio >= 1.0) || self.depth == 0 {
            return Err(Error::Param(format!(
                "need Lambda >= 1 and J >= 1; got Lambda = {}, J = {}",
                self.lambda_ratio, self.depth
            )));
        }
        for (name, v) in [
            ("moll_constant", self.moll_constant),
            ("lambda0_constant", self.lambda0_constant),
            ("lambda_in", self.lambda_in),
            ("eta", self.eta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Param(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    /// `|g - Du^t Du|_inf` on the input domain.
    pub deficit_before: f64,
    /// `|g - Dv^t Dv|_inf` on the output domain.
    pub deficit_after: f64,
    /// `|g - Du^t Du - delta h0|_inf`.
    pub closeness_before: f64,
    /// `|g - Dv^t Dv - delta_hat h0|_inf`.
    pub closeness_after: f64,
    /// Change of the deficit caused by mollification alone.
    pub mollification_error: f64,
    pub ell: f64,
    pub frequencies_used: Vec<f64>,
    pub kaellen_history: Vec<f64>,
    pub kaellen_residual: f64,
    /// `max_j |b_j^2 + L_j(F)/delta - a_j^2|`.
    pub cancellation_residual: f64,
    pub min_adjusted_amplitude_sq: f64,
    pub per_step: Vec<StepDiagnostics>,
    /// `|v - u|_{C^1}` on the output domain.
    pub c1_increment: f64,
    pub c2_estimate: f64,
    pub domain_out: GridDomain,
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub v: VectorField,
    pub summary: StageSummary,
}

fn deficit(g: &SymField, u: &VectorField) -> Result<SymField> {
    Ok(g.sub(&fields::induced_metric(u)?))
}

fn check_shapes(u: &VectorField, g: &SymField, basis: &PrimitiveBasis) -> Result<()> {
    let n = basis.n();
    if u.domain() != g.domain() || u.domain().dim() != n || g.dim() != n || u.dim() != n + 1 {
        return Err(Error::Dimension(format!(
            "stage needs u: R^{n} -> R^{} and g in Sym_{n} on one grid",
            n + 1
        )));
    }
    Ok(())
}

/// Runs one stage. `timing` adds wall-clock time to the summary, which
/// otherwise depends only on the inputs.
pub fn run_stage(
    u: &VectorField,
    g: &SymField,
    params: &StageParams,
    basis: &PrimitiveBasis,
    timing: bool,
) -> Result<StageReport> {
    let start = Instant::now();
    check_shapes(u, g, basis)?;
    params.validate(basis)?;
    let (n, n_star) = (basis.n(), basis.n_star());
    let h0 = basis.h0();

    let deficit_in = deficit(g, u)?;
    let closeness_before = deficit_in.sub_constant(&h0.scaled(params.delta)).sup_norm();
    let bound = params.r_threshold * params.delta;
    if closeness_before > bound {
        return Err(Error::DeficitTooLarge {
            deficit: closeness_before,
            bound,
        });
    }
    let deficit_before = deficit_in.sup_norm();

    let ell = params.ell();
    let lambdas = params.frequencies(n, n_star);
    let (u_moll, g_moll) = (fields::mollify(u, ell)?, fields::mollify(g, ell)?);
    let domain = u_moll.domain().clone();
    for (i, nu) in basis.directions().iter().enumerate() {
        fields::check_resolution_along(
            &domain,
            lambdas[i + 1],
            nu,
            params.step.samples_per_period,
        )?;
    }
    log::info!(
        "stage: delta={:.4e} ell={ell:.4e} lambdas={lambdas:?} grid {:?}",
        params.delta,
        domain.points()
    );

    // Step 1-2: rescaled deficit and its decomposition.
    let deficit_moll = deficit(&g_moll, &u_moll)?;
    drop(g_moll);
    let mollification_error = deficit_moll
        .sub(&restrict(&deficit_in, &domain)?)
        .sup_norm();
    drop(deficit_in);
    let h = deficit_moll
        .scaled(1.0 / params.delta)
        .sub_constant(&h0.scaled(params.delta_hat / params.delta));
    drop(deficit_moll);
    let kaellen = kaellen_decompose(
        &h,
        &lambdas[1..=n],
        params.depth,
        basis,
        &KaellenOptions {
            nearness_threshold: params.nearness_threshold,
            positivity_threshold: params.amplitude_floor,
        },
    )?;
    drop(h);

    // Step 3: sharper steps, accumulating the span remainder.
    let len = domain.len();
    let mut f_total = vec![vec![0.0; len]; n_star - n];
    let mut per_step = Vec::with_capacity(n_star);
    let mut current = u_moll;
    for i in 0..n {
        let mu = lambdas[i].max(1.0);
        let out = step_sharper(
            &current,
            &kaellen.amplitudes[i],
            basis.direction(i),
            lambdas[i + 1],
            mu,
            params.delta,
            params.depth,
            basis,
            &params.step,
        )?;
        if let Some(fc) = &out.f_coeffs {
            for (acc, c) in f_total.iter_mut().zip(fc) {
                acc.par_iter_mut()
                    .zip(c.values())
                    .for_each(|(acc, x)| *acc += x);
            }
        }
        per_step.push(out.diagnostics);
        current = out.v;
    }

    // Step 4: adjusted amplitudes b_j = sqrt(a_j^2 - L_j(F)/delta).
    let mut adjusted = Vec::with_capacity(n_star - n);
    let mut cancellation_residual: f64 = 0.0;
    let mut min_b2 = f64::INFINITY;
    for (k, fk) in f_total.iter().enumerate() {
        let j = n + k;
        let a = kaellen.amplitudes[j].values();
        let b2: Vec<f64> = a
            .par_iter()
            .zip(fk)
            .map(|(a, f)| a * a - f / params.delta)
            .collect();
        if let Some(node) = b2.iter().position(|v| !(*v >= params.amplitude_floor)) {
            return Err(Error::NegativeAmplitude {
                index: j,
                node,
                amplitude_sq: a[node] * a[node],
                correction: fk[node] / params.delta,
            });
        }
        min_b2 = min_b2.min(b2.iter().copied().fold(f64::INFINITY, f64::min));
        let b: Vec<f64> = b2.par_iter().map(|v| v.sqrt()).collect();
        cancellation_residual = cancellation_residual.max(
            b.par_iter()
                .zip(fk)
                .zip(a)
                .map(|((b, f), a)| (b * b + f / params.delta - a * a).abs())
                .reduce(|| 0.0, f64::max),
        );
        adjusted.push(ScalarField::new(domain.clone(), b)?);
    }
    drop(f_total);

    // Step 5: ordinary steps.
    for (k, b) in adjusted.iter().enumerate() {
        let j = n + k;
        let out = step_ordinary(
            &current,
            b,
            basis.direction(j),
            lambdas[j + 1],
            params.delta,
            &params.step,
        )?;
        per_step.push(out.diagnostics);
        current = out.v;
    }

    let g_out = restrict(g, &domain)?;
    let deficit_out = deficit(&g_out, &current)?;
    let closeness_after = deficit_out
        .sub_constant(&h0.scaled(params.delta_hat))
        .sup_norm();
    let deficit_after = deficit_out.sup_norm();
    let increment = current.sub(&restrict(u, &domain)?);
    let summary = StageSummary {
        deficit_before,
        deficit_after,
        closeness_before,
        closeness_after,
        mollification_error,
        ell,
        frequencies_used: lambdas,
        kaellen_history: kaellen.residual_history.clone(),
        kaellen_residual: kaellen.residual.sup_norm(),
        cancellation_residual,
        min_adjusted_amplitude_sq: min_b2,
        per_step,
        c1_increment: fields::ck_norm(&increment, 1)?,
        c2_estimate: fields::ck_norm(&current, 2)?,
        domain_out: domain,
        wall_ms: timing.then(|| start.elapsed().as_millis() as u64),
    };
    log::info!(
        "stage done: deficit {:.4e} -> {:.4e}, closeness {:.4e} -> {:.4e}",
        summary.deficit_before,
        summary.deficit_after,
        summary.closeness_before,
        summary.closeness_after
    );
    Ok(StageReport {
        v: current,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_deficit(points: usize, delta: f64) -> (VectorField, SymField, PrimitiveBasis) {
        let b = PrimitiveBasis::new(2).unwrap();
        let d = GridDomain::cube(2, 0.0, 1.0, points).unwrap();
        let u = VectorField::from_fn(&d, 3, |x, o| {
            o[0] = x[0];
            o[1] = x[1];
            o[2] = 0.0;
        });
        let g = SymField::constant(
            &d,
            &crate::basis::SymMatrix::identity(2).add(&b.h0().scaled(delta)),
        );
        (u, g, b)
    }

    #[test]
    fn frequency_ladder() {
        let p = StageParams::default();
        let f = p.frequencies(2, 3);
        let l0 = p.lambda0();
        assert_eq!(f[1], 4.0 * l0);
        assert_eq!(f[2], 16.0 * l0);
        assert_eq!(f[3], 1024.0 * l0);
        assert!(f.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn delta_hat_guard() {
        let (u, g, b) = exact_deficit(65, 0.1);
        let p = StageParams {
            delta_hat: 0.5 * 0.1 / 1.5,
            ..StageParams::default()
        };
        assert!(matches!(
            run_stage(&u, &g, &p, &b, false),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn deficit_guard() {
        let (u, g, b) = exact_deficit(65, 0.1);
        let p = StageParams {
            delta: 0.05,
            delta_hat: 0.0125,
            ..StageParams::default()
        };
        assert!(matches!(
            run_stage(&u, &g, &p, &b, false),
            Err(Error::DeficitTooLarge { .. })
        ));
    }

    #[test]
    fn small_exact_deficit_stage() {
        // Short ladder (J = 1) so a 513 grid resolves the top frequency;
        // Lambda = 6 keeps the adjusted amplitudes positive.
        let (u, g, b) = exact_deficit(513, 0.1);
        let p = StageParams {
            depth: 1,
            lambda_ratio: 6.0,
            lambda0_constant: 0.025,
            eta: 0.125,
            ..StageParams::default()
        };
        let r = run_stage(&u, &g, &p, &b, false).unwrap();
        let s = &r.summary;
        assert_eq!(s.per_step.len(), 3);
        assert!(s.cancellation_residual <= 1e-12);
        assert!(s.deficit_after < s.deficit_before, "{s:?}");
        assert!(s.wall_ms.is_none());
    }
}
