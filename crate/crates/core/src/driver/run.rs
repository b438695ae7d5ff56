use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::holder::{estimate_holder, HolderTable};
use super::preset::make_preset;
use crate::basis::PrimitiveBasis;
use crate::error::{Error, Result};
use crate::fields::{
    self, restrict, GridDomain, GridField, SymField, VectorField, MIN_STENCIL_POINTS,
};
use crate::stage::{run_stage, StageParams, StageSummary};

/// Written at the top of every report.
pub const REPORT_HEADER: &str = "corrugate run: the initial short immersion is a preset \
(flat map with a prescribed deficit), not a Nash-Kuiper construction; \
the Hölder exponent is a dyadic-difference estimate, not a certificate.";

/// Schedule values and grid budget for one stage, fixed before the run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub q: usize,
    pub delta: f64,
    pub delta_next: f64,
    pub lambda: f64,
    pub big_lambda: f64,
    pub eta: f64,
    pub ell: f64,
    pub top_frequency: f64,
    pub points_in: Vec<usize>,
    pub points_out: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub header: String,
    pub config: RunConfig,
    pub plan: Vec<StagePlan>,
    pub stages: Vec<StageSummary>,
    /// `|u_{q+1} - u_q|_{C^1}` on the domain of `u_{q+1}`.
    pub c1_increments: Vec<f64>,
    /// `|g - Du_0^t Du_0|`, then `deficit_after` of each completed stage.
    pub deficit_trajectory: Vec<f64>,
    /// `|u_Q - u_0|_inf` on the last domain.
    pub c0_distance: f64,
    pub holder: HolderTable,
    pub failure: Option<StageFailure>,
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// `u_0, ..., u_k` for the `k` completed stages.
    pub iterates: Vec<VectorField>,
    pub g: SymField,
    /// The stage error that ended the run early, wrapped with its index.
    pub error: Option<Error>,
}

fn stage_fits(
    domain: &GridDomain,
    params: &StageParams,
    basis: &PrimitiveBasis,
) -> Result<GridDomain> {
    let ell = params.ell();
    let mut points = domain.points().to_vec();
    for (k, p) in points.iter_mut().enumerate() {
        let h = domain.spacing()[k];
        if ell < 2.0 * h * (1.0 - 1e-12) {
            return Err(Error::Resolution(format!(
                "mollification length {ell:e} below two cells on axis {k}"
            )));
        }
        let m = fields::mollify_margin_cells(ell, h);
        if *p < 2 * m + MIN_STENCIL_POINTS || h * (*p - 1) as f64 <= 4.0 * ell {
            return Err(Error::DomainTooSmall(format!(
                "axis {k}: {p} points cannot afford mollification at ell = {ell:e}"
            )));
        }
        *p -= 2 * m;
    }
    let lower: Vec<f64> = (0..domain.dim())
        .map(|k| domain.coord(k, (domain.points()[k] - points[k]) / 2))
        .collect();
    let upper: Vec<f64> = (0..domain.dim())
        .map(|k| lower[k] + domain.spacing()[k] * (points[k] - 1) as f64)
        .collect();
    let out = GridDomain::new(&lower, &upper, &points)?;
    let lambdas = params.frequencies(basis.n(), basis.n_star());
    for (i, nu) in basis.directions().iter().enumerate() {
        fields::check_resolution_along(&out, lambdas[i + 1], nu, params.step.samples_per_period)?;
    }
    Ok(out)
}

/// Checks that the grid affords every stage's shrinkage and frequency ladder.
pub fn plan(config: &RunConfig) -> Result<Vec<StagePlan>> {
    let n = config.dimension;
    config.schedule.validate(n)?;
    let basis = PrimitiveBasis::new(n)?;
    let mut domain = config.domain()?;
    let mut rows = Vec::with_capacity(config.schedule.stages);
    for q in 0..config.schedule.stages {
        let params = config.stage_params(q);
        let out = stage_fits(&domain, &params, &basis).map_err(|e| Error::Stage {
            stage: q,
            source: Box::new(e),
        })?;
        rows.push(StagePlan {
            q,
            delta: params.delta,
            delta_next: params.delta_hat,
            lambda: params.lambda_in,
            big_lambda: params.lambda_ratio,
            eta: params.eta,
            ell: params.ell(),
            top_frequency: *params.frequencies(n, basis.n_star()).last().unwrap_or(&0.0),
            points_in: domain.points().to_vec(),
            points_out: out.points().to_vec(),
        });
        domain = out;
    }
    Ok(rows)
}

/// Runs the configured stages. Configuration and grid-budget problems are
/// errors; a failing stage ends the run with a partial report.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let start = Instant::now();
    let plan = plan(config)?;
    let n = config.dimension;
    let basis = PrimitiveBasis::new(n)?;
    let domain = config.domain()?;
    let preset = make_preset(
        &config.preset,
        &basis,
        config.schedule.delta0,
        config.stage.r_threshold,
        &domain,
    )?;
    let g = preset.g;
    let mut iterates = vec![preset.u0];
    let mut stages = Vec::with_capacity(plan.len());
    let mut failure = None;
    let mut error = None;
    let mut g_q = g.clone();
    let deficit0 = g.sub(&fields::induced_metric(&iterates[0])?).sup_norm();
    for q in 0..plan.len() {
        let params = config.stage_params(q);
        let u = iterates.last().expect("u_0 is always present");
        match run_stage(u, &g_q, &params, &basis, config.timing) {
            Ok(rep) => {
                g_q = restrict(&g, rep.v.domain())?;
                stages.push(rep.summary);
                iterates.push(rep.v);
            }
            Err(e) => {
                log::warn!("stage {q} failed: {e}");
                failure = Some(StageFailure {
                    stage: q,
                    error: e.to_string(),
                });
                error = Some(Error::Stage {
                    stage: q,
                    source: Box::new(e),
                });
                break;
            }
        }
    }

    let c1_increments = stages.iter().map(|s| s.c1_increment).collect();
    let deficit_trajectory = std::iter::once(deficit0)
        .chain(stages.iter().map(|s| s.deficit_after))
        .collect();
    let last = iterates.last().expect("u_0 is always present");
    let c0_distance = fields::sup_norm(&last.sub(&restrict(&iterates[0], last.domain())?));
    let holder = estimate_holder(&iterates, &config.holder_alphas)?;
    let report = RunReport {
        header: REPORT_HEADER.to_string(),
        config: config.clone(),
        plan,
        stages,
        c1_increments,
        deficit_trajectory,
        c0_distance,
        holder,
        failure,
        wall_ms: config.timing.then(|| start.elapsed().as_millis() as u64),
    };
    Ok(RunOutcome {
        report,
        iterates,
        g,
        error,
    })
}
