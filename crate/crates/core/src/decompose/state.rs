//! Iteration machinery shared by the three solvers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::updates::{coupled_w_from_unfolding, gram_update, solve_branch};
use super::{converged, lambda_at, Init, IterRecord, ReinitEvent, SolveReport, SolverConfig};
use crate::basis::{self, BasisSpec, KnotSet};
use crate::error::{Error, Result};
use crate::flexnet::FlexibleLayer;
use crate::tensor::{cpd_reconstruct, pinv, CpdFactors, Tensor3};

pub(crate) struct Unfoldings {
    pub j1: DMatrix<f64>,
    pub j2: DMatrix<f64>,
    pub j3: DMatrix<f64>,
}

impl Unfoldings {
    pub fn new(t: &Tensor3) -> Result<Self> {
        Ok(Unfoldings {
            j1: t.unfold(1)?,
            j2: t.unfold(2)?,
            j3: t.unfold(3)?,
        })
    }
}

pub(crate) fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn random_factors(dims: (usize, usize, usize), r: usize, rng: &mut ChaCha8Rng) -> CpdFactors {
    let (n, m, big_n) = dims;
    CpdFactors {
        w: gaussian(n, r, rng),
        v: gaussian(m, r, rng),
        h: gaussian(big_n, r, rng),
    }
}

/// Scales every non-zero column of `v` to unit Euclidean norm.
pub(crate) fn normalize_columns(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
}

pub(crate) fn tensor_residual_sq(t: &Tensor3, p: &CpdFactors) -> Result<f64> {
    let rec = cpd_reconstruct(p)?;
    Ok(rec
        .data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

pub(crate) fn matrix_residual_sq(f: &DMatrix<f64>, w: &DMatrix<f64>, z: &DMatrix<f64>) -> f64 {
    (f - w * z.transpose()).iter().map(|x| x * x).sum()
}

pub(crate) fn ratio(num: f64, denom: f64) -> f64 {
    if denom > 0.0 {
        num / denom
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// One unconstrained sweep: W, V (then column-normalised), H.
pub(crate) fn als_sweep(unf: &Unfoldings, p: &mut CpdFactors, tol: f64) -> Result<()> {
    p.w = gram_update(&unf.j1, &p.h, &p.v, tol)?;
    p.v = gram_update(&unf.j2, &p.h, &p.w, tol)?;
    normalize_columns(&mut p.v);
    p.h = gram_update(&unf.j3, &p.v, &p.w, tol)?;
    Ok(())
}

/// Knots and projections of every branch. Flips `(v_l, h_l)` when an
/// anchored family sees a non-positive maximum (the CPD is unchanged by
/// the flip) and redraws `v_l` when the projections collapse.
#[allow(clippy::too_many_arguments)]
pub(crate) fn refresh_branches(
    spec: &BasisSpec,
    u: &DMatrix<f64>,
    p: &mut CpdFactors,
    frozen: Option<&[KnotSet]>,
    iter: usize,
    rng: &mut ChaCha8Rng,
    log: &mut Vec<ReinitEvent>,
) -> Result<Vec<(KnotSet, Vec<f64>)>> {
    const MAX_REDRAWS: usize = 20;
    let r = p.rank();
    let mut out = Vec::with_capacity(r);
    for l in 0..r {
        let mut redraws = 0;
        loop {
            let mut t: Vec<f64> = (u.transpose() * p.v.column(l)).iter().cloned().collect();
            let max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if spec.family.needs_positive_max() && max <= 0.0 && frozen.is_none() {
                let mut col = p.v.column_mut(l);
                col.neg_mut();
                let mut hcol = p.h.column_mut(l);
                hcol.neg_mut();
                t.iter_mut().for_each(|x| *x = -*x);
            }
            let knots = match frozen {
                Some(k) => Ok(k[l].clone()),
                None => basis::knots_from_projections(spec, &t, l),
            };
            match knots {
                Ok(k) => {
                    out.push((k, t));
                    break;
                }
                Err(e @ (Error::DegenerateProjection { .. } | Error::NonPositiveMaximum { .. })) => {
                    if redraws == MAX_REDRAWS {
                        return Err(e);
                    }
                    redraws += 1;
                    log.push(ReinitEvent {
                        iter,
                        branch: l,
                        reason: e.to_string(),
                    });
                    let fresh = gaussian(p.v.nrows(), 1, rng);
                    let norm = fresh.norm();
                    p.v.set_column(l, &(fresh.column(0) / norm));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

pub(crate) struct RunOutput {
    pub model: FlexibleLayer,
    pub report: SolveReport,
    /// Selection score of the chosen iterate (lower is better).
    pub score: f64,
}

/// One restart of the constrained learner. With `f` present this is the
/// coupled (CMTF) algorithm, otherwise the tensor-only (CTD) one.
pub(crate) fn run_constrained(
    t: &Tensor3,
    f: Option<&DMatrix<f64>>,
    spec: &BasisSpec,
    u: &DMatrix<f64>,
    config: &SolverConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RunOutput> {
    let (n, m, big_n) = t.dims();
    let r = config.rank;
    let tol = config.pinv_rel_tol;
    let unf = Unfoldings::new(t)?;
    let t_norm = t.norm_sq();
    let f_norm = f.map(|f| f.iter().map(|x| x * x).sum::<f64>()).unwrap_or(0.0);

    let mut p = random_factors((n, m, big_n), r, rng);
    normalize_columns(&mut p.v);
    let mut z = match (config.init, f) {
        (Init::RelaxedAls, Some(f)) => {
            for _ in 0..config.init_sweeps {
                als_sweep(&unf, &mut p, tol)?;
            }
            // Z = F^T (W^T)^†
            f.transpose() * pinv(&p.w.transpose(), tol)?
        }
        (Init::RelaxedAls, None) => {
            for _ in 0..config.init_sweeps {
                als_sweep(&unf, &mut p, tol)?;
            }
            DMatrix::zeros(big_n, r)
        }
        (Init::Random, _) => gaussian(big_n, r, rng),
    };

    let method = if f.is_some() { "cmtf" } else { "ctd" };
    let mut report = SolveReport::new(method);
    let mut frozen: Option<Vec<KnotSet>> = None;
    let mut best: Option<(f64, FlexibleLayer)> = None;
    let mut objectives = Vec::with_capacity(config.max_iters);

    for iter in 0..config.max_iters {
        let lambda = if f.is_some() { lambda_at(config, iter) } else { 0.0 };

        // unconstrained factor updates
        p.w = match f {
            Some(f) => coupled_w_from_unfolding(&unf.j1, f, &p.v, &p.h, &z, lambda, tol)?,
            None => gram_update(&unf.j1, &p.h, &p.v, tol)?,
        };
        p.v = gram_update(&unf.j2, &p.h, &p.w, tol)?;
        normalize_columns(&mut p.v);
        p.h = gram_update(&unf.j3, &p.v, &p.w, tol)?;
        if let Some(f) = f {
            let gram = p.w.transpose() * &p.w;
            z = f.transpose() * &p.w * pinv(&gram, tol)?;
        }

        // structure: knots, basis matrices, coefficients, projection
        let branches = refresh_branches(
            spec,
            u,
            &mut p,
            frozen.as_deref(),
            iter,
            rng,
            &mut report.reinit_log,
        )?;
        if config.freeze_knots && frozen.is_none() {
            frozen = Some(branches.iter().map(|(k, _)| k.clone()).collect());
        }
        let solved: Vec<(DVector<f64>, DVector<f64>, Option<DVector<f64>>)> = branches
            .par_iter()
            .enumerate()
            .map(|(l, (knots, proj))| {
                let x = basis::x_matrix(spec, knots, proj);
                let hl = p.h.column(l).clone_owned();
                match f {
                    Some(_) => {
                        let y = basis::y_matrix(spec, knots, proj);
                        let zl = z.column(l).clone_owned();
                        let c = solve_branch(&x, &hl, Some((&y, &zl)), lambda, tol)?;
                        let h_new = &x * &c;
                        let z_new = &y * &c;
                        Ok((c, h_new, Some(z_new)))
                    }
                    None => {
                        let c = solve_branch(&x, &hl, None, 0.0, tol)?;
                        let h_new = &x * &c;
                        Ok((c, h_new, None))
                    }
                }
            })
            .collect::<Result<_>>()?;
        let mut coeffs = DMatrix::zeros(spec.n_coeffs(), r);
        for (l, (c, h_new, z_new)) in solved.into_iter().enumerate() {
            coeffs.set_column(l, &c);
            p.h.set_column(l, &h_new);
            if let Some(zl) = z_new {
                z.set_column(l, &zl);
            }
        }

        // bookkeeping
        let t_res = tensor_residual_sq(t, &p)?;
        let (m_nmse, objective) = match f {
            Some(f) => {
                let m_res = matrix_residual_sq(f, &p.w, &z);
                (ratio(m_res, f_norm), t_res + lambda * lambda * m_res)
            }
            None => (f64::NAN, t_res),
        };
        let record = IterRecord {
            iter,
            lambda,
            tensor_nmse: ratio(t_res, t_norm),
            matrix_nmse: m_nmse,
            objective,
        };
        if !record.objective.is_finite() {
            return Err(Error::NonFinite("solver objective"));
        }
        report.records.push(record);
        objectives.push(objective);

        let score = if f.is_some() { m_nmse } else { objective };
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            let knots = branches.into_iter().map(|(k, _)| k).collect();
            let model = FlexibleLayer::new(
                p.v.clone(),
                p.w.clone(),
                *spec,
                knots,
                coeffs,
                DVector::zeros(n),
            )?;
            best = Some((score, model));
            report.chosen_iter = iter;
        }
        if converged(&objectives, config.rel_tol, usize::MAX) {
            report.converged = true;
            break;
        }
    }
    let (score, model) = best.ok_or(Error::Config("max_iters must be >= 1".into()))?;
    Ok(RunOutput {
        model,
        report,
        score,
    })
}

/// Runs `config.restarts` independent restarts (in parallel) and keeps the
/// lowest score; ties go to the lowest restart index.
pub(crate) fn best_of_restarts(
    config: &SolverConfig,
    run: impl Fn(u64) -> Result<RunOutput> + Sync,
) -> Result<RunOutput> {
    let start = std::time::Instant::now();
    let runs: Vec<Result<RunOutput>> = (0..config.restarts)
        .into_par_iter()
        .map(|i| run(config.restart_seed(i)))
        .collect();
    let mut scores = Vec::with_capacity(runs.len());
    let mut best: Option<(usize, RunOutput)> = None;
    let mut first_err = None;
    for (i, res) in runs.into_iter().enumerate() {
        match res {
            Ok(out) => {
                scores.push(out.score);
                if best.as_ref().map_or(true, |(_, b)| out.score < b.score) {
                    best = Some((i, out));
                }
            }
            Err(e) => {
                scores.push(f64::NAN);
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some((i, mut out)) => {
            out.report.restart = i;
            out.report.restart_scores = scores;
            out.report.wall_time = start.elapsed();
            Ok(out)
        }
        None => Err(first_err.expect("at least one restart")),
    }
}

pub(crate) fn check_inputs(t: &Tensor3, u: &DMatrix<f64>, config: &SolverConfig) -> Result<()> {
    config.validate()?;
    if !t.is_finite() {
        return Err(Error::NonFinite("tensor"));
    }
    let (_, m, big_n) = t.dims();
    if u.shape() != (m, big_n) {
        return Err(Error::shape(format!(
            "samples are {:?}, tensor needs {:?}",
            u.shape(),
            (m, big_n)
        )));
    }
    if config.max_iters == 0 {
        return Err(Error::Config("max_iters must be >= 1".into()));
    }
    Ok(())
}
