use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::state::{als_sweep, normalize_columns, random_factors, ratio, tensor_residual_sq, Unfoldings};
use super::{converged, IterRecord, SolveReport, SolverConfig};
use crate::error::{Error, Result};
use crate::tensor::{CpdFactors, Tensor3};

/// Unconstrained rank-`config.rank` CPD by cyclic least squares from
/// Gaussian factors seeded with `config.seed`. One record per full sweep;
/// the returned factors are those of the record with the lowest objective.
pub fn als_cpd(t: &Tensor3, config: &SolverConfig) -> Result<(CpdFactors, SolveReport)> {
    config.validate()?;
    if !t.is_finite() {
        return Err(Error::NonFinite("tensor"));
    }
    if config.max_iters == 0 {
        return Err(Error::Config("max_iters must be >= 1".into()));
    }
    let start = std::time::Instant::now();
    let unf = Unfoldings::new(t)?;
    let t_norm = t.norm_sq();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut p = random_factors(t.dims(), config.rank, &mut rng);
    normalize_columns(&mut p.v);

    let mut report = SolveReport::new("als");
    let mut objectives = Vec::new();
    let mut best: Option<(f64, CpdFactors)> = None;
    for iter in 0..config.max_iters {
        als_sweep(&unf, &mut p, config.pinv_rel_tol)?;
        let objective = tensor_residual_sq(t, &p)?;
        if !objective.is_finite() {
            return Err(Error::NonFinite("ALS objective"));
        }
        report.records.push(IterRecord {
            iter,
            lambda: 0.0,
            tensor_nmse: ratio(objective, t_norm),
            matrix_nmse: f64::NAN,
            objective,
        });
        objectives.push(objective);
        if best.as_ref().map_or(true, |(s, _)| objective < *s) {
            best = Some((objective, p.clone()));
            report.chosen_iter = iter;
        }
        if objective == 0.0 || converged(&objectives, config.rel_tol, usize::MAX) {
            report.converged = true;
            break;
        }
    }
    report.restart_scores = vec![best.as_ref().map_or(f64::NAN, |b| b.0)];
    report.wall_time = start.elapsed();
    let (_, factors) = best.expect("max_iters >= 1");
    Ok((factors, report))
}
