use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::state::{best_of_restarts, check_inputs, run_constrained};
use super::{SolveReport, SolverConfig};
use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::flexnet::FlexibleLayer;
use crate::refnet::SampleSet;
use crate::tensor::Tensor3;

/// Learns a flexible layer from the Jacobian tensor `t` coupled with the
/// evaluations `f` (`n x N`). The returned model is the iterate with the
/// lowest matrix NMSE over all restarts; its offset is zero because the
/// constant terms absorb the bias.
pub fn cmtf_solve(
    t: &Tensor3,
    f: &DMatrix<f64>,
    spec: &BasisSpec,
    samples: &SampleSet,
    config: &SolverConfig,
) -> Result<(FlexibleLayer, SolveReport)> {
    let u = &samples.u;
    check_inputs(t, u, config)?;
    let (n, _, big_n) = t.dims();
    if f.shape() != (n, big_n) {
        return Err(Error::shape(format!(
            "F is {:?}, tensor needs {:?}",
            f.shape(),
            (n, big_n)
        )));
    }
    if f.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("evaluation matrix"));
    }
    if f.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroReference("evaluation matrix"));
    }
    let out = best_of_restarts(config, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        run_constrained(t, Some(f), spec, u, config, &mut rng)
    })?;
    let mut report = out.report;
    report.sampling = Some(samples.provenance.clone());
    Ok((out.model, report))
}
