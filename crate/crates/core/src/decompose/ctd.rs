use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::state::{best_of_restarts, check_inputs, run_constrained};
use super::{SolveReport, SolverConfig};
use crate::basis::BasisSpec;
use crate::error::Result;
use crate::flexnet::FlexibleLayer;
use crate::refnet::SampleSet;
use crate::tensor::Tensor3;

/// Learns a flexible layer from the Jacobian tensor alone.
///
/// The constant coefficients are unidentifiable from derivatives and are
/// returned as 0, and the offset is zero; the caller must correct the
/// offset (see [`FlexibleLayer::offset_correct`]).
pub fn ctd_solve(
    t: &Tensor3,
    spec: &BasisSpec,
    samples: &SampleSet,
    config: &SolverConfig,
) -> Result<(FlexibleLayer, SolveReport)> {
    let u: &DMatrix<f64> = &samples.u;
    check_inputs(t, u, config)?;
    let out = best_of_restarts(config, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        run_constrained(t, None, spec, u, config, &mut rng)
    })?;
    let mut report = out.report;
    report.sampling = Some(samples.provenance.clone());
    Ok((out.model, report))
}
