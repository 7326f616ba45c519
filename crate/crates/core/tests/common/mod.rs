#![allow(dead_code)]

use flexcmtf::basis::{BasisSpec, KnotSet};
use flexcmtf::refnet::{build_f, build_jacobian_tensor, sample_points, SampleMode, SampleSet};
use flexcmtf::{FlexibleLayer, Tensor3};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Exact-model layer with polynomial branches; constant terms are drawn
/// when `constants` is set, otherwise zero.
pub fn planted_polynomial(
    m: usize,
    n: usize,
    r: usize,
    d: usize,
    constants: bool,
    seed: u64,
) -> FlexibleLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = BasisSpec::polynomial(d).unwrap();
    let mut v = gaussian(m, r, &mut rng);
    for mut c in v.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    let w = gaussian(n, r, &mut rng);
    let mut coeffs = gaussian(d + 1, r, &mut rng);
    if !constants {
        coeffs.row_mut(0).fill(0.0);
    }
    let knots = vec![KnotSet::from_extrema(&spec, -1.0, 1.0); r];
    FlexibleLayer::new(v, w, spec, knots, coeffs, DVector::zeros(n)).unwrap()
}

pub struct Problem {
    pub samples: SampleSet,
    pub t: Tensor3,
    pub f: DMatrix<f64>,
}

pub fn problem(reference: &dyn flexcmtf::Reference, mode: &SampleMode, count: usize, seed: u64) -> Problem {
    let samples = sample_points(mode, reference.input_dim(), count, seed).unwrap();
    let t = build_jacobian_tensor(reference, &samples).unwrap();
    let f = build_f(reference, &samples).unwrap();
    Problem { samples, t, f }
}

/// Constant part of a planted polynomial model, `sum_l w_l c_{0,l}`.
pub fn planted_offset(model: &FlexibleLayer) -> DVector<f64> {
    &model.w * model.coeffs.row(0).transpose()
}
