mod common;

use common::*;
use flexcmtf::basis::{self, BasisFamily, BasisSpec, KnotSet};
use flexcmtf::decompose::{
    als_cpd, cmtf_solve, ctd_solve, solve_coefficients, solve_coefficients_monolithic,
    update_w_coupled, update_w_coupled_naive, Init, SolveReport, SolverConfig,
};
use flexcmtf::flexnet::metrics::{matrix_nmse, tensor_nmse};
use flexcmtf::refnet::{
    build_jacobian_tensor, sample_points, Activation, DenseLayer, RefNetwork, SampleMode,
};
use flexcmtf::tensor::{cpd_reconstruct, khatri_rao, pinv, CpdFactors, Tensor3};
use flexcmtf::FlexibleLayer;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit_box() -> SampleMode {
    SampleMode::Uniform { low: -1.0, high: 1.0 }
}

fn random_cpd(n: usize, m: usize, big_n: usize, r: usize, seed: u64) -> CpdFactors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CpdFactors::new(gaussian(n, r, &mut rng), gaussian(m, r, &mut rng), gaussian(big_n, r, &mut rng)).unwrap()
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax()
}

#[test]
fn als_recovers_rank_one() {
    let p = random_cpd(4, 5, 6, 1, 3);
    let t = cpd_reconstruct(&p).unwrap();
    let cfg = SolverConfig { max_iters: 50, ..SolverConfig::with_rank(1) };
    let (est, rep) = als_cpd(&t, &cfg).unwrap();
    assert!(rep.records.len() <= 50);
    assert!(tensor_nmse(&cpd_reconstruct(&est).unwrap(), &t).unwrap() < 1e-10);
}

#[test]
fn als_on_zero_tensor() {
    let t = Tensor3::zeros(3, 2, 4);
    let (est, rep) = als_cpd(&t, &SolverConfig::with_rank(2)).unwrap();
    assert_eq!(rep.records[0].objective, 0.0);
    assert!(cpd_reconstruct(&est).unwrap().data().iter().all(|&x| x == 0.0));
}

#[test]
fn als_rejects_non_finite() {
    let mut t = Tensor3::zeros(2, 2, 2);
    t.set(0, 1, 1, f64::NAN);
    assert!(als_cpd(&t, &SolverConfig::with_rank(1)).is_err());
}

fn total_variation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

#[test]
fn als_on_sigmoid_jacobian_gives_smooth_h() {
    // W sigmoid(V^T u + b): an exactly rank-8 Jacobian tensor
    let (n, m, r, big_n) = (8, 16, 8, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let v = gaussian(m, r, &mut rng) * 0.5;
    let w = gaussian(n, r, &mut rng);
    let b = DVector::from_column_slice(gaussian(r, 1, &mut rng).as_slice());
    let net = RefNetwork::new(vec![
        DenseLayer::single(v, b, Activation::Sigmoid).unwrap(),
        DenseLayer::single(w.transpose(), DVector::zeros(n), Activation::Identity).unwrap(),
    ])
    .unwrap();
    let samples = sample_points(&SampleMode::Gaussian, m, big_n, 2).unwrap();
    let t = build_jacobian_tensor(&net, &samples).unwrap();
    let cfg = SolverConfig { max_iters: 500, rel_tol: 1e-12, ..SolverConfig::with_rank(r) };
    let (est, _) = als_cpd(&t, &cfg).unwrap();
    assert!(tensor_nmse(&cpd_reconstruct(&est).unwrap(), &t).unwrap() < 1e-6);

    let proj = samples.u.transpose() * &est.v;
    for l in 0..r {
        let mut order: Vec<usize> = (0..big_n).collect();
        order.sort_by(|&a, &b| proj[(a, l)].total_cmp(&proj[(b, l)]));
        let sorted: Vec<f64> = order.iter().map(|&j| est.h[(j, l)]).collect();
        let raw: Vec<f64> = est.h.column(l).iter().cloned().collect();
        // a sigmoid derivative is unimodal in the projection
        assert!(total_variation(&sorted) < 0.2 * total_variation(&raw), "branch {l}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn als_objective_is_monotone(seed in any::<u64>(), r in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor3::from_vec((4, 3, 10), gaussian(120, 1, &mut rng).as_slice().to_vec()).unwrap();
        let cfg = SolverConfig { max_iters: 60, rel_tol: 1e-14, seed, ..SolverConfig::with_rank(r) };
        let (_, rep) = als_cpd(&t, &cfg).unwrap();
        for w in rep.records.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective * (1.0 + 1e-10));
        }
    }
}

#[test]
fn coupled_w_update_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (n, m, big_n, r) = (5, 4, 50, 3);
    let t = Tensor3::from_vec((n, m, big_n), gaussian(n * m * big_n, 1, &mut rng).as_slice().to_vec()).unwrap();
    let f = gaussian(n, big_n, &mut rng);
    let v = gaussian(m, r, &mut rng);
    let h = gaussian(big_n, r, &mut rng);
    let z = gaussian(big_n, r, &mut rng);
    let fast = update_w_coupled(&t, &f, &v, &h, &z, 0.7, 1e-10).unwrap();
    let naive = update_w_coupled_naive(&t, &f, &v, &h, &z, 0.7, 1e-10).unwrap();
    assert!(rel_diff(&fast, &naive) < 1e-8);

    // lambda = 0 is the plain tensor update
    let kr = khatri_rao(&h, &v).unwrap();
    let gram = (h.transpose() * &h).component_mul(&(v.transpose() * &v));
    let als = t.unfold(1).unwrap() * &kr * pinv(&gram, 1e-10).unwrap();
    let zero = update_w_coupled(&t, &f, &v, &h, &z, 0.0, 1e-10).unwrap();
    assert!(rel_diff(&zero, &als) < 1e-12);
}

#[test]
fn coupled_w_update_recovers_planted_factor() {
    let p = random_cpd(4, 3, 30, 2, 5);
    let t = cpd_reconstruct(&p).unwrap();
    let f = DMatrix::zeros(4, 30);
    let z = DMatrix::zeros(30, 2);
    let w = update_w_coupled(&t, &f, &p.v, &p.h, &z, 0.0, 1e-10).unwrap();
    let rebuilt = cpd_reconstruct(&CpdFactors::new(w, p.v.clone(), p.h.clone()).unwrap()).unwrap();
    let resid: f64 = rebuilt.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(resid < 1e-10);
}

#[test]
fn coupled_w_update_checks_shapes() {
    let t = Tensor3::zeros(2, 3, 4);
    let bad_f = DMatrix::zeros(3, 4);
    let ok = DMatrix::zeros(4, 1);
    assert!(update_w_coupled(&t, &bad_f, &DMatrix::zeros(3, 1), &ok, &ok, 1.0, 1e-10).is_err());
}

fn random_basis_mats(spec: &BasisSpec, r: usize, big_n: usize, rng: &mut ChaCha8Rng) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..r {
        let proj: Vec<f64> = gaussian(big_n, 1, rng).iter().cloned().collect();
        let knots = basis::knots_from_projections(spec, &proj, 0).unwrap();
        xs.push(basis::x_matrix(spec, &knots, &proj));
        ys.push(basis::y_matrix(spec, &knots, &proj));
    }
    (xs, ys)
}

#[test]
fn per_branch_and_monolithic_coefficients_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let spec = BasisSpec::new(BasisFamily::PwlMinMaxKnots, 5).unwrap();
    let (r, big_n) = (4, 60);
    let (xs, ys) = random_basis_mats(&spec, r, big_n, &mut rng);
    let h = gaussian(big_n, r, &mut rng);
    let z = gaussian(big_n, r, &mut rng);
    for lambda in [0.0, 0.3, 2.0] {
        let a = solve_coefficients(&h, &z, &xs, &ys, lambda, 1e-10).unwrap();
        let b = solve_coefficients_monolithic(&h, &z, &xs, &ys, lambda, 1e-10).unwrap();
        assert!((a - b).amax() < 1e-10, "lambda {lambda}");
    }
}

#[test]
fn single_branch_is_one_stacked_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spec = BasisSpec::polynomial(3).unwrap();
    let (xs, ys) = random_basis_mats(&spec, 1, 20, &mut rng);
    let h = gaussian(20, 1, &mut rng);
    let z = gaussian(20, 1, &mut rng);
    let lambda = 0.5;
    let mut a = DMatrix::zeros(40, 4);
    a.rows_mut(0, 20).copy_from(&xs[0]);
    a.rows_mut(20, 20).copy_from(&(&ys[0] * lambda));
    let mut rhs = DMatrix::zeros(40, 1);
    rhs.rows_mut(0, 20).copy_from(&h);
    rhs.rows_mut(20, 20).copy_from(&(&z * lambda));
    let oracle = a.svd(true, true).solve(&rhs, 1e-14).unwrap();
    let c = solve_coefficients(&h, &z, &xs, &ys, lambda, 1e-10).unwrap();
    assert!((c - oracle).amax() < 1e-10);
}

#[test]
fn planted_coefficients_recovered_at_zero_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = BasisSpec::new(BasisFamily::PwlWithNegBranch, 4).unwrap();
    let (xs, ys) = random_basis_mats(&spec, 3, 80, &mut rng);
    let planted = gaussian(5, 3, &mut rng);
    let h = DMatrix::from_fn(80, 3, |j, l| (xs[l].row(j) * planted.column(l))[(0, 0)]);
    let c = solve_coefficients(&h, &DMatrix::zeros(80, 3), &xs, &ys, 0.0, 1e-10).unwrap();
    assert!(c.row(0).iter().all(|x| x.abs() < 1e-10));
    assert!((c.rows(1, 4) - planted.rows(1, 4)).amax() < 1e-10);
    assert!(solve_coefficients(&h, &h, &xs, &ys, -1.0, 1e-10).is_err());
}

/// Contribution `w_l g_l(v_l^T u_j)` of one branch at every sample.
fn branch_surface(model: &FlexibleLayer, l: usize, u: &DMatrix<f64>) -> DMatrix<f64> {
    let g = model.branch_outputs(u).unwrap();
    model.w.column(l) * g.row(l)
}

#[test]
fn ctd_recovers_zero_constant_planted_model() {
    let truth = planted_polynomial(3, 2, 2, 3, false, 21);
    let p = problem(&truth, &unit_box(), 300, 3);
    let (model, rep) = ctd_solve(&p.t, &truth.spec, &p.samples, &SolverConfig::with_rank(2)).unwrap();
    assert!(rep.chosen().unwrap().tensor_nmse < 1e-8);
    assert!(rep.records.iter().all(|r| r.matrix_nmse.is_nan()));
    assert!(model.coeffs.row(0).iter().all(|&c| c == 0.0));
    assert!(matrix_nmse(&model.predict_batch(&p.samples.u).unwrap(), &p.f).unwrap() < 1e-6);
    // each planted branch appears once, up to scale and order
    for l in 0..2 {
        let target = branch_surface(&truth, l, &p.samples.u);
        let best = (0..2)
            .map(|k| matrix_nmse(&branch_surface(&model, k, &p.samples.u), &target).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6, "branch {l}: {best}");
    }
}

#[test]
fn ctd_leaves_the_constant_as_bias() {
    let truth = planted_polynomial(2, 2, 3, 3, true, 11);
    let p = problem(&truth, &unit_box(), 400, 5);
    let (model, _) = ctd_solve(&p.t, &truth.spec, &p.samples, &SolverConfig::with_rank(3)).unwrap();
    let mean_resid = (&p.f - model.predict_batch(&p.samples.u).unwrap()).column_mean();
    assert!((mean_resid - planted_offset(&truth)).amax() < 1e-3);
}

#[test]
fn cmtf_recovers_planted_model_with_constants() {
    let truth = planted_polynomial(2, 2, 3, 3, true, 11);
    let p = problem(&truth, &unit_box(), 400, 5);
    let (model, rep) = cmtf_solve(&p.t, &p.f, &truth.spec, &p.samples, &SolverConfig::with_rank(3)).unwrap();
    assert_eq!(rep.restart_scores.len(), 5);
    assert!(matrix_nmse(&model.predict_batch(&p.samples.u).unwrap(), &p.f).unwrap() < 1e-6);
    let p0 = model.predict(&[0.0, 0.0]).unwrap();
    assert!((p0 - planted_offset(&truth)).amax() < 1e-3);
}

#[test]
fn cmtf_large_lambda_fits_evaluations_alone() {
    // with T = 0 only F informs the fit; m = 1 pins V to +-1
    let truth = planted_polynomial(1, 3, 2, 3, true, 5);
    let mut p = problem(&truth, &unit_box(), 200, 3);
    p.t = Tensor3::zeros(3, 1, 200);
    let cfg = SolverConfig {
        lambda0: 1e6,
        lambda_growth: 1.0,
        init: Init::Random,
        ..SolverConfig::with_rank(2)
    };
    let (model, _) = cmtf_solve(&p.t, &p.f, &truth.spec, &p.samples, &cfg).unwrap();
    assert!(matrix_nmse(&model.predict_batch(&p.samples.u).unwrap(), &p.f).unwrap() < 1e-8);
}

#[test]
fn anchored_families_survive_negative_projections() {
    // every sample has negative coordinates, so projections often have max <= 0
    let truth = planted_polynomial(2, 2, 2, 3, true, 2);
    let p = problem(&truth, &SampleMode::Uniform { low: -2.0, high: -0.5 }, 150, 8);
    for fam in [BasisFamily::PwlMaxKnots, BasisFamily::PwlWithNegBranch] {
        let spec = BasisSpec::new(fam, 4).unwrap();
        let cfg = SolverConfig { max_iters: 40, restarts: 2, ..SolverConfig::with_rank(2) };
        let (model, _) = cmtf_solve(&p.t, &p.f, &spec, &p.samples, &cfg).unwrap();
        for k in &model.knots {
            assert!(k.max > 0.0 && k.is_consistent_with(&spec));
        }
    }
}

#[test]
fn invalid_inputs_rejected() {
    let truth = planted_polynomial(2, 2, 1, 2, true, 1);
    let p = problem(&truth, &unit_box(), 20, 1);
    assert!(ctd_solve(&p.t, &truth.spec, &p.samples, &SolverConfig::with_rank(0)).is_err());
    let wrong = sample_points(&unit_box(), 2, 19, 1).unwrap();
    assert!(ctd_solve(&p.t, &truth.spec, &wrong, &SolverConfig::with_rank(1)).is_err());
    assert!(cmtf_solve(&p.t, &DMatrix::zeros(2, 20), &truth.spec, &p.samples, &SolverConfig::with_rank(1)).is_err());
    assert!(cmtf_solve(&p.t, &DMatrix::zeros(3, 20), &truth.spec, &p.samples, &SolverConfig::with_rank(1)).is_err());
}

fn assert_chosen_is_best(rep: &SolveReport, key: impl Fn(&flexcmtf::decompose::IterRecord) -> f64) {
    let chosen = key(rep.chosen().unwrap());
    assert!(rep.records.iter().all(|r| key(r) >= chosen));
}

#[test]
fn reports_choose_the_best_iteration() {
    let truth = planted_polynomial(2, 2, 2, 3, true, 9);
    let p = problem(&truth, &unit_box(), 100, 4);
    let cfg = SolverConfig { max_iters: 60, restarts: 2, ..SolverConfig::with_rank(2) };
    let (_, rep) = cmtf_solve(&p.t, &p.f, &truth.spec, &p.samples, &cfg).unwrap();
    assert_chosen_is_best(&rep, |r| r.matrix_nmse);
    assert_eq!(rep.sampling.as_deref(), Some("uniform[-1,1]"));
    let parsed = SolveReport::parse_csv(&rep.to_csv()).unwrap();
    assert_eq!(parsed.len(), rep.records.len());
    assert_eq!(parsed[3].objective.to_bits(), rep.records[3].objective.to_bits());

    let (_, rep) = ctd_solve(&p.t, &truth.spec, &p.samples, &cfg).unwrap();
    assert_chosen_is_best(&rep, |r| r.objective);
    let (_, rep) = als_cpd(&p.t, &cfg).unwrap();
    assert_chosen_is_best(&rep, |r| r.objective);
}

#[test]
fn solves_are_reproducible_across_thread_counts() {
    let truth = planted_polynomial(2, 2, 2, 3, true, 6);
    let p = problem(&truth, &unit_box(), 120, 2);
    let spec = BasisSpec::new(BasisFamily::PwlMinMaxKnots, 4).unwrap();
    let cfg = SolverConfig { max_iters: 40, seed: 99, ..SolverConfig::with_rank(2) };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| cmtf_solve(&p.t, &p.f, &spec, &p.samples, &cfg).unwrap())
    };
    let (m1, r1) = run(1);
    let (m4, r4) = run(4);
    assert_eq!(m1, m4);
    assert_eq!(r1.to_csv(), r4.to_csv());
    let other = cmtf_solve(&p.t, &p.f, &spec, &p.samples, &SolverConfig { seed: 100, ..cfg.clone() }).unwrap();
    assert_ne!(other.0, m1);
}

#[test]
fn frozen_knots_stay_fixed() {
    let truth = planted_polynomial(2, 2, 2, 3, true, 6);
    let p = problem(&truth, &unit_box(), 100, 2);
    let spec = BasisSpec::new(BasisFamily::PwlMinMaxKnots, 3).unwrap();
    let cfg = SolverConfig { max_iters: 30, restarts: 1, freeze_knots: true, ..SolverConfig::with_rank(2) };
    let (model, _) = cmtf_solve(&p.t, &p.f, &spec, &p.samples, &cfg).unwrap();
    for k in &model.knots {
        assert_eq!(*k, KnotSet::from_extrema(&spec, k.min, k.max));
    }
}
