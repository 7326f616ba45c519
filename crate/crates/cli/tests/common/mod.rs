#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use flexcmtf::basis::{BasisSpec, KnotSet};
use flexcmtf::FlexibleLayer;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn flexcmtf(args: &[&str]) -> Output {
    flexcmtf_env(args, &[])
}

pub fn flexcmtf_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_flexcmtf"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

/// Runs the binary and panics with its stderr unless it succeeds.
pub fn run_ok(args: &[&str]) -> String {
    let out = flexcmtf(args);
    assert!(
        out.status.success(),
        "flexcmtf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Value printed as `key = value` on stdout.
pub fn printed(stdout: &str, key: &str) -> Option<String> {
    stdout.lines().find_map(|l| {
        let (k, v) = l.split_once(" = ")?;
        (k == key).then(|| v.to_string())
    })
}

pub fn printed_f64(stdout: &str, key: &str) -> f64 {
    printed(stdout, key)
        .unwrap_or_else(|| panic!("'{key}' not printed in:\n{stdout}"))
        .parse()
        .unwrap()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Polynomial layer with unit-norm projections and Gaussian weights and
/// coefficients (constant terms included).
pub fn planted_polynomial(m: usize, n: usize, r: usize, d: usize, seed: u64) -> FlexibleLayer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = BasisSpec::polynomial(d).unwrap();
    let mut v = gaussian(m, r, &mut rng);
    for mut c in v.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    let w = gaussian(n, r, &mut rng);
    let coeffs = gaussian(d + 1, r, &mut rng);
    let knots = vec![KnotSet::from_extrema(&spec, -1.0, 1.0); r];
    FlexibleLayer::new(v, w, spec, knots, coeffs, DVector::zeros(n)).unwrap()
}
