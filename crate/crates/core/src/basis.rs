//! Basis families for the flexible activations `g_l(t) = c_0 + sum_k c_k phi_k(t)`.
//!
//! Four families are supported. The three piecewise-linear ones use
//! `phi_k(t) = ReLU(t - t_k)` with knots placed from the extrema of the
//! branch projections `v_l^T u^(j)`; the polynomial family uses `t^k`.
//! Every family has exactly `d` non-constant functions, so a branch always
//! carries `d + 1` coefficients.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BasisFamily {
    /// Knots `((k-1)/d) * max`, `k = 1..d`.
    PwlMaxKnots,
    /// Knots `min + ((k-1)/d) * (max - min)`.
    PwlMinMaxKnots,
    /// `ReLU(-t)` plus `d-1` knots at `((k-1)/(d-1)) * max`.
    PwlWithNegBranch,
    Polynomial,
}

impl BasisFamily {
    pub const ALL: [BasisFamily; 4] = [
        BasisFamily::PwlMaxKnots,
        BasisFamily::PwlMinMaxKnots,
        BasisFamily::PwlWithNegBranch,
        BasisFamily::Polynomial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BasisFamily::PwlMaxKnots => "pwl-max",
            BasisFamily::PwlMinMaxKnots => "pwl-minmax",
            BasisFamily::PwlWithNegBranch => "pwl-negbranch",
            BasisFamily::Polynomial => "polynomial",
        }
    }

    /// Format number 1-4.
    pub fn format_number(self) -> u8 {
        match self {
            BasisFamily::PwlMaxKnots => 1,
            BasisFamily::PwlMinMaxKnots => 2,
            BasisFamily::PwlWithNegBranch => 3,
            BasisFamily::Polynomial => 4,
        }
    }

    pub fn is_piecewise_linear(self) -> bool {
        !matches!(self, BasisFamily::Polynomial)
    }

    /// Families whose knots are anchored at zero and scale with the
    /// projection maximum; these need `max > 0`.
    pub fn needs_positive_max(self) -> bool {
        matches!(
            self,
            BasisFamily::PwlMaxKnots | BasisFamily::PwlWithNegBranch
        )
    }
}

impl fmt::Display for BasisFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasisFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pwl-max" | "1" => Ok(BasisFamily::PwlMaxKnots),
            "pwl-minmax" | "2" => Ok(BasisFamily::PwlMinMaxKnots),
            "pwl-negbranch" | "3" => Ok(BasisFamily::PwlWithNegBranch),
            "polynomial" | "poly" | "4" => Ok(BasisFamily::Polynomial),
            other => Err(Error::Config(format!("unknown basis family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSpec {
    pub family: BasisFamily,
    /// Number of non-constant basis functions.
    pub degree: usize,
}

impl BasisSpec {
    pub fn new(family: BasisFamily, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::Config("basis degree must be >= 1".into()));
        }
        if family == BasisFamily::PwlWithNegBranch && degree < 2 {
            return Err(Error::Config(
                "pwl-negbranch needs degree >= 2 (negative branch + one knot)".into(),
            ));
        }
        Ok(BasisSpec { family, degree })
    }

    pub fn polynomial(degree: usize) -> Result<Self> {
        BasisSpec::new(BasisFamily::Polynomial, degree)
    }

    /// Coefficients per branch, `d + 1`.
    pub fn n_coeffs(&self) -> usize {
        self.degree + 1
    }

    pub fn n_knots(&self) -> usize {
        match self.family {
            BasisFamily::PwlMaxKnots | BasisFamily::PwlMinMaxKnots => self.degree,
            BasisFamily::PwlWithNegBranch => self.degree - 1,
            BasisFamily::Polynomial => 0,
        }
    }
}

/// Knots of one branch together with the projection extrema they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotSet {
    pub knots: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

impl KnotSet {
    /// Applies the family's knot formula to given extrema.
    pub fn from_extrema(spec: &BasisSpec, min: f64, max: f64) -> KnotSet {
        let d = spec.degree as f64;
        let knots = match spec.family {
            BasisFamily::PwlMaxKnots => (0..spec.degree)
                .map(|k| (k as f64 / d) * max)
                .collect(),
            BasisFamily::PwlMinMaxKnots => (0..spec.degree)
                .map(|k| min + (k as f64 / d) * (max - min))
                .collect(),
            BasisFamily::PwlWithNegBranch => (0..spec.degree - 1)
                .map(|k| (k as f64 / (d - 1.0)) * max)
                .collect(),
            BasisFamily::Polynomial => Vec::new(),
        };
        KnotSet { knots, min, max }
    }

    pub fn is_consistent_with(&self, spec: &BasisSpec) -> bool {
        self.knots.len() == spec.n_knots() && self.knots.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Projections `v_l^T u^(j)` for all sample columns of `u`.
pub fn projections(v: &DMatrix<f64>, u: &DMatrix<f64>, l: usize) -> Result<DVector<f64>> {
    if v.nrows() != u.nrows() {
        return Err(Error::shape(format!(
            "V has {} rows but samples have dimension {}",
            v.nrows(),
            u.nrows()
        )));
    }
    if l >= v.ncols() {
        return Err(Error::shape(format!(
            "branch index {l} out of range for rank {}",
            v.ncols()
        )));
    }
    Ok(u.transpose() * v.column(l))
}

/// Knots for branch `l` (0-based) from the current projections.
pub fn compute_knots(
    spec: &BasisSpec,
    v: &DMatrix<f64>,
    u: &DMatrix<f64>,
    l: usize,
) -> Result<KnotSet> {
    if u.ncols() < 2 {
        return Err(Error::shape("knot computation needs at least 2 samples"));
    }
    let t = projections(v, u, l)?;
    knots_from_projections(spec, t.as_slice(), l)
}

pub fn knots_from_projections(spec: &BasisSpec, t: &[f64], branch: usize) -> Result<KnotSet> {
    let max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = t.iter().cloned().fold(f64::INFINITY, f64::min);
    if !max.is_finite() || !min.is_finite() {
        return Err(Error::NonFinite("projections"));
    }
    let extent = max - min;
    if extent < 1e-12 * max.abs().max(1.0) {
        return Err(Error::DegenerateProjection { branch, extent });
    }
    if spec.family.needs_positive_max() && max <= 0.0 {
        return Err(Error::NonPositiveMaximum { branch, max });
    }
    Ok(KnotSet::from_extrema(spec, min, max))
}

#[inline]
fn relu(t: f64) -> f64 {
    if t > 0.0 {
        t
    } else {
        0.0
    }
}

#[inline]
fn step(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Writes `[1, phi_1(t), ..., phi_d(t)]` into `out`.
pub fn eval_basis_into(spec: &BasisSpec, knots: &KnotSet, t: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.n_coeffs());
    out[0] = 1.0;
    match spec.family {
        BasisFamily::PwlMaxKnots | BasisFamily::PwlMinMaxKnots => {
            for (o, tk) in out[1..].iter_mut().zip(&knots.knots) {
                *o = relu(t - tk);
            }
        }
        BasisFamily::PwlWithNegBranch => {
            out[1] = relu(-t);
            for (o, tk) in out[2..].iter_mut().zip(&knots.knots) {
                *o = relu(t - tk);
            }
        }
        BasisFamily::Polynomial => {
            let mut p = 1.0;
            for o in out[1..].iter_mut() {
                p *= t;
                *o = p;
            }
        }
    }
}

/// Writes `[0, phi'_1(t), ..., phi'_d(t)]` into `out`. ReLU kinks get
/// derivative 0.
pub fn eval_basis_deriv_into(spec: &BasisSpec, knots: &KnotSet, t: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), spec.n_coeffs());
    out[0] = 0.0;
    match spec.family {
        BasisFamily::PwlMaxKnots | BasisFamily::PwlMinMaxKnots => {
            for (o, tk) in out[1..].iter_mut().zip(&knots.knots) {
                *o = step(t - tk);
            }
        }
        BasisFamily::PwlWithNegBranch => {
            out[1] = -step(-t);
            for (o, tk) in out[2..].iter_mut().zip(&knots.knots) {
                *o = step(t - tk);
            }
        }
        BasisFamily::Polynomial => {
            let mut p = 1.0;
            for (k, o) in out[1..].iter_mut().enumerate() {
                *o = (k + 1) as f64 * p;
                p *= t;
            }
        }
    }
}

pub fn eval_basis(spec: &BasisSpec, knots: &KnotSet, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; spec.n_coeffs()];
    eval_basis_into(spec, knots, t, &mut out);
    out
}

pub fn eval_basis_deriv(spec: &BasisSpec, knots: &KnotSet, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; spec.n_coeffs()];
    eval_basis_deriv_into(spec, knots, t, &mut out);
    out
}

/// `g(t) = c_0 + sum_k c_k phi_k(t)`; polynomials use Horner's scheme.
pub fn eval_g(spec: &BasisSpec, knots: &KnotSet, c: &[f64], t: f64) -> f64 {
    debug_assert_eq!(c.len(), spec.n_coeffs());
    match spec.family {
        BasisFamily::Polynomial => c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck),
        BasisFamily::PwlMaxKnots | BasisFamily::PwlMinMaxKnots => {
            c[0] + c[1..]
                .iter()
                .zip(&knots.knots)
                .map(|(ck, tk)| ck * relu(t - tk))
                .sum::<f64>()
        }
        BasisFamily::PwlWithNegBranch => {
            c[0] + c[1] * relu(-t)
                + c[2..]
                    .iter()
                    .zip(&knots.knots)
                    .map(|(ck, tk)| ck * relu(t - tk))
                    .sum::<f64>()
        }
    }
}

/// `g'(t)`, consistent with [`eval_basis_deriv`].
pub fn eval_g_deriv(spec: &BasisSpec, knots: &KnotSet, c: &[f64], t: f64) -> f64 {
    match spec.family {
        BasisFamily::Polynomial => {
            // Horner on the derivative coefficients k*c_k.
            let d = spec.degree;
            (1..=d)
                .rev()
                .fold(0.0, |acc, k| acc * t + k as f64 * c[k])
        }
        _ => {
            let mut buf = vec![0.0; spec.n_coeffs()];
            eval_basis_deriv_into(spec, knots, t, &mut buf);
            buf.iter().zip(c).map(|(a, b)| a * b).sum()
        }
    }
}

fn basis_matrix(
    spec: &BasisSpec,
    knots: &KnotSet,
    t: &[f64],
    fill: fn(&BasisSpec, &KnotSet, f64, &mut [f64]),
) -> DMatrix<f64> {
    let cols = spec.n_coeffs();
    let mut out = DMatrix::zeros(t.len(), cols);
    let mut row = vec![0.0; cols];
    for (j, &tj) in t.iter().enumerate() {
        fill(spec, knots, tj, &mut row);
        for (c, &x) in row.iter().enumerate() {
            out[(j, c)] = x;
        }
    }
    out
}

/// `X_l` from precomputed projections: row `j` is `phi'(t_j)`.
pub fn x_matrix(spec: &BasisSpec, knots: &KnotSet, t: &[f64]) -> DMatrix<f64> {
    basis_matrix(spec, knots, t, eval_basis_deriv_into)
}

/// `Y_l` from precomputed projections: row `j` is `phi(t_j)`.
pub fn y_matrix(spec: &BasisSpec, knots: &KnotSet, t: &[f64]) -> DMatrix<f64> {
    basis_matrix(spec, knots, t, eval_basis_into)
}

/// `N x (d+1)` derivative matrix `X_l` for branch `l`, knots taken from the
/// current projections.
pub fn build_xl(
    spec: &BasisSpec,
    knots: &KnotSet,
    v: &DMatrix<f64>,
    u: &DMatrix<f64>,
    l: usize,
) -> Result<DMatrix<f64>> {
    check_knots(spec, knots)?;
    let t = projections(v, u, l)?;
    Ok(x_matrix(spec, knots, t.as_slice()))
}

/// `N x (d+1)` evaluation matrix `Y_l` for branch `l`.
pub fn build_yl(
    spec: &BasisSpec,
    knots: &KnotSet,
    v: &DMatrix<f64>,
    u: &DMatrix<f64>,
    l: usize,
) -> Result<DMatrix<f64>> {
    check_knots(spec, knots)?;
    let t = projections(v, u, l)?;
    Ok(y_matrix(spec, knots, t.as_slice()))
}

fn check_knots(spec: &BasisSpec, knots: &KnotSet) -> Result<()> {
    if knots.knots.len() != spec.n_knots() {
        return Err(Error::shape(format!(
            "{} knots supplied, {} family with d={} needs {}",
            knots.knots.len(),
            spec.family,
            spec.degree,
            spec.n_knots()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn knots(k: &[f64]) -> KnotSet {
        KnotSet {
            knots: k.to_vec(),
            min: 0.0,
            max: 0.0,
        }
    }

    #[test]
    fn spec_validation() {
        assert!(BasisSpec::new(BasisFamily::Polynomial, 0).is_err());
        assert!(BasisSpec::new(BasisFamily::PwlWithNegBranch, 1).is_err());
        assert!(BasisSpec::new(BasisFamily::PwlWithNegBranch, 2).is_ok());
    }

    #[test]
    fn family_names_parse_back() {
        for f in BasisFamily::ALL {
            assert_eq!(f.name().parse::<BasisFamily>().unwrap(), f);
            assert_eq!(
                f.format_number().to_string().parse::<BasisFamily>().unwrap(),
                f
            );
        }
        assert!("spline".parse::<BasisFamily>().is_err());
    }

    #[test]
    fn max_knots_from_max_four() {
        let spec = BasisSpec::new(BasisFamily::PwlMaxKnots, 4).unwrap();
        let t = [-1.0, 0.5, 4.0, 2.0];
        let ks = knots_from_projections(&spec, &t, 0).unwrap();
        assert_eq!(ks.knots, vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!((ks.min, ks.max), (-1.0, 4.0));
    }

    #[test]
    fn minmax_knots_symmetric() {
        let spec = BasisSpec::new(BasisFamily::PwlMinMaxKnots, 2).unwrap();
        let ks = knots_from_projections(&spec, &[-1.0, 0.3, 1.0], 0).unwrap();
        assert_eq!(ks.knots, vec![-1.0, 0.0]);
    }

    #[test]
    fn negbranch_knots() {
        let spec = BasisSpec::new(BasisFamily::PwlWithNegBranch, 3).unwrap();
        let ks = knots_from_projections(&spec, &[-2.0, 4.0], 0).unwrap();
        assert_eq!(ks.knots, vec![0.0, 2.0]);
    }

    #[test]
    fn polynomial_knots_empty_extrema_kept() {
        let spec = BasisSpec::polynomial(3).unwrap();
        let ks = knots_from_projections(&spec, &[-2.0, 5.0, 1.0], 0).unwrap();
        assert!(ks.knots.is_empty());
        assert_eq!((ks.min, ks.max), (-2.0, 5.0));
    }

    #[test]
    fn degenerate_projection_detected() {
        let spec = BasisSpec::polynomial(2).unwrap();
        let err = knots_from_projections(&spec, &[3.0, 3.0, 3.0], 2).unwrap_err();
        assert!(matches!(err, Error::DegenerateProjection { branch: 2, .. }));
    }

    #[test]
    fn non_positive_max_rejected_for_anchored_families() {
        let spec = BasisSpec::new(BasisFamily::PwlMaxKnots, 3).unwrap();
        assert!(matches!(
            knots_from_projections(&spec, &[-3.0, -1.0], 0),
            Err(Error::NonPositiveMaximum { .. })
        ));
        let spec = BasisSpec::new(BasisFamily::PwlMinMaxKnots, 3).unwrap();
        assert!(knots_from_projections(&spec, &[-3.0, -1.0], 0).is_ok());
    }

    #[test]
    fn compute_knots_uses_projections() {
        let spec = BasisSpec::new(BasisFamily::PwlMaxKnots, 4).unwrap();
        let v = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let u = DMatrix::from_column_slice(2, 3, &[1.0, 1.0, 2.0, 2.0, 0.0, -1.0]);
        let ks = compute_knots(&spec, &v, &u, 0).unwrap();
        assert_eq!(ks.knots, vec![0.0, 1.0, 2.0, 3.0]);
        assert!(compute_knots(&spec, &v, &u, 1).is_err());
        let one = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(compute_knots(&spec, &v, &one, 0).is_err());
    }

    #[test]
    fn basis_values_by_hand() {
        let poly = BasisSpec::polynomial(2).unwrap();
        assert_eq!(eval_basis(&poly, &knots(&[]), 2.0), vec![1.0, 2.0, 4.0]);

        let pwl = BasisSpec::new(BasisFamily::PwlMaxKnots, 4).unwrap();
        let k = knots(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(eval_basis(&pwl, &k, 2.5), vec![1.0, 2.5, 1.5, 0.5, 0.0]);

        let neg = BasisSpec::new(BasisFamily::PwlWithNegBranch, 3).unwrap();
        assert_eq!(
            eval_basis(&neg, &knots(&[0.0, 2.0]), -1.0),
            vec![1.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn basis_derivatives_by_hand() {
        let poly = BasisSpec::polynomial(2).unwrap();
        assert_eq!(eval_basis_deriv(&poly, &knots(&[]), 3.0), vec![0.0, 1.0, 6.0]);

        let pwl = BasisSpec::new(BasisFamily::PwlMaxKnots, 4).unwrap();
        let k = knots(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(
            eval_basis_deriv(&pwl, &k, 2.5),
            vec![0.0, 1.0, 1.0, 1.0, 0.0]
        );
        // exactly on a knot
        assert_eq!(eval_basis_deriv(&pwl, &k, 2.0)[3], 0.0);

        let neg = BasisSpec::new(BasisFamily::PwlWithNegBranch, 3).unwrap();
        assert_eq!(
            eval_basis_deriv(&neg, &knots(&[0.0, 2.0]), -1.0),
            vec![0.0, -1.0, 0.0, 0.0]
        );
        assert_eq!(eval_basis_deriv(&neg, &knots(&[0.0, 2.0]), 0.0)[1], 0.0);
    }

    #[test]
    fn eval_g_by_hand() {
        let poly = BasisSpec::polynomial(2).unwrap();
        assert_eq!(eval_g(&poly, &knots(&[]), &[1.0, 2.0, 3.0], 2.0), 17.0);

        let pwl = BasisSpec::new(BasisFamily::PwlMaxKnots, 2).unwrap();
        assert_eq!(eval_g(&pwl, &knots(&[0.0, 1.0]), &[0.0, 1.0, -1.0], 2.0), 1.0);

        for f in BasisFamily::ALL {
            let spec = BasisSpec::new(f, 3).unwrap();
            let ks = KnotSet::from_extrema(&spec, -2.0, 2.0);
            for t in [-3.0, -0.5, 0.0, 1.7, 9.0] {
                assert_eq!(eval_g(&spec, &ks, &[5.0, 0.0, 0.0, 0.0], t), 5.0);
            }
        }
    }

    #[test]
    fn structural_columns() {
        let u = DMatrix::from_column_slice(2, 4, &[0.0, 0.0, 1.0, 1.0, -1.0, 0.5, 2.0, -3.0]);
        let v = DMatrix::from_column_slice(2, 1, &[0.6, 0.8]);
        for f in BasisFamily::ALL {
            let spec = BasisSpec::new(f, 4).unwrap();
            let ks = compute_knots(&spec, &v, &u, 0).unwrap();
            let x = build_xl(&spec, &ks, &v, &u, 0).unwrap();
            let y = build_yl(&spec, &ks, &v, &u, 0).unwrap();
            assert_eq!(x.shape(), (4, 5));
            assert!(x.column(0).iter().all(|&e| e == 0.0));
            assert!(y.column(0).iter().all(|&e| e == 1.0));
        }
    }

    #[test]
    fn polynomial_degree_one_x() {
        let spec = BasisSpec::polynomial(1).unwrap();
        let v = DMatrix::from_column_slice(1, 1, &[1.0]);
        let u = DMatrix::from_column_slice(1, 2, &[0.0, 2.0]);
        let ks = compute_knots(&spec, &v, &u, 0).unwrap();
        let x = build_xl(&spec, &ks, &v, &u, 0).unwrap();
        assert_eq!(x, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]));
        let y = build_yl(&BasisSpec::polynomial(2).unwrap(), &knots(&[]), &v, &DMatrix::from_column_slice(1, 1, &[2.0]), 0).unwrap();
        assert_eq!(y, DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 4.0]));
    }

    #[test]
    fn mismatched_knots_rejected() {
        let spec = BasisSpec::new(BasisFamily::PwlMaxKnots, 3).unwrap();
        let v = DMatrix::from_column_slice(1, 1, &[1.0]);
        let u = DMatrix::from_column_slice(1, 2, &[0.0, 2.0]);
        assert!(build_xl(&spec, &knots(&[0.0]), &v, &u, 0).is_err());
    }
}
