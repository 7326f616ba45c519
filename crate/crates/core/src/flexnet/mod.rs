//! The learned flexible layer `f(u) = sum_l w_l g_l(v_l^T u) + offset`.

mod finetune;
pub mod metrics;

use nalgebra::{DMatrix, DVector};

use crate::basis::{self, BasisSpec, KnotSet};
use crate::error::{Error, Result};
use crate::refnet::Reference;

pub use finetune::{fine_tune, FineTuneConfig, FineTuneOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct FlexibleLayer {
    /// `m x r` input projections.
    pub v: DMatrix<f64>,
    /// `n x r` output weights.
    pub w: DMatrix<f64>,
    pub spec: BasisSpec,
    /// One knot set per branch, frozen at export.
    pub knots: Vec<KnotSet>,
    /// `(d+1) x r`, column `l` holds `c_l`.
    pub coeffs: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl FlexibleLayer {
    pub fn new(
        v: DMatrix<f64>,
        w: DMatrix<f64>,
        spec: BasisSpec,
        knots: Vec<KnotSet>,
        coeffs: DMatrix<f64>,
        offset: DVector<f64>,
    ) -> Result<Self> {
        let r = v.ncols();
        if w.ncols() != r || coeffs.ncols() != r || knots.len() != r {
            return Err(Error::shape(format!(
                "rank mismatch: V {r}, W {}, C {}, knots {}",
                w.ncols(),
                coeffs.ncols(),
                knots.len()
            )));
        }
        if coeffs.nrows() != spec.n_coeffs() {
            return Err(Error::shape(format!(
                "coefficient rows {} != d+1 = {}",
                coeffs.nrows(),
                spec.n_coeffs()
            )));
        }
        if offset.len() != w.nrows() {
            return Err(Error::shape("offset length != output dim"));
        }
        for (l, k) in knots.iter().enumerate() {
            if !k.is_consistent_with(&spec) {
                return Err(Error::shape(format!("knots of branch {l} inconsistent with basis")));
            }
        }
        Ok(FlexibleLayer {
            v,
            w,
            spec,
            knots,
            coeffs,
            offset,
        })
    }

    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn coeff_column(&self, l: usize) -> &[f64] {
        let d1 = self.coeffs.nrows();
        &self.coeffs.as_slice()[l * d1..(l + 1) * d1]
    }

    pub fn g(&self, l: usize, t: f64) -> f64 {
        basis::eval_g(&self.spec, &self.knots[l], self.coeff_column(l), t)
    }

    pub fn g_deriv(&self, l: usize, t: f64) -> f64 {
        basis::eval_g_deriv(&self.spec, &self.knots[l], self.coeff_column(l), t)
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input length {} != model input dim {}",
                u.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, u: &[f64]) -> Result<DVector<f64>> {
        self.check_input(u)?;
        let mut out = self.offset.clone();
        for l in 0..self.rank() {
            let t = self.v.column(l).dot(&DVector::from_column_slice(u));
            out.axpy(self.g(l, t), &self.w.column(l), 1.0);
        }
        Ok(out)
    }

    /// `r x N` branch outputs `g_l(v_l^T u^(j))`.
    pub fn branch_outputs(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if u.nrows() != self.input_dim() {
            return Err(Error::shape("sample dimension != model input dim"));
        }
        let proj = self.v.transpose() * u;
        Ok(DMatrix::from_fn(self.rank(), u.ncols(), |l, j| {
            self.g(l, proj[(l, j)])
        }))
    }

    /// `n x N` predictions over the columns of `u`.
    pub fn predict_batch(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let g = self.branch_outputs(u)?;
        let mut out = &self.w * g;
        for mut col in out.column_iter_mut() {
            col += &self.offset;
        }
        Ok(out)
    }

    /// Sets the offset so that `predict(0) == f_at_zero`.
    pub fn offset_correct(&self, f_at_zero: &DVector<f64>) -> Result<FlexibleLayer> {
        if f_at_zero.len() != self.output_dim() {
            return Err(Error::shape("reference value length != output dim"));
        }
        let mut model = self.clone();
        model.offset = DVector::zeros(self.output_dim());
        let at_zero = model.predict(&vec![0.0; self.input_dim()])?;
        model.offset = f_at_zero - at_zero;
        Ok(model)
    }

    pub fn has_offset(&self) -> bool {
        self.offset.iter().any(|&x| x != 0.0)
    }

    pub fn param_count(&self) -> usize {
        let base = flexible_param_count(
            self.input_dim(),
            self.output_dim(),
            self.spec.degree,
            self.rank(),
        );
        if self.has_offset() {
            base + self.output_dim()
        } else {
            base
        }
    }

    pub fn compression_ratio(&self, original_param_count: usize) -> Result<f64> {
        compression_ratio(self.param_count(), original_param_count)
    }
}

/// `m*r + (d+1)*r + n*r`.
pub fn flexible_param_count(m: usize, n: usize, degree: usize, rank: usize) -> usize {
    rank * (m + degree + 1 + n)
}

pub fn compression_ratio(count: usize, original_param_count: usize) -> Result<f64> {
    if original_param_count == 0 {
        return Err(Error::Config("original parameter count must be positive".into()));
    }
    Ok(count as f64 / original_param_count as f64)
}

impl Reference for FlexibleLayer {
    fn input_dim(&self) -> usize {
        FlexibleLayer::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        FlexibleLayer::output_dim(self)
    }

    fn eval(&self, u: &[f64]) -> Result<DVector<f64>> {
        self.predict(u)
    }

    /// `W diag(g'(V^T u)) V^T`.
    fn jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(u)?;
        let uv = DVector::from_column_slice(u);
        let mut scaled = self.w.clone();
        for l in 0..self.rank() {
            let t = self.v.column(l).dot(&uv);
            let gd = self.g_deriv(l, t);
            scaled.column_mut(l).scale_mut(gd);
        }
        Ok(scaled * self.v.transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisFamily;

    fn poly_model(w: &[f64], v: &[f64], c: &[f64], d: usize) -> FlexibleLayer {
        let spec = BasisSpec::polynomial(d).unwrap();
        FlexibleLayer::new(
            DMatrix::from_column_slice(v.len(), 1, v),
            DMatrix::from_column_slice(w.len(), 1, w),
            spec,
            vec![KnotSet::from_extrema(&spec, -1.0, 1.0)],
            DMatrix::from_column_slice(d + 1, 1, c),
            DVector::zeros(w.len()),
        )
        .unwrap()
    }

    #[test]
    fn zero_coefficients_predict_zero() {
        let m = poly_model(&[1.0, 2.0], &[0.5, 0.5], &[0.0, 0.0, 0.0], 2);
        assert_eq!(m.predict(&[3.0, -1.0]).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn rank_one_square_by_hand() {
        let m = poly_model(&[3.0], &[2.0], &[0.0, 0.0, 1.0], 2);
        assert_eq!(m.predict(&[1.0]).unwrap()[0], 12.0);
        assert!(m.predict(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn offset_correction_hits_reference() {
        let m = poly_model(&[3.0], &[2.0], &[0.7, 1.0, 1.0], 2);
        let target = DVector::from_element(1, 2.5);
        let c = m.offset_correct(&target).unwrap();
        assert_eq!(c.predict(&[0.0]).unwrap(), target);
        let again = c.offset_correct(&target).unwrap();
        assert_eq!(again, c);

        let exact = poly_model(&[1.0], &[1.0], &[2.5, 1.0, 0.0], 2);
        let corrected = exact.offset_correct(&target).unwrap();
        assert_eq!(corrected.offset[0], 0.0);
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(flexible_param_count(4096, 128, 4, 120), 507_480);
        let m = poly_model(&[1.0, 2.0], &[0.5, 0.5, 1.0], &[0.0, 1.0, 0.0], 2);
        assert_eq!(m.param_count(), 3 + 3 + 2);
        let with_offset = m.offset_correct(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(with_offset.param_count(), 3 + 3 + 2 + 2);
    }

    #[test]
    fn rank_zero_model() {
        let spec = BasisSpec::new(BasisFamily::PwlMinMaxKnots, 4).unwrap();
        let m = FlexibleLayer::new(
            DMatrix::zeros(5, 0),
            DMatrix::zeros(3, 0),
            spec,
            vec![],
            DMatrix::zeros(5, 0),
            DVector::zeros(3),
        )
        .unwrap();
        assert_eq!(m.param_count(), 0);
        assert_eq!(m.compression_ratio(100).unwrap(), 0.0);
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let spec = BasisSpec::polynomial(2).unwrap();
        let r = FlexibleLayer::new(
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
            spec,
            vec![KnotSet::from_extrema(&spec, 0.0, 1.0)],
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
        );
        assert!(r.is_err());
    }
}
