//! Gradient-descent refinement of a flexible layer against reference outputs.
//!
//! The loss is the matrix NMSE `||W G + offset 1^T - F||^2 / ||F||^2` where
//! `G` holds the branch outputs at the sample points. `W`, the coefficients
//! and the offset are updated; `V` only when `tune_v` is set. Knots never
//! move.

use nalgebra::{DMatrix, DVector};

use super::FlexibleLayer;
use crate::basis;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineTuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub tune_v: bool,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            steps: 200,
            lr: 0.05,
            tune_v: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    /// Best iterate seen (possibly the input model).
    pub model: FlexibleLayer,
    /// Matrix NMSE before each step and after the last one.
    pub trace: Vec<f64>,
    pub best_step: usize,
    pub diverged: bool,
}

pub fn fine_tune(
    model: &FlexibleLayer,
    u: &DMatrix<f64>,
    f_ref: &DMatrix<f64>,
    config: &FineTuneConfig,
) -> Result<FineTuneOutcome> {
    if u.nrows() != model.input_dim() || f_ref.nrows() != model.output_dim() {
        return Err(Error::shape("fine-tune inputs do not match model dims"));
    }
    if u.ncols() != f_ref.ncols() {
        return Err(Error::shape("sample count != reference column count"));
    }
    let denom: f64 = f_ref.iter().map(|x| x * x).sum();
    if denom == 0.0 {
        return Err(Error::ZeroReference("fine-tune reference"));
    }
    let big_n = u.ncols();
    let r = model.rank();
    let spec = model.spec;
    let d1 = spec.n_coeffs();

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_step = 0;
    let mut trace = Vec::with_capacity(config.steps + 1);
    let mut row = vec![0.0; d1];

    for step in 0..=config.steps {
        let proj = current.v.transpose() * u;
        let g = DMatrix::from_fn(r, big_n, |l, j| current.g(l, proj[(l, j)]));
        let mut resid = &current.w * &g - f_ref;
        for mut col in resid.column_iter_mut() {
            col += &current.offset;
        }
        let loss = resid.iter().map(|x| x * x).sum::<f64>() / denom;
        if !loss.is_finite() {
            return Ok(FineTuneOutcome {
                model: model.clone(),
                trace,
                best_step: 0,
                diverged: true,
            });
        }
        trace.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = current.clone();
            best_step = step;
        }
        if step == config.steps || config.lr == 0.0 {
            continue;
        }

        let scale = 2.0 / denom;
        let grad_w = &resid * g.transpose() * scale;
        let grad_off: DVector<f64> = resid.column_sum() * scale;
        // back-propagated residual per branch and sample: (R^T w_l)_j
        let back = resid.transpose() * &current.w;
        let mut grad_c = DMatrix::zeros(d1, r);
        let mut grad_v = DMatrix::zeros(current.v.nrows(), r);
        for l in 0..r {
            let knots = &current.knots[l];
            for j in 0..big_n {
                let b = back[(j, l)] * scale;
                if b == 0.0 {
                    continue;
                }
                basis::eval_basis_into(&spec, knots, proj[(l, j)], &mut row);
                for (k, &phi) in row.iter().enumerate() {
                    grad_c[(k, l)] += b * phi;
                }
                if config.tune_v {
                    let gd = current.g_deriv(l, proj[(l, j)]);
                    grad_v.column_mut(l).axpy(b * gd, &u.column(j), 1.0);
                }
            }
        }
        current.w -= grad_w * config.lr;
        current.offset -= grad_off * config.lr;
        current.coeffs -= grad_c * config.lr;
        if config.tune_v {
            current.v -= grad_v * config.lr;
        }
    }
    Ok(FineTuneOutcome {
        model: best,
        trace,
        best_step,
        diverged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisFamily, BasisSpec, KnotSet};

    fn model() -> FlexibleLayer {
        let spec = BasisSpec::new(BasisFamily::PwlMinMaxKnots, 3).unwrap();
        FlexibleLayer::new(
            DMatrix::from_row_slice(2, 2, &[0.8, 0.0, 0.6, 1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.3, 1.0]),
            spec,
            vec![
                KnotSet::from_extrema(&spec, -2.0, 2.0),
                KnotSet::from_extrema(&spec, -2.0, 2.0),
            ],
            DMatrix::from_row_slice(4, 2, &[0.1, 0.2, 1.0, -1.0, 0.5, 0.3, -0.2, 0.8]),
            DVector::zeros(2),
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_and_zero_lr_leave_model() {
        let m = model();
        let u = DMatrix::from_fn(2, 10, |i, j| (i as f64 - 0.5) * (j as f64 * 0.3 - 1.2));
        let f = m.predict_batch(&u).unwrap().map(|x| x + 0.3);
        let cfg = FineTuneConfig {
            steps: 0,
            ..Default::default()
        };
        assert_eq!(fine_tune(&m, &u, &f, &cfg).unwrap().model, m);
        let cfg = FineTuneConfig {
            steps: 50,
            lr: 0.0,
            tune_v: true,
        };
        assert_eq!(fine_tune(&m, &u, &f, &cfg).unwrap().model, m);
    }

    #[test]
    fn divergence_returns_input() {
        let m = model();
        let u = DMatrix::from_fn(2, 10, |i, j| (i as f64 + 1.0) * (j as f64 - 4.0));
        let f = DMatrix::from_element(2, 10, 1.0);
        let cfg = FineTuneConfig {
            steps: 500,
            lr: 1e6,
            tune_v: false,
        };
        let out = fine_tune(&m, &u, &f, &cfg).unwrap();
        assert!(out.diverged);
        assert_eq!(out.model, m);
    }
}
