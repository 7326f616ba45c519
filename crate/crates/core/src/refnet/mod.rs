//! Small dense reference subnetworks and the data they supply to the
//! solvers: evaluations `F` and the Jacobian tensor built by forward-mode AD.

pub mod dual;
mod sampling;
mod train;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;
use dual::{Dual, Scalar};

pub use sampling::{gaussian_blobs, sample_points, SampleMode, SampleSet};
pub use train::{train_ref, Loss, Targets, TrainOutcome};

/// A differentiable map `R^m -> R^n` that can stand in as the function to
/// compress.
pub trait Reference: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, u: &[f64]) -> Result<DVector<f64>>;
    /// `n x m` Jacobian at `u`.
    fn jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
    /// Elementwise max over `k` affine groups.
    Maxout(usize),
}

impl Activation {
    pub fn groups(self) -> usize {
        match self {
            Activation::Maxout(k) => k,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Maxout(_) => "maxout",
        }
    }

    pub(crate) fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Identity | Activation::Maxout(_) => x,
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }

    /// Derivative as a function of the pre-activation.
    pub(crate) fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Maxout(_) => 1.0,
            Activation::Sigmoid => {
                let s = dual::sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Accepts `identity`, `sigmoid`, `tanh`, `relu`, `maxout<k>` / `maxout:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "identity" | "linear" => return Ok(Activation::Identity),
            "sigmoid" => return Ok(Activation::Sigmoid),
            "tanh" => return Ok(Activation::Tanh),
            "relu" => return Ok(Activation::Relu),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("maxout") {
            let k: usize = rest
                .trim_start_matches(':')
                .parse()
                .map_err(|_| Error::Config(format!("bad maxout group count in '{s}'")))?;
            if k < 2 {
                return Err(Error::Config("maxout needs at least 2 groups".into()));
            }
            return Ok(Activation::Maxout(k));
        }
        Err(Error::Config(format!("unknown activation '{s}'")))
    }
}

/// Affine map plus activation. `weights[g]` is `in x out`; maxout layers
/// hold one weight matrix and bias per group.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Vec<DMatrix<f64>>,
    pub bias: Vec<DVector<f64>>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        weights: Vec<DMatrix<f64>>,
        bias: Vec<DVector<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        let groups = activation.groups();
        if weights.len() != groups || bias.len() != groups {
            return Err(Error::shape(format!(
                "{activation} layer needs {groups} weight/bias groups, got {}/{}",
                weights.len(),
                bias.len()
            )));
        }
        let (rows, cols) = weights[0].shape();
        for (w, b) in weights.iter().zip(&bias) {
            if w.shape() != (rows, cols) || b.len() != cols {
                return Err(Error::shape("inconsistent group shapes in layer"));
            }
            if w.iter().chain(b.iter()).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("layer parameters"));
            }
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    /// Single-group layer.
    pub fn single(w: DMatrix<f64>, b: DVector<f64>, activation: Activation) -> Result<Self> {
        DenseLayer::new(vec![w], vec![b], activation)
    }

    /// Gaussian-initialised layer with `1/sqrt(in)` scaling and zero bias.
    pub fn random(inp: usize, out: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (inp as f64).sqrt();
        let groups = activation.groups();
        let weights = (0..groups)
            .map(|_| {
                DMatrix::from_fn(inp, out, |_, _| {
                    scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                })
            })
            .collect();
        let bias = (0..groups).map(|_| DVector::zeros(out)).collect();
        DenseLayer {
            weights,
            bias,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() * (self.input_dim() + 1) * self.output_dim()
    }

    fn affine<S: Scalar>(&self, g: usize, x: &[S]) -> Vec<S> {
        let w = &self.weights[g];
        let b = &self.bias[g];
        (0..self.output_dim())
            .map(|o| {
                let mut acc = S::constant(b[o]);
                for (i, &xi) in x.iter().enumerate() {
                    acc = acc + xi.scale(w[(i, o)]);
                }
                acc
            })
            .collect()
    }

    pub fn forward_generic<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        match self.activation {
            Activation::Maxout(k) => {
                let mut best = self.affine(0, x);
                for g in 1..k {
                    let cand = self.affine(g, x);
                    for (b, c) in best.iter_mut().zip(cand) {
                        // ties keep the lowest group index
                        if c.value() > b.value() {
                            *b = c;
                        }
                    }
                }
                best
            }
            act => self.affine(0, x).into_iter().map(|z| act.apply(z)).collect(),
        }
    }

    /// Maxout evaluated as one product with the group weights stacked into an
    /// `in x (k*out)` matrix, then reduced over groups.
    pub fn forward_stacked(&self, x: &[f64]) -> Vec<f64> {
        let out = self.output_dim();
        let groups = self.weights.len();
        let stacked = self.stacked_weights();
        let bias: Vec<f64> = self.bias.iter().flat_map(|b| b.iter().cloned()).collect();
        let z: Vec<f64> = (0..groups * out)
            .map(|col| {
                let mut acc = bias[col];
                for (i, &xi) in x.iter().enumerate() {
                    acc = acc + xi * stacked[(i, col)];
                }
                acc
            })
            .collect();
        (0..out)
            .map(|o| {
                let mut best = z[o];
                for g in 1..groups {
                    if z[g * out + o] > best {
                        best = z[g * out + o];
                    }
                }
                match self.activation {
                    Activation::Maxout(_) => best,
                    act => act.apply(best),
                }
            })
            .collect()
    }

    /// Group weights concatenated column-wise.
    pub fn stacked_weights(&self) -> DMatrix<f64> {
        let (inp, out) = (self.input_dim(), self.output_dim());
        let mut s = DMatrix::zeros(inp, out * self.weights.len());
        for (g, w) in self.weights.iter().enumerate() {
            s.columns_mut(g * out, out).copy_from(w);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefNetwork {
    pub layers: Vec<DenseLayer>,
}

impl RefNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(format!(
                    "layer output {} does not feed next input {}",
                    pair[0].output_dim(),
                    pair[1].input_dim()
                )));
            }
        }
        Ok(RefNetwork { layers })
    }

    /// Random network with the given widths (`widths[0]` = input) and one
    /// activation per layer.
    pub fn random(widths: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if widths.len() < 2 || activations.len() != widths.len() - 1 {
            return Err(Error::Config(
                "need widths.len() == activations.len() + 1 >= 2".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| DenseLayer::random(w[0], w[1], a, &mut rng))
            .collect();
        RefNetwork::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Layers `range` as their own network.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<RefNetwork> {
        if range.start >= range.end || range.end > self.layers.len() {
            return Err(Error::Config(format!(
                "layer range {range:?} invalid for {} layers",
                self.layers.len()
            )));
        }
        RefNetwork::new(self.layers[range].to_vec())
    }

    pub fn forward_generic<S: Scalar>(&self, u: &[S]) -> Vec<S> {
        let mut x = u.to_vec();
        for layer in &self.layers {
            x = layer.forward_generic(&x);
        }
        x
    }

    pub fn forward(&self, u: &[f64]) -> Result<DVector<f64>> {
        self.check_input(u)?;
        Ok(DVector::from_vec(self.forward_generic(u)))
    }

    /// Forward-mode Jacobian: one dual sweep per input coordinate.
    pub fn jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(u)?;
        let (n, m) = (self.output_dim(), self.input_dim());
        let mut jac = DMatrix::zeros(n, m);
        let mut seed: Vec<Dual> = u.iter().map(|&x| Dual::constant(x)).collect();
        for j in 0..m {
            seed[j].du = 1.0;
            let out = self.forward_generic(&seed);
            for (i, y) in out.iter().enumerate() {
                jac[(i, j)] = y.du;
            }
            seed[j].du = 0.0;
        }
        Ok(jac)
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "input length {} != network input dim {}",
                u.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Batched forward pass over columns of `x`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::shape("batch rows != network input dim"));
        }
        let cols: Vec<Vec<f64>> = (0..x.ncols())
            .into_par_iter()
            .map(|c| self.forward_generic(x.column(c).as_slice()))
            .collect();
        let n = self.output_dim();
        Ok(DMatrix::from_fn(n, cols.len(), |i, c| cols[c][i]))
    }
}

impl Reference for RefNetwork {
    fn input_dim(&self) -> usize {
        RefNetwork::input_dim(self)
    }
    fn output_dim(&self) -> usize {
        RefNetwork::output_dim(self)
    }
    fn eval(&self, u: &[f64]) -> Result<DVector<f64>> {
        self.forward(u)
    }
    fn jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        RefNetwork::jacobian(self, u)
    }
}

/// Central-difference Jacobian, one coordinate at a time.
pub fn finite_diff_jacobian(f: &dyn Reference, u: &[f64], h: f64) -> Result<DMatrix<f64>> {
    if h <= 0.0 {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    if u.len() != f.input_dim() {
        return Err(Error::shape("input length mismatch"));
    }
    let (n, m) = (f.output_dim(), f.input_dim());
    let mut jac = DMatrix::zeros(n, m);
    let mut x = u.to_vec();
    for j in 0..m {
        x[j] = u[j] + h;
        let plus = f.eval(&x)?;
        x[j] = u[j] - h;
        let minus = f.eval(&x)?;
        x[j] = u[j];
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// `n x N` evaluation matrix; column `j` is `f(u^(j))`.
pub fn build_f(f: &dyn Reference, samples: &SampleSet) -> Result<DMatrix<f64>> {
    let u = &samples.u;
    if u.nrows() != f.input_dim() {
        return Err(Error::shape("sample dimension != reference input dim"));
    }
    let cols: Vec<DVector<f64>> = (0..u.ncols())
        .into_par_iter()
        .map(|c| f.eval(u.column(c).as_slice()))
        .collect::<Result<_>>()?;
    if cols.is_empty() {
        return Err(Error::Empty("sample set"));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// `n x m x N` tensor whose frontal slice `k` is the Jacobian at `u^(k)`.
pub fn build_jacobian_tensor(f: &dyn Reference, samples: &SampleSet) -> Result<Tensor3> {
    let u = &samples.u;
    if u.ncols() == 0 {
        return Err(Error::Empty("sample set"));
    }
    if u.nrows() != f.input_dim() {
        return Err(Error::shape("sample dimension != reference input dim"));
    }
    let slices: Vec<DMatrix<f64>> = (0..u.ncols())
        .into_par_iter()
        .map(|c| f.jacobian(u.column(c).as_slice()))
        .collect::<Result<_>>()?;
    Tensor3::from_frontal_slices(&slices)
}
