//! Full-batch gradient descent for reference networks. Plain fixed-step
//! updates, no momentum.

use nalgebra::{DMatrix, DVector};

use super::{Activation, RefNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Mean over samples of the squared error summed over outputs.
    Mse,
    /// Mean softmax cross-entropy over samples.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `n x K` regression targets.
    Values(DMatrix<f64>),
    /// One class index per sample.
    Classes(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: RefNetwork,
    /// Loss before each step, plus the final loss.
    pub loss_trace: Vec<f64>,
}

struct Cache {
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations per layer (winning group for maxout).
    pre: Vec<DMatrix<f64>>,
    /// Winning group per output entry (maxout only).
    argmax: Vec<Vec<usize>>,
    output: DMatrix<f64>,
}

fn forward_cached(net: &RefNetwork, x: &DMatrix<f64>) -> Cache {
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut pre = Vec::with_capacity(net.layers.len());
    let mut argmax = Vec::with_capacity(net.layers.len());
    let mut a = x.clone();
    for layer in &net.layers {
        let k = a.ncols();
        let affine = |g: usize| -> DMatrix<f64> {
            let mut z = layer.weights[g].transpose() * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.bias[g];
            }
            z
        };
        let mut z = affine(0);
        let mut winner = vec![0usize; z.len()];
        for g in 1..layer.weights.len() {
            let zg = affine(g);
            for idx in 0..z.len() {
                if zg[idx] > z[idx] {
                    z[idx] = zg[idx];
                    winner[idx] = g;
                }
            }
        }
        let out = match layer.activation {
            Activation::Maxout(_) => z.clone(),
            act => z.map(|v| act.apply(v)),
        };
        debug_assert_eq!(out.ncols(), k);
        inputs.push(a);
        pre.push(z);
        argmax.push(winner);
        a = out;
    }
    Cache {
        inputs,
        pre,
        argmax,
        output: a,
    }
}

/// Loss value and its gradient w.r.t. the network output.
fn loss_and_grad(
    output: &DMatrix<f64>,
    targets: &Targets,
    loss: Loss,
) -> Result<(f64, DMatrix<f64>)> {
    let k = output.ncols() as f64;
    match (loss, targets) {
        (Loss::Mse, Targets::Values(y)) => {
            if y.shape() != output.shape() {
                return Err(Error::shape("target matrix shape != network output"));
            }
            let r = output - y;
            let value = r.iter().map(|x| x * x).sum::<f64>() / k;
            Ok((value, r * (2.0 / k)))
        }
        (Loss::SoftmaxCrossEntropy, Targets::Classes(labels)) => {
            if labels.len() != output.ncols() {
                return Err(Error::shape("label count != sample count"));
            }
            let mut grad = DMatrix::zeros(output.nrows(), output.ncols());
            let mut value = 0.0;
            for (c, &label) in labels.iter().enumerate() {
                if label >= output.nrows() {
                    return Err(Error::shape(format!(
                        "label {label} out of range for {} outputs",
                        output.nrows()
                    )));
                }
                let col = output.column(c);
                let mx = col.max();
                let exps: Vec<f64> = col.iter().map(|z| (z - mx).exp()).collect();
                let sum: f64 = exps.iter().sum();
                value += -((exps[label] / sum).ln());
                for (i, e) in exps.iter().enumerate() {
                    let p = e / sum;
                    grad[(i, c)] = (p - if i == label { 1.0 } else { 0.0 }) / k;
                }
            }
            Ok((value / k, grad))
        }
        _ => Err(Error::Config(
            "loss kind does not match target kind (mse needs values, cross-entropy needs classes)"
                .into(),
        )),
    }
}

/// Trains `net` on inputs `x` (`m x K`, one sample per column).
pub fn train_ref(
    net: &RefNetwork,
    x: &DMatrix<f64>,
    targets: &Targets,
    loss: Loss,
    steps: usize,
    lr: f64,
) -> Result<TrainOutcome> {
    if x.nrows() != net.input_dim() {
        return Err(Error::shape("input rows != network input dim"));
    }
    if x.ncols() == 0 {
        return Err(Error::Empty("training inputs"));
    }
    let mut net = net.clone();
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let cache = forward_cached(&net, x);
        let (value, mut grad_out) = loss_and_grad(&cache.output, targets, loss)?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        trace.push(value);
        if step == steps {
            break;
        }
        for (li, layer) in net.layers.iter_mut().enumerate().rev() {
            let z = &cache.pre[li];
            let winners = &cache.argmax[li];
            let a_in = &cache.inputs[li];
            let dz = match layer.activation {
                Activation::Maxout(_) => grad_out.clone(),
                act => grad_out.zip_map(z, |g, zv| g * act.derivative(zv)),
            };
            let mut grad_in = DMatrix::zeros(a_in.nrows(), a_in.ncols());
            for g in 0..layer.weights.len() {
                let dz_g = if layer.weights.len() == 1 {
                    dz.clone()
                } else {
                    let mut m = dz.clone();
                    for (idx, v) in m.iter_mut().enumerate() {
                        if winners[idx] != g {
                            *v = 0.0;
                        }
                    }
                    m
                };
                grad_in += &layer.weights[g] * &dz_g;
                let dw = a_in * dz_g.transpose();
                let db: DVector<f64> = dz_g.column_sum();
                layer.weights[g] -= dw * lr;
                layer.bias[g] -= db * lr;
            }
            grad_out = grad_in;
        }
    }
    Ok(TrainOutcome {
        net,
        loss_trace: trace,
    })
}
