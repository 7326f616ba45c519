//! Whitespace-separated text formats. Every real is written in Rust's
//! shortest round-trip form, so parse(write(x)) reproduces `x` bit for bit.
//!
//! Matrix: `matrix <rows> <cols>` then the entries row by row.
//!
//! Tensor: `tensor3 <n> <m> <N>` then the entries in storage order
//! (first index fastest), one frontal slice per line.
//!
//! Labels: `labels <N>` then `N` class indices.
//!
//! Network:
//! ```text
//! refnet 1
//! layers <K>
//! layer <activation> <in> <out> <groups>    (per layer)
//! w <in*out entries, row-major>             (per group)
//! b <out entries>                           (per group)
//! ```
//!
//! Model:
//! ```text
//! flexlayer 1
//! m <m>
//! n <n>
//! r <r>
//! basis <family> <d>
//! V <m*r entries, row-major>
//! W <n*r entries, row-major>
//! C <(d+1)*r entries, row-major>
//! knots <min> <max> <count> <knot...>       (per branch)
//! offset <n entries>
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisFamily, BasisSpec, KnotSet};
use crate::error::{Error, Result};
use crate::flexnet::FlexibleLayer;
use crate::refnet::{Activation, DenseLayer, RefNetwork};
use crate::tensor::Tensor3;

pub const NETWORK_FORMAT_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Token cursor over a text file.
pub struct Tokens<'a> {
    iter: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    pub fn new(text: &'a str) -> Self {
        Tokens {
            iter: text.split_ascii_whitespace(),
        }
    }

    pub fn word(&mut self, what: &str) -> Result<&'a str> {
        self.iter
            .next()
            .ok_or_else(|| Error::malformed(format!("unexpected end of input, expected {what}")))
    }

    pub fn expect(&mut self, keyword: &str) -> Result<()> {
        let w = self.word(keyword)?;
        if w == keyword {
            Ok(())
        } else {
            Err(Error::malformed(format!("expected '{keyword}', found '{w}'")))
        }
    }

    pub fn parse<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let w = self.word(what)?;
        w.parse()
            .map_err(|_| Error::malformed(format!("bad {what} '{w}'")))
    }

    pub fn reals(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        (0..count).map(|_| self.parse::<f64>(what)).collect()
    }

    pub fn finish(mut self) -> Result<()> {
        match self.iter.next() {
            None => Ok(()),
            Some(w) => Err(Error::malformed(format!("trailing content '{w}'"))),
        }
    }
}

fn push_reals<'a>(out: &mut String, values: impl IntoIterator<Item = &'a f64>) {
    for x in values {
        let _ = write!(out, " {x:?}");
    }
}

fn push_row_major(out: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        push_reals(out, m.row(i).iter());
    }
}

fn finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn write_matrix(m: &DMatrix<f64>) -> String {
    let mut out = format!("matrix {} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let mut line = String::new();
        push_reals(&mut line, m.row(i).iter());
        out.push_str(line.trim_start());
        out.push('\n');
    }
    out
}

fn read_matrix_body(tok: &mut Tokens<'_>) -> Result<DMatrix<f64>> {
    let rows: usize = tok.parse("row count")?;
    let cols: usize = tok.parse("column count")?;
    let data = tok.reals(rows * cols, "matrix entry")?;
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut tok = Tokens::new(text);
    tok.expect("matrix")?;
    let m = read_matrix_body(&mut tok)?;
    tok.finish()?;
    Ok(m)
}

pub fn write_tensor(t: &Tensor3) -> String {
    let (n, m, big_n) = t.dims();
    let mut out = format!("tensor3 {n} {m} {big_n}\n");
    for slice in t.data().chunks(n * m) {
        let mut line = String::new();
        push_reals(&mut line, slice);
        out.push_str(line.trim_start());
        out.push('\n');
    }
    out
}

pub fn parse_tensor(text: &str) -> Result<Tensor3> {
    let mut tok = Tokens::new(text);
    tok.expect("tensor3")?;
    let n: usize = tok.parse("n")?;
    let m: usize = tok.parse("m")?;
    let big_n: usize = tok.parse("N")?;
    let data = tok.reals(n * m * big_n, "tensor entry")?;
    tok.finish()?;
    Tensor3::from_vec((n, m, big_n), data)
}

pub fn write_labels(labels: &[usize]) -> String {
    let mut out = format!("labels {}\n", labels.len());
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    out
}

pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    let mut tok = Tokens::new(text);
    tok.expect("labels")?;
    let count: usize = tok.parse("label count")?;
    let labels = (0..count)
        .map(|_| tok.parse::<usize>("label"))
        .collect::<Result<Vec<_>>>()?;
    tok.finish()?;
    Ok(labels)
}

pub fn write_network(net: &RefNetwork) -> String {
    let mut out = format!(
        "refnet {NETWORK_FORMAT_VERSION}\nlayers {}\n",
        net.layers.len()
    );
    for layer in &net.layers {
        let act = match layer.activation {
            Activation::Maxout(k) => format!("maxout{k}"),
            a => a.name().to_string(),
        };
        let _ = writeln!(
            out,
            "layer {act} {} {} {}",
            layer.input_dim(),
            layer.output_dim(),
            layer.weights.len()
        );
        for (w, b) in layer.weights.iter().zip(&layer.bias) {
            out.push('w');
            push_row_major(&mut out, w);
            out.push_str("\nb");
            push_reals(&mut out, b.iter());
            out.push('\n');
        }
    }
    out
}

fn check_version(found: u32, expected: u32) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::Version { found, expected })
    }
}

pub fn parse_network(text: &str) -> Result<RefNetwork> {
    let mut tok = Tokens::new(text);
    tok.expect("refnet")?;
    check_version(tok.parse("format version")?, NETWORK_FORMAT_VERSION)?;
    tok.expect("layers")?;
    let count: usize = tok.parse("layer count")?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        tok.expect("layer")?;
        let act: Activation = tok
            .word("activation")?
            .parse()
            .map_err(|e: Error| Error::malformed(e.to_string()))?;
        let inp: usize = tok.parse("layer input dim")?;
        let out: usize = tok.parse("layer output dim")?;
        let groups: usize = tok.parse("group count")?;
        if groups != act.groups() {
            return Err(Error::malformed(format!(
                "{act} layer declares {groups} groups"
            )));
        }
        let mut weights = Vec::with_capacity(groups);
        let mut bias = Vec::with_capacity(groups);
        for _ in 0..groups {
            tok.expect("w")?;
            weights.push(DMatrix::from_row_slice(inp, out, &tok.reals(inp * out, "weight")?));
            tok.expect("b")?;
            bias.push(DVector::from_vec(tok.reals(out, "bias")?));
        }
        layers.push(DenseLayer::new(weights, bias, act)?);
    }
    tok.finish()?;
    RefNetwork::new(layers)
}

pub fn write_model(model: &FlexibleLayer) -> String {
    let mut out = format!(
        "flexlayer {MODEL_FORMAT_VERSION}\nm {}\nn {}\nr {}\nbasis {} {}\n",
        model.input_dim(),
        model.output_dim(),
        model.rank(),
        model.spec.family.name(),
        model.spec.degree
    );
    for (tag, m) in [("V", &model.v), ("W", &model.w), ("C", &model.coeffs)] {
        out.push_str(tag);
        push_row_major(&mut out, m);
        out.push('\n');
    }
    for k in &model.knots {
        let _ = write!(out, "knots {:?} {:?} {}", k.min, k.max, k.knots.len());
        push_reals(&mut out, &k.knots);
        out.push('\n');
    }
    out.push_str("offset");
    push_reals(&mut out, model.offset.iter());
    out.push('\n');
    out
}

pub fn parse_model(text: &str) -> Result<FlexibleLayer> {
    let mut tok = Tokens::new(text);
    tok.expect("flexlayer")?;
    check_version(tok.parse("format version")?, MODEL_FORMAT_VERSION)?;
    tok.expect("m")?;
    let m: usize = tok.parse("m")?;
    tok.expect("n")?;
    let n: usize = tok.parse("n")?;
    tok.expect("r")?;
    let r: usize = tok.parse("r")?;
    tok.expect("basis")?;
    let family: BasisFamily = tok
        .word("basis family")?
        .parse()
        .map_err(|e: Error| Error::malformed(e.to_string()))?;
    let degree: usize = tok.parse("basis degree")?;
    let spec = BasisSpec::new(family, degree).map_err(|e| Error::malformed(e.to_string()))?;
    let mut read = |tag: &str, rows: usize| -> Result<DMatrix<f64>> {
        tok.expect(tag)?;
        let data = tok.reals(rows * r, tag)?;
        finite(&data, "model parameters")?;
        Ok(DMatrix::from_row_slice(rows, r, &data))
    };
    let v = read("V", m)?;
    let w = read("W", n)?;
    let coeffs = read("C", spec.n_coeffs())?;
    let mut knots = Vec::with_capacity(r);
    for _ in 0..r {
        tok.expect("knots")?;
        let min: f64 = tok.parse("knot minimum")?;
        let max: f64 = tok.parse("knot maximum")?;
        let count: usize = tok.parse("knot count")?;
        let k = tok.reals(count, "knot")?;
        knots.push(KnotSet { knots: k, min, max });
    }
    tok.expect("offset")?;
    let offset = DVector::from_vec(tok.reals(n, "offset")?);
    tok.finish()?;
    FlexibleLayer::new(v, w, spec, knots, coeffs, offset)
}

pub fn read_text(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(std::fs::write(path, text)?)
}

pub fn save_model(model: &FlexibleLayer, path: &Path) -> Result<()> {
    write_text(path, &write_model(model))
}

pub fn load_model(path: &Path) -> Result<FlexibleLayer> {
    parse_model(&read_text(path)?)
}

pub fn save_network(net: &RefNetwork, path: &Path) -> Result<()> {
    write_text(path, &write_network(net))
}

pub fn load_network(path: &Path) -> Result<RefNetwork> {
    parse_network(&read_text(path)?)
}
