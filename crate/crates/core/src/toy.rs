//! Closed-form two-input test functions with analytic Jacobians.
//!
//! `f1(u) = 2.5 + sin(0.2 pi (u1 + u2))`, `f2(u) = -5 + tanh(u1 + u2)`.
//! The toy file format is the single line `toy <name>`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::refnet::Reference;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toy {
    F1,
    F2,
    /// `(f1, f2)` stacked, `R^2 -> R^2`.
    Both,
}

impl Toy {
    pub fn name(self) -> &'static str {
        match self {
            Toy::F1 => "f1",
            Toy::F2 => "f2",
            Toy::Both => "both",
        }
    }

    fn components(self) -> &'static [usize] {
        match self {
            Toy::F1 => &[0],
            Toy::F2 => &[1],
            Toy::Both => &[0, 1],
        }
    }

    pub fn file_text(self) -> String {
        format!("toy {}\n", self.name())
    }

    pub fn parse_file(text: &str) -> Result<Toy> {
        let mut words = text.split_ascii_whitespace();
        match (words.next(), words.next(), words.next()) {
            (Some("toy"), Some(name), None) => name.parse(),
            _ => Err(Error::malformed("toy file must read 'toy <name>'")),
        }
    }

    fn check(&self, u: &[f64]) -> Result<f64> {
        if u.len() != 2 {
            return Err(Error::shape(format!("toy input has length {}, expected 2", u.len())));
        }
        Ok(u[0] + u[1])
    }
}

fn value(component: usize, s: f64) -> f64 {
    match component {
        0 => 2.5 + (0.2 * PI * s).sin(),
        _ => -5.0 + s.tanh(),
    }
}

fn slope(component: usize, s: f64) -> f64 {
    match component {
        0 => 0.2 * PI * (0.2 * PI * s).cos(),
        _ => {
            let t = s.tanh();
            1.0 - t * t
        }
    }
}

impl fmt::Display for Toy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Toy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f1" => Ok(Toy::F1),
            "f2" => Ok(Toy::F2),
            "both" => Ok(Toy::Both),
            other => Err(Error::Config(format!(
                "unknown toy '{other}' (expected f1, f2 or both)"
            ))),
        }
    }
}

impl Reference for Toy {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        self.components().len()
    }

    fn eval(&self, u: &[f64]) -> Result<DVector<f64>> {
        let s = self.check(u)?;
        Ok(DVector::from_iterator(
            self.output_dim(),
            self.components().iter().map(|&c| value(c, s)),
        ))
    }

    fn jacobian(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        let s = self.check(u)?;
        let comps = self.components();
        Ok(DMatrix::from_fn(comps.len(), 2, |i, _| slope(comps[i], s)))
    }
}
