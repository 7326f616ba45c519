//! Compression of a differentiable map `R^m -> R^n` into a single layer of
//! flexible activation functions `f(u) = sum_l w_l g_l(v_l^T u)`, learned
//! from Jacobian samples (constrained tensor decomposition) or from
//! Jacobian and function samples jointly (coupled matrix-tensor
//! factorization).

pub mod basis;
pub mod decompose;
pub mod error;
pub mod flexnet;
pub mod io;
pub mod refnet;
pub mod tensor;
pub mod toy;

pub use basis::{BasisFamily, BasisSpec, KnotSet};
pub use decompose::{als_cpd, cmtf_solve, ctd_solve, Init, SolveReport, SolverConfig};
pub use error::{Error, Result};
pub use flexnet::FlexibleLayer;
pub use refnet::{Activation, DenseLayer, RefNetwork, Reference, SampleMode, SampleSet};
pub use tensor::{CpdFactors, Tensor3};
pub use toy::Toy;
