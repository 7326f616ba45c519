//! Solvers: relaxed ALS for an unconstrained CPD, the constrained tensor
//! decomposition learner (Jacobian only) and the coupled matrix-tensor
//! learner (Jacobian plus evaluations).

mod als;
mod cmtf;
mod ctd;
mod state;
mod updates;

use std::fmt::Write as _;
use std::time::Duration;

use crate::error::{Error, Result};

pub use als::als_cpd;
pub use cmtf::cmtf_solve;
pub use ctd::ctd_solve;
pub use updates::{
    solve_coefficients, solve_coefficients_monolithic, update_w_coupled, update_w_coupled_naive,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Random,
    /// Gaussian factors refined by unconstrained ALS sweeps.
    RelaxedAls,
}

impl std::str::FromStr for Init {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "random" => Ok(Init::Random),
            "relaxed-als" | "als" => Ok(Init::RelaxedAls),
            other => Err(Error::Config(format!("unknown init '{other}'"))),
        }
    }
}

impl std::fmt::Display for Init {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Init::Random => "random",
            Init::RelaxedAls => "relaxed-als",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub rank: usize,
    pub lambda0: f64,
    pub lambda_growth: f64,
    pub growth_period: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub pinv_rel_tol: f64,
    pub restarts: usize,
    pub seed: u64,
    pub init: Init,
    /// Unconstrained sweeps used by [`Init::RelaxedAls`].
    pub init_sweeps: usize,
    /// Keep the knots computed at the first iteration.
    pub freeze_knots: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rank: 1,
            lambda0: 1e-3,
            lambda_growth: 10f64.sqrt(),
            growth_period: 10,
            max_iters: 200,
            rel_tol: 1e-8,
            pinv_rel_tol: crate::tensor::DEFAULT_PINV_TOL,
            restarts: 5,
            seed: 0,
            init: Init::RelaxedAls,
            init_sweeps: 100,
            freeze_knots: false,
        }
    }
}

impl SolverConfig {
    pub fn with_rank(rank: usize) -> Self {
        SolverConfig {
            rank,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.rank == 0 {
            return bad("rank must be >= 1");
        }
        if !(self.lambda0 > 0.0) || !self.lambda0.is_finite() {
            return bad("lambda0 must be > 0");
        }
        if !(self.lambda_growth > 0.0) || !self.lambda_growth.is_finite() {
            return bad("lambda_growth must be > 0");
        }
        if self.growth_period == 0 {
            return bad("growth_period must be >= 1");
        }
        if !(self.rel_tol > 0.0) {
            return bad("rel_tol must be > 0");
        }
        if !(self.pinv_rel_tol >= 0.0) {
            return bad("pinv_rel_tol must be >= 0");
        }
        if self.restarts == 0 {
            return bad("restarts must be >= 1");
        }
        Ok(())
    }

    /// Seed of restart `i`; restart 0 uses the base seed.
    pub fn restart_seed(&self, i: usize) -> u64 {
        self.seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    }
}

/// `lambda0` multiplied by `lambda_growth` once per completed
/// `growth_period` iterations.
pub fn lambda_at(config: &SolverConfig, iter: usize) -> f64 {
    let mut lambda = config.lambda0;
    for _ in 0..iter / config.growth_period {
        lambda *= config.lambda_growth;
    }
    lambda
}

/// Relative change `|prev - cur| / |prev|` with `0/0` read as no change.
pub fn relative_change(prev: f64, cur: f64) -> f64 {
    let diff = (prev - cur).abs();
    if diff == 0.0 {
        0.0
    } else if prev == 0.0 {
        f64::INFINITY
    } else {
        diff / prev.abs()
    }
}

/// True once the last two objectives differ by less than `rel_tol`
/// (relative), or `max_iters` objectives have been recorded.
pub fn converged(objectives: &[f64], rel_tol: f64, max_iters: usize) -> bool {
    if objectives.len() >= max_iters {
        return true;
    }
    match objectives {
        [.., prev, cur] => relative_change(*prev, *cur) < rel_tol,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub lambda: f64,
    pub tensor_nmse: f64,
    /// NaN when no evaluation matrix is involved.
    pub matrix_nmse: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinitEvent {
    pub iter: usize,
    pub branch: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub method: &'static str,
    pub records: Vec<IterRecord>,
    pub chosen_iter: usize,
    pub converged: bool,
    pub reinit_log: Vec<ReinitEvent>,
    /// Restart that produced the returned model.
    pub restart: usize,
    /// Best score of every restart, in restart order.
    pub restart_scores: Vec<f64>,
    pub sampling: Option<String>,
    pub wall_time: Duration,
}

pub const REPORT_CSV_HEADER: &str = "iter,lambda,tensor_nmse,matrix_nmse,objective";

impl SolveReport {
    pub(crate) fn new(method: &'static str) -> Self {
        SolveReport {
            method,
            records: Vec::new(),
            chosen_iter: 0,
            converged: false,
            reinit_log: Vec::new(),
            restart: 0,
            restart_scores: Vec::new(),
            sampling: None,
            wall_time: Duration::ZERO,
        }
    }

    pub fn chosen(&self) -> Option<&IterRecord> {
        self.records.iter().find(|r| r.iter == self.chosen_iter)
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// One row per iteration under [`REPORT_CSV_HEADER`]. Values use the
    /// shortest round-trip decimal form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?}",
                r.iter, r.lambda, r.tensor_nmse, r.matrix_nmse, r.objective
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Vec<IterRecord>> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == REPORT_CSV_HEADER => {}
            _ => return Err(Error::malformed("solve report CSV header")),
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 5 {
                    return Err(Error::malformed(format!("report row '{line}'")));
                }
                let num = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::malformed(format!("number '{s}'")))
                };
                Ok(IterRecord {
                    iter: f[0]
                        .trim()
                        .parse()
                        .map_err(|_| Error::malformed(format!("iter '{}'", f[0])))?,
                    lambda: num(f[1])?,
                    tensor_nmse: num(f[2])?,
                    matrix_nmse: num(f[3])?,
                    objective: num(f[4])?,
                })
            })
            .collect()
    }
}
