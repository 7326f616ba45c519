use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SampleMode {
    Gaussian,
    /// Same `[low, high]` bounds on every coordinate.
    Uniform { low: f64, high: f64 },
    /// Columns of the matrix are candidate points, drawn without replacement.
    Dataset(DMatrix<f64>),
}

impl SampleMode {
    pub fn describe(&self) -> String {
        match self {
            SampleMode::Gaussian => "gaussian".into(),
            SampleMode::Uniform { low, high } => format!("uniform[{low},{high}]"),
            SampleMode::Dataset(d) => format!("dataset({} rows)", d.ncols()),
        }
    }
}

/// Sampling points `u^(j)` stored as the columns of an `m x N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub u: DMatrix<f64>,
    pub provenance: String,
}

impl SampleSet {
    pub fn new(u: DMatrix<f64>, provenance: impl Into<String>) -> Result<Self> {
        if u.ncols() == 0 {
            return Err(Error::Empty("sample set"));
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("sample set"));
        }
        Ok(SampleSet {
            u,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.u.ncols() == 0
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }
}

pub fn sample_points(mode: &SampleMode, m: usize, count: usize, seed: u64) -> Result<SampleSet> {
    if count == 0 {
        return Err(Error::Empty("sample count"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = match mode {
        SampleMode::Gaussian => {
            DMatrix::from_fn(m, count, |_, _| rng.sample::<f64, _>(StandardNormal))
        }
        SampleMode::Uniform { low, high } => {
            if !(low < high) {
                return Err(Error::Config(format!("uniform bounds [{low}, {high}] empty")));
            }
            DMatrix::from_fn(m, count, |_, _| rng.random_range(*low..*high))
        }
        SampleMode::Dataset(data) => {
            if data.nrows() != m {
                return Err(Error::shape(format!(
                    "dataset has dimension {}, expected {m}",
                    data.nrows()
                )));
            }
            if data.ncols() < count {
                return Err(Error::Config(format!(
                    "dataset has {} points, {count} requested",
                    data.ncols()
                )));
            }
            let picks = index::sample(&mut rng, data.ncols(), count);
            data.select_columns(picks.iter().collect::<Vec<_>>().iter())
        }
    };
    SampleSet::new(u, mode.describe())
}

/// Labelled Gaussian blobs: `classes` unit-norm centres scaled by
/// `separation`, `per_class` points each with isotropic standard deviation
/// `spread`. Columns are interleaved by class so any prefix is balanced.
pub fn gaussian_blobs(
    dim: usize,
    classes: usize,
    per_class: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if dim == 0 || classes == 0 || per_class == 0 {
        return Err(Error::Empty("blob dataset"));
    }
    if !(spread >= 0.0) || !separation.is_finite() {
        return Err(Error::Config("blob spread must be >= 0 and separation finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centres = DMatrix::from_fn(dim, classes, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut c in centres.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            c *= separation / norm;
        }
    }
    let total = classes * per_class;
    let labels: Vec<usize> = (0..total).map(|j| j % classes).collect();
    let x = DMatrix::from_fn(dim, total, |i, j| {
        centres[(i, labels[j])] + spread * rng.sample::<f64, _>(StandardNormal)
    });
    Ok((x, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_by_seed() {
        let a = sample_points(&SampleMode::Gaussian, 3, 20, 11).unwrap();
        let b = sample_points(&SampleMode::Gaussian, 3, 20, 11).unwrap();
        let c = sample_points(&SampleMode::Gaussian, 3, 20, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_in_bounds() {
        let s = sample_points(&SampleMode::Uniform { low: -3.0, high: 3.0 }, 2, 500, 1).unwrap();
        assert!(s.u.iter().all(|&x| (-3.0..=3.0).contains(&x)));
    }

    #[test]
    fn gaussian_mean_near_zero() {
        let s = sample_points(&SampleMode::Gaussian, 3, 10_000, 5).unwrap();
        for row in s.u.row_iter() {
            assert!(row.mean().abs() < 0.05);
        }
    }

    #[test]
    fn dataset_without_replacement() {
        let data = DMatrix::from_fn(1, 10, |_, c| c as f64);
        let s = sample_points(&SampleMode::Dataset(data.clone()), 1, 10, 3).unwrap();
        let mut seen: Vec<f64> = s.u.iter().cloned().collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..10).map(|c| c as f64).collect::<Vec<_>>());
        assert!(sample_points(&SampleMode::Dataset(data), 1, 11, 3).is_err());
    }

    #[test]
    fn zero_count_rejected() {
        assert!(sample_points(&SampleMode::Gaussian, 2, 0, 0).is_err());
    }
}
