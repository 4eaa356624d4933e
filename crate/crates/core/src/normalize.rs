use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension z-scoring fit on a training set.
///
/// Dimensions with (numerically) zero variance get `std = 1` and are listed
/// in `degenerate` so callers can surface a warning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub degenerate: Vec<usize>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            degenerate: Vec::new(),
        }
    }

    /// Fit on `rows`, each of length `dim`. Uses the population variance.
    pub fn fit<'a, I>(rows: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
        I::IntoIter: Clone,
    {
        let rows = rows.into_iter();
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            if r.len() != dim {
                return Err(Error::shape(format!(
                    "normalizer expects width {dim}, got {}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite("normalizer input"));
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::contract("cannot fit a normalizer on no data"));
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((acc, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let mut std = Vec::with_capacity(dim);
        let mut degenerate = Vec::new();
        for (i, (v, m)) in var.iter().zip(&mean).enumerate() {
            let s = (v / n as f64).sqrt();
            if s <= 1e-10 * (1.0 + m.abs()) {
                degenerate.push(i);
                std.push(1.0);
            } else {
                std.push(s);
            }
        }
        Ok(Self {
            mean,
            std,
            degenerate,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_degenerate(&self) -> bool {
        !self.degenerate.is_empty()
    }

    pub fn normalize(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    /// Normalize a flat buffer of rows in place.
    pub fn normalize_rows(&self, data: &mut [f64]) {
        let d = self.dim();
        for row in data.chunks_mut(d) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| x * s + m)
            .collect()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::shape("normalizer mean/std lengths differ"));
        }
        if self.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::contract("normalizer std must be strictly positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_mean_and_population_std() {
        let rows = [vec![1.0, 10.0], vec![3.0, 10.0]];
        let n = Normalizer::fit(rows.iter().map(Vec::as_slice), 2).unwrap();
        assert_eq!(n.mean, vec![2.0, 10.0]);
        assert_eq!(n.std, vec![1.0, 1.0]);
        assert_eq!(n.degenerate, vec![1]);
        assert_eq!(n.normalize(&[3.0, 12.0]), vec![1.0, 2.0]);
        assert_eq!(n.denormalize(&[1.0, 2.0]), vec![3.0, 12.0]);
    }

    #[test]
    fn rejects_empty_and_ragged_input() {
        let empty: [Vec<f64>; 0] = [];
        assert!(Normalizer::fit(empty.iter().map(Vec::as_slice), 2).is_err());
        let ragged = [vec![1.0, 2.0], vec![1.0]];
        assert!(Normalizer::fit(ragged.iter().map(Vec::as_slice), 2).is_err());
    }
}
