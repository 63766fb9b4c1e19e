//! Dense square matrices indexed by class pairs.
//!
//! Block probability matrices and dropout matrices are tiny (k is the number
//! of partition classes, rarely more than a dozen), so a flat row-major
//! `Vec<f64>` is all we need. Serialization uses nested arrays so the JSON
//! form reads as a plain matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A k-by-k matrix of `f64` entries, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SquareMatrix {
    k: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(k: usize) -> Self {
        SquareMatrix {
            k,
            data: vec![0.0; k * k],
        }
    }

    pub fn filled(k: usize, value: f64) -> Self {
        SquareMatrix {
            k,
            data: vec![value; k * k],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        let mut data = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::NotSquare {
                    row: i,
                    found: row.len(),
                    expected: k,
                });
            }
            data.extend_from_slice(row);
        }
        Ok(SquareMatrix { k, data })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u * self.k + v]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.data[u * self.k + v] = value;
    }

    /// Entry-wise transform, preserving shape.
    pub fn map(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for u in 0..self.k {
            for v in 0..self.k {
                out.set(u, v, f(u, v, self.get(u, v)));
            }
        }
        out
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|u| self.data[u * self.k..(u + 1) * self.k].to_vec())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let k = self.k;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &x)| (i / k, i % k, x))
    }

    /// True when every entry is a probability (finite and inside [0, 1]).
    pub fn is_probability_matrix(&self) -> bool {
        self.data.iter().all(|x| x.is_finite() && (0.0..=1.0).contains(x))
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        assert_eq!(self.k, other.k);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<Vec<f64>>> for SquareMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SquareMatrix::from_rows(rows)
    }
}

impl From<SquareMatrix> for Vec<Vec<f64>> {
    fn from(m: SquareMatrix) -> Self {
        m.rows()
    }
}
