//! Dense row-major f64 arrays with up to three axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense array. Rank 0 (scalar) through rank 3, row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 3 {
            return Err(Error::Dimension {
                op: "Array::new",
                msg: format!("rank {} exceeds maximum 3", shape.len()),
                shape,
            });
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Dimension {
                op: "Array::new",
                msg: format!("shape product {} != data length {}", expect, data.len()),
                shape,
            });
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Array {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Array {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Array {
            shape: vec![v.len()],
            data: v,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Array::new(vec![rows, cols], data)
    }

    /// Build a matrix from row slices; all rows must share a length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "Array::from_rows",
                    msg: format!("ragged rows: {} vs {}", r.len(), cols),
                    shape: vec![rows.len(), cols],
                });
            }
            data.extend_from_slice(r);
        }
        Array::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar value of a rank-0 or single-element array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar array");
        self.data[0]
    }

    /// Number of rows along axis 0 (1 for scalars).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Elements per row along axis 0 (shape product of trailing axes).
    pub fn row_width(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_width();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// Select rows along axis 0 in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Array {
        let w = self.row_width();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape = vec![idx.len()];
        } else {
            shape[0] = idx.len();
        }
        Array { shape, data }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Array) -> bool {
        self.shape == other.shape
    }
}

/// Cosine similarity of two equal-length vectors; `None` if either norm is
/// below `norm_floor`.
pub fn cosine(u: &[f64], v: &[f64], norm_floor: f64) -> Option<f64> {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    let nu = nu.sqrt();
    let nv = nv.sqrt();
    if nu < norm_floor || nv < norm_floor {
        None
    } else {
        Some(dot / (nu * nv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Array::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Array::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn rank_capped_at_three() {
        assert!(Array::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn gather_rows_reorders() {
        let a = Array::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let g = a.gather_rows(&[2, 0]);
        assert_eq!(g.shape(), &[2, 2]);
        assert_eq!(g.data(), &[5., 6., 1., 2.]);
    }

    #[test]
    fn cosine_identical_and_opposite() {
        let u = [1.0, 2.0, -0.5];
        assert!((cosine(&u, &u, 1e-12).unwrap() - 1.0).abs() < 1e-15);
        let nu: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((cosine(&u, &nu, 1e-12).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0], 1e-12), None);
    }
}
