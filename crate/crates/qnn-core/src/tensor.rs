//! Dense containers and the seeded RNG.
//!
//! The whole crate works on plain `f64` buffers: [`DenseVector`] and a
//! row-major [`DenseMatrix`]. Networks here are small (widths in the tens),
//! so there is no point in a BLAS dependency; straightforward loops keep the
//! arithmetic order fixed, which is what makes runs reproducible bit for bit.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense vector of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    pub data: Vec<f64>,
}

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self { data: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Element-wise product. Errors if the lengths differ.
    pub fn hadamard(&self, other: &DenseVector) -> Result<DenseVector> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "hadamard of lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(DenseVector::new(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        ))
    }

    /// Element-wise rectifier, max(0, x).
    pub fn relu(&self) -> DenseVector {
        DenseVector::new(self.data.iter().map(|&x| x.max(0.0)).collect())
    }

    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "add of lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(DenseVector::new(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "sub of lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(DenseVector::new(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn scale(&self, s: f64) -> DenseVector {
        DenseVector::new(self.data.iter().map(|&x| s * x).collect())
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Dimension(format!(
                "dot of lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Sum of squared entries.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(data: Vec<f64>) -> Self {
        Self { data }
    }
}

/// Dense row-major matrix of `f64`.
///
/// `data[r * cols + c]` is the entry in row `r`, column `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from a flat row-major buffer. Errors if the buffer
    /// length is not `rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Matrix-vector product `Mx`. Errors if `x.len() != cols`.
    pub fn matvec(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (m, v) in row.iter().zip(&x.data) {
                acc += m * v;
            }
            out[r] = acc;
        }
        Ok(DenseVector::new(out))
    }

    /// Transposed product `M'x`. Errors if `x.len() != rows`.
    pub fn matvec_t(&self, x: &DenseVector) -> Result<DenseVector> {
        if x.len() != self.rows {
            return Err(Error::Dimension(format!(
                "matvec_t: {}x{} matrix with vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let xv = x.data[r];
            for (o, m) in out.iter_mut().zip(row) {
                *o += m * xv;
            }
        }
        Ok(DenseVector::new(out))
    }

    /// Outer product `u v'` as a `u.len() x v.len()` matrix.
    pub fn outer(u: &DenseVector, v: &DenseVector) -> DenseMatrix {
        let mut data = Vec::with_capacity(u.len() * v.len());
        for &a in &u.data {
            for &b in &v.data {
                data.push(a * b);
            }
        }
        DenseMatrix {
            rows: u.len(),
            cols: v.len(),
            data,
        }
    }

    /// In-place `self += s * other`. Errors on shape mismatch.
    pub fn axpy(&mut self, s: f64, other: &DenseMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "axpy: {}x{} += {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum()
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Seeded random source.
///
/// A thin wrapper over a counter-mode stream cipher; two instances created
/// with the same seed produce identical draws in identical order, which is
/// the backbone of the determinism guarantees everywhere else.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            state: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// One draw from N(0, sigma^2).
    pub fn gaussian(&mut self, sigma: f64) -> f64 {
        let z: f64 = self.state.sample(StandardNormal);
        sigma * z
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.state.gen::<f64>()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.state.gen_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.state.gen_range(0..=i);
            items.swap(i, j);
        }
    }

    /// Fresh generator for an independent sub-stream, derived from this
    /// generator's seed and a stream label rather than from its current
    /// position.
    pub fn derive(&self, label: u64) -> Rng {
        Rng::new(self.seed ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Rng;
    use proptest::prelude::*;

    #[test]
    fn matvec_small() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let x = DenseVector::new(vec![5.0, 6.0]);
        assert_eq!(m.matvec(&x).unwrap().data, vec![17.0, 39.0]);
    }

    #[test]
    fn matvec_shape_mismatch() {
        let m = DenseMatrix::zeros(2, 3);
        let x = DenseVector::zeros(2);
        match m.matvec(&x) {
            Err(Error::Dimension(_)) => {}
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn hadamard_small() {
        let a = DenseVector::new(vec![1.0, 2.0, 3.0]);
        let b = DenseVector::new(vec![4.0, 5.0, 6.0]);
        assert_eq!(a.hadamard(&b).unwrap().data, vec![4.0, 10.0, 18.0]);
    }

    #[test]
    fn hadamard_shape_mismatch() {
        let a = DenseVector::zeros(3);
        let b = DenseVector::zeros(4);
        assert!(matches!(a.hadamard(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn relu_clamps_negatives() {
        let v = DenseVector::new(vec![-1.0, 0.0, 2.0]);
        assert_eq!(v.relu().data, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn matvec_t_matches_explicit_transpose() {
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let x = DenseVector::new(vec![7.0, 9.0]);
        // transpose is [[1,4],[2,5],[3,6]]
        assert_eq!(m.matvec_t(&x).unwrap().data, vec![43.0, 59.0, 75.0]);
    }

    #[test]
    fn outer_shape_and_values() {
        let u = DenseVector::new(vec![1.0, 2.0]);
        let v = DenseVector::new(vec![3.0, 4.0, 5.0]);
        let m = DenseMatrix::outer(&u, &v);
        assert_eq!((m.rows, m.cols), (2, 3));
        assert_eq!(m.data, vec![3.0, 4.0, 5.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn gaussian_streams_are_seed_deterministic() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..10_000 {
            let (x, y) = (a.gaussian(1.0), b.gaussian(1.0));
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let mut c = Rng::new(43);
        let differs = (0..100).any(|_| a.gaussian(1.0) != c.gaussian(1.0));
        assert!(differs, "different seeds should give different streams");
    }

    #[test]
    fn shuffle_is_seed_deterministic() {
        let mut a = Rng::new(7);
        let mut b = Rng::new(7);
        let mut xs: Vec<u32> = (0..50).collect();
        let mut ys = xs.clone();
        a.shuffle(&mut xs);
        b.shuffle(&mut ys);
        assert_eq!(xs, ys);
    }

    fn small_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0..100.0f64, len)
    }

    proptest! {
        #[test]
        fn matvec_distributes_over_addition(
            m in small_vec(12),
            x in small_vec(4),
            y in small_vec(4),
        ) {
            let m = DenseMatrix::new(3, 4, m).unwrap();
            let x = DenseVector::new(x);
            let y = DenseVector::new(y);
            let lhs = m.matvec(&x.add(&y).unwrap()).unwrap();
            let rhs = m.matvec(&x).unwrap().add(&m.matvec(&y).unwrap()).unwrap();
            for (a, b) in lhs.data.iter().zip(&rhs.data) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs())));
            }
        }

        #[test]
        fn hadamard_commutes(a in small_vec(6), b in small_vec(6)) {
            let a = DenseVector::new(a);
            let b = DenseVector::new(b);
            prop_assert_eq!(a.hadamard(&b).unwrap().data, b.hadamard(&a).unwrap().data);
        }

        #[test]
        fn relu_is_idempotent(a in small_vec(6)) {
            let v = DenseVector::new(a);
            prop_assert_eq!(v.relu().relu().data, v.relu().data);
        }
    }
}
