//! Dense real symmetric matrices.

use serde::{Deserialize, Serialize};

/// An entry position `(i, j)` of a symmetric matrix, stored with `i <= j`.
///
/// Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entry {
    pub i: usize,
    pub j: usize,
}

impl Entry {
    /// Canonical (unordered) entry: the smaller index goes first.
    pub fn new(a: usize, b: usize) -> Self {
        if a <= b {
            Entry { i: a, j: b }
        } else {
            Entry { i: b, j: a }
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.i == self.j
    }

    /// Size of `{i, j} ∩ {i', j'}` as index sets.
    pub fn overlap(&self, other: &Entry) -> usize {
        let a: &[usize] = if self.is_diagonal() { &[self.i] } else { &[self.i, self.j] };
        let b: &[usize] = if other.is_diagonal() { &[other.i] } else { &[other.i, other.j] };
        a.iter().filter(|x| b.contains(x)).count()
    }
}

/// Position of the upper-triangle entry `(i, j)`, `i <= j`, in row-major packed order.
pub fn packed_index(n: usize, e: Entry) -> usize {
    e.i * (2 * n - e.i + 1) / 2 + e.j - e.i
}

/// Number of upper-triangle entries, diagonal included.
pub fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// All upper-triangle entries in packed order.
pub fn upper_entries(n: usize) -> impl Iterator<Item = Entry> {
    (0..n).flat_map(move |i| (i..n).map(move |j| Entry { i, j }))
}

/// Dense symmetric `n x n` matrix, row-major.
///
/// Every mutation writes both `(i, j)` and `(j, i)`, so `get(i, j) == get(j, i)`
/// holds bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Fills the upper triangle row by row from `f(i, j)` (with `i <= j`) and mirrors it.
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Builds from a full row-major buffer, taking the upper triangle as authoritative.
    pub fn from_row_major(n: usize, rows: &[f64]) -> Self {
        assert_eq!(rows.len(), n * n, "buffer length must be n*n");
        Self::from_upper_fn(n, |i, j| rows[i * n + j])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        let x = self.get(i, j) + v;
        self.set(i, j, x);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Adds `c` to every entry (the rank-one shift `c 11ᵀ`).
    pub fn add_constant(&mut self, c: f64) {
        for x in &mut self.data {
            *x += c;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        let mut m = self.clone();
        m.scale(s);
        m
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Sum of squared entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Sum of all entries, `1ᵀ M 1`.
    pub fn total_sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.data
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Row sums, `M 1`.
    pub fn row_sums(&self) -> Vec<f64> {
        self.data.chunks_exact(self.n).map(|row| row.iter().sum()).collect()
    }

    /// `M * M`. Used for low-dimensional trace powers.
    pub fn square(&self) -> SymMatrix {
        self.mul_sym(self)
    }

    /// `self * other`, computed on the upper triangle and mirrored. Only meaningful
    /// when the product is itself symmetric, e.g. for powers of one matrix.
    pub fn mul_sym(&self, other: &SymMatrix) -> SymMatrix {
        let n = self.n;
        assert_eq!(n, other.n);
        SymMatrix::from_upper_fn(n, |i, j| {
            (0..n).map(|k| self.data[i * n + k] * other.data[k * n + j]).sum()
        })
    }

    pub(crate) fn to_faer(&self) -> faer::Mat<f64> {
        let n = self.n;
        faer::Mat::from_fn(n, n, |i, j| self.data[i * n + j])
    }
}
