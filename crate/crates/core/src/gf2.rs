//! Bit-packed GF(2) matrices and the linear algebra behind code
//! construction: row reduction, rank, parity/generator conversion and
//! null spaces.
//!
//! Rows are packed into `u64` words so that row operations cost `O(n/64)`;
//! rank and reduction dominate the setup time once block lengths reach a
//! few thousand.

use crate::{Error, Result};

/// Dense binary matrix over GF(2) with bit-packed rows.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    /// Row-major storage, `words_per_row` words per row.
    words: Vec<u64>,
    words_per_row: usize,
}

impl std::fmt::Debug for BinaryMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMatrix({}x{})", self.rows, self.cols)?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                write!(f, "{}", u8::from(self.get(r, c)))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl BinaryMatrix {
    /// All-zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(64).max(1);
        Self {
            rows,
            cols,
            words: vec![0; rows * words_per_row],
            words_per_row,
        }
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Build from row-major 0/1 bytes. `data.len()` must equal `rows*cols`.
    pub fn from_dense(rows: usize, cols: usize, data: &[u8]) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                if data[r * cols + c] != 0 {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    /// Build from rows given as 0/1 strings, e.g. `["110", "011"]`.
    pub fn from_rows(rows: &[&str]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |s| s.len());
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, ch) in row.bytes().enumerate() {
                m.set(i, j, ch == b'1');
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        debug_assert!(r < self.rows && c < self.cols);
        let w = self.words[r * self.words_per_row + c / 64];
        (w >> (c % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        debug_assert!(r < self.rows && c < self.cols);
        let w = &mut self.words[r * self.words_per_row + c / 64];
        if v {
            *w |= 1 << (c % 64);
        } else {
            *w &= !(1 << (c % 64));
        }
    }

    /// XOR row `src` into row `dst`.
    fn xor_rows(&mut self, dst: usize, src: usize) {
        let (d, s) = (dst * self.words_per_row, src * self.words_per_row);
        for k in 0..self.words_per_row {
            let v = self.words[s + k];
            self.words[d + k] ^= v;
        }
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for k in 0..self.words_per_row {
            self.words
                .swap(a * self.words_per_row + k, b * self.words_per_row + k);
        }
    }

    /// Column `c` extracted as a bit vector over the rows.
    pub fn column(&self, c: usize) -> Vec<bool> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    /// Row `r` as a 0/1 byte vector.
    pub fn row_bits(&self, r: usize) -> Vec<u8> {
        (0..self.cols).map(|c| u8::from(self.get(r, c))).collect()
    }

    /// Matrix product over GF(2). `self` is `r x k`, `other` is `k x c`.
    pub fn multiply(&self, other: &BinaryMatrix) -> Result<BinaryMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = BinaryMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                if self.get(r, k) {
                    out.xor_row_from(r, other, k);
                }
            }
        }
        Ok(out)
    }

    fn xor_row_from(&mut self, dst: usize, other: &BinaryMatrix, src: usize) {
        let d = dst * self.words_per_row;
        let s = src * other.words_per_row;
        for k in 0..self.words_per_row.min(other.words_per_row) {
            self.words[d + k] ^= other.words[s + k];
        }
    }

    /// `self · v` over GF(2) for a 0/1 vector `v` of length `cols`.
    pub fn mul_vec(&self, v: &[u8]) -> Vec<u8> {
        assert_eq!(v.len(), self.cols);
        let mut packed = vec![0u64; self.words_per_row];
        for (c, &b) in v.iter().enumerate() {
            if b & 1 == 1 {
                packed[c / 64] |= 1 << (c % 64);
            }
        }
        (0..self.rows)
            .map(|r| {
                let base = r * self.words_per_row;
                let mut acc = 0u64;
                for k in 0..self.words_per_row {
                    acc ^= self.words[base + k] & packed[k];
                }
                (acc.count_ones() & 1) as u8
            })
            .collect()
    }

    /// True iff `H · v = 0` over GF(2).
    pub fn annihilates(&self, v: &[u8]) -> bool {
        self.mul_vec(v).iter().all(|&b| b == 0)
    }

    /// Stack `self` on top of `other` (matching column counts).
    pub fn stack(&self, other: &BinaryMatrix) -> Result<BinaryMatrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "cannot stack {} columns on {} columns",
                other.cols, self.cols
            )));
        }
        let mut out = BinaryMatrix::zeros(self.rows + other.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(r, c, self.get(r, c));
            }
        }
        for r in 0..other.rows {
            for c in 0..self.cols {
                out.set(self.rows + r, c, other.get(r, c));
            }
        }
        Ok(out)
    }

    /// Apply a column permutation: `out[:, j] = self[:, perm[j]]`.
    pub fn permute_columns(&self, perm: &[usize]) -> BinaryMatrix {
        assert_eq!(perm.len(), self.cols);
        let mut out = BinaryMatrix::zeros(self.rows, self.cols);
        for (j, &p) in perm.iter().enumerate() {
            for r in 0..self.rows {
                out.set(r, j, self.get(r, p));
            }
        }
        out
    }

    pub fn transpose(&self) -> BinaryMatrix {
        let mut out = BinaryMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }
}

/// Result of [`row_reduce`]: reduced row echelon form together with the
/// rank and the pivot columns.
#[derive(Debug, Clone)]
pub struct RowReduction {
    pub reduced: BinaryMatrix,
    pub rank: usize,
    pub pivots: Vec<usize>,
}

/// Reduced row echelon form over GF(2).
///
/// The output is canonical, so reducing an already reduced matrix returns
/// it unchanged.
pub fn row_reduce(m: &BinaryMatrix) -> RowReduction {
    let mut a = m.clone();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..a.cols() {
        if row == a.rows() {
            break;
        }
        let Some(p) = (row..a.rows()).find(|&r| a.get(r, col)) else {
            continue;
        };
        a.swap_rows(row, p);
        for r in 0..a.rows() {
            if r != row && a.get(r, col) {
                a.xor_rows(r, row);
            }
        }
        pivots.push(col);
        row += 1;
    }
    RowReduction {
        reduced: a,
        rank: row,
        pivots,
    }
}

/// Rank over GF(2).
pub fn rank(m: &BinaryMatrix) -> usize {
    row_reduce(m).rank
}

/// Basis of the null space `{v : M·v = 0}`, one 0/1 vector per basis element.
///
/// Returns `cols - rank` vectors; an empty list means only the zero vector.
pub fn null_space(m: &BinaryMatrix) -> Vec<Vec<u8>> {
    let red = row_reduce(m);
    let n = m.cols();
    let pivot_of_col: Vec<Option<usize>> = {
        let mut v = vec![None; n];
        for (r, &c) in red.pivots.iter().enumerate() {
            v[c] = Some(r);
        }
        v
    };
    let mut basis = Vec::new();
    for free in 0..n {
        if pivot_of_col[free].is_some() {
            continue;
        }
        let mut v = vec![0u8; n];
        v[free] = 1;
        for (r, &pc) in red.pivots.iter().enumerate() {
            if red.reduced.get(r, free) {
                v[pc] = 1;
            }
        }
        basis.push(v);
    }
    basis
}

/// Parity check matrix of a full-rank `k x n` generator.
///
/// Works for any full-rank `G` by systematizing through a column
/// permutation that is undone on the result. The returned `H` has `n-k`
/// rows, rank `n-k`, and `H·Gᵀ = 0`.
pub fn parity_from_generator(g: &BinaryMatrix) -> Result<BinaryMatrix> {
    let (k, n) = (g.rows(), g.cols());
    let red = row_reduce(g);
    if red.rank != k {
        return Err(Error::RankDeficient(format!(
            "generator has rank {} < {}",
            red.rank, k
        )));
    }
    // Permutation putting pivot columns first.
    let mut perm: Vec<usize> = red.pivots.clone();
    perm.extend((0..n).filter(|c| !red.pivots.contains(c)));
    // In permuted coordinates the reduced generator is [I | P].
    let mut h = BinaryMatrix::zeros(n - k, n);
    for r in 0..n - k {
        // H' = [Pᵀ | I]; undo the permutation on columns.
        for row_g in 0..k {
            let p_bit = red.reduced.get(row_g, perm[k + r]);
            if p_bit {
                h.set(r, perm[row_g], true);
            }
        }
        h.set(r, perm[k + r], true);
    }
    debug_assert!(h.multiply(&g.transpose()).map_or(false, |m| is_zero(&m)));
    Ok(h)
}

/// Generator matrix (null space basis, stacked as rows) of a parity check
/// matrix. Returns a `(n - rank(H)) x n` full-rank matrix.
pub fn generator_from_parity(h: &BinaryMatrix) -> BinaryMatrix {
    let basis = null_space(h);
    let n = h.cols();
    let mut g = BinaryMatrix::zeros(basis.len(), n);
    for (r, v) in basis.iter().enumerate() {
        for (c, &b) in v.iter().enumerate() {
            if b == 1 {
                g.set(r, c, true);
            }
        }
    }
    g
}

/// True iff every entry is zero.
pub fn is_zero(m: &BinaryMatrix) -> bool {
    m.words.iter().all(|&w| w == 0)
}
