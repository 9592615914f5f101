//! Small dense symmetric-matrix helpers for the Gaussian cell algebra.
//!
//! Cell dimensions are tiny (one coordinate per discriminator vector), so a
//! flat row-major `Vec<f64>` with textbook `O(d^3)` routines beats pulling
//! in a linear algebra crate for the hot per-position combine loop.

/// Dense symmetric matrix, row-major, dimension `d` (typically 1..=4).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    pub d: usize,
    pub a: Vec<f64>,
}

impl SymMat {
    pub fn zeros(d: usize) -> Self {
        Self { d, a: vec![0.0; d * d] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i * d + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let d = rows.len();
        let mut m = Self::zeros(d);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), d);
            m.a[i * d..(i + 1) * d].copy_from_slice(r);
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.d + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.d + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        assert_eq!(self.d, other.d);
        SymMat {
            d: self.d,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x + y).collect(),
        }
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        assert_eq!(self.d, other.d);
        SymMat {
            d: self.d,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> SymMat {
        SymMat {
            d: self.d,
            a: self.a.iter().map(|x| x * s).collect(),
        }
    }

    /// `x · A · yᵀ` for row vectors.
    pub fn quad(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = self.d;
        let mut acc = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.a[i * d + j] * y[j];
            }
            acc += x[i] * row;
        }
        acc
    }

    /// `x · A` as a row vector.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..d)
            .map(|j| (0..d).map(|i| x[i] * self.a[i * d + j]).sum())
            .collect()
    }

    /// Symmetric eigendecomposition by cyclic Jacobi rotations.
    ///
    /// Returns `(eigenvalues, eigenvectors)` with eigenvector `k` stored in
    /// column `k` of the returned matrix, so `A = V · diag(λ) · Vᵀ`.
    pub fn eigen(&self) -> (Vec<f64>, SymMat) {
        let d = self.d;
        let mut a = self.clone();
        let mut v = SymMat::identity(d);
        for _sweep in 0..64 {
            let mut off = 0.0;
            for i in 0..d {
                for j in i + 1..d {
                    off += a.get(i, j).abs();
                }
            }
            if off < 1e-300 || off < 1e-15 * (1.0 + a.trace().abs()) {
                break;
            }
            for p in 0..d {
                for q in p + 1..d {
                    let apq = a.get(p, q);
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a.get(k, p);
                        let akq = a.get(k, q);
                        a.set(k, p, c * akp - s * akq);
                        a.set(k, q, s * akp + c * akq);
                    }
                    for k in 0..d {
                        let apk = a.get(p, k);
                        let aqk = a.get(q, k);
                        a.set(p, k, c * apk - s * aqk);
                        a.set(q, k, s * apk + c * aqk);
                    }
                    for k in 0..d {
                        let vkp = v.get(k, p);
                        let vkq = v.get(k, q);
                        v.set(k, p, c * vkp - s * vkq);
                        v.set(k, q, s * vkp + c * vkq);
                    }
                }
            }
        }
        let vals = (0..d).map(|i| a.get(i, i)).collect();
        (vals, v)
    }

    /// Rebuild `V · diag(vals) · Vᵀ`.
    pub fn from_eigen(vals: &[f64], v: &SymMat) -> SymMat {
        let d = v.d;
        let mut out = SymMat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += v.get(i, k) * vals[k] * v.get(j, k);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// Cholesky factor (lower triangular, row-major packed) with a
    /// pivot-magnitude guard: fails when any pivot drops below
    /// `rel_floor` of the largest diagonal entry.
    pub fn cholesky(&self, rel_floor: f64) -> Option<Vec<f64>> {
        let d = self.d;
        let scale = (0..d).fold(0.0f64, |m, i| m.max(self.get(i, i).abs())).max(1e-300);
        let guard = rel_floor * scale;
        let mut l = vec![0.0f64; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut acc = self.get(i, j);
                for k in 0..j {
                    acc -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if acc <= guard {
                        return None;
                    }
                    l[i * d + i] = acc.sqrt();
                } else {
                    l[i * d + j] = acc / l[j * d + j];
                }
            }
        }
        Some(l)
    }

    /// Inverse and natural-log determinant.
    ///
    /// The fast path is a Cholesky factorization with a pivot-magnitude
    /// guard; matrices that fail it fall back to a symmetric eigenvalue
    /// floor at `rel_floor` of the largest magnitude, reported through the
    /// returned flag.
    pub fn inv_logdet_floored(&self, rel_floor: f64) -> (SymMat, f64, bool) {
        if let Some(l) = self.cholesky(rel_floor) {
            let d = self.d;
            let mut logdet = 0.0;
            for i in 0..d {
                logdet += 2.0 * l[i * d + i].ln();
            }
            // Invert L by forward substitution, then A⁻¹ = L⁻ᵀ L⁻¹.
            let mut linv = vec![0.0f64; d * d];
            for i in 0..d {
                linv[i * d + i] = 1.0 / l[i * d + i];
                for j in 0..i {
                    let mut acc = 0.0;
                    for k in j..i {
                        acc -= l[i * d + k] * linv[k * d + j];
                    }
                    linv[i * d + j] = acc / l[i * d + i];
                }
            }
            let mut inv = SymMat::zeros(d);
            for i in 0..d {
                for j in 0..=i {
                    let mut acc = 0.0;
                    for k in i.max(j)..d {
                        acc += linv[k * d + i] * linv[k * d + j];
                    }
                    inv.set(i, j, acc);
                    inv.set(j, i, acc);
                }
            }
            return (inv, logdet, false);
        }
        let (mut vals, v) = self.eigen();
        let scale = vals.iter().fold(0.0f64, |m, &x| m.max(x.abs())).max(1e-300);
        let floor = rel_floor * scale;
        let mut floored = false;
        for x in vals.iter_mut() {
            if *x < floor {
                *x = floor;
                floored = true;
            }
        }
        let logdet = vals.iter().map(|&x| x.ln()).sum();
        let inv_vals: Vec<f64> = vals.iter().map(|&x| 1.0 / x).collect();
        (SymMat::from_eigen(&inv_vals, &v), logdet, floored)
    }

    /// True iff all eigenvalues exceed `-tol`.
    pub fn is_psd(&self, tol: f64) -> bool {
        self.eigen().0.iter().all(|&x| x >= -tol)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigen().0.into_iter().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn eigen_of_diagonal() {
        let m = SymMat::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]);
        let (mut vals, _) = m.eigen();
        vals.sort_by(f64::total_cmp);
        assert_close(vals[0], 1.0, 1e-12);
        assert_close(vals[1], 3.0, 1e-12);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let m = SymMat::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]]);
        let (inv, logdet, floored) = m.inv_logdet_floored(1e-14);
        assert!(!floored);
        // logdet check against cofactor expansion.
        let det: f64 = 4.0 * (3.0 * 2.0 - 0.2 * 0.2) - 1.0 * (1.0 * 2.0 - 0.2 * 0.5)
            + 0.5 * (1.0 * 0.2 - 3.0 * 0.5);
        assert_close(logdet, det.ln(), 1e-10);
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += m.get(i, k) * inv.get(k, j);
                }
                assert_close(acc, if i == j { 1.0 } else { 0.0 }, 1e-10);
            }
        }
    }

    #[test]
    fn flooring_reported_for_indefinite_input() {
        let m = SymMat::from_rows(&[&[1.0, 0.0], &[0.0, -0.5]]);
        let (_, _, floored) = m.inv_logdet_floored(1e-9);
        assert!(floored);
    }

    #[test]
    fn quad_form_matches_manual() {
        let m = SymMat::from_rows(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let x = [1.0, -2.0];
        assert_close(m.quad(&x, &x), 2.0 - 2.0 - 2.0 + 12.0, 1e-12);
    }
}
