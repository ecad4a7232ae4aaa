//! Fixed-capacity symmetric matrix helpers for the per-pair blocks.
//!
//! Blocks never exceed 3×3 (three fixed effects, two random effects), so the
//! hot loop of the likelihood runs entirely on the stack.

pub(crate) const CAP: usize = 3;

pub(crate) type Vec3 = [f64; CAP];

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Mat3 {
    pub n: usize,
    pub a: [[f64; CAP]; CAP],
}

impl Mat3 {
    pub fn zeros(n: usize) -> Self {
        debug_assert!(n <= CAP);
        Mat3 { n, a: [[0.0; CAP]; CAP] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.a[i][i] = 1.0;
        }
        m
    }

    /// Lower Cholesky factor. Fails when a pivot is not positive relative to
    /// the largest diagonal entry.
    pub fn cholesky(&self) -> Option<Mat3> {
        let n = self.n;
        let scale = (0..n).map(|i| self.a[i][i].abs()).fold(0.0, f64::max);
        if !(scale > 0.0) || !scale.is_finite() {
            return None;
        }
        let mut l = Mat3::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.a[i][j];
                for k in 0..j {
                    s -= l.a[i][k] * l.a[j][k];
                }
                if i == j {
                    if s <= 1e-13 * scale {
                        return None;
                    }
                    l.a[i][i] = s.sqrt();
                } else {
                    l.a[i][j] = s / l.a[j][j];
                }
            }
        }
        Some(l)
    }
}

/// Solves `L Lᵀ x = b` given the lower factor `l`.
pub(crate) fn chol_solve(l: &Mat3, b: &Vec3) -> Vec3 {
    let n = l.n;
    let mut y = [0.0; CAP];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.a[i][k] * y[k];
        }
        y[i] = s / l.a[i][i];
    }
    let mut x = [0.0; CAP];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l.a[k][i] * x[k];
        }
        x[i] = s / l.a[i][i];
    }
    x
}

pub(crate) fn chol_logdet(l: &Mat3) -> f64 {
    (0..l.n).map(|i| 2.0 * l.a[i][i].ln()).sum()
}

pub(crate) fn chol_inverse(l: &Mat3) -> Mat3 {
    let n = l.n;
    let mut inv = Mat3::zeros(n);
    for j in 0..n {
        let mut e = [0.0; CAP];
        e[j] = 1.0;
        let col = chol_solve(l, &e);
        for i in 0..n {
            inv.a[i][j] = col[i];
        }
    }
    inv
}

pub(crate) fn dot(a: &Vec3, b: &Vec3, n: usize) -> f64 {
    (0..n).map(|i| a[i] * b[i]).sum()
}
