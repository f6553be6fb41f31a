//! Small dense helpers for the opinion-space projection.

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self * other`.
    pub fn mul(&self, other: &Dense) -> Dense {
        assert_eq!(self.cols, other.rows);
        let mut out = Dense::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * other`.
    pub fn tmul(&self, other: &Dense) -> Dense {
        assert_eq!(self.rows, other.rows);
        let mut out = Dense::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let arow = self.row(r);
            let brow = other.row(r);
            for (i, a) in arow.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(brow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_column(&mut self, c: usize, v: &[f64]) {
        for (r, x) in v.iter().enumerate() {
            self.set(r, c, *x);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormalizes the columns of `m` in place (modified Gram-Schmidt, two
/// passes). Columns that collapse numerically are replaced by vectors from
/// `fill` and re-orthogonalized.
pub fn orthonormalize(m: &mut Dense, mut fill: impl FnMut() -> Vec<f64>) {
    for c in 0..m.cols {
        let mut v = m.column(c);
        let original = norm(&v);
        let mut attempts = 0;
        loop {
            for _ in 0..2 {
                for p in 0..c {
                    let q = m.column(p);
                    let proj = dot(&v, &q);
                    for (x, y) in v.iter_mut().zip(&q) {
                        *x -= proj * y;
                    }
                }
            }
            let n = norm(&v);
            if n > 1e-10 * original.max(1.0) && n > 0.0 {
                for x in v.iter_mut() {
                    *x /= n;
                }
                break;
            }
            attempts += 1;
            assert!(attempts < 64, "could not complete an orthonormal basis");
            v = fill();
        }
        m.set_column(c, &v);
    }
}

/// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order and the matching
/// eigenvectors as columns.
pub fn symmetric_eigen(a: &Dense) -> (Vec<f64>, Dense) {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut m = a.clone();
    let mut v = Dense::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum();
        let scale: f64 = m.data.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Dense::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &v.column(src));
    }
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes() {
        let a = Dense {
            rows: 3,
            cols: 3,
            data: vec![4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 1.0],
        };
        let (vals, vecs) = symmetric_eigen(&a);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        for k in 0..3 {
            let v = vecs.column(k);
            let av: Vec<f64> = (0..3).map(|i| dot(a.row(i), &v)).collect();
            for i in 0..3 {
                assert!((av[i] - vals[k] * v[i]).abs() < 1e-12);
            }
        }
        let trace = 4.0 + 3.0 + 1.0;
        assert!((vals.iter().sum::<f64>() - trace).abs() < 1e-12);
    }

    #[test]
    fn orthonormalize_replaces_dependent_columns() {
        let mut m = Dense {
            rows: 3,
            cols: 2,
            data: vec![1.0, 2.0, 0.0, 0.0, 0.0, 0.0],
        };
        orthonormalize(&mut m, || vec![0.0, 1.0, 0.0]);
        let a = m.column(0);
        let b = m.column(1);
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert!((norm(&b) - 1.0).abs() < 1e-12);
        assert!(dot(&a, &b).abs() < 1e-12);
    }
}
