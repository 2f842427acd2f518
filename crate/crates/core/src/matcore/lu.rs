use super::DenseMatrix;
use crate::error::{Error, Result};

const PIVOT_FLOOR: f64 = 1e-300;

/// LU factorization with partial pivoting, `P·A = L·U`.
///
/// `L` (unit lower) and `U` share one matrix; `pivots[i]` is the source row
/// of row `i` after permutation.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    lu: DenseMatrix,
    pivots: Vec<usize>,
    perm_sign: f64,
}

pub fn lu_factor(m: &DenseMatrix) -> Result<LuFactorization> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "lu_factor needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("lu_factor input".into()));
    }
    let n = m.rows();
    let mut lu = m.clone();
    let mut pivots: Vec<usize> = (0..n).collect();
    let mut perm_sign = 1.0;

    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot < PIVOT_FLOOR {
            return Err(Error::SingularMatrix { column: k, pivot });
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            pivots.swap(k, p);
            perm_sign = -perm_sign;
        }
        let diag = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / diag;
            lu[(i, k)] = f;
            if f != 0.0 {
                for j in k + 1..n {
                    lu[(i, j)] -= f * lu[(k, j)];
                }
            }
        }
    }
    Ok(LuFactorization {
        lu,
        pivots,
        perm_sign,
    })
}

impl LuFactorization {
    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    /// Combined L/U storage.
    pub fn packed(&self) -> &DenseMatrix {
        &self.lu
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    /// Sign of the row permutation.
    pub fn permutation_sign(&self) -> f64 {
        self.perm_sign
    }

    /// Sign of the determinant.
    pub fn sign(&self) -> f64 {
        (0..self.dim()).fold(self.perm_sign, |s, i| {
            if self.lu[(i, i)] < 0.0 {
                -s
            } else {
                s
            }
        })
    }

    pub fn log_abs_det(&self) -> f64 {
        (0..self.dim()).map(|i| self.lu[(i, i)].abs().ln()).sum()
    }

    pub fn det(&self) -> f64 {
        self.sign() * self.log_abs_det().exp()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.pivots.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        x
    }

    pub fn inverse(&self) -> DenseMatrix {
        let n = self.dim();
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for (r, v) in col.into_iter().enumerate() {
                inv[(r, c)] = v;
            }
        }
        inv
    }

    /// Rebuilds `L·U` with the permutation undone; used by tests.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.dim();
        let l = DenseMatrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.lu[(i, j)],
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => 0.0,
        });
        let u = DenseMatrix::from_fn(n, n, |i, j| if i <= j { self.lu[(i, j)] } else { 0.0 });
        let pa = l.matmul(&u);
        let mut a = DenseMatrix::zeros(n, n);
        for (i, &p) in self.pivots.iter().enumerate() {
            a.row_mut(p).copy_from_slice(pa.row(i));
        }
        a
    }
}
