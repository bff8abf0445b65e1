//! Double-sided centering `C_q(M) = (I - 1q^T) M (I - 1q^T)`.
//!
//! Both operators are evaluated with mean-subtraction identities in O(N^2);
//! the centering matrix is never formed.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// A probability vector with strictly positive components.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Array1<f64>);

impl ProbVector {
    pub fn new(q: Array1<f64>) -> Result<Self> {
        if q.is_empty() {
            return Err(Error::Validation("probability vector is empty".into()));
        }
        if let Some(j) = q.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::Validation(format!(
                "probability vector entry {j} is not positive: {}",
                q[j]
            )));
        }
        let total: f64 = q.sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "probability vector sums to {total}, not 1"
            )));
        }
        Ok(ProbVector(q))
    }

    pub fn uniform(n: usize) -> Self {
        ProbVector(Array1::from_elem(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.0.iter().all(|&x| x == u)
    }
}

fn ensure_square(m: ArrayView2<'_, f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::mismatch(
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m.nrows())
}

/// `H M H` with `H = I - (1/N) 11^T`.
pub fn center_uniform(m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = ensure_square(m)?;
    if n == 0 {
        return Ok(Array2::zeros((0, 0)));
    }
    let row_means = m.mean_axis(Axis(1)).expect("non-empty");
    let col_means = m.mean_axis(Axis(0)).expect("non-empty");
    let grand = col_means.sum() / n as f64;
    let mut out = m.to_owned();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = *v - row_means[i] - col_means[j] + grand;
    }
    Ok(out)
}

/// `E_q M E_q` with `E_q = I - 1q^T`.
///
/// Expanded: `M_ij - c_j - r_i q_j + s q_j` where `c = q^T M`,
/// `r = M 1` and `s = c^T 1`.
pub fn center_weighted(m: ArrayView2<'_, f64>, q: &ProbVector) -> Result<Array2<f64>> {
    let n = ensure_square(m)?;
    if q.len() != n {
        return Err(Error::mismatch(
            format!("probability vector of length {n}"),
            q.len(),
        ));
    }
    let q = q.as_array();
    let c = q.dot(&m);
    let r = m.sum_axis(Axis(1));
    let s = c.sum();
    let mut out = m.to_owned();
    for ((i, j), v) in out.indexed_iter_mut() {
        *v = *v - c[j] - (r[i] - s) * q[j];
    }
    Ok(out)
}

/// Dispatches to the uniform fast path when `q` is exactly uniform.
pub fn center(m: ArrayView2<'_, f64>, q: &ProbVector) -> Result<Array2<f64>> {
    if q.is_uniform() && q.len() == m.nrows() {
        center_uniform(m)
    } else {
        center_weighted(m, q)
    }
}

pub fn frobenius(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Residuals of the three algebraic properties a valid centering operator
/// must satisfy, each already divided by `1 + |M|_F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteringResiduals {
    /// `|C_q(C_q(M)) - C_q(M)|_F`
    pub idempotence: f64,
    /// `|C_q(M) 1|_inf`
    pub row_annihilation: f64,
    /// `|C_q(1 q^T)|_F`
    pub rank_one_annihilation: f64,
}

impl CenteringResiduals {
    pub fn max(&self) -> f64 {
        self.idempotence
            .max(self.row_annihilation)
            .max(self.rank_one_annihilation)
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.max() <= tol
    }
}

pub fn centering_residuals(m: ArrayView2<'_, f64>, q: &ProbVector) -> Result<CenteringResiduals> {
    let scale = 1.0 + frobenius(m);
    let once = center_weighted(m, q)?;
    let twice = center_weighted(once.view(), q)?;
    let idempotence = frobenius((&twice - &once).view());
    let row_annihilation = once
        .sum_axis(Axis(1))
        .iter()
        .fold(0.0f64, |a, x| a.max(x.abs()));
    let n = m.nrows();
    let ones_q = Array2::from_shape_fn((n, n), |(_, j)| q.as_array()[j]);
    let rank_one = frobenius(center_weighted(ones_q.view(), q)?.view());
    Ok(CenteringResiduals {
        idempotence: idempotence / scale,
        row_annihilation: row_annihilation / scale,
        rank_one_annihilation: rank_one / scale,
    })
}
