//! Representation matrices and the RSMs built from them.
//!
//! An RSM is the Gram matrix of an instance-wise similarity function over the
//! rows of a representation. Three instance similarities are supported:
//! the linear kernel, the Gaussian (RBF) kernel and the Euclidean distance.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An N x D matrix of instance representations (rows are samples).
#[derive(Debug, Clone, PartialEq)]
pub struct RepMatrix(Array2<f64>);

impl RepMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(Error::Validation(format!(
                "representation needs at least 2 samples, got {}",
                data.nrows()
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::Validation("representation has zero columns".into()));
        }
        check_finite(data.view())?;
        Ok(RepMatrix(data))
    }

    pub fn n_samples(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Which instance similarity produced an RSM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelId {
    Linear,
    Rbf,
    EuclideanDistance,
    /// Supplied directly (read from disk or assembled by hand).
    External,
}

/// Kernel configuration: a [`KernelId`] plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { sigma: Option<f64> },
    Distance,
}

impl Kernel {
    pub fn id(&self) -> KernelId {
        match self {
            Kernel::Linear => KernelId::Linear,
            Kernel::Rbf { .. } => KernelId::Rbf,
            Kernel::Distance => KernelId::EuclideanDistance,
        }
    }

    pub fn rsm(&self, r: &RepMatrix) -> Result<Rsm> {
        match *self {
            Kernel::Linear => Ok(linear_rsm(r)),
            Kernel::Rbf { sigma } => rbf_rsm(r, sigma),
            Kernel::Distance => Ok(distance_rsm(r)),
        }
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Kernel::Linear => f.write_str("linear"),
            Kernel::Rbf { sigma: None } => f.write_str("rbf"),
            Kernel::Rbf { sigma: Some(s) } => write!(f, "rbf(sigma={s})"),
            Kernel::Distance => f.write_str("distance"),
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Kernel::Linear),
            "rbf" => Ok(Kernel::Rbf { sigma: None }),
            "distance" | "euclidean_distance" => Ok(Kernel::Distance),
            other => Err(Error::Validation(format!("unknown kernel '{other}'"))),
        }
    }
}

/// An N x N symmetric representational similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Rsm {
    data: Array2<f64>,
    kernel: KernelId,
    bandwidth: Option<f64>,
}

impl Rsm {
    /// Wraps an externally supplied matrix. The input must be square, finite
    /// and symmetric to `1e-12 * max|S|`; it is then symmetrized exactly.
    pub fn from_matrix(data: Array2<f64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::mismatch(
                "square matrix",
                format!("{}x{}", data.nrows(), data.ncols()),
            ));
        }
        if data.nrows() < 2 {
            return Err(Error::Validation("RSM needs N >= 2".into()));
        }
        check_finite(data.view())?;
        let scale = max_abs(data.view());
        let n = data.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (data[[i, j]] - data[[j, i]]).abs() > 1e-12 * scale {
                    return Err(Error::Validation(format!(
                        "RSM is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Rsm {
            data: symmetrize(data),
            kernel: KernelId::External,
            bandwidth: None,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn kernel(&self) -> KernelId {
        self.kernel
    }

    pub fn bandwidth(&self) -> Option<f64> {
        self.bandwidth
    }

    /// `c * S`. The result no longer carries kernel-specific guarantees.
    pub fn scaled(&self, c: f64) -> Rsm {
        Rsm {
            data: &self.data * c,
            kernel: KernelId::External,
            bandwidth: None,
        }
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// `S = R R^T`.
pub fn linear_rsm(r: &RepMatrix) -> Rsm {
    let v = r.view();
    let gram = v.dot(&v.t());
    Rsm {
        data: symmetrize(gram),
        kernel: KernelId::Linear,
        bandwidth: None,
    }
}

/// `S_ij = exp(-|r_i - r_j|^2 / (2 sigma^2))`.
///
/// Without `sigma`, the bandwidth is the median of the pairwise distances
/// over all `i < j`.
pub fn rbf_rsm(r: &RepMatrix, sigma: Option<f64>) -> Result<Rsm> {
    let dist = pairwise_distances(r.view());
    let sigma = match sigma {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => {
            return Err(Error::Validation(format!(
                "rbf bandwidth must be positive and finite, got {s}"
            )))
        }
        None => {
            let m = median_offdiagonal(&dist);
            if m <= 0.0 {
                return Err(Error::DegenerateBandwidth);
            }
            m
        }
    };
    let denom = 2.0 * sigma * sigma;
    let mut data = dist.mapv(|d| (-(d * d) / denom).exp());
    data.diag_mut().fill(1.0);
    Ok(Rsm {
        data,
        kernel: KernelId::Rbf,
        bandwidth: Some(sigma),
    })
}

/// `S_ij = |r_i - r_j|_2`.
pub fn distance_rsm(r: &RepMatrix) -> Rsm {
    Rsm {
        data: pairwise_distances(r.view()),
        kernel: KernelId::EuclideanDistance,
        bandwidth: None,
    }
}

/// Exactly symmetric, zero-diagonal Euclidean distance matrix.
fn pairwise_distances(r: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = r.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let ri = r.row(i);
            (0..n)
                .map(|j| if j < i { 0.0 } else { euclid(ri, r.row(j)) })
                .collect()
        })
        .collect();
    let mut d = Array2::zeros((n, n));
    for (i, row) in rows.iter().enumerate() {
        for j in (i + 1)..n {
            d[[i, j]] = row[j];
            d[[j, i]] = row[j];
        }
    }
    d
}

fn euclid(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn median_offdiagonal(d: &Array2<f64>) -> f64 {
    let n = d.nrows();
    let mut vals: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            vals.push(d[[i, j]]);
        }
    }
    vals.sort_by(f64::total_cmp);
    let m = vals.len();
    if m % 2 == 1 {
        vals[m / 2]
    } else {
        0.5 * (vals[m / 2 - 1] + vals[m / 2])
    }
}

fn symmetrize(s: Array2<f64>) -> Array2<f64> {
    let t = s.t().to_owned();
    (s + t) * 0.5
}

pub(crate) fn max_abs(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

pub(crate) fn check_finite(m: ArrayView2<'_, f64>) -> Result<()> {
    for (i, row) in m.axis_iter(Axis(0)).enumerate() {
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data { row: i, col: j });
        }
    }
    Ok(())
}
