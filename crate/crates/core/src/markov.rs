//! Row-stochastic embeddings of RSMs and the operators built from them.
//!
//! Every RSM `S` maps to the Markov matrix
//!
//! ```text
//! P(S) = 1 q^T + alpha(S) C_q(S),   alpha(S) = min_{C_ij != 0} q_j / |C_ij|
//! ```
//!
//! whose centered part is a positive multiple of the centered RSM. Powers of
//! `P(S)` give multi-scale operators; ordered products of several embeddings
//! give the alternating-diffusion operator of a set of layers.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::centering::{center, frobenius, ProbVector};
use crate::error::{Error, Result};
use crate::kernels::{max_abs, Kernel, RepMatrix, Rsm};

/// Longest product of Markov matrices accepted by [`ad_fuse`]. Longer
/// products collapse towards the stationary rank-one matrix and the signal
/// drowns in rounding noise.
pub const MAX_FUSION_DEPTH: usize = 8;

/// Relative size below which a centered matrix is treated as exactly zero.
pub(crate) const ZERO_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Embedded,
    Powered,
    Fused,
    External,
}

/// `P = 1 q^T + D` with `D 1 = 0` and `q^T D = 0`.
#[derive(Debug, Clone, PartialEq)]
struct Split {
    q: Array1<f64>,
    transient: Array2<f64>,
}

impl Split {
    fn assemble(&self) -> Array2<f64> {
        let mut p = self.transient.clone();
        for mut row in p.axis_iter_mut(Axis(0)) {
            row += &self.q;
            row.mapv_inplace(|v| v.max(0.0));
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovMatrix {
    data: Array2<f64>,
    provenance: Provenance,
    split: Option<Split>,
}

impl MarkovMatrix {
    /// Validates nonnegativity (to `-1e-12`) and unit row sums (to `1e-9`).
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let m = MarkovMatrix {
            data,
            provenance: Provenance::External,
            split: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub(crate) fn unchecked(data: Array2<f64>, provenance: Provenance) -> Self {
        MarkovMatrix {
            data,
            provenance,
            split: None,
        }
    }

    fn from_split(split: Split, provenance: Provenance) -> Self {
        MarkovMatrix {
            data: split.assemble(),
            provenance,
            split: Some(split),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.data.dim();
        if r != c || r == 0 {
            return Err(Error::mismatch(
                "non-empty square matrix",
                format!("{r}x{c}"),
            ));
        }
        for (i, row) in self.data.axis_iter(Axis(0)).enumerate() {
            if let Some(j) = row.iter().position(|&x| x.is_nan() || x < -1e-12) {
                return Err(Error::Validation(format!(
                    "Markov matrix entry ({i}, {j}) = {} is negative",
                    row[j]
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "Markov matrix row {i} sums to {sum}"
                )));
            }
        }
        Ok(())
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

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// `P - 1 q^T` for operators built by embedding, powering or fusing,
    /// tracked exactly instead of recovered by subtraction.
    pub fn transient(&self) -> Option<&Array2<f64>> {
        self.split.as_ref().map(|s| &s.transient)
    }

    /// Matrix with the same double-centering as `P`: the transient part when
    /// known, `P` otherwise.
    pub(crate) fn signal(&self) -> ArrayView2<'_, f64> {
        self.transient().unwrap_or(&self.data).view()
    }
}

/// An ordered, sample-aligned set of layer representations from one network.
#[derive(Debug, Clone)]
pub struct RepresentationSet {
    members: Vec<RepMatrix>,
    layer_labels: Option<Vec<String>>,
}

impl RepresentationSet {
    pub fn new(members: Vec<RepMatrix>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Validation("representation set is empty".into()));
        }
        if members.len() > MAX_FUSION_DEPTH {
            return Err(Error::FusionDepthExceeded(members.len()));
        }
        let n = members[0].n_samples();
        if let Some(bad) = members.iter().find(|m| m.n_samples() != n) {
            return Err(Error::mismatch(
                format!("{n} samples in every member"),
                bad.n_samples(),
            ));
        }
        Ok(RepresentationSet {
            members,
            layer_labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.members.len() {
            return Err(Error::mismatch(self.members.len(), labels.len()));
        }
        self.layer_labels = Some(labels);
        Ok(self)
    }

    pub fn members(&self) -> &[RepMatrix] {
        &self.members
    }

    pub fn layer_labels(&self) -> Option<&[String]> {
        self.layer_labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.members[0].n_samples()
    }
}

/// Returns `C_q(S)` or `DegenerateRsm` when it vanishes relative to `S`.
fn centered_nonzero(s: ArrayView2<'_, f64>, q: &ProbVector) -> Result<(Array2<f64>, f64)> {
    if s.nrows() != q.len() {
        return Err(Error::mismatch(
            format!("probability vector of length {}", s.nrows()),
            q.len(),
        ));
    }
    let c = center(s, q)?;
    let cmax = max_abs(c.view());
    if cmax == 0.0 || cmax <= ZERO_REL * max_abs(s) {
        return Err(Error::DegenerateRsm(
            "centered RSM is zero (constant similarity structure)".into(),
        ));
    }
    Ok((c, cmax))
}

fn alpha_of_centered(c: &Array2<f64>, cmax: f64, q: &ProbVector) -> f64 {
    let delta = ZERO_REL * cmax;
    let q = q.as_array();
    let mut best = f64::INFINITY;
    for ((_, j), &v) in c.indexed_iter() {
        let a = v.abs();
        if a > delta {
            best = best.min(q[j] / a);
        }
    }
    best
}

/// `alpha(S) = min_{C_q(S)_ij != 0} q_j / |C_q(S)_ij|`.
///
/// Entries below `1e-12 * max|C_q(S)|` count as zero.
pub fn alpha(s: &Rsm, q: &ProbVector) -> Result<f64> {
    let (c, cmax) = centered_nonzero(s.view(), q)?;
    Ok(alpha_of_centered(&c, cmax, q))
}

/// Closed form of `alpha` for uniform `q`: `1 / (N max|HSH|)`.
pub fn alpha_uniform(s: &Rsm) -> Result<f64> {
    let q = ProbVector::uniform(s.n());
    let (_, cmax) = centered_nonzero(s.view(), &q)?;
    Ok(1.0 / (s.n() as f64 * cmax))
}

/// `P(S) = 1 q^T + alpha(S) C_q(S)`, plus the `alpha` used (`None` when the
/// centered RSM vanished and `P(S) = 1 q^T`).
pub fn markov_embed_with_alpha(s: &Rsm, q: &ProbVector) -> Result<(MarkovMatrix, Option<f64>)> {
    let n = s.n();
    let qa = q.as_array();
    match centered_nonzero(s.view(), q) {
        Ok((c, cmax)) => {
            let a = alpha_of_centered(&c, cmax, q);
            let split = Split {
                q: qa.clone(),
                transient: c * a,
            };
            Ok((
                MarkovMatrix::from_split(split, Provenance::Embedded),
                Some(a),
            ))
        }
        Err(Error::DegenerateRsm(_)) => {
            let split = Split {
                q: qa.clone(),
                transient: Array2::zeros((n, n)),
            };
            Ok((MarkovMatrix::from_split(split, Provenance::Embedded), None))
        }
        Err(e) => Err(e),
    }
}

pub fn markov_embed(s: &Rsm, q: &ProbVector) -> Result<MarkovMatrix> {
    markov_embed_with_alpha(s, q).map(|(p, _)| p)
}

/// Embedding with the uniform probability vector.
pub fn markov_embed_uniform(s: &Rsm) -> MarkovMatrix {
    markov_embed(s, &ProbVector::uniform(s.n())).expect("uniform q always matches S")
}

fn power_by_squaring(m: &Array2<f64>, t: u32) -> Array2<f64> {
    let mut acc: Option<Array2<f64>> = None;
    let mut base = m.clone();
    let mut e = t;
    loop {
        if e & 1 == 1 {
            acc = Some(match acc {
                None => base.clone(),
                Some(a) => a.dot(&base),
            });
        }
        e >>= 1;
        if e == 0 {
            break;
        }
        base = base.dot(&base);
    }
    acc.expect("t >= 1")
}

/// `P^t` by repeated squaring. Rows are not renormalized afterwards.
///
/// For embedded operators `P^t = 1 q^T + D^t`, so only the transient part is
/// powered.
pub fn matrix_power(p: &MarkovMatrix, t: u32) -> Result<MarkovMatrix> {
    if t == 0 {
        return Err(Error::Validation("diffusion scale t must be >= 1".into()));
    }
    if t == 1 {
        return Ok(p.clone());
    }
    Ok(match &p.split {
        Some(s) => MarkovMatrix::from_split(
            Split {
                q: s.q.clone(),
                transient: power_by_squaring(&s.transient, t),
            },
            Provenance::Powered,
        ),
        None => MarkovMatrix::unchecked(power_by_squaring(&p.data, t), Provenance::Powered),
    })
}

/// Alternating-diffusion product `P_n P_{n-1} ... P_1` of `ps = [P_1, ..., P_n]`.
///
/// Accumulated as `acc <- P_k acc` for `k = 2..n`. When every factor shares
/// the background `1 q^T`, the product is `1 q^T + D_n ... D_1` and only the
/// transient parts are multiplied.
pub fn ad_fuse(ps: &[MarkovMatrix]) -> Result<MarkovMatrix> {
    let first = ps
        .first()
        .ok_or_else(|| Error::Validation("cannot fuse an empty list".into()))?;
    if ps.len() > MAX_FUSION_DEPTH {
        return Err(Error::FusionDepthExceeded(ps.len()));
    }
    let n = first.n();
    if let Some(bad) = ps.iter().find(|p| p.data.dim() != (n, n)) {
        let (r, c) = bad.data.dim();
        return Err(Error::mismatch(format!("{n}x{n}"), format!("{r}x{c}")));
    }
    if ps.len() == 1 {
        return Ok(first.clone());
    }
    let shared_q = ps
        .iter()
        .map(|p| p.split.as_ref())
        .collect::<Option<Vec<_>>>()
        .filter(|s| s.iter().all(|x| x.q == s[0].q));
    if let Some(splits) = shared_q {
        let mut acc = splits[0].transient.clone();
        for s in &splits[1..] {
            acc = s.transient.dot(&acc);
        }
        let split = Split {
            q: splits[0].q.clone(),
            transient: acc,
        };
        return Ok(MarkovMatrix::from_split(split, Provenance::Fused));
    }
    let mut acc = first.data.clone();
    for p in &ps[1..] {
        acc = p.data.dot(&acc);
    }
    Ok(MarkovMatrix::unchecked(acc, Provenance::Fused))
}

/// Builds one RSM per member (with its own kernel), embeds each with uniform
/// `q` and fuses them in set order.
pub fn fuse_representations(set: &RepresentationSet, kernels: &[Kernel]) -> Result<MarkovMatrix> {
    if kernels.len() != set.len() {
        return Err(Error::mismatch(
            format!("{} kernels", set.len()),
            kernels.len(),
        ));
    }
    let embedded = set
        .members()
        .iter()
        .zip(kernels)
        .map(|(r, k)| Ok(markov_embed_uniform(&k.rsm(r)?)))
        .collect::<Result<Vec<_>>>()?;
    ad_fuse(&embedded)
}

/// `|P - 1 pi^T|_F` with `pi` the column means of `P`. Zero means the operator
/// has collapsed to a rank-one stationary matrix.
pub fn degeneration_diagnostic(p: &MarkovMatrix) -> f64 {
    let pi = p.data.mean_axis(Axis(0)).expect("non-empty");
    let mut d = p.data.clone();
    for mut row in d.axis_iter_mut(Axis(0)) {
        row -= &pi;
    }
    frobenius(d.view())
}
