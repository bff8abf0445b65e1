//! CKA and DistCorr, their Markov reformulations, and the multi-scale and
//! alternating-diffusion variants.
//!
//! Two normalized forms cover every measure here:
//!
//! - the HSIC ratio `hsic(A, B) / sqrt(hsic(A, A) hsic(B, B))`, and
//! - the Frobenius cosine `<HAH, HBH>_F / (|HAH|_F |HBH|_F)`.
//!
//! `hsic` is the centered elementwise sum `<H A H, B>_F / (N-1)^2`, equal to
//! `<HAH, HBH>_F / (N-1)^2`, so the two ratios coincide numerically. They are
//! kept apart because CKA and DistCorr differ in their default kernels.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::centering::{center_uniform, frobenius};
use crate::error::{Error, Result};
use crate::kernels::{max_abs, Kernel, KernelId, Rsm};
use crate::markov::{
    fuse_representations, markov_embed_uniform, matrix_power, MarkovMatrix, RepresentationSet,
    ZERO_REL,
};

/// Diffusion scale used by the blended multi-scale DistCorr score.
pub const BLEND_SCALE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureId {
    Cka,
    Distcorr,
    CkaViaMarkov,
    DistcorrViaMarkov,
    MsCka,
    MsDistcorr,
    BlendedMsDistcorr,
    AdCka,
    AdDistcorr,
}

impl MeasureId {
    pub const ALL: [MeasureId; 9] = [
        MeasureId::Cka,
        MeasureId::Distcorr,
        MeasureId::CkaViaMarkov,
        MeasureId::DistcorrViaMarkov,
        MeasureId::MsCka,
        MeasureId::MsDistcorr,
        MeasureId::BlendedMsDistcorr,
        MeasureId::AdCka,
        MeasureId::AdDistcorr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MeasureId::Cka => "cka",
            MeasureId::Distcorr => "distcorr",
            MeasureId::CkaViaMarkov => "cka_via_markov",
            MeasureId::DistcorrViaMarkov => "distcorr_via_markov",
            MeasureId::MsCka => "ms_cka",
            MeasureId::MsDistcorr => "ms_distcorr",
            MeasureId::BlendedMsDistcorr => "blended_ms_distcorr",
            MeasureId::AdCka => "ad_cka",
            MeasureId::AdDistcorr => "ad_distcorr",
        }
    }

    /// Measures that fuse several layers into one operator.
    pub fn is_multi_layer(&self) -> bool {
        matches!(self, MeasureId::AdCka | MeasureId::AdDistcorr)
    }

    pub fn uses_scale(&self) -> bool {
        matches!(self, MeasureId::MsCka | MeasureId::MsDistcorr)
    }

    /// Kernel used when a configuration does not name one.
    pub fn default_kernel(&self) -> Kernel {
        match self {
            MeasureId::Distcorr
            | MeasureId::DistcorrViaMarkov
            | MeasureId::MsDistcorr
            | MeasureId::BlendedMsDistcorr
            | MeasureId::AdDistcorr => Kernel::Distance,
            _ => Kernel::Linear,
        }
    }
}

impl std::fmt::Display for MeasureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MeasureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        MeasureId::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Validation(format!("unknown measure '{s}'")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_layers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureScore {
    pub value: f64,
    pub measure_id: MeasureId,
    pub params: ScoreParams,
}

impl MeasureScore {
    fn new(value: f64, measure_id: MeasureId, params: ScoreParams) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::DegenerateRsm(format!(
                "{measure_id} produced {value}"
            )));
        }
        Ok(MeasureScore {
            value,
            measure_id,
            params,
        })
    }
}

fn check_pair(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<usize> {
    let (n, m) = a.dim();
    if n != m || b.nrows() != b.ncols() {
        return Err(Error::mismatch(
            "square matrices",
            format!("{n}x{m} and {}x{}", b.nrows(), b.ncols()),
        ));
    }
    if b.nrows() != n {
        return Err(Error::mismatch(
            format!("{n}x{n}"),
            format!("{0}x{0}", b.nrows()),
        ));
    }
    if n < 2 {
        return Err(Error::Validation("HSIC needs N >= 2".into()));
    }
    Ok(n)
}

fn frobenius_dot<'a>(x: impl Into<ArrayView2<'a, f64>>, y: impl Into<ArrayView2<'a, f64>>) -> f64 {
    let (x, y) = (x.into(), y.into());
    x.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
}

/// Empirical HSIC, `tr(S1 H S2 H) / (N-1)^2` for symmetric inputs.
///
/// Evaluated as the centered elementwise sum `<H S1 H, S2>_F / (N-1)^2`.
pub fn hsic(s1: ArrayView2<'_, f64>, s2: ArrayView2<'_, f64>) -> Result<f64> {
    let n = check_pair(s1, s2)?;
    let c1 = center_uniform(s1)?;
    Ok(frobenius_dot(&c1, s2) / ((n - 1) * (n - 1)) as f64)
}

/// `H M H`, rejected as degenerate when it vanishes relative to `M`.
fn centered_signal(m: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let c = center_uniform(m)?;
    let cmax = max_abs(c.view());
    if cmax == 0.0 || cmax <= ZERO_REL * max_abs(m) {
        return Err(Error::DegenerateRsm(
            "centered matrix is zero (constant similarity structure)".into(),
        ));
    }
    Ok(c)
}

/// HSIC ratio on arbitrary square matrices (RSMs or Markov operators).
pub fn cka_ratio(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    let n = check_pair(a, b)?;
    let x = centered_signal(a)?;
    let y = centered_signal(b)?;
    // <HAH, B>_F = <HAH, HBH>_F because H is symmetric and idempotent
    let norm = ((n - 1) * (n - 1)) as f64;
    let ab = frobenius_dot(&x, &y) / norm;
    let aa = frobenius_dot(&x, &x) / norm;
    let bb = frobenius_dot(&y, &y) / norm;
    if !(aa > 0.0 && bb > 0.0) {
        return Err(Error::DegenerateRsm(format!(
            "self-HSIC is not positive ({aa:e}, {bb:e})"
        )));
    }
    Ok(ab / (aa * bb).sqrt())
}

/// Frobenius cosine of the double-centered inputs.
pub fn cosine_ratio(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    check_pair(a, b)?;
    let x = centered_signal(a)?;
    let y = centered_signal(b)?;
    Ok(frobenius_dot(&x, &y) / (frobenius(x.view()) * frobenius(y.view())))
}

fn shared_kernel(a: KernelId, b: KernelId) -> Option<KernelId> {
    (a == b).then_some(a)
}

fn rsm_params(s1: &Rsm, s2: &Rsm) -> ScoreParams {
    ScoreParams {
        kernel: shared_kernel(s1.kernel(), s2.kernel()),
        ..Default::default()
    }
}

pub fn cka(s1: &Rsm, s2: &Rsm) -> Result<MeasureScore> {
    let v = cka_ratio(s1.view(), s2.view())?;
    MeasureScore::new(v, MeasureId::Cka, rsm_params(s1, s2))
}

/// `<H S1 H, H S2 H>_F / (|H S1 H|_F |H S2 H|_F)`.
pub fn distcorr(s1: &Rsm, s2: &Rsm) -> Result<MeasureScore> {
    let v = cosine_ratio(s1.view(), s2.view())?;
    MeasureScore::new(v, MeasureId::Distcorr, rsm_params(s1, s2))
}

fn embed_pair(s1: &Rsm, s2: &Rsm) -> Result<(MarkovMatrix, MarkovMatrix)> {
    if s1.n() != s2.n() {
        return Err(Error::mismatch(s1.n(), s2.n()));
    }
    Ok((markov_embed_uniform(s1), markov_embed_uniform(s2)))
}

/// CKA evaluated on the Markov embeddings `P(S1)`, `P(S2)`.
pub fn cka_via_markov(s1: &Rsm, s2: &Rsm) -> Result<MeasureScore> {
    let (p1, p2) = embed_pair(s1, s2)?;
    let v = cka_ratio(p1.view(), p2.view())?;
    MeasureScore::new(v, MeasureId::CkaViaMarkov, rsm_params(s1, s2))
}

pub fn distcorr_via_markov(s1: &Rsm, s2: &Rsm) -> Result<MeasureScore> {
    let (p1, p2) = embed_pair(s1, s2)?;
    let v = cosine_ratio(p1.view(), p2.view())?;
    MeasureScore::new(v, MeasureId::DistcorrViaMarkov, rsm_params(s1, s2))
}

fn powered_pair(s1: &Rsm, s2: &Rsm, t: u32) -> Result<(MarkovMatrix, MarkovMatrix)> {
    let (p1, p2) = embed_pair(s1, s2)?;
    Ok((matrix_power(&p1, t)?, matrix_power(&p2, t)?))
}

/// HSIC ratio of `P(S1)^t` and `P(S2)^t`.
pub fn ms_cka(s1: &Rsm, s2: &Rsm, t: u32) -> Result<MeasureScore> {
    let (p1, p2) = powered_pair(s1, s2, t)?;
    let v = cka_ratio(p1.signal(), p2.signal())?;
    let params = ScoreParams {
        t: Some(t),
        ..rsm_params(s1, s2)
    };
    MeasureScore::new(v, MeasureId::MsCka, params)
}

/// Frobenius cosine of `H P(S1)^t H` and `H P(S2)^t H`.
pub fn ms_distcorr(s1: &Rsm, s2: &Rsm, t: u32) -> Result<MeasureScore> {
    let (p1, p2) = powered_pair(s1, s2, t)?;
    let v = cosine_ratio(p1.signal(), p2.signal())?;
    let params = ScoreParams {
        t: Some(t),
        ..rsm_params(s1, s2)
    };
    MeasureScore::new(v, MeasureId::MsDistcorr, params)
}

/// `(ms + 2 dc) / 3`.
pub fn blend(ms_distcorr_t2: f64, distcorr: f64) -> f64 {
    (ms_distcorr_t2 + 2.0 * distcorr) / 3.0
}

/// Multi-scale DistCorr at `t = 2` blended with plain DistCorr.
pub fn blended_ms_distcorr(s1: &Rsm, s2: &Rsm) -> Result<MeasureScore> {
    let ms = ms_distcorr(s1, s2, BLEND_SCALE)?.value;
    let dc = distcorr(s1, s2)?.value;
    let params = ScoreParams {
        t: Some(BLEND_SCALE),
        ..rsm_params(s1, s2)
    };
    MeasureScore::new(blend(ms, dc), MeasureId::BlendedMsDistcorr, params)
}

/// Single-layer measure dispatch. `t` is only read by the multi-scale
/// measures and must be present for them.
pub fn rsm_measure(id: MeasureId, s1: &Rsm, s2: &Rsm, t: Option<u32>) -> Result<MeasureScore> {
    let need_t =
        || t.ok_or_else(|| Error::Validation(format!("measure {id} requires a diffusion scale t")));
    match id {
        MeasureId::Cka => cka(s1, s2),
        MeasureId::Distcorr => distcorr(s1, s2),
        MeasureId::CkaViaMarkov => cka_via_markov(s1, s2),
        MeasureId::DistcorrViaMarkov => distcorr_via_markov(s1, s2),
        MeasureId::MsCka => ms_cka(s1, s2, need_t()?),
        MeasureId::MsDistcorr => ms_distcorr(s1, s2, need_t()?),
        MeasureId::BlendedMsDistcorr => blended_ms_distcorr(s1, s2),
        MeasureId::AdCka | MeasureId::AdDistcorr => Err(Error::Validation(format!(
            "{id} compares representation sets, not single RSMs"
        ))),
    }
}

/// Scores two already-fused alternating-diffusion operators.
pub fn ad_score_operators(
    id: MeasureId,
    f1: &MarkovMatrix,
    f2: &MarkovMatrix,
    params: ScoreParams,
) -> Result<MeasureScore> {
    let v = match id {
        MeasureId::AdCka => cka_ratio(f1.signal(), f2.signal())?,
        MeasureId::AdDistcorr => cosine_ratio(f1.signal(), f2.signal())?,
        other => {
            return Err(Error::Validation(format!(
                "{other} is not an alternating-diffusion measure"
            )))
        }
    };
    MeasureScore::new(v, id, params)
}

/// Alternating-diffusion measure with one kernel list per set.
pub fn ad_measure_with_kernels(
    id: MeasureId,
    a1: &RepresentationSet,
    k1: &[Kernel],
    a2: &RepresentationSet,
    k2: &[Kernel],
) -> Result<MeasureScore> {
    if a1.n_samples() != a2.n_samples() {
        return Err(Error::mismatch(
            format!("{} samples", a1.n_samples()),
            a2.n_samples(),
        ));
    }
    let f1 = fuse_representations(a1, k1)?;
    let f2 = fuse_representations(a2, k2)?;
    let uniform_kernel =
        k1.iter()
            .chain(k2)
            .map(Kernel::id)
            .reduce(|a, b| if a == b { a } else { KernelId::External });
    let params = ScoreParams {
        kernel: uniform_kernel.filter(|k| *k != KernelId::External),
        n_layers: Some(a1.len().max(a2.len())),
        ..Default::default()
    };
    ad_score_operators(id, &f1, &f2, params)
}

/// HSIC ratio of the alternating-diffusion operators of two layer sets.
pub fn ad_cka(
    a1: &RepresentationSet,
    a2: &RepresentationSet,
    kernel: Kernel,
) -> Result<MeasureScore> {
    ad_measure_with_kernels(
        MeasureId::AdCka,
        a1,
        &vec![kernel; a1.len()],
        a2,
        &vec![kernel; a2.len()],
    )
}

/// Frobenius cosine of the centered alternating-diffusion operators.
pub fn ad_distcorr(
    a1: &RepresentationSet,
    a2: &RepresentationSet,
    kernel: Kernel,
) -> Result<MeasureScore> {
    ad_measure_with_kernels(
        MeasureId::AdDistcorr,
        a1,
        &vec![kernel; a1.len()],
        a2,
        &vec![kernel; a2.len()],
    )
}
