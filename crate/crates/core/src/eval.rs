//! Behavioral grounding protocols.
//!
//! ReSi tests 1 and 2 correlate pairwise similarity with pairwise differences
//! in accuracy, hard predictions or output distributions, over every unordered
//! pair of a model family. GRS benchmark 4 compares every model against the one
//! with the best out-of-distribution accuracy and correlates `1 - m` with the
//! accuracy gap.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Kernel, RepMatrix, Rsm};
use crate::markov::{fuse_representations, MarkovMatrix, RepresentationSet, MAX_FUSION_DEPTH};
use crate::measures::{ad_score_operators, rsm_measure, MeasureId, ScoreParams};

/// One trained model: layer representations plus behavior on a fixed
/// evaluation set.
#[derive(Debug, Clone)]
pub struct ModelRecord {
    pub model_id: String,
    pub layers: BTreeMap<usize, RepMatrix>,
    /// `N_eval x C` class probabilities.
    pub outputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub accuracy: Option<f64>,
    pub ood_accuracy: Option<f64>,
}

impl ModelRecord {
    pub fn new(
        model_id: impl Into<String>,
        layers: BTreeMap<usize, RepMatrix>,
        outputs: Array2<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let model_id = model_id.into();
        let (n, c) = outputs.dim();
        if n == 0 || c == 0 {
            return Err(Error::Validation(format!(
                "model '{model_id}': empty outputs"
            )));
        }
        if labels.len() != n {
            return Err(Error::mismatch(
                format!("{n} labels for model '{model_id}'"),
                labels.len(),
            ));
        }
        for (i, row) in outputs.rows().into_iter().enumerate() {
            validate_prob_row(row).map_err(|detail| {
                Error::Validation(format!("model '{model_id}' output row {i}: {detail}"))
            })?;
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Validation(format!(
                "model '{model_id}': label {bad} outside [0, {c})"
            )));
        }
        Ok(ModelRecord {
            model_id,
            layers,
            outputs,
            labels,
            accuracy: None,
            ood_accuracy: None,
        })
    }

    pub fn with_accuracy(mut self, acc: Option<f64>) -> Self {
        self.accuracy = acc;
        self
    }

    pub fn with_ood_accuracy(mut self, acc: Option<f64>) -> Self {
        self.ood_accuracy = acc;
        self
    }

    /// Hard predictions; argmax ties go to the lowest class index.
    pub fn predictions(&self) -> Vec<usize> {
        self.outputs.rows().into_iter().map(argmax).collect()
    }

    /// Precomputed accuracy if present, otherwise the fraction of rows whose
    /// argmax equals the label.
    pub fn accuracy(&self) -> f64 {
        self.accuracy.unwrap_or_else(|| {
            let hits = self
                .predictions()
                .iter()
                .zip(&self.labels)
                .filter(|(p, l)| p == l)
                .count();
            hits as f64 / self.labels.len() as f64
        })
    }

    fn layer(&self, idx: usize) -> Result<&RepMatrix> {
        self.layers.get(&idx).ok_or_else(|| Error::Ingestion {
            model: self.model_id.clone(),
            layer: idx.to_string(),
            detail: "layer representation not available".into(),
        })
    }
}

fn validate_prob_row(row: ArrayView1<'_, f64>) -> std::result::Result<(), String> {
    if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(format!("probability {x} outside [0, 1]"));
    }
    let s: f64 = row.sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(format!("probabilities sum to {s}"));
    }
    Ok(())
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn same_shape(f: &ModelRecord, g: &ModelRecord) -> Result<()> {
    if f.outputs.dim() != g.outputs.dim() {
        let (a, b) = f.outputs.dim();
        let (c, d) = g.outputs.dim();
        return Err(Error::mismatch(
            format!("outputs {a}x{b} ('{}')", f.model_id),
            format!("{c}x{d} ('{}')", g.model_id),
        ));
    }
    Ok(())
}

/// `|Acc(f) - Acc(g)|`.
pub fn accuracy_diff(f: &ModelRecord, g: &ModelRecord) -> Result<f64> {
    if f.labels != g.labels {
        return Err(Error::Validation(format!(
            "models '{}' and '{}' were evaluated on different label sets",
            f.model_id, g.model_id
        )));
    }
    Ok((f.accuracy() - g.accuracy()).abs())
}

/// Fraction of evaluation rows whose hard predictions differ.
pub fn disagreement(f: &ModelRecord, g: &ModelRecord) -> Result<f64> {
    same_shape(f, g)?;
    let differ = f
        .predictions()
        .iter()
        .zip(g.predictions())
        .filter(|(a, b)| **a != *b)
        .count();
    Ok(differ as f64 / f.labels.len() as f64)
}

fn kl_to_mixture(p: ArrayView1<'_, f64>, m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats; `0 ln 0 = 0`.
pub fn jsd(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> f64 {
    let m: Vec<f64> = p.iter().zip(q.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl_to_mixture(p, &m) + 0.5 * kl_to_mixture(q, &m)
}

/// Mean row-wise Jensen-Shannon divergence of the two output matrices.
pub fn jsd_diff(f: &ModelRecord, g: &ModelRecord) -> Result<f64> {
    same_shape(f, g)?;
    for (rec, rows) in [(f, &f.outputs), (g, &g.outputs)] {
        for (i, row) in rows.rows().into_iter().enumerate() {
            validate_prob_row(row).map_err(|d| {
                Error::Validation(format!("model '{}' output row {i}: {d}", rec.model_id))
            })?;
        }
    }
    let total: f64 = f
        .outputs
        .rows()
        .into_iter()
        .zip(g.outputs.rows())
        .map(|(p, q)| jsd(p, q))
        .sum();
    Ok(total / f.outputs.nrows() as f64)
}

fn check_sequences(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::mismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::Validation(
            "rank correlation needs at least 2 points".into(),
        ));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "rank correlation input is not finite".into(),
        ));
    }
    Ok(())
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of the average ranks.
///
/// Doubled average ranks are integers, so the moment sums are exact and the
/// result carries a single rounding.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_sequences(xs, ys)?;
    let doubled =
        |v: &[f64]| -> Vec<i128> { average_ranks(v).iter().map(|r| (2.0 * r) as i128).collect() };
    let (rx, ry) = (doubled(xs), doubled(ys));
    let n = rx.len() as i128;
    let (sx, sy): (i128, i128) = (rx.iter().sum(), ry.iter().sum());
    let sxy: i128 = rx.iter().zip(&ry).map(|(a, b)| a * b).sum();
    let sxx: i128 = rx.iter().map(|a| a * a).sum();
    let syy: i128 = ry.iter().map(|b| b * b).sum();
    let (cov, vx, vy) = (n * sxy - sx * sy, n * sxx - sx * sx, n * syy - sy * sy);
    if vx == 0 || vy == 0 {
        return Err(Error::ZeroVariance(format!(
            "constant input sequence ({} of {} points)",
            if vx == 0 { "first" } else { "second" },
            xs.len()
        )));
    }
    Ok(cov as f64 / ((vx as f64) * (vy as f64)).sqrt())
}

/// Kendall's tau-b by enumeration of all pairs.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_sequences(xs, ys)?;
    let n = xs.len();
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[i].total_cmp(&xs[j]);
            let dy = ys[i].total_cmp(&ys[j]);
            use std::cmp::Ordering::Equal;
            match (dx, dy) {
                (Equal, Equal) => {
                    ties_x += 1;
                    ties_y += 1;
                }
                (Equal, _) => ties_x += 1,
                (_, Equal) => ties_y += 1,
                (a, b) if a == b => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let (vx, vy) = (n0 - ties_x, n0 - ties_y);
    if vx == 0 || vy == 0 {
        return Err(Error::ZeroVariance(format!(
            "all {n} points tied in the {} sequence",
            if vx == 0 { "first" } else { "second" }
        )));
    }
    Ok((concordant - discordant) as f64 / ((vx as f64) * (vy as f64)).sqrt())
}

/// Behavioral difference correlated against similarity in ReSi tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Acc,
    Jsd,
    Disagreement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    ResiTest1,
    ResiTest2,
    GrsBench4,
}

impl Target {
    fn protocol(self) -> Protocol {
        match self {
            Target::Acc => Protocol::ResiTest1,
            Target::Jsd | Target::Disagreement => Protocol::ResiTest2,
        }
    }

    fn delta(self, f: &ModelRecord, g: &ModelRecord) -> Result<f64> {
        match self {
            Target::Acc => accuracy_diff(f, g),
            Target::Jsd => jsd_diff(f, g),
            Target::Disagreement => disagreement(f, g),
        }
    }
}

/// Which measure to run and on which layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureConfig {
    pub id: MeasureId,
    /// `linear`, `rbf` or `distance`; defaults per measure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    /// RBF bandwidth; median heuristic when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_indices: Option<Vec<usize>>,
    /// Per-layer kernel overrides for multi-layer measures.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub layer_kernels: BTreeMap<usize, String>,
}

impl MeasureConfig {
    pub fn new(id: MeasureId) -> Self {
        MeasureConfig {
            id,
            kernel: None,
            sigma: None,
            t: None,
            layer_indices: None,
            layer_kernels: BTreeMap::new(),
        }
    }

    fn parse_kernel(&self, name: &str) -> Result<Kernel> {
        match name.parse::<Kernel>()? {
            Kernel::Rbf { .. } => Ok(Kernel::Rbf { sigma: self.sigma }),
            k => Ok(k),
        }
    }

    pub fn kernel_for(&self, layer: usize) -> Result<Kernel> {
        if let Some(name) = self.layer_kernels.get(&layer) {
            return self.parse_kernel(name);
        }
        match &self.kernel {
            Some(name) => self.parse_kernel(name),
            None => Ok(self.id.default_kernel()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.uses_scale() && self.t.unwrap_or(0) == 0 {
            return Err(Error::Validation(format!(
                "measure {} requires t >= 1",
                self.id
            )));
        }
        if let Some(idx) = &self.layer_indices {
            if idx.is_empty() {
                return Err(Error::Validation("layer_indices is empty".into()));
            }
            if idx.len() > MAX_FUSION_DEPTH {
                return Err(Error::FusionDepthExceeded(idx.len()));
            }
            if !self.id.is_multi_layer() && idx.len() != 1 {
                return Err(Error::Validation(format!(
                    "single-layer measure {} takes exactly one layer index, got {}",
                    self.id,
                    idx.len()
                )));
            }
        }
        Ok(())
    }

    /// Layers used for every model. Single-layer measures default to the
    /// deepest layer shared by all models; multi-layer measures default to
    /// every shared layer in increasing order.
    pub fn resolve_layers(&self, models: &[ModelRecord]) -> Result<Vec<usize>> {
        self.validate()?;
        if let Some(idx) = &self.layer_indices {
            return Ok(idx.clone());
        }
        let mut common: Option<BTreeSet<usize>> = None;
        for m in models {
            let keys: BTreeSet<usize> = m.layers.keys().copied().collect();
            common = Some(match common {
                None => keys,
                Some(c) => c.intersection(&keys).copied().collect(),
            });
        }
        let common: Vec<usize> = common.unwrap_or_default().into_iter().collect();
        if common.is_empty() {
            return Err(Error::Validation("models share no layer index".into()));
        }
        if self.id.is_multi_layer() {
            if common.len() > MAX_FUSION_DEPTH {
                return Err(Error::FusionDepthExceeded(common.len()));
            }
            Ok(common)
        } else {
            Ok(vec![*common.last().expect("non-empty")])
        }
    }
}

/// One row of the per-pair table in an [`EvalReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub model_a: String,
    pub model_b: String,
    pub score: f64,
    /// `1 - score`; only used by GRS benchmark 4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissimilarity: Option<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
}

impl Default for RunMetadata {
    fn default() -> Self {
        RunMetadata {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    pub measure: MeasureConfig,
    pub layers: Vec<usize>,
    /// Selected layers do not all use the same kernel.
    pub mixed_kernels: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_model: Option<String>,
    pub pairs: Vec<PairRecord>,
    pub spearman_rho: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kendall_tau: Option<f64>,
    pub pair_count: usize,
    pub run_metadata: RunMetadata,
}

impl EvalReport {
    /// The two sequences the reported correlations were computed from.
    pub fn correlated_columns(&self) -> (Vec<f64>, Vec<f64>) {
        let xs = self
            .pairs
            .iter()
            .map(|p| p.dissimilarity.unwrap_or(p.score))
            .collect();
        let ys = self.pairs.iter().map(|p| p.delta).collect();
        (xs, ys)
    }
}

/// A model's representation, prepared once and shared by all of its pairs.
enum Prepared {
    Single(Rsm),
    Fused(MarkovMatrix, usize),
}

fn prepare(model: &ModelRecord, cfg: &MeasureConfig, layers: &[usize]) -> Result<Prepared> {
    let with_layer = |idx: usize, e: Error| match e {
        Error::Ingestion { .. } => e,
        other => Error::Ingestion {
            model: model.model_id.clone(),
            layer: idx.to_string(),
            detail: other.to_string(),
        },
    };
    if cfg.id.is_multi_layer() {
        let reps = layers
            .iter()
            .map(|&i| model.layer(i).cloned())
            .collect::<Result<Vec<_>>>()?;
        let kernels = layers
            .iter()
            .map(|&i| cfg.kernel_for(i))
            .collect::<Result<Vec<_>>>()?;
        let set = RepresentationSet::new(reps)?;
        let fused = fuse_representations(&set, &kernels).map_err(|e| match e {
            Error::DegenerateBandwidth => with_layer(layers[0], e),
            other => other,
        })?;
        Ok(Prepared::Fused(fused, layers.len()))
    } else {
        let idx = layers[0];
        let rsm = cfg
            .kernel_for(idx)?
            .rsm(model.layer(idx)?)
            .map_err(|e| with_layer(idx, e))?;
        Ok(Prepared::Single(rsm))
    }
}

fn score(cfg: &MeasureConfig, a: &Prepared, b: &Prepared) -> Result<f64> {
    match (a, b) {
        (Prepared::Single(s1), Prepared::Single(s2)) => {
            Ok(rsm_measure(cfg.id, s1, s2, cfg.t)?.value)
        }
        (Prepared::Fused(f1, n), Prepared::Fused(f2, _)) => {
            let params = ScoreParams {
                n_layers: Some(*n),
                ..Default::default()
            };
            Ok(ad_score_operators(cfg.id, f1, f2, params)?.value)
        }
        _ => unreachable!("all models are prepared with the same measure"),
    }
}

fn check_family(models: &[ModelRecord]) -> Result<()> {
    if models.len() < 3 {
        return Err(Error::Validation(format!(
            "at least 3 models are required, got {}",
            models.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for m in models {
        if !seen.insert(m.model_id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate model id '{}'",
                m.model_id
            )));
        }
    }
    Ok(())
}

fn mixed_kernels(cfg: &MeasureConfig, layers: &[usize]) -> Result<bool> {
    let ids: BTreeSet<String> = layers
        .iter()
        .map(|&i| cfg.kernel_for(i).map(|k| k.to_string()))
        .collect::<Result<_>>()?;
    Ok(ids.len() > 1)
}

fn prepare_all(
    models: &[&ModelRecord],
    cfg: &MeasureConfig,
    layers: &[usize],
) -> Result<Vec<Prepared>> {
    models.par_iter().map(|m| prepare(m, cfg, layers)).collect()
}

fn correlations(xs: &[f64], ys: &[f64], what: &str) -> Result<(f64, f64)> {
    let ctx = |e: Error| match e {
        Error::ZeroVariance(d) => Error::ZeroVariance(format!("{what}: {d}")),
        other => other,
    };
    let rho = spearman(xs, ys).map_err(ctx)?;
    let tau = kendall_tau(xs, ys).map_err(ctx)?;
    Ok((rho, tau))
}

/// ReSi test 1 (`target = acc`) or test 2 (`jsd`, `disagreement`): Spearman
/// correlation between pairwise similarity and pairwise behavioral difference
/// over all unordered model pairs.
pub fn run_resi_test(
    models: &[ModelRecord],
    cfg: &MeasureConfig,
    target: Target,
) -> Result<EvalReport> {
    check_family(models)?;
    let layers = cfg.resolve_layers(models)?;
    let mut sorted: Vec<&ModelRecord> = models.iter().collect();
    sorted.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let prepared = prepare_all(&sorted, cfg, &layers)?;

    let index_pairs: Vec<(usize, usize)> = (0..sorted.len())
        .flat_map(|i| ((i + 1)..sorted.len()).map(move |j| (i, j)))
        .collect();
    let pairs = index_pairs
        .par_iter()
        .map(|&(i, j)| {
            Ok(PairRecord {
                model_a: sorted[i].model_id.clone(),
                model_b: sorted[j].model_id.clone(),
                score: score(cfg, &prepared[i], &prepared[j])?,
                dissimilarity: None,
                delta: target.delta(sorted[i], sorted[j])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let xs: Vec<f64> = pairs.iter().map(|p| p.score).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.delta).collect();
    let (rho, tau) = correlations(
        &xs,
        &ys,
        &format!("similarity vs {target:?} over {} pairs", pairs.len()),
    )?;

    Ok(EvalReport {
        protocol: target.protocol(),
        target: Some(target),
        measure: cfg.clone(),
        mixed_kernels: mixed_kernels(cfg, &layers)?,
        layers,
        reference_model: None,
        pair_count: pairs.len(),
        pairs,
        spearman_rho: rho,
        kendall_tau: Some(tau),
        run_metadata: RunMetadata::default(),
    })
}

/// GRS benchmark 4: dissimilarity `1 - m` to the best out-of-distribution model
/// against the out-of-distribution accuracy gap.
pub fn run_grs_bench4(models: &[ModelRecord], cfg: &MeasureConfig) -> Result<EvalReport> {
    check_family(models)?;
    for m in models {
        if m.ood_accuracy.is_none() {
            return Err(Error::Validation(format!(
                "model '{}' has no ood_accuracy",
                m.model_id
            )));
        }
    }
    let layers = cfg.resolve_layers(models)?;
    let mut sorted: Vec<&ModelRecord> = models.iter().collect();
    sorted.sort_by(|a, b| a.model_id.cmp(&b.model_id));
    let ood = |m: &ModelRecord| m.ood_accuracy.expect("checked above");
    // strict '>' keeps the lexicographically smallest id on ties
    let mut ref_idx = 0;
    for (i, m) in sorted.iter().enumerate() {
        if ood(m) > ood(sorted[ref_idx]) {
            ref_idx = i;
        }
    }
    let prepared = prepare_all(&sorted, cfg, &layers)?;
    let reference = sorted[ref_idx];

    let others: Vec<usize> = (0..sorted.len()).filter(|&i| i != ref_idx).collect();
    let pairs = others
        .par_iter()
        .map(|&i| {
            let m = score(cfg, &prepared[ref_idx], &prepared[i])?;
            Ok(PairRecord {
                model_a: reference.model_id.clone(),
                model_b: sorted[i].model_id.clone(),
                score: m,
                dissimilarity: Some(1.0 - m),
                delta: (ood(reference) - ood(sorted[i])).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let xs: Vec<f64> = pairs
        .iter()
        .map(|p| p.dissimilarity.unwrap_or(p.score))
        .collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.delta).collect();
    let (rho, tau) = correlations(
        &xs,
        &ys,
        &format!(
            "dissimilarity vs OOD accuracy gap over {} models",
            pairs.len()
        ),
    )?;

    Ok(EvalReport {
        protocol: Protocol::GrsBench4,
        target: None,
        measure: cfg.clone(),
        mixed_kernels: mixed_kernels(cfg, &layers)?,
        layers,
        reference_model: Some(reference.model_id.clone()),
        pair_count: pairs.len(),
        pairs,
        spearman_rho: rho,
        kendall_tau: Some(tau),
        run_metadata: RunMetadata::default(),
    })
}
