//! Matrix files, evaluation manifests and reports.
//!
//! Binary matrix layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "RSM1"
//! 4       4     version (u32) = 1
//! 8       8     rows (u64)
//! 16      8     cols (u64)
//! 24      8*r*c payload, f64 IEEE-754 LE, row-major
//! ```
//!
//! Files with a `.csv` extension are read as comma-separated decimal rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{run_grs_bench4, run_resi_test, EvalReport, MeasureConfig, ModelRecord, Target};
use crate::kernels::{check_finite, RepMatrix};
use crate::markov::MAX_FUSION_DEPTH;

pub const MAGIC: [u8; 4] = *b"RSM1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Serializes a matrix into the binary layout.
pub fn encode_matrix(m: ArrayView2<'_, f64>) -> Vec<u8> {
    let (rows, cols) = m.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * rows * cols);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u64(bytes: &[u8], offset: usize) -> u64 {
    u64::from_le_bytes(bytes[offset..offset + 8].try_into().expect("8 bytes"))
}

/// Parses the binary layout. Never returns a partially filled matrix.
pub fn decode_matrix(bytes: &[u8]) -> Result<Array2<f64>> {
    let format = |offset: usize, detail: String| Error::Format {
        offset: offset as u64,
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(format(
            bytes.len(),
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes[0..4] != MAGIC {
        return Err(format(0, format!("bad magic {:02x?}", &bytes[0..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format(4, format!("unsupported version {version}")));
    }
    let rows = read_u64(bytes, 8);
    let cols = read_u64(bytes, 16);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| format(8, format!("dimensions {rows}x{cols} overflow")))?;
    let payload = (bytes.len() - HEADER_LEN) as u64;
    if payload != expected {
        return Err(format(
            HEADER_LEN,
            format!("{rows}x{cols} matrix needs {expected} payload bytes, found {payload}"),
        ));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let m = Array2::from_shape_vec((rows as usize, cols as usize), values)
        .map_err(|e| format(8, e.to_string()))?;
    check_finite(m.view())?;
    Ok(m)
}

fn parse_csv(text: &str) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format {
            offset: e.position().map_or(0, |p| p.byte()),
            detail: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Format {
                    offset: record.position().map_or(0, |p| p.byte()),
                    detail: format!("row {i} has {} fields, expected {c}", record.len()),
                })
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Format {
                offset: record.position().map_or(0, |p| p.byte()),
                detail: format!("row {i} col {j}: '{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data { row: i, col: j });
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format {
        offset: 0,
        detail: e.to_string(),
    })
}

/// Reads any finite matrix (binary, or CSV by extension).
pub fn read_array(path: &Path) -> Result<Array2<f64>> {
    if is_csv(path) {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        parse_csv(&text)
    } else {
        let bytes = fs::read(path).map_err(io_err(path))?;
        decode_matrix(&bytes)
    }
}

pub fn read_matrix(path: &Path) -> Result<RepMatrix> {
    RepMatrix::new(read_array(path)?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Writes the binary layout via a temporary file and rename.
pub fn write_matrix(m: ArrayView2<'_, f64>, path: &Path) -> Result<()> {
    if m.nrows() < 2 || m.ncols() == 0 {
        return Err(Error::Validation(format!(
            "refusing to write a {}x{} matrix (need at least 2 rows and 1 column)",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m)?;
    write_atomic(path, &encode_matrix(m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model_id: String,
    pub layers: BTreeMap<usize, PathBuf>,
    pub outputs: PathBuf,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolId {
    ResiTest1,
    ResiTest2,
    GrsBench4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    pub id: ProtocolId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
}

impl ProtocolSpec {
    /// ReSi target implied by the protocol; test 2 defaults to JSD.
    pub fn resi_target(&self) -> Result<Option<Target>> {
        match (self.id, self.target) {
            (ProtocolId::ResiTest1, None | Some(Target::Acc)) => Ok(Some(Target::Acc)),
            (ProtocolId::ResiTest2, None) => Ok(Some(Target::Jsd)),
            (ProtocolId::ResiTest2, Some(t @ (Target::Jsd | Target::Disagreement))) => Ok(Some(t)),
            (ProtocolId::GrsBench4, None) => Ok(None),
            (id, Some(t)) => Err(Error::Validation(format!(
                "target {t:?} is not valid for protocol {id:?}"
            ))),
        }
    }
}

/// Declarative description of a model family and the evaluation to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub models: Vec<ModelEntry>,
    pub measure: MeasureConfig,
    pub protocol: ProtocolSpec,
}

impl EvalManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: EvalManifest = serde_json::from_str(text).map_err(|e| Error::Format {
            offset: 0,
            detail: format!("manifest line {} column {}: {e}", e.line(), e.column()),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for m in &self.models {
            if !ids.insert(m.model_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate model id '{}'",
                    m.model_id
                )));
            }
        }
        self.measure.validate()?;
        if let Some(idx) = &self.measure.layer_indices {
            if idx.len() > MAX_FUSION_DEPTH {
                return Err(Error::FusionDepthExceeded(idx.len()));
            }
            for m in &self.models {
                if let Some(missing) = idx.iter().find(|i| !m.layers.contains_key(i)) {
                    return Err(Error::Ingestion {
                        model: m.model_id.clone(),
                        layer: missing.to_string(),
                        detail: "layer index not listed in manifest".into(),
                    });
                }
            }
        }
        self.protocol.resi_target()?;
        Ok(())
    }

    /// Loads every model, resolving relative paths against `base`. Only the
    /// layers named in `layer_indices` are read when that field is present.
    pub fn load_models(&self, base: &Path) -> Result<Vec<ModelRecord>> {
        let wanted: Option<BTreeSet<usize>> = self
            .measure
            .layer_indices
            .as_ref()
            .map(|v| v.iter().copied().collect());
        self.models
            .iter()
            .map(|entry| load_model(entry, base, wanted.as_ref()))
            .collect()
    }

    pub fn run(&self, base: &Path) -> Result<EvalReport> {
        let models = self.load_models(base)?;
        match self.protocol.resi_target()? {
            Some(target) => run_resi_test(&models, &self.measure, target),
            None => run_grs_bench4(&models, &self.measure),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_model(
    entry: &ModelEntry,
    base: &Path,
    wanted: Option<&BTreeSet<usize>>,
) -> Result<ModelRecord> {
    let ingest = |layer: &str, e: Error| Error::Ingestion {
        model: entry.model_id.clone(),
        layer: layer.to_string(),
        detail: e.to_string(),
    };
    let mut layers = BTreeMap::new();
    for (&idx, path) in &entry.layers {
        if wanted.is_some_and(|w| !w.contains(&idx)) {
            continue;
        }
        let rep = read_matrix(&resolve(base, path)).map_err(|e| ingest(&idx.to_string(), e))?;
        layers.insert(idx, rep);
    }
    let outputs = read_array(&resolve(base, &entry.outputs)).map_err(|e| ingest("outputs", e))?;
    let raw_labels = read_array(&resolve(base, &entry.labels)).map_err(|e| ingest("labels", e))?;
    let labels = raw_labels
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(ingest(
                    "labels",
                    Error::Validation(format!("label {v} is not a class index")),
                ))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(
        ModelRecord::new(entry.model_id.clone(), layers, outputs, labels)
            .map_err(|e| ingest("outputs", e))?
            .with_accuracy(entry.accuracy)
            .with_ood_accuracy(entry.ood_accuracy),
    )
}

pub fn read_manifest(path: &Path) -> Result<EvalManifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    EvalManifest::from_json(&text)
}

/// Pretty-printed JSON with a trailing newline; byte-identical for identical
/// reports.
pub fn report_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report is serializable");
    s.push('\n');
    s
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    write_atomic(path, report_json(report).as_bytes())
}
