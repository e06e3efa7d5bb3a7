//! Data ingestion, synthetic ground truths, label oracles and run records.
//!
//! # Embedding files
//!
//! Text form (UTF-8, `.` decimal separator, exponent notation allowed):
//!
//! ```text
//! p=<int> n=<int>
//! <id>,<v1>,...,<vp>
//! ```
//!
//! Binary form, little-endian throughout:
//!
//! ```text
//! magic  b"TDEMB\x01\0\0"   8 bytes
//! p      u64
//! n      u64
//! n × ( id: u64, p × f64 )
//! ```
//!
//! Softmax tables and label files use the same text container (labels with
//! `p=1`).
//!
//! # Run records
//!
//! One JSON object per line. The first line is the header
//! `{"kind":"header","version":"v1","config":{...}}`; every following line is
//! `{"kind":"round","round":n,...}` with strictly increasing `round`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram, KernelMatrix, KernelSpec, NoiseModel, Point};
use crate::linalg::cholesky_jittered;
use crate::selection::SoftmaxTable;

pub const RUN_FORMAT_VERSION: &str = "v1";
const BINARY_MAGIC: &[u8; 8] = b"TDEMB\x01\0\0";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Rows of a delimited matrix file: ids and `p` values per row.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub dim: usize,
    pub ids: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
}

fn parse_header(path: &Path, header: &str) -> Result<(usize, usize)> {
    let mut p = None;
    let mut n = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(path, 1, format!("malformed header field `{field}`")))?;
        let value: usize = value
            .parse()
            .map_err(|_| parse_err(path, 1, format!("header `{key}` is not an integer")))?;
        match key {
            "p" => p = Some(value),
            "n" => n = Some(value),
            _ => return Err(parse_err(path, 1, format!("unknown header field `{key}`"))),
        }
    }
    match (p, n) {
        (Some(p), Some(n)) if p > 0 => Ok((p, n)),
        (Some(0), _) => Err(parse_err(path, 1, "dimension p must be positive")),
        _ => Err(parse_err(path, 1, "header must be `p=<int> n=<int>`")),
    }
}

/// Parses the text container.
pub fn parse_matrix_text(path: &Path, text: &str) -> Result<MatrixFile> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let (dim, count) = parse_header(path, header.trim())?;
    let mut ids = Vec::with_capacity(count);
    let mut rows = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id_text = fields.next().unwrap_or("").trim();
        let id: usize = id_text
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad id `{id_text}`")))?;
        if !seen.insert(id) {
            return Err(parse_err(path, lineno, format!("duplicate id {id}")));
        }
        let values = fields
            .map(|f| {
                let f = f.trim();
                let v: f64 = f
                    .parse()
                    .map_err(|_| parse_err(path, lineno, format!("bad number `{f}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(path, lineno, format!("non-finite value `{f}`")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(parse_err(
                path,
                lineno,
                format!("row has {} values, expected {dim}", values.len()),
            ));
        }
        ids.push(id);
        rows.push(values);
    }
    if rows.len() != count {
        return Err(parse_err(
            path,
            1,
            format!("header declares n={count} but file has {} rows", rows.len()),
        ));
    }
    Ok(MatrixFile { dim, ids, rows })
}

pub fn format_matrix_text(file: &MatrixFile) -> String {
    let mut out = format!("p={} n={}\n", file.dim, file.rows.len());
    for (id, row) in file.ids.iter().zip(&file.rows) {
        out.push_str(&id.to_string());
        for v in row {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    out
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => parse_err(path, 0, "file is not valid UTF-8"),
        _ => Error::Io(e),
    })
}

fn points_from(file: MatrixFile) -> Vec<Point> {
    file.ids
        .into_iter()
        .zip(file.rows)
        .map(|(id, row)| Point::with_embedding(id, row))
        .collect()
}

fn matrix_from_points(points: &[Point]) -> Result<MatrixFile> {
    let dim = points
        .first()
        .and_then(|p| p.embedding.as_ref())
        .map_or(0, Vec::len);
    if dim == 0 {
        return Err(Error::input("points carry no embeddings"));
    }
    let mut rows = Vec::with_capacity(points.len());
    for p in points {
        match &p.embedding {
            Some(e) if e.len() == dim => rows.push(e.clone()),
            _ => {
                return Err(Error::input(format!(
                    "point {} has no embedding of dimension {dim}",
                    p.index
                )))
            }
        }
    }
    Ok(MatrixFile {
        dim,
        ids: points.iter().map(|p| p.index).collect(),
        rows,
    })
}

/// Loads an embedding file, text or binary (detected by the magic bytes).
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<Point>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        return Ok(points_from(parse_matrix_binary(path, &bytes)?));
    }
    let text = String::from_utf8(bytes).map_err(|_| parse_err(path, 0, "file is not valid UTF-8"))?;
    Ok(points_from(parse_matrix_text(path, &text)?))
}

pub fn write_embeddings(points: &[Point], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), format_matrix_text(&matrix_from_points(points)?).as_bytes())
}

pub fn write_embeddings_binary(points: &[Point], path: impl AsRef<Path>) -> Result<()> {
    let file = matrix_from_points(points)?;
    let mut out = Vec::with_capacity(24 + file.rows.len() * (8 + 8 * file.dim));
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(file.dim as u64).to_le_bytes());
    out.extend_from_slice(&(file.rows.len() as u64).to_le_bytes());
    for (id, row) in file.ids.iter().zip(&file.rows) {
        out.extend_from_slice(&(*id as u64).to_le_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path.as_ref(), &out)
}

fn parse_matrix_binary(path: &Path, bytes: &[u8]) -> Result<MatrixFile> {
    let word = |offset: usize| -> Option<[u8; 8]> {
        bytes.get(offset..offset + 8).map(|s| s.try_into().expect("8 bytes"))
    };
    let truncated = |row: usize| parse_err(path, row, "truncated binary file");
    let dim = u64::from_le_bytes(word(8).ok_or_else(|| truncated(0))?) as usize;
    let count = u64::from_le_bytes(word(16).ok_or_else(|| truncated(0))?) as usize;
    if dim == 0 {
        return Err(parse_err(path, 0, "dimension p must be positive"));
    }
    let row_len = 8 * (dim + 1);
    if bytes.len() != 24 + count * row_len {
        return Err(parse_err(
            path,
            0,
            format!("expected {} bytes for n={count} p={dim}, found {}", 24 + count * row_len, bytes.len()),
        ));
    }
    let mut ids = Vec::with_capacity(count);
    let mut rows = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    for r in 0..count {
        let base = 24 + r * row_len;
        let id = u64::from_le_bytes(word(base).ok_or_else(|| truncated(r + 1))?) as usize;
        if !seen.insert(id) {
            return Err(parse_err(path, r + 1, format!("duplicate id {id}")));
        }
        let row = (0..dim)
            .map(|j| {
                let v = f64::from_le_bytes(word(base + 8 * (j + 1)).ok_or_else(|| truncated(r + 1))?);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(path, r + 1, "non-finite value"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(id);
        rows.push(row);
    }
    Ok(MatrixFile { dim, ids, rows })
}

/// Loads a softmax table; rows must be non-negative and sum to one.
pub fn load_softmax(path: impl AsRef<Path>) -> Result<(Vec<usize>, SoftmaxTable)> {
    let path = path.as_ref();
    let file = parse_matrix_text(path, &read_text(path)?)?;
    for (i, row) in file.rows.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(parse_err(
                path,
                i + 2,
                format!("softmax row for id {} is not a distribution (sum {sum})", file.ids[i]),
            ));
        }
    }
    Ok((file.ids, SoftmaxTable::new(file.rows)?))
}

/// Loads recorded labels (`p=1`) keyed by id.
pub fn load_labels(path: impl AsRef<Path>) -> Result<HashMap<usize, f64>> {
    let path = path.as_ref();
    let file = parse_matrix_text(path, &read_text(path)?)?;
    if file.dim != 1 {
        return Err(parse_err(path, 1, "label files must have p=1"));
    }
    Ok(file.ids.into_iter().zip(file.rows.into_iter().map(|r| r[0])).collect())
}

/// A function drawn from the zero-mean GP prior over a finite grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub kernel: KernelSpec,
    pub points: Vec<Point>,
    pub values: Vec<f64>,
    pub seed: u64,
}

/// Samples `f* = L z` with `L` the jittered Cholesky factor of the Gram.
pub fn sample_gp_truth(spec: &KernelSpec, points: &[Point], seed: u64) -> Result<SyntheticTruth> {
    let k = gram(spec, points)?;
    Ok(SyntheticTruth {
        kernel: spec.clone(),
        points: points.to_vec(),
        values: sample_gp_values(&k, seed)?,
        seed,
    })
}

pub fn sample_gp_values(kernel: &KernelMatrix, seed: u64) -> Result<Vec<f64>> {
    let n = kernel.len();
    if n == 0 {
        return Err(Error::input("cannot sample over an empty grid"));
    }
    if kernel.max_diagonal() == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let chol = cholesky_jittered(&kernel.entries)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
    let f = chol.l() * z;
    Ok(f.iter().copied().collect())
}

/// Source of noisy labels for selected domain indices.
pub trait LabelOracle {
    fn label(&mut self, index: usize) -> Result<f64>;
}

/// `y = f*(x) + ε` with fresh seeded Gaussian noise on every query.
#[derive(Debug, Clone)]
pub struct LabeledOracle {
    values: Vec<f64>,
    noise: NoiseModel,
    rng: ChaCha8Rng,
}

impl LabeledOracle {
    pub fn new(values: Vec<f64>, noise: NoiseModel, seed: u64) -> Self {
        LabeledOracle {
            values,
            noise,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn truth(&self) -> &[f64] {
        &self.values
    }
}

impl LabelOracle for LabeledOracle {
    fn label(&mut self, index: usize) -> Result<f64> {
        let f = *self
            .values
            .get(index)
            .ok_or_else(|| Error::Data(format!("no ground truth for index {index}")))?;
        let z: f64 = StandardNormal.sample(&mut self.rng);
        Ok(f + self.noise.variance(index).sqrt() * z)
    }
}

/// Replays recorded labels; querying an unlabeled index is a data error.
#[derive(Debug, Clone, Default)]
pub struct RecordedOracle {
    labels: HashMap<usize, f64>,
}

impl RecordedOracle {
    pub fn new(labels: HashMap<usize, f64>) -> Self {
        RecordedOracle { labels }
    }
}

impl LabelOracle for RecordedOracle {
    fn label(&mut self, index: usize) -> Result<f64> {
        self.labels
            .get(&index)
            .copied()
            .ok_or_else(|| Error::Data(format!("no recorded label for index {index}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub round: usize,
    pub chosen: Vec<usize>,
    pub objectives: Vec<f64>,
    pub mean_variance: f64,
    pub max_variance: f64,
    /// Whether each chosen point lies in the relevant subset.
    pub retrieved: Vec<bool>,
    /// Distinct relevant points selected so far.
    pub retrieval_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub version: String,
    pub config: serde_json::Value,
    pub rounds: Vec<RoundEntry>,
}

impl RunRecord {
    pub fn new(config: serde_json::Value) -> Self {
        RunRecord {
            version: RUN_FORMAT_VERSION.to_string(),
            config,
            rounds: Vec::new(),
        }
    }

    /// Appends a round; rounds must be strictly increasing.
    pub fn push(&mut self, entry: RoundEntry) -> Result<()> {
        if let Some(last) = self.rounds.last() {
            if entry.round <= last.round {
                return Err(Error::Data(format!(
                    "round {} does not follow round {}",
                    entry.round, last.round
                )));
            }
        }
        self.rounds.push(entry);
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&RecordLine::Header {
            version: self.version.clone(),
            config: self.config.clone(),
        })
        .map_err(|e| Error::Data(e.to_string()))?;
        out.push('\n');
        for r in &self.rounds {
            out.push_str(
                &serde_json::to_string(&RecordLine::Round(r.clone()))
                    .map_err(|e| Error::Data(e.to_string()))?,
            );
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(path: &Path, text: &str) -> Result<Self> {
        let mut record: Option<RunRecord> = None;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(line)
                .map_err(|e| parse_err(path, lineno, e.to_string()))?;
            match (parsed, record.as_mut()) {
                (RecordLine::Header { version, config }, None) => {
                    if version != RUN_FORMAT_VERSION {
                        return Err(Error::Version {
                            found: version,
                            expected: RUN_FORMAT_VERSION.to_string(),
                        });
                    }
                    record = Some(RunRecord {
                        version,
                        config,
                        rounds: Vec::new(),
                    });
                }
                (RecordLine::Header { .. }, Some(_)) => {
                    return Err(parse_err(path, lineno, "duplicate header"));
                }
                (RecordLine::Round(_), None) => {
                    return Err(parse_err(path, lineno, "round before header"));
                }
                (RecordLine::Round(entry), Some(rec)) => {
                    rec.push(entry).map_err(|e| parse_err(path, lineno, e.to_string()))?;
                }
            }
        }
        record.ok_or_else(|| parse_err(path, 1, "missing header"))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RecordLine {
    Header {
        version: String,
        config: serde_json::Value,
    },
    Round(RoundEntry),
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = {
        let mut name = path
            .file_name()
            .ok_or_else(|| Error::input(format!("not a file path: {}", path.display())))?
            .to_os_string();
        name.push(".tmp");
        path.with_file_name(name)
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn persist_run(record: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), record.to_jsonl()?.as_bytes())
}

pub fn load_run(path: impl AsRef<Path>) -> Result<RunRecord> {
    let path = path.as_ref();
    RunRecord::from_jsonl(path, &read_text(path)?)
}
