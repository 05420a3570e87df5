//! Score data ingestion.
//!
//! A dataset is a TOML manifest naming the verifiers (column order) plus a
//! JSON-lines record file, one line per (query, response) pair. Records are
//! grouped into per-query [`ScoreBlock`]s; missing scores are imputed as 0 on
//! the raw scale and every column is min-max rescaled into `[-1, 1]`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use flate2::read::MultiGzDecoder;
use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierKind {
    Binary,
    Discrete,
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierSpec {
    pub id: String,
    pub kind: VerifierKind,
    pub range: [f64; 2],
}

/// Ordered verifier set. The order of `verifiers` is the column order of every
/// score matrix derived from this manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset_id: String,
    pub verifiers: Vec<VerifierSpec>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.verifiers.is_empty() {
            return Err(FuseError::Manifest("no verifiers declared".into()));
        }
        let mut seen = HashSet::new();
        for v in &self.verifiers {
            if !seen.insert(v.id.as_str()) {
                return Err(FuseError::Manifest(format!("duplicate verifier id \"{}\"", v.id)));
            }
            let [lo, hi] = v.range;
            if !(lo < hi) {
                return Err(FuseError::Manifest(format!(
                    "verifier \"{}\" has empty range [{lo}, {hi}]",
                    v.id
                )));
            }
        }
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.verifiers.len()
    }

    pub fn column_of(&self, verifier_id: &str) -> Option<usize> {
        self.verifiers.iter().position(|v| v.id == verifier_id)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let manifest: Manifest =
            toml::from_str(text).map_err(|e| FuseError::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FuseError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Manifest of `m` real-valued verifiers `v1..vm` on `[-1, 1]`.
    pub fn uniform(dataset_id: &str, m: usize, kind: VerifierKind) -> Self {
        Manifest {
            dataset_id: dataset_id.to_string(),
            verifiers: (1..=m)
                .map(|j| VerifierSpec {
                    id: format!("v{j}"),
                    kind,
                    range: [-1.0, 1.0],
                })
                .collect(),
        }
    }
}

/// One line of the record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub query_id: String,
    pub response_id: String,
    pub scores: BTreeMap<String, Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<i8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_key: Option<String>,
}

/// Scores for the `N` responses to a single query.
#[derive(Debug, Clone)]
pub struct ScoreBlock {
    pub manifest: Arc<Manifest>,
    pub query_id: String,
    pub response_ids: Vec<String>,
    /// Raw scores after imputation.
    pub raw_scores: Array2<f64>,
    /// True where the raw score was absent and has been imputed.
    pub missing: Array2<bool>,
    /// Per-column min-max rescaling of `raw_scores` into `[-1, 1]`.
    pub norm_scores: Array2<f64>,
    pub labels: Option<Vec<i8>>,
    pub answer_keys: Option<Vec<String>>,
}

impl ScoreBlock {
    /// Builds a block from raw scores with gaps (`None`), imputing and
    /// normalizing within the block.
    pub fn from_raw(
        manifest: Arc<Manifest>,
        query_id: impl Into<String>,
        response_ids: Vec<String>,
        raw: &Array2<Option<f64>>,
        labels: Option<Vec<i8>>,
        answer_keys: Option<Vec<String>>,
    ) -> Result<Self> {
        let query_id = query_id.into();
        let (n, m) = raw.dim();
        if n < 2 {
            return Err(FuseError::TooFewResponses {
                query_ids: vec![query_id],
            });
        }
        if m != manifest.m() {
            return Err(FuseError::Shape(format!(
                "block {query_id} has {m} columns, manifest declares {}",
                manifest.m()
            )));
        }
        if response_ids.len() != n {
            return Err(FuseError::Shape(format!(
                "block {query_id}: {} response ids for {n} rows",
                response_ids.len()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(FuseError::Shape(format!("block {query_id}: label count != {n}")));
            }
            if labels.iter().any(|&y| y != 1 && y != -1) {
                return Err(FuseError::Domain(format!("block {query_id}: labels must be +1 or -1")));
            }
        }
        if let Some(keys) = &answer_keys {
            if keys.len() != n {
                return Err(FuseError::Shape(format!("block {query_id}: answer key count != {n}")));
            }
        }
        let missing = raw.mapv(|v| v.is_none());
        let raw_scores = impute_missing(raw);
        let norm_scores = normalize_block(raw_scores.view());
        Ok(ScoreBlock {
            manifest,
            query_id,
            response_ids,
            raw_scores,
            missing,
            norm_scores,
            labels,
            answer_keys,
        })
    }

    pub fn n(&self) -> usize {
        self.raw_scores.nrows()
    }

    pub fn m(&self) -> usize {
        self.raw_scores.ncols()
    }

    /// Columns whose raw scores are constant within the block. These carry no
    /// ranking signal and are excluded from estimation for this block.
    pub fn constant_columns(&self) -> Vec<bool> {
        self.raw_scores
            .axis_iter(Axis(1))
            .map(|col| {
                let first = col[0];
                col.iter().all(|&x| x == first)
            })
            .collect()
    }

    pub fn correct_count(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|l| l.iter().filter(|&&y| y == 1).count())
    }
}

/// Replaces every gap with a raw score of 0.
pub fn impute_missing(raw: &Array2<Option<f64>>) -> Array2<f64> {
    raw.mapv(|v| v.unwrap_or(0.0))
}

/// Min-max rescales each column to `[-1, 1]`; constant columns map to 0.
pub fn normalize_block(raw: ArrayView2<f64>) -> Array2<f64> {
    let bounds = column_bounds(raw);
    normalize_with_bounds(raw, &bounds)
}

pub(crate) fn column_bounds(raw: ArrayView2<f64>) -> Vec<(f64, f64)> {
    raw.axis_iter(Axis(1))
        .map(|col| {
            col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
        })
        .collect()
}

pub(crate) fn normalize_with_bounds(raw: ArrayView2<f64>, bounds: &[(f64, f64)]) -> Array2<f64> {
    let mut out = Array2::zeros(raw.dim());
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        let span = hi - lo;
        if !(span > 0.0) {
            continue;
        }
        for (dst, &x) in out.column_mut(j).iter_mut().zip(raw.column(j)) {
            // clamp guards against rounding just past the endpoints
            *dst = (2.0 * (x - lo) / span - 1.0).clamp(-1.0, 1.0);
        }
    }
    out
}

/// Where a row of the concatenated matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowRef {
    pub block: usize,
    pub row: usize,
}

/// Blocks sharing one manifest, plus their vertical concatenation.
#[derive(Debug, Clone)]
pub struct Batch {
    pub manifest: Arc<Manifest>,
    pub blocks: Vec<ScoreBlock>,
    pub concat_view: Array2<f64>,
    pub row_refs: Vec<RowRef>,
    offsets: Vec<usize>,
}

impl Batch {
    pub fn m(&self) -> usize {
        self.manifest.m()
    }

    pub fn total_rows(&self) -> usize {
        self.concat_view.nrows()
    }

    /// Row range of block `b` inside `concat_view`.
    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    /// Splits a matrix aligned with `concat_view` back into per-block pieces.
    pub fn split_rows(&self, stacked: ArrayView2<f64>) -> Vec<Array2<f64>> {
        (0..self.blocks.len())
            .map(|b| stacked.slice(s![self.block_range(b), ..]).to_owned())
            .collect()
    }

    pub fn find_block(&self, query_id: &str) -> Option<&ScoreBlock> {
        self.blocks.iter().find(|b| b.query_id == query_id)
    }

    pub fn has_labels(&self) -> bool {
        self.blocks.iter().all(|b| b.labels.is_some())
    }

    /// Re-normalizes every block with per-column bounds taken over the whole
    /// batch instead of each block.
    pub fn renormalize_global(&mut self) {
        let bounds: Vec<(f64, f64)> = (0..self.m())
            .map(|j| {
                self.blocks.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| {
                    b.raw_scores
                        .column(j)
                        .iter()
                        .fold((lo, hi), |(lo, hi), &x| (lo.min(x), hi.max(x)))
                })
            })
            .collect();
        for block in &mut self.blocks {
            block.norm_scores = normalize_with_bounds(block.raw_scores.view(), &bounds);
        }
        self.concat_view = stack_norm(&self.blocks, self.m());
    }
}

fn stack_norm(blocks: &[ScoreBlock], m: usize) -> Array2<f64> {
    let total: usize = blocks.iter().map(|b| b.n()).sum();
    let mut out = Array2::zeros((total, m));
    let mut at = 0;
    for block in blocks {
        out.slice_mut(s![at..at + block.n(), ..]).assign(&block.norm_scores);
        at += block.n();
    }
    out
}

/// Stacks blocks in the given order.
pub fn concat_batch(blocks: Vec<ScoreBlock>) -> Result<Batch> {
    let first = blocks
        .first()
        .ok_or_else(|| FuseError::Shape("cannot build a batch from zero blocks".into()))?;
    let manifest = Arc::clone(&first.manifest);
    for block in &blocks {
        if block.m() != manifest.m() {
            return Err(FuseError::Shape(format!(
                "block {} has {} columns, expected {}",
                block.query_id,
                block.m(),
                manifest.m()
            )));
        }
        if !Arc::ptr_eq(&block.manifest, &manifest) && *block.manifest != *manifest {
            return Err(FuseError::Shape(format!(
                "block {} was built from a different manifest",
                block.query_id
            )));
        }
    }
    let mut offsets = Vec::with_capacity(blocks.len() + 1);
    let mut row_refs = Vec::new();
    offsets.push(0);
    for (b, block) in blocks.iter().enumerate() {
        row_refs.extend((0..block.n()).map(|row| RowRef { block: b, row }));
        offsets.push(offsets[b] + block.n());
    }
    let concat_view = stack_norm(&blocks, manifest.m());
    Ok(Batch {
        manifest,
        blocks,
        concat_view,
        row_refs,
        offsets,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    PerBlock,
    Global,
}

fn open_records(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| FuseError::io(path, e))?;
    let mut magic = [0u8; 2];
    let got = file.read(&mut magic).map_err(|e| FuseError::io(path, e))?;
    let file = File::open(path).map_err(|e| FuseError::io(path, e))?;
    if got == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Parses records from a reader. Blank lines are skipped.
pub fn parse_records(reader: impl BufRead, manifest: &Manifest) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| FuseError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| FuseError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if let Some(unknown) = record.scores.keys().find(|k| manifest.column_of(k).is_none()) {
            return Err(FuseError::UnknownVerifier {
                line: line_no,
                verifier: unknown.clone(),
            });
        }
        if let Some(y) = record.label {
            if y != 1 && y != -1 {
                return Err(FuseError::Parse {
                    line: line_no,
                    message: format!("label must be 1 or -1, got {y}"),
                });
            }
        }
        out.push(record);
    }
    Ok(out)
}

/// Groups records into blocks (sorted by query id, rows by response id).
pub fn build_batch(manifest: Manifest, records: Vec<Record>, scope: NormScope) -> Result<Batch> {
    manifest.validate()?;
    let manifest = Arc::new(manifest);
    let m = manifest.m();
    let mut grouped: BTreeMap<String, BTreeMap<String, Record>> = BTreeMap::new();
    for record in records {
        let rows = grouped.entry(record.query_id.clone()).or_default();
        if rows.contains_key(&record.response_id) {
            return Err(FuseError::Duplicate {
                query_id: record.query_id,
                response_id: record.response_id,
            });
        }
        rows.insert(record.response_id.clone(), record);
    }

    let short: Vec<String> = grouped
        .iter()
        .filter(|(_, rows)| rows.len() < 2)
        .map(|(q, _)| q.clone())
        .collect();
    if !short.is_empty() {
        return Err(FuseError::TooFewResponses { query_ids: short });
    }

    let mut blocks = Vec::with_capacity(grouped.len());
    for (query_id, rows) in grouped {
        let n = rows.len();
        let mut raw = Array2::from_elem((n, m), None);
        let mut labels = Vec::with_capacity(n);
        let mut keys = Vec::with_capacity(n);
        let mut response_ids = Vec::with_capacity(n);
        for (i, (response_id, record)) in rows.into_iter().enumerate() {
            for (verifier, value) in &record.scores {
                let j = manifest.column_of(verifier).expect("checked at parse time");
                raw[[i, j]] = *value;
            }
            labels.push(record.label);
            keys.push(record.answer_key);
            response_ids.push(response_id);
        }
        let labels = collect_all(&query_id, "label", labels)?;
        let keys = collect_all(&query_id, "answer_key", keys)?;
        blocks.push(ScoreBlock::from_raw(
            Arc::clone(&manifest),
            query_id,
            response_ids,
            &raw,
            labels,
            keys,
        )?);
    }
    let mut batch = concat_batch(blocks)?;
    if scope == NormScope::Global {
        batch.renormalize_global();
    }
    Ok(batch)
}

// A field is kept only if every row of the block carries it.
fn collect_all<T>(query_id: &str, field: &str, values: Vec<Option<T>>) -> Result<Option<Vec<T>>> {
    let present = values.iter().filter(|v| v.is_some()).count();
    if present == 0 {
        Ok(None)
    } else if present == values.len() {
        Ok(Some(values.into_iter().map(|v| v.unwrap()).collect()))
    } else {
        Err(FuseError::Parse {
            line: 0,
            message: format!("query {query_id}: {field} present on only {present} of {} rows", values.len()),
        })
    }
}

/// Reads a manifest and a (possibly gzip-compressed) record file.
pub fn load_dataset(manifest_path: &Path, records_path: &Path, scope: NormScope) -> Result<Batch> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.m() < 3 {
        return Err(FuseError::Manifest(format!(
            "at least 3 verifiers required, manifest declares {}",
            manifest.m()
        )));
    }
    let records = parse_records(open_records(records_path)?, &manifest)?;
    build_batch(manifest, records, scope)
}

/// Writes the manifest and records for a batch. Raw scores are written as-is;
/// imputed cells are written as `null`.
pub fn write_dataset(batch: &Batch, manifest_path: &Path, records_path: &Path) -> Result<()> {
    use std::io::Write;
    std::fs::write(manifest_path, batch.manifest.to_toml_string())
        .map_err(|e| FuseError::io(manifest_path, e))?;
    let file = File::create(records_path).map_err(|e| FuseError::io(records_path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for block in &batch.blocks {
        for i in 0..block.n() {
            let scores = batch
                .manifest
                .verifiers
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let value = (!block.missing[[i, j]]).then(|| block.raw_scores[[i, j]]);
                    (v.id.clone(), value)
                })
                .collect();
            let record = Record {
                query_id: block.query_id.clone(),
                response_id: block.response_ids[i].clone(),
                scores,
                label: block.labels.as_ref().map(|l| l[i]),
                answer_key: block.answer_keys.as_ref().map(|k| k[i].clone()),
            };
            serde_json::to_writer(&mut out, &record).expect("record serializes");
            out.write_all(b"\n").map_err(|e| FuseError::io(records_path, e))?;
        }
    }
    out.flush().map_err(|e| FuseError::io(records_path, e))
}
