//! In-memory sample types and their on-disk formats.
//!
//! Two matrix formats are supported:
//!
//! * CSV with a mandatory header, `label,f0,...,f{d-1}` or `f0,...` when the
//!   file carries no labels. Comma separated, `.` decimal point.
//! * `TFMX`, a little-endian binary layout: magic `TFMX`, `u32` version (1),
//!   `u64` rows, `u64` cols, then `rows * cols` `f64` values in row-major order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TflowError};

pub const TFMX_MAGIC: &[u8; 4] = b"TFMX";
pub const TFMX_VERSION: u32 = 1;
const TFMX_HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// Absolute tolerance on probability row sums.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Dense row-major `m x d` matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 {
            return Err(TflowError::EmptyFile);
        }
        if cols == 0 {
            return Err(TflowError::InvalidConfig("matrix has zero columns".into()));
        }
        if data.len() != rows * cols {
            return Err(TflowError::LengthMismatch(data.len(), rows * cols));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(TflowError::NonFiniteValue {
                row: pos / cols,
                column: pos % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(TflowError::DimensionMismatch {
                    left: cols,
                    right: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.iter_rows().map(|r| r.to_vec()).collect()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Copies the given rows, in order, into a new matrix. Indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(TflowError::IndexOutOfRange {
                    index: i,
                    len: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.cols, data)
    }

    /// Scales every non-zero row to unit Euclidean norm.
    pub fn l2_normalized(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.cols) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }
}

impl AsRef<EmbeddingMatrix> for EmbeddingMatrix {
    fn as_ref(&self) -> &EmbeddingMatrix {
        self
    }
}

/// Integer class ids, contiguous from 0, every id populated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<usize>,
    class_count: usize,
}

impl LabelVector {
    /// Accepts ids that are already contiguous and fully populated.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(TflowError::EmptyFile);
        }
        let class_count = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; class_count];
        labels.iter().for_each(|&l| seen[l] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(TflowError::InvalidConfig(format!(
                "label id {missing} has no members; ids must be contiguous"
            )));
        }
        Ok(Self {
            labels,
            class_count,
        })
    }

    /// Re-indexes arbitrary ids to `0..n` preserving their numeric order.
    pub fn compact(ids: &[usize]) -> Result<Self> {
        let mut map = BTreeMap::new();
        ids.iter().for_each(|&id| {
            map.insert(id, 0usize);
        });
        for (next, v) in map.values_mut().enumerate() {
            *v = next;
        }
        Self::new(ids.iter().map(|id| map[id]).collect())
    }

    /// Re-indexes string labels. Names sort numerically when all of them are
    /// integers, lexicographically otherwise. Returns the id → name table.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<(Self, Vec<String>)> {
        let mut unique: Vec<&str> = names.iter().map(|s| s.as_ref()).collect();
        unique.sort_unstable();
        unique.dedup();
        let numeric: Option<Vec<i64>> = unique.iter().map(|s| s.trim().parse().ok()).collect();
        if let Some(nums) = numeric {
            let mut pairs: Vec<(i64, &str)> = nums.into_iter().zip(unique).collect();
            pairs.sort();
            unique = pairs.into_iter().map(|(_, s)| s).collect();
        }
        let index: BTreeMap<&str, usize> = unique.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        let labels = names.iter().map(|s| index[s.as_ref()]).collect();
        let table = unique.into_iter().map(str::to_owned).collect();
        Ok((Self::new(labels)?, table))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        counts
    }

    /// Row indices of each class, ascending.
    pub fn index_sets(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            sets[l].push(i);
        }
        sets
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub embeddings: EmbeddingMatrix,
    pub labels: LabelVector,
    /// Original label name of each class id.
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        embeddings: EmbeddingMatrix,
        labels: LabelVector,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if embeddings.rows() != labels.len() {
            return Err(TflowError::LengthMismatch(embeddings.rows(), labels.len()));
        }
        if class_names.len() != labels.class_count() {
            return Err(TflowError::LengthMismatch(
                class_names.len(),
                labels.class_count(),
            ));
        }
        Ok(Self {
            embeddings,
            labels,
            class_names,
        })
    }

    /// Dataset whose class names are the decimal ids.
    pub fn with_numeric_names(embeddings: EmbeddingMatrix, labels: LabelVector) -> Result<Self> {
        let names = (0..labels.class_count()).map(|c| c.to_string()).collect();
        Self::new(embeddings, labels, names)
    }
}

/// Matrix whose rows are probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix(EmbeddingMatrix);

impl ProbabilityMatrix {
    pub fn into_inner(self) -> EmbeddingMatrix {
        self.0
    }
}

impl Deref for ProbabilityMatrix {
    type Target = EmbeddingMatrix;
    fn deref(&self) -> &EmbeddingMatrix {
        &self.0
    }
}

impl AsRef<EmbeddingMatrix> for ProbabilityMatrix {
    fn as_ref(&self) -> &EmbeddingMatrix {
        &self.0
    }
}

/// Index and sum of the first row that is not a probability vector.
pub(crate) fn first_non_simplex_row(matrix: &EmbeddingMatrix, tol: f64) -> Option<(usize, f64)> {
    matrix.iter_rows().enumerate().find_map(|(i, row)| {
        let sum: f64 = row.iter().sum();
        let in_range = row.iter().all(|v| (0.0..=1.0).contains(v));
        (!in_range || (sum - 1.0).abs() > tol).then_some((i, sum))
    })
}

pub fn validate_probability_matrix(matrix: EmbeddingMatrix) -> Result<ProbabilityMatrix> {
    match first_non_simplex_row(&matrix, SIMPLEX_TOL) {
        Some((row, sum)) => Err(TflowError::NotASimplexRow { row, sum }),
        None => Ok(ProbabilityMatrix(matrix)),
    }
}

/// Result of reading a CSV file.
#[derive(Debug, Clone, PartialEq)]
pub enum CsvContent {
    Labeled(LabeledDataset),
    Unlabeled(EmbeddingMatrix),
}

impl CsvContent {
    pub fn embeddings(&self) -> &EmbeddingMatrix {
        match self {
            CsvContent::Labeled(ds) => &ds.embeddings,
            CsvContent::Unlabeled(m) => m,
        }
    }
}

/// Which column, if any, carries labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    None,
    /// The column named `label`, or the first column when no such header exists.
    Default,
    Named(String),
}

pub fn load_csv(path: impl AsRef<Path>, has_labels: bool) -> Result<CsvContent> {
    let column = if has_labels {
        LabelColumn::Default
    } else {
        LabelColumn::None
    };
    read_csv(File::open(path)?, &column)
}

pub fn read_csv<R: Read>(reader: R, label_column: &LabelColumn) -> Result<CsvContent> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let width = header.len();
    let label_idx = match label_column {
        LabelColumn::None => None,
        LabelColumn::Default => Some(header.iter().position(|h| h == "label").unwrap_or(0)),
        LabelColumn::Named(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| {
            TflowError::InvalidConfig(format!("no column named {name:?} in header"))
        })?),
    };
    let cols = width - usize::from(label_idx.is_some());
    if cols == 0 {
        return Err(TflowError::InvalidConfig("no feature columns in header".into()));
    }

    let mut data = Vec::new();
    let mut names = Vec::new();
    let mut rows = 0usize;
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != width {
            return Err(TflowError::MalformedRow {
                line,
                expected: width,
                found: record.len(),
            });
        }
        let mut column = 0;
        for (j, field) in record.iter().enumerate() {
            if Some(j) == label_idx {
                names.push(field.to_owned());
                continue;
            }
            let value: f64 = field.parse().map_err(|_| TflowError::ParseValue {
                line,
                column: j,
                detail: format!("cannot parse {field:?} as a number"),
            })?;
            if !value.is_finite() {
                return Err(TflowError::NonFiniteValue { row: rows, column });
            }
            data.push(value);
            column += 1;
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(TflowError::EmptyFile);
    }
    let matrix = EmbeddingMatrix::new(rows, cols, data)?;
    if label_idx.is_none() {
        return Ok(CsvContent::Unlabeled(matrix));
    }
    let (labels, class_names) = LabelVector::from_names(&names)?;
    Ok(CsvContent::Labeled(LabeledDataset::new(
        matrix,
        labels,
        class_names,
    )?))
}

fn csv_err(e: csv::Error) -> TflowError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => TflowError::Io(io),
        other => TflowError::ParseValue {
            line: 0,
            column: 0,
            detail: format!("{other:?}"),
        },
    }
}

/// Reads a label file: a CSV with header whose last column holds the labels
/// (`label`, or `index,cluster` as written by [`write_labels_csv`]).
pub fn load_labels(path: impl AsRef<Path>) -> Result<(LabelVector, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    let mut names = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        if let Some(last) = record.iter().last() {
            if !last.is_empty() {
                names.push(last.to_owned());
            }
        }
    }
    if names.is_empty() {
        return Err(TflowError::EmptyFile);
    }
    LabelVector::from_names(&names)
}

pub fn write_labels_csv<W: Write>(mut out: W, labels: &[usize]) -> Result<()> {
    writeln!(out, "index,cluster")?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `label,f0,...` (labels as class names) or `f0,...`.
pub fn write_csv<W: Write>(
    out: W,
    matrix: &EmbeddingMatrix,
    labels: Option<(&LabelVector, &[String])>,
) -> Result<()> {
    let mut out = BufWriter::new(out);
    let mut header: Vec<String> = (0..matrix.cols()).map(|j| format!("f{j}")).collect();
    if labels.is_some() {
        header.insert(0, "label".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for (i, row) in matrix.iter_rows().enumerate() {
        if let Some((lv, names)) = labels {
            write!(out, "{},", names[lv.as_slice()[i]])?;
        }
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_csv(
    path: impl AsRef<Path>,
    matrix: &EmbeddingMatrix,
    labels: Option<(&LabelVector, &[String])>,
) -> Result<()> {
    write_csv(File::create(path)?, matrix, labels)
}

pub fn write_binary<W: Write>(out: W, matrix: &EmbeddingMatrix) -> Result<()> {
    let mut out = BufWriter::new(out);
    out.write_all(TFMX_MAGIC)?;
    out.write_all(&TFMX_VERSION.to_le_bytes())?;
    out.write_all(&(matrix.rows() as u64).to_le_bytes())?;
    out.write_all(&(matrix.cols() as u64).to_le_bytes())?;
    for v in matrix.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_binary(matrix: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_binary(File::create(path)?, matrix)
}

pub fn read_binary<R: Read>(mut reader: R) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode_binary(&bytes)
}

pub fn load_binary(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    read_binary(File::open(path)?)
}

fn decode_binary(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 4 || &bytes[..4] != TFMX_MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(TflowError::BadMagic { found });
    }
    if bytes.len() < TFMX_HEADER_LEN {
        return Err(TflowError::TruncatedPayload {
            expected: TFMX_HEADER_LEN as u64,
            available: bytes.len() as u64,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != TFMX_VERSION {
        return Err(TflowError::VersionUnsupported(version));
    }
    let rows = u64_at(8);
    let cols = u64_at(16);
    let payload = &bytes[TFMX_HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .unwrap_or(u64::MAX);
    if expected > payload.len() as u64 {
        return Err(TflowError::TruncatedPayload {
            expected,
            available: payload.len() as u64,
        });
    }
    let data = payload[..expected as usize]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(rows as usize, cols as usize, data)
}

/// True when the file starts with the `TFMX` magic.
pub fn is_tfmx(path: impl AsRef<Path>) -> Result<bool> {
    let mut head = [0u8; 4];
    let mut f = File::open(path)?;
    let mut read = 0;
    while read < 4 {
        let n = f.read(&mut head[read..])?;
        if n == 0 {
            break;
        }
        read += n;
    }
    Ok(read == 4 && &head == TFMX_MAGIC)
}

/// Column names from the header line of a CSV file.
pub fn csv_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    Ok(rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect())
}

/// Loads a matrix from either format; a CSV `label` column is dropped.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    if is_tfmx(path)? {
        return load_binary(path);
    }
    let has_label = csv_header(path)?.iter().any(|h| h == "label");
    Ok(load_csv(path, has_label)?.embeddings().clone())
}
