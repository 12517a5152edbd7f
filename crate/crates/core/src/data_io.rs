//! Dataset loading and artifact persistence.
//!
//! Datasets are comma-separated text with one sample per row. A header row is
//! detected automatically when the first record does not parse as numbers.
//! Similarity matrices are stored either as dense CSV or in a compact binary
//! container:
//!
//! ```text
//! b"CAM1" | n: u64 (little endian) | n*n f64 (little endian, row-major)
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::base_pool::Partition;
use crate::error::{Error, Result};

/// Where the ground-truth labels of a dataset come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelMode {
    /// The last column of every row is the class label.
    EmbeddedLastColumn,
    /// Labels are read from a separate file, one per line.
    SeparateFile(PathBuf),
    /// No labels.
    None,
}

/// Sample-by-feature matrix with optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    label_names: Vec<String>,
}

impl Dataset {
    /// Build a dataset from raw labels; labels are compacted to `0..K` in
    /// order of first appearance.
    pub fn new(name: impl Into<String>, features: Array2<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let (n, d) = features.dim();
        if n < 2 {
            return Err(Error::Validation(format!("dataset needs at least 2 samples, got {n}")));
        }
        if d < 1 {
            return Err(Error::Validation("dataset needs at least 1 feature column".into()));
        }
        if let Some((idx, _)) = features.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature at row {}, column {}",
                idx / d,
                idx % d
            )));
        }
        let (labels, label_names) = match labels {
            Some(raw) => {
                if raw.len() != n {
                    return Err(Error::Validation(format!(
                        "label count {} does not match sample count {n}",
                        raw.len()
                    )));
                }
                let (ids, names) = compact_labels(&raw);
                (Some(ids), names)
            }
            None => (None, Vec::new()),
        };
        Ok(Self {
            name: name.into(),
            features,
            labels,
            label_names,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Original label strings, indexed by compacted id.
    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    /// Number of distinct ground-truth classes (0 when unlabeled).
    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Ground truth as a partition.
    pub fn truth(&self) -> Option<Partition> {
        self.labels
            .as_ref()
            .map(|l| Partition::new(l.clone()).expect("compacted labels form a valid partition"))
    }

    /// Copy with every column rescaled to `[0, 1]`; constant columns map to 0.
    pub fn min_max_scaled(&self) -> Dataset {
        let mut features = self.features.clone();
        for mut col in features.columns_mut() {
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            col.mapv_inplace(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
        }
        Dataset {
            features,
            ..self.clone()
        }
    }

    /// Keep only the given rows (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let features = self.features.select(ndarray::Axis(0), rows);
        let labels = self
            .labels
            .as_ref()
            .map(|l| rows.iter().map(|&r| self.label_names[l[r]].clone()).collect());
        Dataset::new(self.name.clone(), features, labels)
    }
}

fn compact_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut ids = HashMap::new();
    let mut names = Vec::new();
    let labels = raw
        .iter()
        .map(|s| {
            *ids.entry(s.clone()).or_insert_with(|| {
                names.push(s.clone());
                names.len() - 1
            })
        })
        .collect();
    (labels, names)
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Load a dataset from a comma-separated file.
pub fn load_dataset(path: impl AsRef<Path>, label_mode: &LabelMode) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut ds = parse_dataset(&text, &path.display().to_string(), label_mode)?;
    ds.name = name;
    Ok(ds)
}

/// Parse dataset text; `source_name` is used in error messages.
pub fn parse_dataset(text: &str, source_name: &str, label_mode: &LabelMode) -> Result<Dataset> {
    let embedded = matches!(label_mode, LabelMode::EmbeddedLastColumn);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut width: Option<usize> = None;
    let mut first = true;

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(source_name, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let n_feat = if embedded { record.len().saturating_sub(1) } else { record.len() };
        if first {
            first = false;
            let numeric = record.iter().take(n_feat).all(|c| parse_cell(c).is_some());
            if !numeric {
                // header row
                width = Some(record.len());
                continue;
            }
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::parse(
                    source_name,
                    line,
                    format!("expected {w} columns, found {}", record.len()),
                ));
            }
            None => width = Some(record.len()),
            _ => {}
        }
        if n_feat == 0 {
            return Err(Error::parse(source_name, line, "row has no feature columns"));
        }
        let mut row = Vec::with_capacity(n_feat);
        for (col, cell) in record.iter().take(n_feat).enumerate() {
            let v = parse_cell(cell).ok_or_else(|| {
                Error::parse(source_name, line, format!("column {}: '{cell}' is not a finite number", col + 1))
            })?;
            row.push(v);
        }
        rows.push(row);
        if embedded {
            raw_labels.push(record[n_feat].to_string());
        }
    }

    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let features = Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| Error::Validation(e.to_string()))?;

    let labels = match label_mode {
        LabelMode::EmbeddedLastColumn => Some(raw_labels),
        LabelMode::SeparateFile(p) => Some(read_label_strings(p)?),
        LabelMode::None => None,
    };
    Dataset::new(source_name, features, labels)
}

/// Read one label per non-empty line.
pub fn read_label_strings(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Read a label file into a partition (labels compacted by first appearance).
pub fn read_partition(path: impl AsRef<Path>) -> Result<Partition> {
    let raw = read_label_strings(path)?;
    Partition::from_raw_labels(&raw)
}

/// Write one integer label per line.
pub fn write_partition(path: impl AsRef<Path>, partition: &Partition) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in partition.labels() {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// Save features (and label names, if any) as CSV with a header row.
pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header: Vec<String> = (0..ds.n_features()).map(|j| format!("x{j}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, row) in ds.features.rows().into_iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        if let Some(l) = &ds.labels {
            cells.push(ds.label_names[l[i]].clone());
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Write a square matrix as dense CSV (shortest round-trip float formatting).
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a dense square matrix from CSV.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let source = path.display().to_string();
    let mut data = Vec::new();
    let mut n = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        match n {
            None => n = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::parse(&source, idx + 1, format!("expected {w} columns, found {}", cells.len())))
            }
            _ => {}
        }
        for c in cells {
            data.push(
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(&source, idx + 1, format!("'{c}' is not a number")))?,
            );
        }
        rows += 1;
    }
    let n = n.unwrap_or(0);
    if rows != n {
        return Err(Error::Validation(format!("matrix is {rows}x{n}, expected square")));
    }
    Array2::from_shape_vec((n, n), data).map_err(|e| Error::Validation(e.to_string()))
}

const MATRIX_MAGIC: &[u8; 4] = b"CAM1";

/// Write a square matrix in the binary container.
pub fn write_matrix_bin(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Validation("only square matrices can be stored".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_matrix(m))?;
    w.flush()?;
    Ok(())
}

/// Read a square matrix from the binary container.
pub fn read_matrix_bin(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_matrix(&bytes)
}

/// Encode a square matrix into container bytes.
pub fn encode_matrix(m: &Array2<f64>) -> Vec<u8> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(12 + 8 * n * n);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode container bytes.
pub fn decode_matrix(bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < 12 || &bytes[..4] != MATRIX_MAGIC {
        return Err(Error::Validation("missing CAM1 header".into()));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(12))
        .ok_or_else(|| Error::Validation("matrix size overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Validation(format!(
            "container holds {} bytes, expected {expected} for n={n}",
            bytes.len()
        )));
    }
    let data = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((n, n), data).map_err(|e| Error::Validation(e.to_string()))
}

/// Load a matrix, choosing the format from the extension (`.csv` or binary).
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    if has_csv_extension(path) {
        read_matrix_csv(path)
    } else {
        read_matrix_bin(path)
    }
}

/// Save a matrix, choosing the format from the extension (`.csv` or binary).
pub fn write_matrix(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    if has_csv_extension(path) {
        write_matrix_csv(path, m)
    } else {
        write_matrix_bin(path, m)
    }
}

fn has_csv_extension(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Pretty-printed JSON report.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
