//! CSV ingestion: numeric feature columns plus an optional 0/1 label column.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use odim_core::Matrix;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV at line {line}: {source}")]
    Csv {
        line: u64,
        #[source]
        source: csv::Error,
    },

    #[error("row {row} (line {line}): expected {expected} fields, found {found}")]
    Ragged {
        row: usize,
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column {column} (line {line}): cannot parse {value:?} as a finite number")]
    Parse {
        row: usize,
        column: String,
        line: u64,
        value: String,
    },

    #[error("row {row} (line {line}): label {value:?} is not 0 or 1")]
    Label { row: usize, line: u64, value: String },

    #[error("label column {0:?} not found")]
    NoLabelColumn(String),

    #[error("dataset has no rows")]
    Empty,

    #[error("dataset has no feature columns")]
    NoFeatures,
}

/// Which column holds the labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl LabelColumn {
    /// A bare integer is taken as a zero-based index unless a header column
    /// carries that exact name.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub path: PathBuf,
    pub delimiter: u8,
    pub has_header: bool,
    pub label: Option<LabelColumn>,
}

impl DatasetFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        DatasetFile {
            path: path.into(),
            delimiter: b',',
            has_header: true,
            label: None,
        }
    }

    pub fn with_label(mut self, label: LabelColumn) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Option<Vec<u8>>,
    /// Feature column names; generated as `c{j}` when the file has no header.
    pub feature_names: Vec<String>,
}

pub fn load_csv(f: &DatasetFile) -> Result<Dataset, DatasetError> {
    let file = File::open(&f.path).map_err(|source| DatasetError::Io {
        path: f.path.clone(),
        source,
    })?;
    read_csv(file, f)
}

/// Parses CSV from any reader; `f.path` is only used in messages.
pub fn read_csv<R: Read>(input: R, f: &DatasetFile) -> Result<Dataset, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(f.delimiter)
        .has_headers(f.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let line_of = |e: &csv::Error| e.position().map_or(0, |p| p.line());

    let header: Option<Vec<String>> = if f.has_header {
        let h = rdr.headers().map_err(|e| DatasetError::Csv {
            line: line_of(&e),
            source: e,
        })?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut width = header.as_ref().map(Vec::len);
    let mut label_idx: Option<usize> = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut rows = 0usize;

    for rec in rdr.records() {
        let rec = rec.map_err(|e| DatasetError::Csv {
            line: line_of(&e),
            source: e,
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(DatasetError::Ragged {
                row: rows,
                line,
                expected,
                found: rec.len(),
            });
        }
        if rows == 0 {
            label_idx = resolve_label(f.label.as_ref(), header.as_deref(), expected)?;
            names = (0..expected)
                .filter(|&j| Some(j) != label_idx)
                .map(|j| header.as_ref().map_or_else(|| format!("c{j}"), |h| h[j].clone()))
                .collect();
            if names.is_empty() {
                return Err(DatasetError::NoFeatures);
            }
        }
        for (j, cell) in rec.iter().enumerate() {
            if Some(j) == label_idx {
                labels.push(parse_label(cell).ok_or_else(|| DatasetError::Label {
                    row: rows,
                    line,
                    value: cell.to_string(),
                })?);
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => data.push(v),
                _ => {
                    return Err(DatasetError::Parse {
                        row: rows,
                        column: header.as_ref().map_or_else(|| j.to_string(), |h| h[j].clone()),
                        line,
                        value: cell.to_string(),
                    })
                }
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DatasetError::Empty);
    }
    let x = Matrix::from_vec(rows, names.len(), data).expect("row widths checked above");
    Ok(Dataset {
        x,
        labels: label_idx.map(|_| labels),
        feature_names: names,
    })
}

fn resolve_label(
    label: Option<&LabelColumn>,
    header: Option<&[String]>,
    width: usize,
) -> Result<Option<usize>, DatasetError> {
    let Some(label) = label else { return Ok(None) };
    let by_name = |name: &str| header.and_then(|h| h.iter().position(|c| c == name));
    let idx = match label {
        LabelColumn::Name(n) => by_name(n),
        LabelColumn::Index(i) => by_name(&i.to_string()).or((*i < width).then_some(*i)),
    };
    idx.map(Some).ok_or_else(|| {
        DatasetError::NoLabelColumn(match label {
            LabelColumn::Name(n) => n.clone(),
            LabelColumn::Index(i) => i.to_string(),
        })
    })
}

fn parse_label(cell: &str) -> Option<u8> {
    match cell.parse::<f64>() {
        Ok(0.0) => Some(0),
        Ok(1.0) => Some(1),
        _ => None,
    }
}

/// Reads labeled-outlier row indices: integers separated by whitespace or
/// commas; `#` starts a comment. An empty file yields an empty list.
pub fn load_index_list(path: &Path) -> Result<Vec<usize>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("");
        for tok in body.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let i = tok.parse::<usize>().map_err(|_| DatasetError::Parse {
                row: n,
                column: String::from("index"),
                line: n as u64 + 1,
                value: tok.to_string(),
            })?;
            out.push(i);
        }
    }
    Ok(out)
}
