use std::collections::BTreeSet;
use std::path::Path;

use super::Dataset;
use crate::{Error, Result, Tensor};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Maps a pixel byte onto `[-1, 1]`.
pub fn scale_pixel(v: u8) -> f64 {
    f64::from(v) / 127.5 - 1.0
}

/// Inverse of [`scale_pixel`]; `None` outside the representable range.
pub fn unscale_pixel(x: f64) -> Option<u8> {
    let v = ((x + 1.0) * 127.5).round();
    (0.0..=255.0).contains(&v).then_some(v as u8)
}

struct Idx<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
}

impl<'a> Idx<'a> {
    fn read(path: &'a Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Idx { path, bytes })
    }

    fn header(&self, magic: u32, dims: usize) -> Result<Vec<usize>> {
        let need = 4 * (1 + dims);
        if self.bytes.len() < need {
            return Err(Error::format(self.path, "truncated IDX header"));
        }
        let word = |i: usize| u32::from_be_bytes(self.bytes[4 * i..4 * i + 4].try_into().unwrap());
        if word(0) != magic {
            return Err(Error::format(
                self.path,
                format!("bad IDX magic {:#010x}, expected {magic:#010x}", word(0)),
            ));
        }
        let shape: Vec<usize> = (1..=dims).map(|i| word(i) as usize).collect();
        let body: usize = shape.iter().product();
        if self.bytes.len() != need + body {
            return Err(Error::format(
                self.path,
                format!("expected {body} data bytes, found {}", self.bytes.len() - need),
            ));
        }
        Ok(shape)
    }

    fn body(&self, dims: usize) -> &[u8] {
        &self.bytes[4 * (1 + dims)..]
    }
}

/// Reads an IDX image/label pair into a `(n, 1, rows, cols)` dataset.
///
/// The class count is one more than the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = Idx::read(images_path)?;
    let labels = Idx::read(labels_path)?;
    let shape = images.header(IDX_IMAGES, 3)?;
    let n_labels = labels.header(IDX_LABELS, 1)?[0];
    if shape[0] != n_labels {
        return Err(Error::Consistency(format!(
            "{} images but {n_labels} labels",
            shape[0]
        )));
    }
    if shape.contains(&0) {
        return Err(Error::EmptySample(format!("{} holds no pixels", images_path.display())));
    }
    let data = images.body(3).iter().map(|&b| scale_pixel(b)).collect();
    let x = Tensor::new(vec![shape[0], 1, shape[1], shape[2]], data)?;
    let y: Vec<usize> = labels.body(1).iter().map(|&b| usize::from(b)).collect();
    let classes = y.iter().max().map_or(1, |m| m + 1);
    Dataset::new(x, y, classes)
}

/// Column selection for [`load_csv`].
#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    /// Feature columns in order; `None` takes every column except the label.
    pub feature_cols: Option<Vec<usize>>,
    pub label_col: usize,
    pub has_header: bool,
}

/// Reads a delimited file with one instance per row.
///
/// Labels are mapped to dense indices in ascending order: numerically when
/// every label parses as an integer, lexicographically otherwise.
pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let cols: Vec<usize> = match &options.feature_cols {
            Some(c) => c.clone(),
            None => (0..record.len()).filter(|&c| c != options.label_col).collect(),
        };
        if *width.get_or_insert(cols.len()) != cols.len() || cols.is_empty() {
            return Err(Error::format(path, format!("row {}: ragged feature columns", row + 1)));
        }
        let cell = |c: usize| {
            record.get(c).ok_or_else(|| {
                Error::format(path, format!("row {}: missing column {c}", row + 1))
            })
        };
        raw_labels.push(cell(options.label_col)?.to_string());
        for c in cols {
            let text = cell(c)?;
            let v: f64 = text.parse().map_err(|_| {
                Error::format(path, format!("row {}: non-numeric feature {text:?}", row + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::format(path, format!("row {}: non-finite feature", row + 1)));
            }
            features.push(v);
        }
    }
    let (Some(width), false) = (width, raw_labels.is_empty()) else {
        return Err(Error::EmptySample(format!("{} has no rows", path.display())));
    };
    let names = dense_labels(&raw_labels);
    let y = raw_labels
        .iter()
        .map(|l| names.iter().position(|n| n == l).expect("label collected"))
        .collect();
    let x = Tensor::new(vec![raw_labels.len(), width], features)?;
    Dataset::new(x, y, names.len())
}

fn dense_labels(raw: &[String]) -> Vec<String> {
    let unique: BTreeSet<&String> = raw.iter().collect();
    let mut names: Vec<String> = unique.into_iter().cloned().collect();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().unwrap());
    }
    names
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!("checked io kind");
    }
    Error::format(path, e.to_string())
}
