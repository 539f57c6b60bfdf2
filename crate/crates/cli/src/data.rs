//! Dataset ingestion into fixed-point tensors.
//!
//! Two input formats are supported: the IDX image/label container and
//! delimited tables. Features land in `[-1 + 2^-p_a, 1 - 2^-p_a]` at
//! precision `p_a`; labels become one-hot rows at the same positive bound,
//! so the loss gradient stays inside the activation range.
//!
//! Table ingestion is schema-driven: the first file read (the training
//! split) fixes per-column min/max ranges, category vocabularies, and the
//! label map, and a held-out file is encoded under that same schema so the
//! two splits agree feature by feature.

use crate::error::CliError;
use quotient_core::fxp::FixedTensor;
use rand::RngCore;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

/// A dataset ready for sharing or plaintext training.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Inputs, shape `[samples, features]`, precision `p_a`.
    pub inputs: FixedTensor,
    /// One-hot labels, shape `[samples, classes]`, hot value `2^p_a - 1`.
    pub labels: FixedTensor,
    /// Class index per sample.
    pub label_ids: Vec<usize>,
    /// Number of classes in the one-hot encoding.
    pub classes: usize,
}

impl Dataset {
    pub fn samples(&self) -> usize {
        self.inputs.shape[0]
    }

    pub fn features(&self) -> usize {
        self.inputs.shape[1]
    }

    /// Splits off the last `test` rows as a held-out set.
    pub fn split_holdout(self, test: usize) -> Result<(Dataset, Dataset), CliError> {
        let n = self.samples();
        if test == 0 || test >= n {
            return Err(CliError::config(format!(
                "holdout of {test} rows does not split a {n}-row dataset"
            )));
        }
        let d = self.features();
        let c = self.classes;
        let cut = n - test;
        let take = |t: &FixedTensor, from: usize, to: usize, width: usize| FixedTensor {
            data: t.data[from * width..to * width].to_vec(),
            shape: vec![to - from, width],
            bits: t.bits,
            prec: t.prec,
        };
        let head = Dataset {
            inputs: take(&self.inputs, 0, cut, d),
            labels: take(&self.labels, 0, cut, c),
            label_ids: self.label_ids[..cut].to_vec(),
            classes: c,
        };
        let tail = Dataset {
            inputs: take(&self.inputs, cut, n, d),
            labels: take(&self.labels, cut, n, c),
            label_ids: self.label_ids[cut..].to_vec(),
            classes: c,
        };
        Ok((head, tail))
    }
}

/// Largest representable activation at precision `p_a`.
fn scale_bound(p_a: u8) -> i32 {
    (1i32 << p_a) - 1
}

fn one_hot_labels(ids: &[usize], classes: usize, p_a: u8) -> Result<FixedTensor, CliError> {
    let hot = scale_bound(p_a);
    let mut data = vec![0i32; ids.len() * classes];
    for (row, &id) in ids.iter().enumerate() {
        if id >= classes {
            return Err(CliError::config(format!(
                "label id {id} does not fit {classes} classes"
            )));
        }
        data[row * classes + id] = hot;
    }
    Ok(FixedTensor { data, shape: vec![ids.len(), classes], bits: 8, prec: p_a })
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| CliError::io(path.display().to_string(), e))?;
    Ok(buf)
}

fn idx_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, CliError> {
    bytes
        .get(at..at + 4)
        .map(|s| u32::from_be_bytes(s.try_into().expect("4-byte slice")))
        .ok_or_else(|| {
            CliError::config(format!("{}: truncated IDX header", path.display()))
        })
}

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

/// Reads an IDX image file and its label file into a dataset.
///
/// Pixels map to `round(p * (2^p_a - 1) / 255)`; labels one-hot into
/// `classes` slots (defaulting to the largest label plus one).
pub fn ingest_idx(
    images_path: &Path,
    labels_path: &Path,
    p_a: u8,
    classes: Option<usize>,
) -> Result<Dataset, CliError> {
    let images = read_file(images_path)?;
    let magic = idx_u32(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CliError::config(format!(
            "{}: IDX magic {magic}, expected {IDX_IMAGES_MAGIC} for an image file",
            images_path.display()
        )));
    }
    let n = idx_u32(&images, 4, images_path)? as usize;
    let rows = idx_u32(&images, 8, images_path)? as usize;
    let cols = idx_u32(&images, 12, images_path)? as usize;
    let pixels = n * rows * cols;
    let body = images.get(16..).unwrap_or(&[]);
    if body.len() != pixels {
        return Err(CliError::config(format!(
            "{}: {} pixel bytes for {n} images of {rows}x{cols}",
            images_path.display(),
            body.len()
        )));
    }

    let labels = read_file(labels_path)?;
    let magic = idx_u32(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CliError::config(format!(
            "{}: IDX magic {magic}, expected {IDX_LABELS_MAGIC} for a label file",
            labels_path.display()
        )));
    }
    let ln = idx_u32(&labels, 4, labels_path)? as usize;
    let label_body = labels.get(8..).unwrap_or(&[]);
    if ln != n || label_body.len() != n {
        return Err(CliError::config(format!(
            "{}: {ln} labels for {n} images",
            labels_path.display()
        )));
    }

    let hi = scale_bound(p_a) as u32;
    let data: Vec<i32> = body
        .iter()
        .map(|&p| ((u32::from(p) * hi + 127) / 255) as i32)
        .collect();
    let label_ids: Vec<usize> = label_body.iter().map(|&l| l as usize).collect();
    let classes = classes.unwrap_or_else(|| label_ids.iter().max().map_or(1, |m| m + 1));
    Ok(Dataset {
        inputs: FixedTensor { data, shape: vec![n, rows * cols], bits: 8, prec: p_a },
        labels: one_hot_labels(&label_ids, classes, p_a)?,
        label_ids,
        classes,
    })
}

/// Table layout presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TablePreset {
    /// Whitespace-separated rows, 21 numeric features, class in the last
    /// column.
    Thyroid,
    /// Whitespace-separated rows, mixed coded-categorical and numeric
    /// columns, class in the last column.
    German,
    /// Comma-separated rows; columns that fail numeric parsing are treated
    /// as categorical; class in the last column unless overridden.
    Generic,
}

impl std::str::FromStr for TablePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "thyroid" => Ok(TablePreset::Thyroid),
            "german" => Ok(TablePreset::German),
            "generic" => Ok(TablePreset::Generic),
            other => Err(format!(
                "unknown table preset {other:?}, expected thyroid, german, or generic"
            )),
        }
    }
}

impl TablePreset {
    fn comma_delimited(self) -> bool {
        matches!(self, TablePreset::Generic)
    }
}

/// Per-column encoding fixed by the training split.
#[derive(Debug, Clone)]
pub enum ColumnKind {
    /// Min-max scaled into the symmetric activation range.
    Numeric { min: f64, max: f64 },
    /// One-hot encoded over the category vocabulary, in sorted order.
    Categorical { categories: Vec<String> },
}

/// Encoding schema shared between the training and held-out splits.
#[derive(Debug, Clone)]
pub struct TableSchema {
    pub preset: TablePreset,
    pub label_col: usize,
    pub columns: Vec<ColumnKind>,
    /// Sorted label vocabulary; position is the class id.
    pub labels: Vec<String>,
    pub p_a: u8,
}

impl TableSchema {
    /// Encoded feature width under this schema.
    pub fn feature_len(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c {
                ColumnKind::Numeric { .. } => 1,
                ColumnKind::Categorical { categories } => categories.len(),
            })
            .sum()
    }
}

fn read_rows(path: &Path, preset: TablePreset) -> Result<Vec<Vec<String>>, CliError> {
    let mut raw: Vec<Vec<String>> = Vec::new();
    if preset.comma_delimited() {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        for record in reader.records() {
            let record =
                record.map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            let row: Vec<String> = record.iter().map(str::to_string).collect();
            if row.iter().all(|t| t.is_empty()) {
                continue;
            }
            raw.push(row);
        }
    } else {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(path.display().to_string(), e))?;
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            raw.push(line.split_whitespace().map(str::to_string).collect());
        }
    }

    for (idx, row) in raw.iter().enumerate() {
        for (col, tok) in row.iter().enumerate() {
            if tok.is_empty() || tok == "?" {
                return Err(CliError::config(format!(
                    "{}: missing value at row {}, column {}",
                    path.display(),
                    idx + 1,
                    col + 1
                )));
            }
        }
        if row.len() != raw[0].len() {
            return Err(CliError::config(format!(
                "{}: row {} has {} columns, expected {}",
                path.display(),
                idx + 1,
                row.len(),
                raw[0].len()
            )));
        }
    }
    if raw.is_empty() {
        return Err(CliError::config(format!("{}: no data rows", path.display())));
    }
    Ok(raw)
}

/// Sorts label tokens numerically when they all parse as integers, else
/// lexicographically, and assigns class ids by position.
fn sorted_labels(tokens: BTreeSet<String>) -> Vec<String> {
    let mut labels: Vec<String> = tokens.into_iter().collect();
    if labels.iter().all(|t| t.parse::<i64>().is_ok()) {
        labels.sort_by_key(|t| t.parse::<i64>().expect("checked integer"));
    }
    labels
}

/// Learns the encoding schema from the rows of the training split.
pub fn learn_schema(
    path: &Path,
    preset: TablePreset,
    label_col: Option<usize>,
    p_a: u8,
) -> Result<TableSchema, CliError> {
    let rows = read_rows(path, preset)?;
    let width = rows[0].len();
    if width < 2 {
        return Err(CliError::config(format!(
            "{}: need at least one feature column and one label column",
            path.display()
        )));
    }
    let label_col = label_col.unwrap_or(width - 1);
    if label_col >= width {
        return Err(CliError::config(format!(
            "label column {label_col} out of range for {width} columns"
        )));
    }

    let mut columns = Vec::with_capacity(width - 1);
    for col in 0..width {
        if col == label_col {
            continue;
        }
        let numeric: Option<Vec<f64>> = rows
            .iter()
            .map(|r| r[col].parse::<f64>().ok())
            .collect();
        match numeric {
            Some(values) => {
                let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                columns.push(ColumnKind::Numeric { min, max });
            }
            None => {
                let cats: BTreeSet<String> = rows.iter().map(|r| r[col].clone()).collect();
                columns.push(ColumnKind::Categorical {
                    categories: cats.into_iter().collect(),
                });
            }
        }
    }
    let labels = sorted_labels(rows.iter().map(|r| r[label_col].clone()).collect());
    Ok(TableSchema { preset, label_col, columns, labels, p_a })
}

/// Encodes one file under a fixed schema.
pub fn ingest_table_with_schema(
    path: &Path,
    schema: &TableSchema,
    classes: Option<usize>,
) -> Result<Dataset, CliError> {
    let rows = read_rows(path, schema.preset)?;
    let width = schema.columns.len() + 1;
    if rows[0].len() != width {
        return Err(CliError::config(format!(
            "{}: {} columns, schema expects {}",
            path.display(),
            rows[0].len(),
            width
        )));
    }
    let hi = scale_bound(schema.p_a);
    let d = schema.feature_len();
    let n = rows.len();
    let mut data = vec![0i32; n * d];
    let mut label_ids = Vec::with_capacity(n);

    for (row_idx, row) in rows.iter().enumerate() {
        let mut out = row_idx * d;
        let mut col_iter = schema.columns.iter();
        for (col, tok) in row.iter().enumerate() {
            if col == schema.label_col {
                continue;
            }
            let kind = col_iter.next().expect("width checked");
            match kind {
                ColumnKind::Numeric { min, max } => {
                    let x: f64 = tok.parse().map_err(|_| {
                        CliError::config(format!(
                            "{}: row {}, column {}: {tok:?} is not numeric",
                            path.display(),
                            row_idx + 1,
                            col + 1
                        ))
                    })?;
                    let scaled = if max > min {
                        ((x - min) / (max - min)) * 2.0 - 1.0
                    } else {
                        0.0
                    };
                    let q = (scaled * f64::from(hi)).round() as i64;
                    data[out] = q.clamp(i64::from(-hi), i64::from(hi)) as i32;
                    out += 1;
                }
                ColumnKind::Categorical { categories } => {
                    if let Ok(pos) = categories.binary_search(tok) {
                        data[out + pos] = hi;
                    }
                    out += categories.len();
                }
            }
        }
        let tok = &row[schema.label_col];
        let id = schema
            .labels
            .iter()
            .position(|l| l == tok)
            .ok_or_else(|| {
                CliError::config(format!(
                    "{}: row {}: label {tok:?} not in the training vocabulary",
                    path.display(),
                    row_idx + 1
                ))
            })?;
        label_ids.push(id);
    }

    let classes = classes.unwrap_or(schema.labels.len());
    Ok(Dataset {
        inputs: FixedTensor { data, shape: vec![n, d], bits: 8, prec: schema.p_a },
        labels: one_hot_labels(&label_ids, classes, schema.p_a)?,
        label_ids,
        classes,
    })
}

/// Ingests one table file, learning the schema from it.
pub fn ingest_table(
    path: &Path,
    preset: TablePreset,
    label_col: Option<usize>,
    p_a: u8,
    classes: Option<usize>,
) -> Result<(Dataset, TableSchema), CliError> {
    let schema = learn_schema(path, preset, label_col, p_a)?;
    let dataset = ingest_table_with_schema(path, &schema, classes)?;
    Ok((dataset, schema))
}

/// Uniform random dataset for benchmarks and smoke runs: features over the
/// full activation range, labels uniform over the classes.
pub fn random_dataset(
    samples: usize,
    features: usize,
    classes: usize,
    p_a: u8,
    rng: &mut impl RngCore,
) -> Dataset {
    let hi = scale_bound(p_a);
    let span = u64::from(2 * hi as u32 + 1);
    let data: Vec<i32> = (0..samples * features)
        .map(|_| (rng.next_u64() % span) as i32 - hi)
        .collect();
    let label_ids: Vec<usize> = (0..samples)
        .map(|_| (rng.next_u64() % classes as u64) as usize)
        .collect();
    Dataset {
        inputs: FixedTensor { data, shape: vec![samples, features], bits: 8, prec: p_a },
        labels: one_hot_labels(&label_ids, classes, p_a).expect("ids below class count"),
        label_ids,
        classes,
    }
}
