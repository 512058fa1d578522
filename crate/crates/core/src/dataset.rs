//! Case ingestion: CSV tables and IDX image files, normalisation and
//! train/test splitting.
//!
//! The train split produced here is the one dataset both twins share: the
//! network is fitted on it and the case index is built over it.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwinError};
use crate::scalar::{all_finite, Scalar};

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

/// Kind of target carried by each case.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelKind {
    Classification { num_classes: usize },
    Regression,
}

impl LabelKind {
    pub fn is_classification(&self) -> bool {
        matches!(self, LabelKind::Classification { .. })
    }
}

/// Task requested when loading a table, before the class count is known.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputShape {
    Flat {
        d: usize,
    },
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl InputShape {
    pub fn len(&self) -> usize {
        match *self {
            InputShape::Flat { d } => d,
            InputShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_image(&self) -> bool {
        matches!(self, InputShape::Image { .. })
    }
}

impl std::fmt::Display for InputShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InputShape::Flat { d } => write!(f, "flat({d})"),
            InputShape::Image {
                channels,
                height,
                width,
            } => write!(f, "image({channels}x{height}x{width})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub feature_names: Vec<String>,
    pub label_kind: LabelKind,
    pub input_shape: InputShape,
    /// Class names in index order. Empty for regression.
    #[serde(default)]
    pub class_names: Vec<String>,
}

impl FeatureSchema {
    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_names.is_empty() {
            return Err(TwinError::InvalidArgument("schema has no features".into()));
        }
        if self.feature_names.len() != self.input_shape.len() {
            return Err(TwinError::shape(
                "schema",
                self.input_shape.len(),
                self.feature_names.len(),
            ));
        }
        if let LabelKind::Classification { num_classes } = self.label_kind {
            if num_classes < 2 {
                return Err(TwinError::InvalidArgument(format!(
                    "classification needs at least 2 classes, got {num_classes}"
                )));
            }
        }
        Ok(())
    }

    pub fn class_name(&self, class: usize) -> String {
        self.class_names
            .get(class)
            .cloned()
            .unwrap_or_else(|| class.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label<T> {
    Class(usize),
    Value(T),
}

impl<T: Scalar> Label<T> {
    pub fn class(&self) -> Option<usize> {
        match *self {
            Label::Class(c) => Some(c),
            Label::Value(_) => None,
        }
    }

    pub fn value(&self) -> Option<T> {
        match *self {
            Label::Value(v) => Some(v),
            Label::Class(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Case<T> {
    /// Dense index within the owning dataset.
    pub id: usize,
    /// Row index in the originating file; survives splits.
    pub origin: usize,
    pub features: Vec<T>,
    pub label: Label<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<u8>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    #[default]
    Zscore,
    Minmax,
    None,
}

impl std::str::FromStr for NormMethod {
    type Err = TwinError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(NormMethod::Zscore),
            "minmax" => Ok(NormMethod::Minmax),
            "none" => Ok(NormMethod::None),
            other => Err(TwinError::InvalidArgument(format!(
                "unknown normalization {other:?}"
            ))),
        }
    }
}

/// Affine per-feature map `x' = (x - shift) / scale` fitted on one dataset.
///
/// For z-scores `shift`/`scale` are the mean and standard deviation, for
/// min-max they are the minimum and the range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats<T> {
    pub method: NormMethod,
    pub shift: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> NormStats<T> {
    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(&v, (&s, &c))| (v - s) / c)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset<T> {
    pub schema: FeatureSchema,
    pub cases: Vec<Case<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_stats: Option<NormStats<T>>,
    /// Identifies the file the cases were read from; provenance ids are only
    /// comparable between datasets with the same source.
    #[serde(default)]
    pub source: String,
}

/// Selects the label column of a CSV file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.schema.feature_count()
    }

    /// Checks the schema and every case against it.
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let d = self.feature_count();
        for (i, case) in self.cases.iter().enumerate() {
            if case.id != i {
                return Err(TwinError::Malformed(format!(
                    "case ids not dense: position {i} holds id {}",
                    case.id
                )));
            }
            if case.features.len() != d {
                return Err(TwinError::shape(
                    format!("case {i}"),
                    d,
                    case.features.len(),
                ));
            }
            if !all_finite(&case.features) {
                return Err(TwinError::InvalidArgument(format!(
                    "case {i} has non-finite features"
                )));
            }
            match (&self.schema.label_kind, &case.label) {
                (LabelKind::Classification { num_classes }, Label::Class(c)) => {
                    if c >= num_classes {
                        return Err(TwinError::InvalidArgument(format!(
                            "case {i}: class {c} >= {num_classes}"
                        )));
                    }
                }
                (LabelKind::Regression, Label::Value(v)) if v.is_finite() => {}
                _ => {
                    return Err(TwinError::InvalidArgument(format!(
                        "case {i}: label does not match task"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Per-feature mean.
    pub fn feature_means(&self) -> Vec<T> {
        let d = self.feature_count();
        let mut sums = vec![T::zero(); d];
        for case in &self.cases {
            for (s, &x) in sums.iter_mut().zip(&case.features) {
                *s += x;
            }
        }
        let n = T::lit(self.len().max(1) as f64);
        sums.into_iter().map(|s| s / n).collect()
    }

    /// Per-feature population standard deviation.
    pub fn feature_stds(&self) -> Vec<T> {
        let means = self.feature_means();
        let mut acc = vec![T::zero(); means.len()];
        for case in &self.cases {
            for ((a, &x), &m) in acc.iter_mut().zip(&case.features).zip(&means) {
                *a += (x - m) * (x - m);
            }
        }
        let n = T::lit(self.len().max(1) as f64);
        acc.into_iter().map(|a| (a / n).sqrt()).collect()
    }

    /// Rewrites features with previously fitted statistics (e.g. the train
    /// split's) and records them.
    pub fn apply_norm(&self, stats: &NormStats<T>) -> Result<Dataset<T>> {
        if stats.shift.len() != self.feature_count() {
            return Err(TwinError::shape(
                "normalization stats",
                self.feature_count(),
                stats.shift.len(),
            ));
        }
        let mut out = self.clone();
        for case in &mut out.cases {
            case.features = stats.apply(&case.features);
        }
        out.norm_stats = Some(stats.clone());
        Ok(out)
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label<T>> {
        self.cases.iter().map(|c| &c.label)
    }

    /// Renumbers class labels to follow `names`, so that datasets read from
    /// different files agree on class indices.
    pub fn with_class_names(&self, names: &[String]) -> Result<Dataset<T>> {
        if !self.schema.label_kind.is_classification() {
            return Ok(self.clone());
        }
        let map = self
            .schema
            .class_names
            .iter()
            .map(|n| {
                names.iter().position(|m| m == n).ok_or_else(|| {
                    TwinError::InvalidArgument(format!("class {n:?} unknown to the model"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.clone();
        out.schema.class_names = names.to_vec();
        out.schema.label_kind = LabelKind::Classification {
            num_classes: names.len().max(2),
        };
        for c in &mut out.cases {
            if let Label::Class(k) = c.label {
                c.label = Label::Class(map[k]);
            }
        }
        Ok(out)
    }
}

/// Reads a headered, comma-separated table.
pub fn load_csv<T: Scalar>(
    path: impl AsRef<Path>,
    label_column: &LabelColumn,
    task: Task,
) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| TwinError::io(path, e))?;
    let mut ds = parse_csv(&text, label_column, task)?;
    ds.source = path.display().to_string();
    Ok(ds)
}

/// Same as [`load_csv`] over in-memory text.
pub fn parse_csv<T: Scalar>(
    text: &str,
    label_column: &LabelColumn,
    task: Task,
) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| TwinError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let label_idx = match label_column {
        LabelColumn::Index(i) if *i < header.len() => *i,
        LabelColumn::Index(i) => return Err(TwinError::UnknownLabelColumn(i.to_string())),
        LabelColumn::Name(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TwinError::UnknownLabelColumn(name.clone()))?,
    };
    if header.len() < 2 {
        return Err(TwinError::Csv("need at least one feature column".into()));
    }

    let mut class_names: Vec<String> = Vec::new();
    let mut cases = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| TwinError::Csv(e.to_string()))?;
        // header is line 1
        let line = row + 2;
        if record.len() != header.len() {
            return Err(TwinError::Csv(format!(
                "row {line}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        let mut features = Vec::with_capacity(header.len() - 1);
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                continue;
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| TwinError::NonNumericCell {
                    row: line,
                    column: header[col].clone(),
                    value: cell.to_string(),
                })?;
            features.push(T::lit(v));
        }
        let cell = &record[label_idx];
        let label = match task {
            Task::Classification => {
                let idx = match class_names.iter().position(|c| c == cell) {
                    Some(i) => i,
                    None => {
                        class_names.push(cell.to_string());
                        class_names.len() - 1
                    }
                };
                Label::Class(idx)
            }
            Task::Regression => {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| TwinError::NonNumericCell {
                        row: line,
                        column: header[label_idx].clone(),
                        value: cell.to_string(),
                    })?;
                Label::Value(T::lit(v))
            }
        };
        cases.push(Case {
            id: row,
            origin: row,
            features,
            label,
            raw: None,
        });
    }
    if cases.len() < 2 {
        return Err(TwinError::TooFewRows);
    }

    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let label_kind = match task {
        Task::Classification => LabelKind::Classification {
            num_classes: class_names.len().max(2),
        },
        Task::Regression => LabelKind::Regression,
    };
    let schema = FeatureSchema {
        input_shape: InputShape::Flat {
            d: feature_names.len(),
        },
        feature_names,
        label_kind,
        class_names,
    };
    Ok(Dataset {
        schema,
        cases,
        norm_stats: None,
        source: String::new(),
    })
}

/// Writes cases back as CSV, with the label in the last column.
pub fn write_csv<T: Scalar>(dataset: &Dataset<T>, label_name: &str) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = dataset.schema.feature_names.clone();
    header.push(label_name.to_string());
    w.write_record(&header)
        .map_err(|e| TwinError::Csv(e.to_string()))?;
    for case in &dataset.cases {
        let mut row: Vec<String> = case.features.iter().map(|v| v.to_string()).collect();
        row.push(match case.label {
            Label::Class(c) => dataset.schema.class_name(c),
            Label::Value(v) => v.to_string(),
        });
        w.write_record(&row)
            .map_err(|e| TwinError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| TwinError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| TwinError::Csv(e.to_string()))
}

fn read_u32_be(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(TwinError::Truncated(what))
}

/// Reads an IDX image file (magic 2051) and its label file (magic 2049).
pub fn load_idx<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset<T>> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = fs::read(images_path).map_err(|e| TwinError::io(images_path, e))?;
    let labels = fs::read(labels_path).map_err(|e| TwinError::io(labels_path, e))?;
    let mut ds = parse_idx(&images, &labels)?;
    ds.source = images_path.display().to_string();
    Ok(ds)
}

/// Same as [`load_idx`] over in-memory bytes.
pub fn parse_idx<T: Scalar>(images: &[u8], labels: &[u8]) -> Result<Dataset<T>> {
    let magic = read_u32_be(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(TwinError::MagicMismatch {
            file: "images",
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = read_u32_be(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(TwinError::MagicMismatch {
            file: "labels",
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let count = read_u32_be(images, 4, "images")? as usize;
    let rows = read_u32_be(images, 8, "images")? as usize;
    let cols = read_u32_be(images, 12, "images")? as usize;
    let label_count = read_u32_be(labels, 4, "labels")? as usize;
    if count != label_count {
        return Err(TwinError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    if rows == 0 || cols == 0 {
        return Err(TwinError::Malformed("zero image dimension".into()));
    }
    let px = rows * cols;
    let pixels = images
        .get(16..16 + count * px)
        .ok_or(TwinError::Truncated("images"))?;
    let label_bytes = labels
        .get(8..8 + count)
        .ok_or(TwinError::Truncated("labels"))?;

    let scale = T::lit(255.0);
    let cases = pixels
        .chunks_exact(px)
        .zip(label_bytes)
        .enumerate()
        .map(|(i, (img, &label))| Case {
            id: i,
            origin: i,
            features: img.iter().map(|&b| T::lit(b as f64) / scale).collect(),
            label: Label::Class(label as usize),
            raw: Some(img.to_vec()),
        })
        .collect::<Vec<_>>();
    let num_classes = label_bytes
        .iter()
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0)
        .max(2);
    let feature_names = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| format!("px{r}_{c}")))
        .collect();
    Ok(Dataset {
        schema: FeatureSchema {
            feature_names,
            label_kind: LabelKind::Classification { num_classes },
            input_shape: InputShape::Image {
                channels: 1,
                height: rows,
                width: cols,
            },
            class_names: (0..num_classes).map(|c| c.to_string()).collect(),
        },
        cases,
        norm_stats: None,
        source: String::new(),
    })
}

/// Fits per-feature statistics on `dataset` and applies them.
pub fn normalize<T: Scalar>(dataset: &Dataset<T>, method: NormMethod) -> Result<Dataset<T>> {
    if dataset.is_empty() {
        return Err(TwinError::EmptyDataset);
    }
    let d = dataset.feature_count();
    let (shift, scale) = match method {
        NormMethod::None => return Ok(dataset.clone()),
        NormMethod::Zscore => {
            let means = dataset.feature_means();
            let stds = dataset
                .feature_stds()
                .into_iter()
                .map(|s| if s > T::zero() { s } else { T::one() })
                .collect();
            (means, stds)
        }
        NormMethod::Minmax => {
            let mut lo = vec![T::infinity(); d];
            let mut hi = vec![T::neg_infinity(); d];
            for case in &dataset.cases {
                for ((l, h), &x) in lo.iter_mut().zip(hi.iter_mut()).zip(&case.features) {
                    *l = l.min(x);
                    *h = h.max(x);
                }
            }
            let range = lo
                .iter()
                .zip(&hi)
                .map(|(&l, &h)| if h > l { h - l } else { T::one() })
                .collect();
            (lo, range)
        }
    };
    dataset.apply_norm(&NormStats {
        method,
        shift,
        scale,
    })
}

/// Seeded shuffle into `ceil(n * (1 - test_fraction))` train cases and the
/// remainder as test cases. Ids are re-densified; `origin` is kept.
pub fn split<T: Scalar>(
    dataset: &Dataset<T>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TwinError::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n = dataset.len();
    if n < 2 {
        return Err(TwinError::TooFewRows);
    }
    // the epsilon absorbs representation error in products like 10 * 0.8
    let n_train = ((n as f64) * (1.0 - test_fraction) - 1e-9).ceil() as usize;
    if n_train == 0 || n_train >= n {
        return Err(TwinError::InvalidArgument(format!(
            "test fraction {test_fraction} leaves an empty split of {n} cases"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| Dataset {
        schema: dataset.schema.clone(),
        cases: idx
            .iter()
            .enumerate()
            .map(|(new_id, &i)| Case {
                id: new_id,
                ..dataset.cases[i].clone()
            })
            .collect(),
        norm_stats: dataset.norm_stats.clone(),
        source: dataset.source.clone(),
    };
    Ok((take(&order[..n_train]), take(&order[n_train..])))
}
