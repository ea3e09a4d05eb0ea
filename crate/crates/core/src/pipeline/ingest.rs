//! CSV ingestion, the bundled datasets, and min-max scaling.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{DataError, Dataset};

const ZOO_CSV: &str = include_str!("../../data/zoo.csv");
const PIMA_CSV: &str = include_str!("../../data/pima.csv");

/// Which columns of a CSV file to use.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub label: String,
    /// Feature columns in order. `None` takes every column that is neither
    /// the label nor ignored.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub ignore: Vec<String>,
}

impl Schema {
    pub fn label(label: &str) -> Schema {
        Schema {
            label: label.into(),
            ..Schema::default()
        }
    }
}

/// Parses a headed CSV. Labels map to class indices in sorted order
/// (numerically when every label parses as a number); the names are kept
/// in `class_names`.
pub fn read_csv<R: Read>(r: R, schema: &Schema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(DataError::Empty);
    }
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let label_col = col(&schema.label)?;
    let feature_names: Vec<String> = match &schema.features {
        Some(f) => f.clone(),
        None => header
            .iter()
            .filter(|h| **h != schema.label && !schema.ignore.contains(h))
            .cloned()
            .collect(),
    };
    for ig in &schema.ignore {
        col(ig)?;
    }
    let feature_cols = feature_names
        .iter()
        .map(|n| col(n))
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = i + 1;
        if rec.len() != header.len() {
            return Err(DataError::RaggedRow {
                row: row_no,
                expected: header.len(),
                got: rec.len(),
            });
        }
        let row = feature_cols
            .iter()
            .map(|&j| {
                let cell = rec[j].trim();
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DataError::NotNumeric {
                        row: row_no,
                        column: header[j].clone(),
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
        raw_labels.push(rec[label_col].trim().to_string());
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let class_names = sorted_labels(&raw_labels);
    let labels = raw_labels
        .iter()
        .map(|l| class_names.iter().position(|c| c == l).expect("label was collected"))
        .collect();
    Dataset::new(feature_names, class_names, rows, labels)
}

fn sorted_labels(raw: &[String]) -> Vec<String> {
    let distinct: BTreeSet<&String> = raw.iter().collect();
    let mut names: Vec<String> = distinct.into_iter().cloned().collect();
    let numeric: Option<Vec<f64>> = names.iter().map(|n| n.parse::<f64>().ok()).collect();
    if let Some(vals) = numeric {
        let mut pairs: Vec<(f64, String)> = vals.into_iter().zip(names).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        names = pairs.into_iter().map(|(_, n)| n).collect();
    }
    names
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset, DataError> {
    read_csv(std::fs::File::open(path)?, schema)
}

/// The bundled datasets.
pub const BUILTIN: &[&str] = &["zoo", "pima"];

pub fn builtin_schema(name: &str) -> Option<Schema> {
    match name {
        "zoo" => Some(Schema {
            label: "type".into(),
            features: None,
            ignore: vec!["name".into()],
        }),
        "pima" => Some(Schema::label("Outcome")),
        _ => None,
    }
}

pub fn builtin(name: &str) -> Option<Dataset> {
    let text = match name {
        "zoo" => ZOO_CSV,
        "pima" => PIMA_CSV,
        _ => return None,
    };
    let schema = builtin_schema(name)?;
    Some(read_csv(text.as_bytes(), &schema).expect("bundled data parses"))
}

/// Writes features plus a `label` column of class indices.
pub fn write_labelled_csv<W: Write>(data: &Dataset, w: W) -> Result<(), DataError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = data.feature_names.clone();
    header.push("label".into());
    out.write_record(&header)?;
    for (r, l) in data.rows.iter().zip(&data.labels) {
        let mut fields: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        fields.push(l.to_string());
        out.write_record(&fields)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads [`write_labelled_csv`] output. Labels are taken as indices into
/// `class_names`.
pub fn read_labelled_csv<R: Read>(r: R, class_names: Vec<String>) -> Result<Dataset, DataError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.last().map(String::as_str) != Some("label") {
        return Err(DataError::MissingColumn("label".into()));
    }
    let f = header.len() - 1;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |j: usize| DataError::NotNumeric {
            row: i + 1,
            column: header[j].clone(),
            value: rec[j].to_string(),
        };
        let row = (0..f)
            .map(|j| rec[j].trim().parse::<f64>().map_err(|_| bad(j)))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
        labels.push(rec[f].trim().parse::<usize>().map_err(|_| bad(f))?);
    }
    Dataset::new(header[..f].to_vec(), class_names, rows, labels)
}

pub fn save_labelled_csv(data: &Dataset, path: &Path) -> Result<(), DataError> {
    write_labelled_csv(data, std::fs::File::create(path)?)
}

pub fn load_labelled_csv(path: &Path, class_names: Vec<String>) -> Result<Dataset, DataError> {
    read_labelled_csv(std::fs::File::open(path)?, class_names)
}

/// Per-column affine map onto `[-1, 1]`, fitted on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(data: &Dataset) -> MinMaxScaler {
        let f = data.feature_count();
        let mut min = vec![f64::INFINITY; f];
        let mut max = vec![f64::NEG_INFINITY; f];
        for r in &data.rows {
            for j in 0..f {
                min[j] = min[j].min(r[j]);
                max[j] = max[j].max(r[j]);
            }
        }
        for j in 0..f {
            if !min[j].is_finite() {
                min[j] = 0.0;
                max[j] = 0.0;
            }
        }
        MinMaxScaler { min, max }
    }

    /// Constant columns map to 0.
    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        if span > 0.0 {
            2.0 * (v - self.min[j]) / span - 1.0
        } else {
            0.0
        }
    }

    pub fn inverse_value(&self, j: usize, v: f64) -> f64 {
        let span = self.max[j] - self.min[j];
        self.min[j] + (v + 1.0) / 2.0 * span
    }

    pub fn transform_row(&self, r: &[f64]) -> Vec<f64> {
        r.iter().enumerate().map(|(j, &v)| self.transform_value(j, v)).collect()
    }

    pub fn inverse_row(&self, r: &[f64]) -> Vec<f64> {
        r.iter().enumerate().map(|(j, &v)| self.inverse_value(j, v)).collect()
    }

    pub fn transform(&self, data: &Dataset) -> Dataset {
        Dataset {
            rows: data.rows.iter().map(|r| self.transform_row(r)).collect(),
            ..data.clone()
        }
    }

    pub fn inverse(&self, data: &Dataset) -> Dataset {
        Dataset {
            rows: data.rows.iter().map(|r| self.inverse_row(r)).collect(),
            ..data.clone()
        }
    }
}

/// Fits on `train` and returns `(scaled train, scaled others, scaler)`.
pub fn scale_minmax(train: &Dataset, others: &[&Dataset]) -> (Dataset, Vec<Dataset>, MinMaxScaler) {
    let s = MinMaxScaler::fit(train);
    let t = s.transform(train);
    let o = others.iter().map(|d| s.transform(d)).collect();
    (t, o, s)
}
