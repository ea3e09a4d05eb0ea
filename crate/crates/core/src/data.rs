//! Labelled tabular data and the synthesized-record CSV format.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One row of feature values.
pub type Record = Vec<f64>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("file is empty")]
    Empty,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    NotNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} has {got} fields, header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("{0}")]
    Shape(String),
}

/// Rows of features with one class label per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub rows: Vec<Record>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        class_names: Vec<String>,
        rows: Vec<Record>,
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        let d = Dataset {
            feature_names,
            class_names,
            rows,
            labels,
        };
        d.check()?;
        Ok(d)
    }

    /// Empty dataset with `f0..` / `0..` names.
    pub fn empty(features: usize, classes: usize) -> Self {
        Dataset {
            feature_names: default_feature_names(features),
            class_names: (0..classes).map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn check(&self) -> Result<(), DataError> {
        if self.rows.len() != self.labels.len() {
            return Err(DataError::Shape(format!(
                "{} rows but {} labels",
                self.rows.len(),
                self.labels.len()
            )));
        }
        let f = self.feature_names.len();
        if let Some((i, r)) = self.rows.iter().enumerate().find(|(_, r)| r.len() != f) {
            return Err(DataError::Shape(format!(
                "row {i} has {} values, expected {f}",
                r.len()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(DataError::Shape(format!(
                "label {l} out of range for {} classes",
                self.class_names.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[j])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Same rows with different labels.
    pub fn relabel(&self, labels: Vec<usize>) -> Result<Dataset, DataError> {
        Dataset::new(
            self.feature_names.clone(),
            self.class_names.clone(),
            self.rows.clone(),
            labels,
        )
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Seeded shuffle-and-cut into `(train, test)` with `fraction` of the
    /// rows going to train.
    pub fn split(&self, fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Fisher-Yates written out so the permutation does not depend on
        // the `rand` version's shuffle implementation.
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let cut = if self.len() < 2 {
            self.len()
        } else {
            cut.clamp(1, self.len() - 1)
        };
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }

    /// Appends another dataset with identical schema.
    pub fn extend(&mut self, other: Dataset) {
        self.rows.extend(other.rows);
        self.labels.extend(other.labels);
    }
}

pub fn default_feature_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("f{i}")).collect()
}

/// Synthesized records with the blackbox confidence for their label.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSet {
    pub data: Dataset,
    pub confidence: Vec<f64>,
}

impl SynthSet {
    pub fn empty(features: usize, classes: usize) -> Self {
        SynthSet {
            data: Dataset::empty(features, classes),
            confidence: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, record: Record, label: usize, confidence: f64) {
        self.data.rows.push(record);
        self.data.labels.push(label);
        self.confidence.push(confidence);
    }

    pub fn append(&mut self, other: SynthSet) {
        self.data.extend(other.data);
        self.confidence.extend(other.confidence);
    }

    /// Keeps records whose confidence is at least `threshold`; returns how
    /// many were dropped.
    pub fn retain_confident(&mut self, threshold: f64) -> usize {
        let before = self.len();
        let keep: Vec<usize> = (0..before)
            .filter(|&i| self.confidence[i] >= threshold)
            .collect();
        self.data = self.data.subset(&keep);
        self.confidence = keep.iter().map(|&i| self.confidence[i]).collect();
        before - self.len()
    }

    /// Writes the `f0..f{n-1},label,confidence` CSV. Values use the shortest
    /// representation that round-trips.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut out = csv::Writer::from_writer(w);
        let n = self.data.feature_count();
        let mut header: Vec<String> = default_feature_names(n);
        header.push("label".into());
        header.push("confidence".into());
        out.write_record(&header)?;
        for ((r, &l), &c) in self.data.rows.iter().zip(&self.data.labels).zip(&self.confidence) {
            let mut fields: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            fields.push(l.to_string());
            fields.push(format!("{c:?}"));
            out.write_record(&fields)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads the synthesized-record CSV back. Class names default to the
    /// label indices; `classes` fixes the class count.
    pub fn read_csv<R: Read>(r: R, classes: usize) -> Result<SynthSet, DataError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let n = header.len();
        if n < 2 || &header[n - 2] != "label" || &header[n - 1] != "confidence" {
            return Err(DataError::MissingColumn("label,confidence".into()));
        }
        let features = n - 2;
        let mut set = SynthSet::empty(features, classes);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64, DataError> {
                rec[j].trim().parse::<f64>().map_err(|_| DataError::NotNumeric {
                    row: i + 1,
                    column: header[j].to_string(),
                    value: rec[j].to_string(),
                })
            };
            let row = (0..features).map(num).collect::<Result<Vec<_>, _>>()?;
            let label = rec[features].trim().parse::<usize>().map_err(|_| DataError::NotNumeric {
                row: i + 1,
                column: "label".into(),
                value: rec[features].to_string(),
            })?;
            let conf = num(features + 1)?;
            set.push(row, label, conf);
        }
        set.data.check()?;
        Ok(set)
    }

    pub fn load(path: &Path, classes: usize) -> Result<SynthSet, DataError> {
        SynthSet::read_csv(std::fs::File::open(path)?, classes)
    }
}
