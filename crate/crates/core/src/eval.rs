//! Agreement metrics between shadow and target, plus data-view coverage
//! diagnostics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::hillsynth::FeatureDomain;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction vectors differ in length ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("cannot score an empty prediction vector")]
    Empty,
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("{got} domains for {expected} features")]
    DomainCount { expected: usize, got: usize },
}

fn matches(a: &[usize], b: &[usize]) -> Result<usize, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x == y).count())
}

/// Fraction of records on which shadow and target predict the same class.
pub fn fidelity(shadow: &[usize], target: &[usize]) -> Result<f64, EvalError> {
    Ok(matches(shadow, target)? as f64 / shadow.len() as f64)
}

/// Fraction of predictions equal to the ground truth.
pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64, EvalError> {
    Ok(matches(preds, truth)? as f64 / preds.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Agreement of shadow with target.
    pub fidelity: f64,
    /// Agreement of shadow with ground truth.
    pub accuracy: f64,
    pub n: usize,
    /// `confusion[t][s]`: records the target puts in `t` and the shadow in `s`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn new(
        shadow: &[usize],
        target: &[usize],
        truth: &[usize],
        classes: usize,
    ) -> Result<EvalReport, EvalError> {
        let fid = fidelity(shadow, target)?;
        let acc = accuracy(shadow, truth)?;
        let mut confusion = vec![vec![0; classes]; classes];
        for (&s, &t) in shadow.iter().zip(target) {
            for label in [s, t] {
                if label >= classes {
                    return Err(EvalError::BadLabel { label, classes });
                }
            }
            confusion[t][s] += 1;
        }
        Ok(EvalReport {
            fidelity: fid,
            accuracy: acc,
            n: shadow.len(),
            confusion,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureCoverage {
    pub feature: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
    /// Observed span over domain span; 0 for a degenerate domain.
    pub span_coverage: f64,
    /// Observed span over the reference data's span, when a reference is
    /// given and its span is non-zero.
    pub reference_ratio: Option<f64>,
}

fn column_stats(values: impl Iterator<Item = f64>) -> (f64, f64, f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (min, max, mean, var)
}

/// Per-feature statistics of a synthesized view. Empty `synth` yields an
/// empty report.
pub fn coverage_report(
    synth: &Dataset,
    domains: &[FeatureDomain],
    reference: Option<&Dataset>,
) -> Result<Vec<FeatureCoverage>, EvalError> {
    if domains.len() != synth.feature_count() {
        return Err(EvalError::DomainCount {
            expected: synth.feature_count(),
            got: domains.len(),
        });
    }
    if synth.is_empty() {
        return Ok(Vec::new());
    }
    Ok((0..synth.feature_count())
        .map(|j| {
            let (min, max, mean, variance) = column_stats(synth.column(j));
            let (lo, hi) = domains[j].bounds();
            let span_coverage = if hi > lo { (max - min) / (hi - lo) } else { 0.0 };
            let reference_ratio = reference.filter(|r| !r.is_empty()).and_then(|r| {
                let (rmin, rmax, _, _) = column_stats(r.column(j));
                (rmax > rmin).then(|| (max - min) / (rmax - rmin))
            });
            FeatureCoverage {
                feature: synth.feature_names[j].clone(),
                min,
                max,
                mean,
                variance,
                span_coverage,
                reference_ratio,
            }
        })
        .collect())
}

pub fn mean_span_coverage(report: &[FeatureCoverage]) -> f64 {
    if report.is_empty() {
        return 0.0;
    }
    report.iter().map(|f| f.span_coverage).sum::<f64>() / report.len() as f64
}

pub fn coverage_csv(report: &[FeatureCoverage]) -> String {
    let mut s = String::from("feature,min,max,mean,variance,span_coverage,reference_ratio\n");
    for f in report {
        let r = f.reference_ratio.map(|v| format!("{v:?}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?},{r}",
            f.feature, f.min, f.max, f.mean, f.variance, f.span_coverage
        );
    }
    s
}

/// One dataset's line in the summary table. Fractions in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub target_accuracy: f64,
    pub oshadow_fidelity: f64,
    pub sshadow_fidelity_hill: Option<f64>,
    pub sshadow_fidelity_gan: Option<f64>,
    pub sshadow_accuracy_hill: Option<f64>,
    pub sshadow_accuracy_gan: Option<f64>,
}

const SUMMARY_COLUMNS: [&str; 7] = [
    "dataset",
    "target_acc",
    "oshadow_fid",
    "sshadow_fid_hill",
    "sshadow_fid_gan",
    "sshadow_acc_hill",
    "sshadow_acc_gan",
];

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

impl SummaryRow {
    fn cells(&self) -> [String; 7] {
        [
            self.dataset.clone(),
            pct(Some(self.target_accuracy)),
            pct(Some(self.oshadow_fidelity)),
            pct(self.sshadow_fidelity_hill),
            pct(self.sshadow_fidelity_gan),
            pct(self.sshadow_accuracy_hill),
            pct(self.sshadow_accuracy_gan),
        ]
    }
}

/// Aligned text table in percent, headed by a note on the evaluation set.
pub fn summary_text(rows: &[SummaryRow], eval_set: &str) -> String {
    let cells: Vec<[String; 7]> = rows.iter().map(SummaryRow::cells).collect();
    let widths: Vec<usize> = (0..7)
        .map(|i| {
            cells
                .iter()
                .map(|c| c[i].len())
                .chain([SUMMARY_COLUMNS[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |c: &[String]| -> String {
        let mut s = format!("{:<w$}", c[0], w = widths[0]);
        for i in 1..7 {
            let _ = write!(s, "  {:>w$}", c[i], w = widths[i]);
        }
        s + "\n"
    };
    let mut s = format!("# fidelity and accuracy in percent, evaluated on: {eval_set}\n");
    let header: Vec<String> = SUMMARY_COLUMNS.iter().map(|h| h.to_string()).collect();
    s += &line(&header);
    for c in &cells {
        s += &line(c);
    }
    s
}

/// CSV with raw fractions; missing values are empty cells.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = SUMMARY_COLUMNS.join(",") + "\n";
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{},{},{},{}",
            r.dataset,
            r.target_accuracy,
            r.oshadow_fidelity,
            opt(r.sshadow_fidelity_hill),
            opt(r.sshadow_fidelity_gan),
            opt(r.sshadow_accuracy_hill),
            opt(r.sshadow_accuracy_gan)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fidelity_examples() {
        assert_eq!(fidelity(&[0, 1, 2], &[0, 1, 2]), Ok(1.0));
        assert_eq!(fidelity(&[0, 0, 0], &[1, 1, 1]), Ok(0.0));
        assert_eq!(fidelity(&[0, 1, 1, 0], &[0, 1, 0, 0]), Ok(0.75));
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]), Ok(1.0));
        assert_eq!(accuracy(&[0, 0, 0], &[1, 1, 1]), Ok(0.0));
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]), Ok(0.75));
        assert_eq!(
            fidelity(&[0], &[0, 1]),
            Err(EvalError::LengthMismatch { left: 1, right: 2 })
        );
        assert_eq!(fidelity(&[], &[]), Err(EvalError::Empty));
    }

    #[test]
    fn confusion_rows_sum_to_target_counts() {
        let shadow = [0, 1, 1, 2, 0];
        let target = [0, 1, 0, 2, 2];
        let r = EvalReport::new(&shadow, &target, &target, 3).unwrap();
        assert_eq!(r.confusion, vec![vec![1, 1, 0], vec![0, 1, 0], vec![1, 0, 1]]);
        let sums: Vec<usize> = r.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(sums, vec![2, 1, 2]);
        assert_eq!(r.fidelity, 0.6);
    }

    #[test]
    fn coverage_edges() {
        let d = Dataset::new(
            vec!["c".into(), "full".into()],
            vec!["a".into()],
            vec![vec![0.3, -1.0], vec![0.3, 1.0], vec![0.3, 0.0]],
            vec![0; 3],
        )
        .unwrap();
        let doms = crate::hillsynth::default_domains(2);
        let rep = coverage_report(&d, &doms, Some(&d)).unwrap();
        assert_eq!(rep[0].variance, 0.0);
        assert_eq!(rep[0].span_coverage, 0.0);
        assert_eq!(rep[0].reference_ratio, None);
        assert_eq!(rep[1].span_coverage, 1.0);
        assert_eq!(rep[1].reference_ratio, Some(1.0));
        assert!(coverage_csv(&rep).starts_with("feature,min"));
    }

    #[test]
    fn summary_renders() {
        let row = SummaryRow {
            dataset: "pima".into(),
            target_accuracy: 0.75,
            oshadow_fidelity: 0.8,
            sshadow_fidelity_hill: Some(0.85),
            ..SummaryRow::default()
        };
        let t = summary_text(std::slice::from_ref(&row), "test split");
        assert!(t.contains("test split"));
        assert!(t.contains("85.00"));
        let c = summary_csv(&[row]);
        assert_eq!(c.lines().nth(1).unwrap(), "pima,0.75,0.8,0.85,,,");
    }

    proptest! {
        #[test]
        fn fidelity_is_an_agreement_measure(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..50),
            seed in any::<u64>(),
        ) {
            let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            prop_assert_eq!(fidelity(&a, &a), Ok(1.0));
            prop_assert_eq!(fidelity(&a, &b), fidelity(&b, &a));
            let mut idx: Vec<usize> = (0..a.len()).collect();
            use rand::seq::SliceRandom;
            idx.shuffle(&mut crate::seed::rng(seed, &[]));
            let pa: Vec<usize> = idx.iter().map(|&i| a[i]).collect();
            let pb: Vec<usize> = idx.iter().map(|&i| b[i]).collect();
            prop_assert_eq!(fidelity(&pa, &pb), fidelity(&a, &b));
            prop_assert_eq!(accuracy(&pa, &pb), accuracy(&a, &b));
        }
    }
}
