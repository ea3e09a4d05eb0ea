//! Hill-climbing query synthesis.
//!
//! A record for class `c` starts fully random. Each round re-draws `k`
//! randomly chosen features and keeps the proposal only if the blackbox
//! assigns strictly more probability to `c`. After `rej_max` consecutive
//! non-improvements `k` is halved (never below `k_min`); once `k` is at
//! `k_min` and still stuck the record is discarded and the search restarts
//! from scratch. A record is accepted when `c` is the predicted class and
//! its probability reaches `conf_min`.

use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Record, SynthSet};
use crate::oracle::{OracleError, OracleHandle};
use crate::prob::ProbVector;
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("class {class} out of range for {classes} classes")]
    BadClass { class: usize, classes: usize },
    #[error("k = {k} out of range 1..={features}")]
    BadK { k: usize, features: usize },
    #[error("{0} feature domains given, oracle has {1} features")]
    DomainCount(usize, usize),
    #[error("invalid feature domain {index}: {reason}")]
    BadDomain { index: usize, reason: String },
    #[error("invalid hill-climbing configuration: {0}")]
    BadConfig(String),
    #[error("no record reached the threshold within budget ({queries} queries, best confidence {best_confidence:.4})")]
    Exhausted { best_confidence: f64, queries: u64 },
}

/// What we know about the range of one input feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureDomain {
    Continuous { min: f64, max: f64 },
    Categorical { values: Vec<f64> },
    Binary,
}

impl FeatureDomain {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        match self {
            FeatureDomain::Continuous { min, max } if !(min < max) => {
                Err(format!("continuous domain needs min < max, got [{min}, {max}]"))
            }
            FeatureDomain::Categorical { values } if values.is_empty() => {
                Err("categorical domain has no values".into())
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            FeatureDomain::Continuous { min, max } => rng.gen_range(*min..=*max),
            FeatureDomain::Categorical { values } => values[rng.gen_range(0..values.len())],
            FeatureDomain::Binary => f64::from(u8::from(rng.gen_bool(0.5))),
        }
    }

    /// `(min, max)` of the values this domain can produce.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            FeatureDomain::Continuous { min, max } => (*min, *max),
            FeatureDomain::Categorical { values } => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
            FeatureDomain::Binary => (0.0, 1.0),
        }
    }
}

/// Largest number of distinct integer values for a column to be treated
/// as categorical by [`infer_domains`].
pub const MAX_CATEGORICAL_LEVELS: usize = 10;

/// Derives domains from reference rows: `{0,1}` columns become binary,
/// integer columns with few levels categorical, everything else continuous
/// over the observed `[min, max]`.
pub fn infer_domains(reference: &Dataset) -> Vec<FeatureDomain> {
    (0..reference.feature_count())
        .map(|j| {
            let mut values: Vec<f64> = reference.column(j).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            if values.is_empty() {
                return FeatureDomain::Continuous { min: -1.0, max: 1.0 };
            }
            if values == [0.0, 1.0] {
                return FeatureDomain::Binary;
            }
            let integral = values.iter().all(|v| v.fract() == 0.0);
            if values.len() == 1 || (integral && values.len() <= MAX_CATEGORICAL_LEVELS) {
                return FeatureDomain::Categorical { values };
            }
            FeatureDomain::Continuous {
                min: values[0],
                max: values[values.len() - 1],
            }
        })
        .collect()
}

/// `[-1, 1]` for every feature; used when nothing is known about the input.
pub fn default_domains(features: usize) -> Vec<FeatureDomain> {
    vec![FeatureDomain::Continuous { min: -1.0, max: 1.0 }; features]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HillConfig {
    pub conf_min: f64,
    pub k_max: usize,
    pub k_min: usize,
    /// Consecutive non-improvements before `k` shrinks.
    pub rej_max: usize,
    /// Oracle calls allowed per record, across restarts.
    pub query_budget: u64,
    pub restarts: usize,
    pub seed: u64,
}

impl HillConfig {
    pub fn for_features(features: usize) -> Self {
        HillConfig {
            conf_min: 0.7,
            k_max: (features / 2).max(1),
            k_min: 1,
            rej_max: 10,
            query_budget: 10_000,
            restarts: 50,
            seed: 0,
        }
    }

    pub fn validate(&self, features: usize) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        if !(self.conf_min > 0.0 && self.conf_min < 1.0) {
            return bad(format!("conf_min must be in (0, 1), got {}", self.conf_min));
        }
        if self.k_min < 1 || self.k_min > self.k_max || self.k_max > features {
            return bad(format!(
                "need 1 <= k_min ({}) <= k_max ({}) <= features ({features})",
                self.k_min, self.k_max
            ));
        }
        if self.rej_max < 1 || self.query_budget < 1 {
            return bad("rej_max and query_budget must be at least 1".into());
        }
        Ok(())
    }
}

/// Re-draws `k` distinct, uniformly chosen features of `record`. Returns the
/// new record and the indices that were re-drawn (in selection order).
pub fn randomize_tracked<R: Rng + ?Sized>(
    record: &[f64],
    k: usize,
    domains: &[FeatureDomain],
    rng: &mut R,
) -> Result<(Record, Vec<usize>), SynthError> {
    let n = record.len();
    if k < 1 || k > n {
        return Err(SynthError::BadK { k, features: n });
    }
    if domains.len() != n {
        return Err(SynthError::DomainCount(domains.len(), n));
    }
    let picked = index::sample(rng, n, k).into_vec();
    let mut out = record.to_vec();
    for &j in &picked {
        out[j] = domains[j].sample(rng);
    }
    Ok((out, picked))
}

pub fn randomize<R: Rng + ?Sized>(
    record: &[f64],
    k: usize,
    domains: &[FeatureDomain],
    rng: &mut R,
) -> Result<Record, SynthError> {
    randomize_tracked(record, k, domains, rng).map(|(r, _)| r)
}

pub fn random_record<R: Rng + ?Sized>(domains: &[FeatureDomain], rng: &mut R) -> Record {
    domains.iter().map(|d| d.sample(rng)).collect()
}

/// A record the blackbox assigns to its class with enough confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthesized {
    pub record: Record,
    pub confidence: f64,
    pub queries: u64,
    pub restarts: usize,
    /// Values of `k` in effect, in order, during the successful climb.
    pub k_schedule: Vec<usize>,
}

fn accepts(p: &ProbVector, class: usize, conf_min: f64) -> bool {
    let (top, conf) = p.top();
    top == class && conf >= conf_min
}

fn check_domains(domains: &[FeatureDomain], features: usize) -> Result<(), SynthError> {
    if domains.len() != features {
        return Err(SynthError::DomainCount(domains.len(), features));
    }
    for (index, d) in domains.iter().enumerate() {
        d.validate()
            .map_err(|reason| SynthError::BadDomain { index, reason })?;
    }
    Ok(())
}

/// Searches for one record of class `class`.
pub fn synthesize_record<R: Rng + ?Sized>(
    oracle: &OracleHandle,
    class: usize,
    cfg: &HillConfig,
    domains: &[FeatureDomain],
    rng: &mut R,
) -> Result<Synthesized, SynthError> {
    let features = oracle.feature_count();
    if class >= oracle.class_count() {
        return Err(SynthError::BadClass {
            class,
            classes: oracle.class_count(),
        });
    }
    cfg.validate(features)?;
    check_domains(domains, features)?;

    let mut queries = 0u64;
    let mut best_overall = 0.0f64;
    for restart in 0..=cfg.restarts {
        if queries >= cfg.query_budget {
            break;
        }
        let mut base = random_record(domains, rng);
        let p = oracle.classify(&base)?;
        queries += 1;
        let mut best = p[class];
        best_overall = best_overall.max(best);
        let mut k = cfg.k_max;
        let mut schedule = vec![k];
        if accepts(&p, class, cfg.conf_min) {
            return Ok(Synthesized {
                record: base,
                confidence: best,
                queries,
                restarts: restart,
                k_schedule: schedule,
            });
        }
        let mut rejections = 0;
        while queries < cfg.query_budget {
            let candidate = randomize(&base, k, domains, rng)?;
            let p = oracle.classify(&candidate)?;
            queries += 1;
            let conf = p[class];
            if accepts(&p, class, cfg.conf_min) {
                return Ok(Synthesized {
                    record: candidate,
                    confidence: conf,
                    queries,
                    restarts: restart,
                    k_schedule: schedule,
                });
            }
            if conf > best {
                best = conf;
                best_overall = best_overall.max(best);
                base = candidate;
                rejections = 0;
                continue;
            }
            rejections += 1;
            if rejections >= cfg.rej_max {
                if k == cfg.k_min {
                    break;
                }
                k = (k / 2).max(cfg.k_min);
                schedule.push(k);
                rejections = 0;
            }
        }
    }
    Err(SynthError::Exhausted {
        best_confidence: best_overall,
        queries,
    })
}

/// Classes that produced fewer records than requested.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassFailure {
    pub class: usize,
    pub failed_attempts: usize,
    pub best_confidence: f64,
}

#[derive(Clone, Debug)]
pub struct SynthReport {
    pub records: SynthSet,
    pub per_class: Vec<usize>,
    pub queries: u64,
    pub failures: Vec<ClassFailure>,
    /// Wall time of each emitted record's search, aligned with `records`.
    pub record_seconds: Vec<f64>,
}

impl SynthReport {
    pub fn mean_seconds_per_record(&self) -> f64 {
        if self.record_seconds.is_empty() {
            0.0
        } else {
            self.record_seconds.iter().sum::<f64>() / self.record_seconds.len() as f64
        }
    }

    /// Classes for which not a single record was found.
    pub fn empty_classes(&self) -> Vec<usize> {
        self.failures
            .iter()
            .filter(|f| self.per_class[f.class] == 0)
            .map(|f| f.class)
            .collect()
    }
}

/// Synthesizes `n_per_class` records for each class in `classes`. Record
/// `i` of class `c` uses its own rng derived from `(cfg.seed, c, i)`, so the
/// output does not depend on thread scheduling.
pub fn synthesize_dataset(
    oracle: &OracleHandle,
    classes: &[usize],
    n_per_class: usize,
    cfg: &HillConfig,
    domains: &[FeatureDomain],
) -> Result<SynthReport, SynthError> {
    let class_count = oracle.class_count();
    if let Some(&class) = classes.iter().find(|&&c| c >= class_count) {
        return Err(SynthError::BadClass {
            class,
            classes: class_count,
        });
    }
    cfg.validate(oracle.feature_count())?;
    check_domains(domains, oracle.feature_count())?;

    let jobs: Vec<(usize, usize)> = classes
        .iter()
        .flat_map(|&c| (0..n_per_class).map(move |i| (c, i)))
        .collect();
    let outcomes: Vec<Result<(Synthesized, f64), SynthError>> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let mut rng = seed::rng(cfg.seed, &[c as u64, i as u64]);
            let start = Instant::now();
            synthesize_record(oracle, c, cfg, domains, &mut rng)
                .map(|s| (s, start.elapsed().as_secs_f64()))
        })
        .collect();

    let mut report = SynthReport {
        records: SynthSet::empty(oracle.feature_count(), class_count),
        per_class: vec![0; class_count],
        queries: 0,
        failures: Vec::new(),
        record_seconds: Vec::new(),
    };
    for (&(c, _), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok((s, secs)) => {
                report.queries += s.queries;
                report.per_class[c] += 1;
                report.records.push(s.record, c, s.confidence);
                report.record_seconds.push(secs);
            }
            Err(SynthError::Exhausted {
                best_confidence,
                queries,
            }) => {
                report.queries += queries;
                match report.failures.iter_mut().find(|f| f.class == c) {
                    Some(f) => {
                        f.failed_attempts += 1;
                        f.best_confidence = f.best_confidence.max(best_confidence);
                    }
                    None => report.failures.push(ClassFailure {
                        class: c,
                        failed_attempts: 1,
                        best_confidence,
                    }),
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}
