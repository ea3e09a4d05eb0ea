//! End-to-end runs: load, split, scale, train the target, synthesize a
//! data view, fit OShadow and SShadow, evaluate, and write artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::cluster::make_purchase;
use super::config::{
    ConfigError, EvalSet, Method, PipelineConfig, Scaling, ShadowConfig, ShadowKind, SynthConfig,
    TargetConfig,
};
use super::ingest::{builtin, load_csv, MinMaxScaler};
use crate::data::{Dataset, SynthSet};
use crate::eval::{coverage_report, EvalReport, FeatureCoverage, SummaryRow};
use crate::fca::{self, BinSpec, FcaLimits, FcaModel, DIABETES_CUTS};
use crate::gansynth::{self, Generator};
use crate::hillsynth::{self, ClassFailure, FeatureDomain};
use crate::netcore::{self, Activation, Mlp};
use crate::oracle::OracleHandle;
use crate::seed;
use crate::shadow_tree::{self, DecisionTree, Predictor};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

fn stage_msg(stage: &'static str, message: String) -> PipelineError {
    PipelineError::Stage {
        stage,
        source: message.into(),
    }
}

/// Sub-seed slots derived from the top-level seed.
pub mod slot {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const TARGET_INIT: u64 = 3;
    pub const TARGET_TRAIN: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const EXPLAIN: u64 = 6;
    pub const EVAL: u64 = 7;
}

pub fn stage_seeds(top: u64) -> BTreeMap<String, u64> {
    [
        ("data", slot::DATA),
        ("split", slot::SPLIT),
        ("target_init", slot::TARGET_INIT),
        ("target_train", slot::TARGET_TRAIN),
        ("synth", slot::SYNTH),
        ("explain", slot::EXPLAIN),
        ("eval", slot::EVAL),
    ]
    .into_iter()
    .map(|(k, s)| (k.to_string(), seed::derive(top, &[s])))
    .collect()
}

/// Train/test split in model space, plus what produced it.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub name: String,
    pub raw_train: Dataset,
    pub raw_test: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub scaler: Option<MinMaxScaler>,
}

impl Prepared {
    /// Search domains in model space: inferred on the raw training data,
    /// then mapped through the scaler.
    pub fn domains(&self) -> Vec<FeatureDomain> {
        let raw = hillsynth::infer_domains(&self.raw_train);
        match &self.scaler {
            None => raw,
            Some(s) => raw
                .into_iter()
                .enumerate()
                .map(|(j, d)| scale_domain(s, j, d))
                .collect(),
        }
    }

    /// Default FCA bins for a view in model space: tertiles of the view,
    /// with the diabetes cut points for matching feature names.
    pub fn bins_for(&self, view: &Dataset) -> BinSpec {
        let mut spec = BinSpec::tertiles(view);
        for (name, cuts) in DIABETES_CUTS {
            let Some(j) = view.feature_names.iter().position(|n| n == name) else {
                continue;
            };
            let mapped: Vec<f64> = match &self.scaler {
                Some(s) => cuts.iter().map(|&c| s.transform_value(j, c)).collect(),
                None => cuts.to_vec(),
            };
            spec = spec.with_cuts(name, mapped);
        }
        spec
    }
}

fn scale_domain(s: &MinMaxScaler, j: usize, d: FeatureDomain) -> FeatureDomain {
    let map = |v: f64| s.transform_value(j, v);
    match d {
        FeatureDomain::Continuous { min, max } => {
            let (a, b) = (map(min), map(max));
            if a < b {
                FeatureDomain::Continuous { min: a, max: b }
            } else {
                FeatureDomain::Categorical { values: vec![a] }
            }
        }
        FeatureDomain::Categorical { values } => {
            let mut v: Vec<f64> = values.into_iter().map(map).collect();
            v.dedup();
            FeatureDomain::Categorical { values: v }
        }
        FeatureDomain::Binary => {
            let mut v = vec![map(0.0), map(1.0)];
            v.dedup();
            FeatureDomain::Categorical { values: v }
        }
    }
}

pub fn load_data(cfg: &PipelineConfig) -> Result<Dataset, PipelineError> {
    let d = &cfg.data;
    if let Some(b) = &d.builtin {
        return builtin(b).ok_or_else(|| stage_msg("load", format!("unknown builtin `{b}`")));
    }
    if let Some(shape) = d.purchase {
        return make_purchase(shape, seed::derive(cfg.seed, &[slot::DATA])).stage("load");
    }
    let path = d.path.as_ref().expect("validated: one source is set");
    let schema = d.schema().expect("path source has a schema");
    load_csv(path, &schema).stage("load")
}

/// Whether the run scales inputs. GAN synthesis always does, since
/// generators emit values in `[-1, 1]`.
pub fn effective_scaling(cfg: &PipelineConfig) -> Scaling {
    if cfg.synth.method == Method::Gan {
        Scaling::Minmax
    } else {
        cfg.data.scaling
    }
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared, PipelineError> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let (raw_train, raw_test) = data.split(cfg.data.split, seed::derive(cfg.seed, &[slot::SPLIT]));
    if raw_test.is_empty() {
        return Err(stage_msg("split", "test split is empty".into()));
    }
    let (train, test, scaler) = match effective_scaling(cfg) {
        Scaling::None => (raw_train.clone(), raw_test.clone(), None),
        Scaling::Minmax => {
            let s = MinMaxScaler::fit(&raw_train);
            (s.transform(&raw_train), s.transform(&raw_test), Some(s))
        }
    };
    Ok(Prepared {
        name: cfg.data.name(),
        raw_train,
        raw_test,
        train,
        test,
        scaler,
    })
}

pub fn train_target(train: &Dataset, cfg: &TargetConfig, top_seed: u64) -> Result<(Mlp, Vec<f64>), PipelineError> {
    let sizes = cfg.layer_sizes(train.feature_count(), train.class_count());
    let mut rng = seed::rng(top_seed, &[slot::TARGET_INIT]);
    let mut net = Mlp::random(&sizes, Activation::Relu, Activation::Softmax, &mut rng).stage("target")?;
    let out = netcore::train(
        &mut net,
        &train.rows,
        &train.labels,
        &cfg.train_config(seed::derive(top_seed, &[slot::TARGET_TRAIN])),
    )
    .stage("target")?;
    Ok((net, out.loss_history))
}

/// A synthesized data view and how it was obtained.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub records: SynthSet,
    pub per_class: Vec<usize>,
    pub queries: u64,
    /// Generated records dropped for low confidence (GAN only).
    pub filtered: usize,
    pub failures: Vec<ClassFailure>,
    pub seconds_per_record: f64,
    pub generators: Vec<Generator>,
}

/// Synthesizes `records_per_class` records per class with `seed_value`
/// governing every random choice.
pub fn synthesize(
    oracle: &OracleHandle,
    cfg: &SynthConfig,
    domains: &[FeatureDomain],
    seed_value: u64,
) -> Result<SynthOutput, PipelineError> {
    let classes: Vec<usize> = (0..oracle.class_count()).collect();
    match cfg.method {
        Method::Hill => {
            let hc = cfg.hill_config(oracle.feature_count(), seed_value);
            let rep = hillsynth::synthesize_dataset(oracle, &classes, cfg.records_per_class, &hc, domains)
                .stage("synth")?;
            Ok(SynthOutput {
                seconds_per_record: rep.mean_seconds_per_record(),
                records: rep.records,
                per_class: rep.per_class,
                queries: rep.queries,
                filtered: 0,
                failures: rep.failures,
                generators: Vec::new(),
            })
        }
        Method::Gan => {
            let gc = cfg.generator_config(oracle.feature_count(), seed_value);
            let trained = gansynth::train_all_generators(oracle, &gc, cfg.gan.ensembles).stage("synth")?;
            let generators: Vec<Generator> = trained.into_iter().map(|t| t.generator).collect();
            let before = oracle.query_count();
            let gen = gansynth::sample_pooled(
                &generators,
                oracle,
                cfg.records_per_class,
                seed::derive(seed_value, &[u64::MAX]),
            )
            .stage("synth")?;
            let queries = oracle.query_count() - before;
            let mut records = gen.records;
            let filtered = if cfg.gan.filter_confidence {
                records.retain_confident(cfg.conf_min)
            } else {
                0
            };
            let secs = if gen.record_seconds.is_empty() {
                0.0
            } else {
                gen.record_seconds.iter().sum::<f64>() / gen.record_seconds.len() as f64
            };
            Ok(SynthOutput {
                per_class: records.data.class_counts(),
                records,
                queries,
                filtered,
                failures: Vec::new(),
                seconds_per_record: secs,
                generators,
            })
        }
    }
}

/// A fitted shadow model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shadow {
    Tree(DecisionTree),
    Fca(FcaModel),
}

#[derive(Debug, Error)]
pub enum ShadowError {
    #[error(transparent)]
    Tree(#[from] shadow_tree::TreeError),
    #[error(transparent)]
    Fca(#[from] fca::FcaError),
    #[error("shadow json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Predictor for Shadow {
    type Error = ShadowError;
    fn predict_record(&self, r: &[f64]) -> Result<usize, ShadowError> {
        Ok(match self {
            Shadow::Tree(t) => t.predict(r)?,
            Shadow::Fca(m) => m.predict(r)?,
        })
    }
}

impl Shadow {
    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>, ShadowError> {
        rows.iter().map(|r| self.predict_record(r)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("shadow serializes")
    }

    pub fn from_json(text: &str) -> Result<Shadow, ShadowError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Shadow, ShadowError> {
        Shadow::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Fits a shadow of the configured kind. FCA needs `bins`.
pub fn fit_shadow(data: &Dataset, cfg: &ShadowConfig, bins: Option<BinSpec>) -> Result<Shadow, ShadowError> {
    Ok(match cfg.kind {
        ShadowKind::Tree => Shadow::Tree(DecisionTree::fit(data, &cfg.tree_params())?),
        ShadowKind::Fca => {
            let bins = bins.unwrap_or_else(|| BinSpec::tertiles(data));
            let limits = FcaLimits {
                max_concepts: Some(cfg.max_concepts),
                ..FcaLimits::default()
            };
            Shadow::Fca(FcaModel::fit(data, bins, &limits)?)
        }
    })
}

/// Predictions of the target on `rows`.
pub fn target_labels(oracle: &OracleHandle, rows: &[Vec<f64>]) -> Result<Vec<usize>, PipelineError> {
    rows.iter().map(|r| oracle.predict(r)).collect::<Result<_, _>>().stage("evaluate")
}

/// Files written by a run, with their SHA-256 digests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub config: String,
    pub notes: Vec<String>,
    /// Relative path → hex SHA-256. Excludes this manifest and timings.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) struct ArtifactWriter {
    dir: Option<PathBuf>,
    pub hashes: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn new(dir: Option<&Path>) -> Result<Self, PipelineError> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d).stage("write")?;
        }
        Ok(ArtifactWriter {
            dir: dir.map(Path::to_path_buf),
            hashes: BTreeMap::new(),
        })
    }

    pub fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        self.hashes.insert(name.to_string(), sha256_hex(bytes));
        self.put_unhashed(name, bytes)
    }

    pub fn put_unhashed(&self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        if let Some(d) = &self.dir {
            let path = d.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).stage("write")?;
            }
            std::fs::write(path, bytes).stage("write")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub target_seconds: f64,
    pub synth_seconds: f64,
    pub synth_seconds_per_record: f64,
    pub shadow_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub method: Method,
    pub records: usize,
    pub per_class: Vec<usize>,
    pub queries: u64,
    pub filtered: usize,
    pub failures: Vec<ClassFailure>,
}

/// Deterministic part of a run's results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub eval_set: EvalSet,
    pub target_accuracy: f64,
    pub oshadow: EvalReport,
    pub sshadow: EvalReport,
    pub synth: SynthStats,
    pub coverage: Vec<FeatureCoverage>,
}

impl RunReport {
    pub fn summary_row(&self) -> SummaryRow {
        let (fh, fg, ah, ag) = match self.synth.method {
            Method::Hill => (Some(self.sshadow.fidelity), None, Some(self.sshadow.accuracy), None),
            Method::Gan => (None, Some(self.sshadow.fidelity), None, Some(self.sshadow.accuracy)),
        };
        SummaryRow {
            dataset: self.dataset.clone(),
            target_accuracy: self.target_accuracy,
            oshadow_fidelity: self.oshadow.fidelity,
            sshadow_fidelity_hill: fh,
            sshadow_fidelity_gan: fg,
            sshadow_accuracy_hill: ah,
            sshadow_accuracy_gan: ag,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub report: RunReport,
    pub timings: Timings,
    pub manifest: Manifest,
    pub target: Arc<Mlp>,
    pub oshadow: Shadow,
    pub sshadow: Shadow,
    pub view: SynthSet,
    pub prepared: Prepared,
}

/// Runs the pipeline and writes artifacts under `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    execute(cfg, Some(&cfg.output_dir))
}

/// Runs the pipeline without touching the filesystem.
pub fn run_in_memory(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    execute(cfg, None)
}

fn execute(cfg: &PipelineConfig, out: Option<&Path>) -> Result<PipelineOutcome, PipelineError> {
    let t0 = Instant::now();
    let prepared = prepare(cfg)?;
    let mut notes = Vec::new();
    if cfg.synth.method == Method::Gan && cfg.data.scaling == Scaling::None {
        notes.push("scaling forced to minmax for GAN synthesis".to_string());
    }

    let t = Instant::now();
    let (net, _) = train_target(&prepared.train, &cfg.target, cfg.seed)?;
    let target_seconds = t.elapsed().as_secs_f64();
    let net = Arc::new(net);
    let oracle = OracleHandle::in_process(Arc::clone(&net)).stage("target")?;
    let test_target = target_labels(&oracle, &prepared.test.rows)?;
    let target_accuracy =
        crate::eval::accuracy(&test_target, &prepared.test.labels).stage("evaluate")?;

    let t = Instant::now();
    let domains = prepared.domains();
    let synth = synthesize(&oracle, &cfg.synth, &domains, seed::derive(cfg.seed, &[slot::SYNTH]))?;
    let synth_seconds = t.elapsed().as_secs_f64();
    let mut view = synth.records.clone();
    view.data.feature_names = prepared.train.feature_names.clone();
    view.data.class_names = prepared.train.class_names.clone();
    if view.is_empty() {
        return Err(stage_msg("synth", "no records were synthesized".into()));
    }

    let t = Instant::now();
    let bins = (cfg.shadow.kind == ShadowKind::Fca).then(|| prepared.bins_for(&view.data));
    let train_relabelled = prepared
        .train
        .relabel(target_labels(&oracle, &prepared.train.rows)?)
        .stage("shadow")?;
    let oshadow = fit_shadow(&train_relabelled, &cfg.shadow, bins.clone()).stage("shadow")?;
    let sshadow = fit_shadow(&view.data, &cfg.shadow, bins.clone()).stage("shadow")?;
    let shadow_seconds = t.elapsed().as_secs_f64();

    let (eval_rows, eval_truth, eval_target) = match cfg.eval.set {
        EvalSet::Test => (prepared.test.rows.clone(), prepared.test.labels.clone(), test_target),
        EvalSet::Synth => {
            let eval_cfg = SynthConfig {
                method: Method::Hill,
                records_per_class: cfg.eval.synth_records_per_class,
                ..cfg.synth.clone()
            };
            let ev = synthesize(&oracle, &eval_cfg, &domains, seed::derive(cfg.seed, &[slot::EVAL]))?;
            let t = target_labels(&oracle, &ev.records.data.rows)?;
            (ev.records.data.rows, ev.records.data.labels, t)
        }
    };
    let classes = prepared.train.class_count();
    let score = |s: &Shadow| -> Result<EvalReport, PipelineError> {
        let p = s.predict_all(&eval_rows).stage("evaluate")?;
        EvalReport::new(&p, &eval_target, &eval_truth, classes).stage("evaluate")
    };
    let report = RunReport {
        dataset: prepared.name.clone(),
        eval_set: cfg.eval.set,
        target_accuracy,
        oshadow: score(&oshadow)?,
        sshadow: score(&sshadow)?,
        synth: SynthStats {
            method: cfg.synth.method,
            records: view.len(),
            per_class: synth.per_class.clone(),
            queries: synth.queries,
            filtered: synth.filtered,
            failures: synth.failures.clone(),
        },
        coverage: coverage_report(&view.data, &domains, Some(&prepared.train)).stage("evaluate")?,
    };

    let mut w = ArtifactWriter::new(out)?;
    write_artifacts(&mut w, cfg, &prepared, &net, &synth, &view, &oshadow, &sshadow, &report, &oracle)?;

    let timings = Timings {
        target_seconds,
        synth_seconds,
        synth_seconds_per_record: synth.seconds_per_record,
        shadow_seconds,
        total_seconds: t0.elapsed().as_secs_f64(),
    };
    w.put_unhashed("timings.json", &serde_json::to_vec_pretty(&timings).stage("write")?)?;
    let manifest = Manifest {
        seed: cfg.seed,
        stage_seeds: stage_seeds(cfg.seed),
        config: cfg.to_toml(),
        notes,
        artifacts: w.hashes.clone(),
    };
    w.put_unhashed("manifest.json", &serde_json::to_vec_pretty(&manifest).stage("write")?)?;

    Ok(PipelineOutcome {
        report,
        timings,
        manifest,
        target: net,
        oshadow,
        sshadow,
        view,
        prepared,
    })
}

/// Header fields recorded in the target model blob.
pub fn target_header(prepared: &Prepared) -> Vec<(&'static str, String)> {
    vec![
        ("dataset", prepared.name.clone()),
        ("features", prepared.train.feature_names.join(",")),
        ("classes", prepared.train.class_names.join(",")),
        (
            "scaling",
            if prepared.scaler.is_some() { "minmax" } else { "none" }.to_string(),
        ),
    ]
}

#[allow(clippy::too_many_arguments)]
fn write_artifacts(
    w: &mut ArtifactWriter,
    cfg: &PipelineConfig,
    prepared: &Prepared,
    net: &Mlp,
    synth: &SynthOutput,
    view: &SynthSet,
    oshadow: &Shadow,
    sshadow: &Shadow,
    report: &RunReport,
    oracle: &OracleHandle,
) -> Result<(), PipelineError> {
    let header = target_header(prepared);
    let header_refs: Vec<(&str, String)> = header.iter().map(|(k, v)| (*k, v.clone())).collect();
    w.put("target.model", netcore::serialize_with_header(net, &header_refs).as_bytes())?;
    if let Some(s) = &prepared.scaler {
        w.put("scaler.json", &serde_json::to_vec_pretty(s).stage("write")?)?;
    }
    let mut buf = Vec::new();
    save_to(&mut buf, |b| super::ingest::write_labelled_csv(&prepared.raw_train, b))?;
    w.put("train.csv", &buf)?;
    let mut buf = Vec::new();
    save_to(&mut buf, |b| super::ingest::write_labelled_csv(&prepared.raw_test, b))?;
    w.put("test.csv", &buf)?;
    let mut buf = Vec::new();
    view.write_csv(&mut buf).stage("write")?;
    w.put("synth.csv", &buf)?;
    for (i, g) in synth.generators.iter().enumerate() {
        w.put(&format!("generators/g{i:02}_class{}.model", g.class), g.to_blob().as_bytes())?;
    }

    for (name, shadow) in [("oshadow", oshadow), ("sshadow", sshadow)] {
        w.put(&format!("{name}.json"), shadow.to_json().as_bytes())?;
        explain_shadow(w, name, shadow, view, &prepared.train.class_names)?;
    }

    // Permutation importance of target and SShadow on the evaluation split.
    let test_target = prepared
        .test
        .relabel(target_labels(oracle, &prepared.test.rows)?)
        .stage("explain")?;
    let reps = cfg.shadow.permutation_repeats;
    let pseed = seed::derive(cfg.seed, &[slot::EXPLAIN]);
    let pi_target = shadow_tree::permutation_importance(net, &prepared.test, reps, pseed).stage("explain")?;
    let pi_shadow = shadow_tree::permutation_importance(sshadow, &test_target, reps, pseed).stage("explain")?;
    let mut csv = String::from("feature,target,sshadow\n");
    for (j, name) in prepared.train.feature_names.iter().enumerate() {
        csv += &format!("{name},{:?},{:?}\n", pi_target[j], pi_shadow[j]);
    }
    w.put("permutation_importance.csv", csv.as_bytes())?;

    let row = report.summary_row();
    let eval_name = match report.eval_set {
        EvalSet::Test => "test split",
        EvalSet::Synth => "synthesized records",
    };
    let mut text = crate::eval::summary_text(std::slice::from_ref(&row), eval_name);
    text += &format!(
        "\nsynthesized records: {} ({:?} per class), queries: {}, filtered: {}\n",
        report.synth.records, report.synth.per_class, report.synth.queries, report.synth.filtered
    );
    for (name, r) in [("oshadow", &report.oshadow), ("sshadow", &report.sshadow)] {
        text += &format!("\n{name} confusion (rows: target class, columns: shadow class)\n");
        for line in &r.confusion {
            text += &format!("  {line:?}\n");
        }
    }
    w.put("report.txt", text.as_bytes())?;
    w.put("report.csv", crate::eval::summary_csv(&[row]).as_bytes())?;
    w.put("report.json", &serde_json::to_vec_pretty(report).stage("write")?)?;
    w.put("coverage.csv", crate::eval::coverage_csv(&report.coverage).as_bytes())?;
    Ok(())
}

fn save_to<F>(buf: &mut Vec<u8>, f: F) -> Result<(), PipelineError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), crate::data::DataError>,
{
    f(buf).stage("write")
}

/// Human-readable explanation files for one shadow.
pub(crate) fn explain_shadow(
    w: &mut ArtifactWriter,
    name: &str,
    shadow: &Shadow,
    view: &SynthSet,
    class_names: &[String],
) -> Result<(), PipelineError> {
    for (file, text) in explain_texts(shadow, &view.data, class_names).stage("explain")? {
        w.put(&format!("{name}_{file}"), text.as_bytes())?;
    }
    Ok(())
}

/// `(file suffix, contents)` pairs describing a shadow. For FCA the
/// context and implications are built from `view` with class attributes.
pub fn explain_texts(
    shadow: &Shadow,
    view: &Dataset,
    class_names: &[String],
) -> Result<Vec<(String, String)>, fca::FcaError> {
    Ok(match shadow {
        Shadow::Tree(t) => {
            let mut imp = String::from("feature,importance\n");
            for (n, v) in t.feature_names.iter().zip(t.importance()) {
                imp += &format!("{n},{v:?}\n");
            }
            vec![
                ("tree.txt".into(), t.render()),
                ("rules.txt".into(), t.rules_text()),
                ("importance.csv".into(), imp),
            ]
        }
        Shadow::Fca(m) => {
            let ctx = fca::binarize(view, &m.bins, true)?;
            let rows = fca::fca_importance(&m.lattices, &m.bins);
            let mut out = vec![
                ("context.cxt".into(), ctx.to_cxt()),
                ("importance.txt".into(), fca::importance_text(&rows, class_names)),
                ("importance.csv".into(), fca::importance_csv(&rows, class_names)),
            ];
            let basis = fca::implications(&ctx)?;
            let class_attrs = fca::MAX_ATTRIBUTES.min(ctx.attribute_count());
            let first_class = class_attrs - class_names.len();
            let class_mask: u64 = (first_class..class_attrs).fold(0, |m, a| m | 1 << a);
            // Supported rules from feature bins to a class, conclusion cut
            // down to the class attribute.
            let to_class: Vec<_> = basis
                .iter()
                .filter(|i| i.support > 0 && i.conclusion & class_mask != 0 && i.premise & class_mask == 0)
                .map(|i| fca::Implication {
                    conclusion: i.conclusion & class_mask,
                    ..i.clone()
                })
                .collect();
            out.push(("implications.txt".into(), fca::implications_text(&ctx, &basis)));
            out.push(("class_rules.txt".into(), fca::implications_text(&ctx, &to_class)));
            out
        }
    })
}
