//! Parameter sweeps and the replication battery.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{DataConfig, Method, PipelineConfig, ShadowKind};
use super::run::{
    load_data, run_in_memory, run_pipeline, ArtifactWriter, PipelineError, PipelineOutcome,
    StageExt,
};
use crate::eval::{summary_csv, summary_text, SummaryRow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// Purchase-like class count.
    NumClasses,
    /// Purchase-like feature count.
    NumFeatures,
    /// Total synthesized records, split evenly over classes.
    NumRecords,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sweep: Sweep,
    pub values: Vec<usize>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Everything the sweep does not vary. `records_per_class` and
    /// `conf_min` are read from `base.synth`.
    pub base: PipelineConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Stage {
            stage: "experiment",
            source: m.to_string().into(),
        });
        if self.values.is_empty() || self.values.contains(&0) {
            return bad("sweep values must be positive and non-empty");
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("sweep values must be strictly increasing");
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            return bad("at least one method and one seed are required");
        }
        if matches!(self.sweep, Sweep::NumClasses | Sweep::NumFeatures) && self.base.data.purchase.is_none() {
            return bad("class and feature sweeps need a purchase-like data source");
        }
        if self.sweep == Sweep::NumClasses && self.values[0] < 2 {
            return bad("class sweeps need at least 2 classes");
        }
        self.base.validate()?;
        Ok(())
    }

    /// Config for one cell of the sweep.
    pub fn config_for(&self, value: usize, method: Method, seed: u64, classes: usize) -> PipelineConfig {
        let mut cfg = self.base.clone();
        cfg.seed = seed;
        cfg.synth.method = method;
        match self.sweep {
            Sweep::NumClasses => {
                if let Some(p) = cfg.data.purchase.as_mut() {
                    p.classes = value;
                }
            }
            Sweep::NumFeatures => {
                if let Some(p) = cfg.data.purchase.as_mut() {
                    p.features = value;
                }
            }
            Sweep::NumRecords => cfg.synth.records_per_class = (value / classes).max(1),
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub method: Method,
    pub runs: usize,
    pub fidelity_mean: f64,
    pub fidelity_sd: f64,
    pub oshadow_fidelity_mean: f64,
    pub sshadow_accuracy_mean: f64,
    pub seconds_per_record_mean: f64,
    pub queries_mean: f64,
    pub records_mean: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// One row per `(value, method)`, averaged over seeds. Runs stay in memory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<SweepRow>, PipelineError> {
    spec.validate()?;
    let classes = match spec.sweep {
        Sweep::NumRecords => load_data(&spec.base)?.class_count(),
        _ => 0,
    };
    let mut rows = Vec::new();
    for &value in &spec.values {
        for &method in &spec.methods {
            let outs = spec
                .seeds
                .iter()
                .map(|&s| run_in_memory(&spec.config_for(value, method, s, classes)))
                .collect::<Result<Vec<_>, _>>()?;
            let pick = |f: &dyn Fn(&PipelineOutcome) -> f64| -> Vec<f64> { outs.iter().map(f).collect() };
            let (fm, fsd) = mean_sd(&pick(&|o| o.report.sshadow.fidelity));
            rows.push(SweepRow {
                value,
                method,
                runs: outs.len(),
                fidelity_mean: fm,
                fidelity_sd: fsd,
                oshadow_fidelity_mean: mean_sd(&pick(&|o| o.report.oshadow.fidelity)).0,
                sshadow_accuracy_mean: mean_sd(&pick(&|o| o.report.sshadow.accuracy)).0,
                seconds_per_record_mean: mean_sd(&pick(&|o| o.timings.synth_seconds_per_record)).0,
                queries_mean: mean_sd(&pick(&|o| o.report.synth.queries as f64)).0,
                records_mean: mean_sd(&pick(&|o| o.report.synth.records as f64)).0,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(sweep: Sweep, rows: &[SweepRow]) -> String {
    let name = match sweep {
        Sweep::NumClasses => "num_classes",
        Sweep::NumFeatures => "num_features",
        Sweep::NumRecords => "num_records",
    };
    let mut s = format!(
        "{name},method,runs,fidelity_mean,fidelity_sd,oshadow_fidelity_mean,sshadow_accuracy_mean,seconds_per_record,queries_mean,records_mean\n"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:?},{:?},{:?},{:?},{:e},{:?},{:?}",
            r.value,
            r.method.name(),
            r.runs,
            r.fidelity_mean,
            r.fidelity_sd,
            r.oshadow_fidelity_mean,
            r.sshadow_accuracy_mean,
            r.seconds_per_record_mean,
            r.queries_mean,
            r.records_mean
        );
    }
    s
}

/// The fixed battery run by `replicate`.
pub fn replicate_configs(seed: u64, records_per_class: usize) -> Vec<(&'static str, PipelineConfig)> {
    let make = |data: &str, method: Method, kind: ShadowKind| {
        let mut c = PipelineConfig::new(DataConfig::builtin(data));
        c.seed = seed;
        c.synth.method = method;
        c.synth.records_per_class = records_per_class;
        c.shadow.kind = kind;
        c
    };
    vec![
        ("zoo-hill-tree", make("zoo", Method::Hill, ShadowKind::Tree)),
        ("pima-hill-tree", make("pima", Method::Hill, ShadowKind::Tree)),
        ("pima-gan-tree", make("pima", Method::Gan, ShadowKind::Tree)),
        ("pima-hill-fca", make("pima", Method::Hill, ShadowKind::Fca)),
    ]
}

#[derive(Clone, Debug)]
pub struct ReplicateOutcome {
    pub runs: Vec<(String, PipelineOutcome)>,
    pub summary: Vec<SummaryRow>,
    /// `run/file` → hex SHA-256 for every hashed artifact of every run.
    pub hashes: BTreeMap<String, String>,
}

/// Runs the battery under `out_dir/<run name>/` and writes a combined
/// summary and `manifest.json` at the top level.
pub fn replicate(seed: u64, records_per_class: usize, out_dir: &Path) -> Result<ReplicateOutcome, PipelineError> {
    let mut runs = Vec::new();
    let mut hashes = BTreeMap::new();
    for (name, mut cfg) in replicate_configs(seed, records_per_class) {
        cfg.output_dir = out_dir.join(name);
        let out = run_pipeline(&cfg)?;
        for (file, h) in &out.manifest.artifacts {
            hashes.insert(format!("{name}/{file}"), h.clone());
        }
        runs.push((name.to_string(), out));
    }
    let summary = merge_summary(&runs);
    let mut w = ArtifactWriter::new(Some(out_dir))?;
    w.put("summary.txt", summary_text(&summary, "test split").as_bytes())?;
    w.put("summary.csv", summary_csv(&summary).as_bytes())?;
    for (k, v) in &w.hashes {
        hashes.insert(k.clone(), v.clone());
    }
    let manifest = serde_json::json!({
        "seed": seed,
        "records_per_class": records_per_class,
        "runs": replicate_configs(seed, records_per_class).iter().map(|(n, _)| *n).collect::<Vec<_>>(),
        "artifacts": hashes,
    });
    w.put_unhashed("manifest.json", &serde_json::to_vec_pretty(&manifest).stage("write")?)?;
    Ok(ReplicateOutcome { runs, summary, hashes })
}

/// One row per dataset, combining the hill and GAN tree runs.
fn merge_summary(runs: &[(String, PipelineOutcome)]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = Vec::new();
    for (name, out) in runs {
        if !name.ends_with("-tree") {
            continue;
        }
        let r = out.report.summary_row();
        match rows.iter_mut().find(|x| x.dataset == r.dataset) {
            Some(row) => {
                row.sshadow_fidelity_hill = row.sshadow_fidelity_hill.or(r.sshadow_fidelity_hill);
                row.sshadow_fidelity_gan = row.sshadow_fidelity_gan.or(r.sshadow_fidelity_gan);
                row.sshadow_accuracy_hill = row.sshadow_accuracy_hill.or(r.sshadow_accuracy_hill);
                row.sshadow_accuracy_gan = row.sshadow_accuracy_gan.or(r.sshadow_accuracy_gan);
            }
            None => rows.push(r),
        }
    }
    rows
}
