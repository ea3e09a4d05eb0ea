//! On-disk working directory for running the pipeline one stage at a time.
//!
//! Layout: `config.toml`, `target.model`, `scaler.json` (when scaling),
//! `train.csv` and `test.csv` in raw feature units, then whatever later
//! stages add (`synth.csv`, shadows, explanations). `manifest.json` holds
//! the SHA-256 of every file written through [`Workdir::put`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::{PipelineConfig, ShadowConfig, SynthConfig};
use super::ingest::{load_labelled_csv, write_labelled_csv, MinMaxScaler};
use super::run::{
    explain_texts, fit_shadow, prepare, stage_seeds, synthesize, target_header, target_labels,
    train_target, sha256_hex, slot, Manifest, PipelineError, Prepared, Shadow, StageExt,
    SynthOutput,
};
use crate::data::{Dataset, SynthSet};
use crate::eval::EvalReport;
use crate::netcore::{self, Mlp};
use crate::oracle::OracleHandle;
use crate::seed;

pub struct Workdir {
    pub dir: PathBuf,
    pub config: PipelineConfig,
    pub net: Arc<Mlp>,
    pub prepared: Prepared,
}

fn msg(stage: &'static str, m: String) -> PipelineError {
    PipelineError::Stage {
        stage,
        source: m.into(),
    }
}

impl Workdir {
    /// Prepares the data, trains the target and writes the base files.
    pub fn create(cfg: &PipelineConfig, dir: &Path) -> Result<Workdir, PipelineError> {
        let prepared = prepare(cfg)?;
        let (net, _) = train_target(&prepared.train, &cfg.target, cfg.seed)?;
        let wd = Workdir {
            dir: dir.to_path_buf(),
            config: cfg.clone(),
            net: Arc::new(net),
            prepared,
        };
        std::fs::create_dir_all(dir).stage("write")?;
        wd.put("config.toml", cfg.to_toml().as_bytes())?;
        let header = target_header(&wd.prepared);
        wd.put("target.model", netcore::serialize_with_header(&wd.net, &header).as_bytes())?;
        if let Some(s) = &wd.prepared.scaler {
            wd.put("scaler.json", &serde_json::to_vec_pretty(s).stage("write")?)?;
        }
        for (name, data) in [("train.csv", &wd.prepared.raw_train), ("test.csv", &wd.prepared.raw_test)] {
            let mut buf = Vec::new();
            write_labelled_csv(data, &mut buf).stage("write")?;
            wd.put(name, &buf)?;
        }
        Ok(wd)
    }

    pub fn open(dir: &Path) -> Result<Workdir, PipelineError> {
        let config = PipelineConfig::load(&dir.join("config.toml"))?;
        let text = std::fs::read_to_string(dir.join("target.model")).stage("load")?;
        let blob = netcore::deserialize(&text).stage("load")?;
        let classes: Vec<String> = blob
            .header_value("classes")
            .ok_or_else(|| msg("load", "target.model has no `classes` header".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let raw_train = load_labelled_csv(&dir.join("train.csv"), classes.clone()).stage("load")?;
        let raw_test = load_labelled_csv(&dir.join("test.csv"), classes).stage("load")?;
        let scaler_path = dir.join("scaler.json");
        let scaler: Option<MinMaxScaler> = if scaler_path.exists() {
            let t = std::fs::read_to_string(scaler_path).stage("load")?;
            Some(serde_json::from_str(&t).stage("load")?)
        } else {
            None
        };
        let (train, test) = match &scaler {
            Some(s) => (s.transform(&raw_train), s.transform(&raw_test)),
            None => (raw_train.clone(), raw_test.clone()),
        };
        if train.feature_count() != blob.net.input_dim() || train.class_count() != blob.net.output_dim() {
            return Err(msg("load", "train.csv does not match the target model shape".into()));
        }
        Ok(Workdir {
            dir: dir.to_path_buf(),
            prepared: Prepared {
                name: config.data.name(),
                raw_train,
                raw_test,
                train,
                test,
                scaler,
            },
            config,
            net: Arc::new(blob.net),
        })
    }

    pub fn oracle(&self) -> Result<OracleHandle, PipelineError> {
        OracleHandle::in_process(Arc::clone(&self.net)).stage("target")
    }

    pub fn class_names(&self) -> &[String] {
        &self.prepared.train.class_names
    }

    /// Writes `name` under the directory and records its hash.
    pub fn put(&self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).stage("write")?;
        }
        std::fs::write(&path, bytes).stage("write")?;
        let mpath = self.dir.join("manifest.json");
        let mut manifest: Manifest = match std::fs::read_to_string(&mpath) {
            Ok(t) => serde_json::from_str(&t).stage("write")?,
            Err(_) => Manifest {
                seed: self.config.seed,
                stage_seeds: stage_seeds(self.config.seed),
                config: self.config.to_toml(),
                ..Manifest::default()
            },
        };
        manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
        std::fs::write(mpath, serde_json::to_vec_pretty(&manifest).stage("write")?).stage("write")
    }

    /// Synthesizes a view against `oracle`, which may be remote.
    pub fn synthesize(&self, oracle: &OracleHandle, cfg: &SynthConfig) -> Result<SynthOutput, PipelineError> {
        let domains = self.prepared.domains();
        let mut out = synthesize(oracle, cfg, &domains, seed::derive(self.config.seed, &[slot::SYNTH]))?;
        out.records.data.feature_names = self.prepared.train.feature_names.clone();
        out.records.data.class_names = self.class_names().to_vec();
        Ok(out)
    }

    /// Writes the view as `name` plus any generators.
    pub fn save_synth(&self, name: &str, out: &SynthOutput) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        out.records.write_csv(&mut buf).stage("write")?;
        self.put(name, &buf)?;
        for (i, g) in out.generators.iter().enumerate() {
            self.put(&format!("generators/g{i:02}_class{}.model", g.class), g.to_blob().as_bytes())?;
        }
        Ok(())
    }

    /// Loads a synthesized view with this directory's names attached.
    pub fn load_view(&self, path: &Path) -> Result<SynthSet, PipelineError> {
        let mut v = SynthSet::load(path, self.class_names().len()).stage("load")?;
        if v.data.feature_count() != self.prepared.train.feature_count() {
            return Err(msg("load", format!("{} has the wrong feature count", path.display())));
        }
        v.data.feature_names = self.prepared.train.feature_names.clone();
        v.data.class_names = self.class_names().to_vec();
        Ok(v)
    }

    /// Training split relabelled by the target, the OShadow training set.
    pub fn train_as_target(&self) -> Result<Dataset, PipelineError> {
        let labels = target_labels(&self.oracle()?, &self.prepared.train.rows)?;
        self.prepared.train.relabel(labels).stage("shadow")
    }

    /// Fits a shadow on `data`; FCA bins come from `bins_view`.
    pub fn fit(&self, data: &Dataset, cfg: &ShadowConfig, bins_view: &Dataset) -> Result<Shadow, PipelineError> {
        let bins = (cfg.kind == super::config::ShadowKind::Fca).then(|| self.prepared.bins_for(bins_view));
        fit_shadow(data, cfg, bins).stage("shadow")
    }

    /// Fidelity and accuracy on the test split.
    pub fn evaluate(&self, shadow: &Shadow) -> Result<EvalReport, PipelineError> {
        let test = &self.prepared.test;
        let target = target_labels(&self.oracle()?, &test.rows)?;
        let pred = shadow.predict_all(&test.rows).stage("evaluate")?;
        EvalReport::new(&pred, &target, &test.labels, test.class_count()).stage("evaluate")
    }

    /// Writes explanation files named `<prefix>_<file>`.
    pub fn explain(&self, prefix: &str, shadow: &Shadow, view: &Dataset) -> Result<Vec<String>, PipelineError> {
        let mut names = Vec::new();
        for (file, text) in explain_texts(shadow, view, self.class_names()).stage("explain")? {
            let name = format!("{prefix}_{file}");
            self.put(&name, text.as_bytes())?;
            names.push(name);
        }
        Ok(names)
    }
}
