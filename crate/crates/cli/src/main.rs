use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dataview::oracle::{self, OracleHandle};
use dataview::pipeline::{
    replicate, run_experiment, run_pipeline, sweep_csv, DataConfig, ExperimentSpec, Method,
    PipelineConfig, Shadow, ShadowKind, Sweep, Workdir,
};
use dataview::{eval, netcore};

#[derive(Parser)]
#[command(name = "dataview", version, about = "Explain a blackbox classifier through synthesized data views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split and scale the data, train the target and write the work directory.
    TrainTarget {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Serve a target model as a remote oracle until interrupted.
    ServeOracle {
        /// A `target.model` file or a work directory containing one.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7070")]
        addr: String,
    },
    /// Synthesize a data view by querying the target.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        conf_min: Option<f64>,
        /// Drop generated records below `conf_min` (GAN only).
        #[arg(long, action = clap::ArgAction::Set)]
        filter_confidence: Option<bool>,
        /// Query a served oracle at this address instead of the local model.
        #[arg(long)]
        remote: Option<String>,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        #[arg(long, default_value = "synth.csv")]
        out: String,
    },
    /// Fit a shadow model on a synthesized view or on the relabelled training split.
    FitShadow {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// `synth` fits an SShadow on `--view`, `train` an OShadow.
        #[arg(long, value_enum, default_value = "synth")]
        on: OnArg,
        #[arg(long, default_value = "synth.csv")]
        view: String,
        #[arg(long)]
        max_depth: Option<usize>,
        /// Defaults to `sshadow.json` or `oshadow.json`.
        #[arg(long)]
        out: Option<String>,
    },
    /// Fidelity and accuracy of a shadow on the test split.
    Evaluate {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "sshadow.json")]
        shadow: String,
        #[arg(long)]
        json: bool,
    },
    /// Write rules, importances and implications for a shadow.
    Explain {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "sshadow.json")]
        shadow: String,
        #[arg(long, default_value = "synth.csv")]
        view: String,
        /// Print the tree or importance table to stdout as well.
        #[arg(long)]
        print: bool,
    },
    /// Sweep one parameter over several seeds and methods.
    Experiment {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum)]
        sweep: SweepArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "hill")]
        methods: Vec<MethodArg>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        conf_min: Option<f64>,
        /// CSV output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Zoo and Pima battery and write a combined summary.
    Replicate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        per_class: usize,
        #[arg(long, default_value = "replicate")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Source {
    /// Pipeline config file.
    #[arg(long, conflicts_with_all = ["builtin", "purchase"])]
    config: Option<PathBuf>,
    /// Bundled dataset: zoo or pima.
    #[arg(long)]
    builtin: Option<String>,
    /// Purchase-like data as FEATURES,CLASSES with 1000 users.
    #[arg(long, value_delimiter = ',', conflicts_with = "builtin")]
    purchase: Option<Vec<usize>>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Source {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = if let Some(p) = &self.config {
            PipelineConfig::load(p)?
        } else if let Some(b) = &self.builtin {
            PipelineConfig::new(DataConfig::builtin(b))
        } else if let Some(p) = &self.purchase {
            if p.len() != 2 {
                bail!("--purchase takes FEATURES,CLASSES");
            }
            PipelineConfig::new(DataConfig::purchase(dataview::pipeline::PurchaseShape {
                users: 1000,
                features: p[0],
                classes: p[1],
            }))
        } else {
            bail!("one of --config, --builtin or --purchase is required");
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Hill,
    Gan,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Hill => Method::Hill,
            MethodArg::Gan => Method::Gan,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Tree,
    Fca,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnArg {
    Synth,
    Train,
}

#[derive(Clone, Copy, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum SweepArg {
    NumClasses,
    NumFeatures,
    NumRecords,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, out } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let out = run_pipeline(&cfg)?;
            print!("{}", std::fs::read_to_string(cfg.output_dir.join("report.txt"))?);
            eprintln!("artifacts: {} files in {}", out.manifest.artifacts.len() + 2, cfg.output_dir.display());
        }
        Command::TrainTarget { source, dir } => {
            let cfg = source.config()?;
            let wd = Workdir::create(&cfg, &dir)?;
            let oracle = wd.oracle()?;
            let test = &wd.prepared.test;
            let pred = test.rows.iter().map(|r| oracle.predict(r)).collect::<Result<Vec<_>, _>>()?;
            println!(
                "{}: {} train / {} test records, target test accuracy {:.4}",
                wd.prepared.name,
                wd.prepared.train.len(),
                test.len(),
                eval::accuracy(&pred, &test.labels)?
            );
        }
        Command::ServeOracle { model, addr } => {
            let path = if model.is_dir() { model.join("target.model") } else { model };
            let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
            let blob = netcore::deserialize(&text)?;
            let (f, c) = (blob.net.input_dim(), blob.net.output_dim());
            let server = oracle::serve(std::sync::Arc::new(blob.net), &addr)?;
            println!("serving {} ({f} features, {c} classes) on {}", path.display(), server.local_addr());
            server.wait();
        }
        Command::Synth {
            dir,
            method,
            per_class,
            conf_min,
            filter_confidence,
            remote,
            timeout_ms,
            out,
        } => {
            let wd = Workdir::open(&dir)?;
            let mut sc = wd.config.synth.clone();
            sc.method = method.into();
            if let Some(n) = per_class {
                sc.records_per_class = n;
            }
            if let Some(c) = conf_min {
                sc.conf_min = c;
            }
            if let Some(f) = filter_confidence {
                sc.gan.filter_confidence = f;
            }
            if sc.method == Method::Gan && wd.prepared.scaler.is_none() {
                bail!("GAN synthesis needs a min-max scaled target; retrain with scaling = \"minmax\"");
            }
            let oracle = match &remote {
                Some(a) => OracleHandle::remote(
                    a,
                    Duration::from_millis(timeout_ms),
                    wd.prepared.train.feature_count(),
                    wd.class_names().len(),
                )?,
                None => wd.oracle()?,
            };
            let s = wd.synthesize(&oracle, &sc)?;
            wd.save_synth(&out, &s)?;
            println!(
                "{} records {:?} per class, {} queries, {} filtered, {:.3e} s/record -> {}",
                s.records.len(),
                s.per_class,
                s.queries,
                s.filtered,
                s.seconds_per_record,
                dir.join(&out).display()
            );
            for f in &s.failures {
                eprintln!(
                    "class {}: {} failed attempts, best confidence {:.4}",
                    f.class, f.failed_attempts, f.best_confidence
                );
            }
        }
        Command::FitShadow {
            dir,
            kind,
            on,
            view,
            max_depth,
            out,
        } => {
            let wd = Workdir::open(&dir)?;
            let mut sc = wd.config.shadow.clone();
            sc.kind = match kind {
                KindArg::Tree => ShadowKind::Tree,
                KindArg::Fca => ShadowKind::Fca,
            };
            if let Some(d) = max_depth {
                sc.max_depth = d;
            }
            let view_path = dir.join(&view);
            let view_set = if view_path.exists() {
                Some(wd.load_view(&view_path)?)
            } else {
                None
            };
            let (data, default_name) = match on {
                OnArg::Synth => match &view_set {
                    Some(v) => (v.data.clone(), "sshadow.json"),
                    None => bail!("{} not found; run `synth` first", view_path.display()),
                },
                OnArg::Train => (wd.train_as_target()?, "oshadow.json"),
            };
            let bins_view = view_set.as_ref().map_or(&data, |v| &v.data);
            let shadow = wd.fit(&data, &sc, bins_view)?;
            let name = out.unwrap_or_else(|| default_name.to_string());
            wd.put(&name, shadow.to_json().as_bytes())?;
            println!("fitted on {} records -> {}", data.len(), dir.join(name).display());
        }
        Command::Evaluate { dir, shadow, json } => {
            let wd = Workdir::open(&dir)?;
            let s = load_shadow(&dir, &shadow)?;
            let r = wd.evaluate(&s)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("fidelity {:.4}  accuracy {:.4}  n {}", r.fidelity, r.accuracy, r.n);
                println!("confusion (rows: target class, columns: shadow class)");
                for row in &r.confusion {
                    println!("  {row:?}");
                }
            }
        }
        Command::Explain {
            dir,
            shadow,
            view,
            print,
        } => {
            let wd = Workdir::open(&dir)?;
            let s = load_shadow(&dir, &shadow)?;
            let view_path = dir.join(&view);
            let data = if view_path.exists() {
                wd.load_view(&view_path)?.data
            } else {
                wd.train_as_target()?
            };
            let prefix = shadow.trim_end_matches(".json");
            for name in wd.explain(prefix, &s, &data)? {
                println!("{}", dir.join(&name).display());
                if print && (name.ends_with("tree.txt") || name.ends_with("importance.txt")) {
                    print!("{}", std::fs::read_to_string(dir.join(&name))?);
                }
            }
        }
        Command::Experiment {
            source,
            sweep,
            values,
            methods,
            seeds,
            per_class,
            conf_min,
            out,
        } => {
            let mut base = source.config()?;
            if let Some(n) = per_class {
                base.synth.records_per_class = n;
            }
            if let Some(c) = conf_min {
                base.synth.conf_min = c;
            }
            let sweep = match sweep {
                SweepArg::NumClasses => Sweep::NumClasses,
                SweepArg::NumFeatures => Sweep::NumFeatures,
                SweepArg::NumRecords => Sweep::NumRecords,
            };
            let spec = ExperimentSpec {
                sweep,
                values,
                methods: methods.into_iter().map(Method::from).collect(),
                seeds,
                base,
            };
            let csv = sweep_csv(sweep, &run_experiment(&spec)?);
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| p.display().to_string())?,
                None => print!("{csv}"),
            }
        }
        Command::Replicate { seed, per_class, out } => {
            let r = replicate(seed, per_class, &out)?;
            print!("{}", eval::summary_text(&r.summary, "test split"));
            println!("{} artifacts hashed in {}", r.hashes.len(), out.join("manifest.json").display());
        }
    }
    Ok(())
}

fn load_shadow(dir: &Path, name: &str) -> Result<Shadow> {
    let p = dir.join(name);
    Shadow::load(&p).with_context(|| p.display().to_string())
}
