//! Per-class generators trained through a frozen blackbox.
//!
//! A generator maps uniform noise in `[-1, 1]^noise_size` to a record in
//! `[-1, 1]^features` (tanh head). To train it, its output is fed to the
//! blackbox and the cross-entropy against a soft one-hot target
//! (`soft_target` in the class slot, zeros elsewhere) is backpropagated:
//! through the blackbox down to its *input*, then on into the generator.
//! Only generator weights move; the blackbox is borrowed immutably for the
//! whole run.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SynthSet;
use crate::netcore::{
    self, loss, loss_grad, Activation, BlobError, Mlp, NetError, Optimizer, ParamGrads,
};
use crate::oracle::{OracleError, OracleHandle};
use crate::seed;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("gradient-free oracle cannot train a generator")]
    NoGradients,
    #[error("class {class} out of range for {classes} classes")]
    BadClass { class: usize, classes: usize },
    #[error("invalid generator configuration: {0}")]
    BadConfig(String),
    #[error("non-finite generator loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error("generator blob lacks header field `{0}`")]
    MissingHeader(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub noise_size: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub soft_target: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    /// `noise = features`, one relu hidden layer of `2 * features`.
    pub fn for_features(features: usize) -> Self {
        GeneratorConfig {
            noise_size: features,
            hidden: vec![2 * features],
            epochs: 500,
            batch_size: 32,
            learning_rate: 0.005,
            soft_target: 0.99,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GanError> {
        let bad = |m: &str| Err(GanError::BadConfig(m.into()));
        if self.noise_size == 0 || self.hidden.contains(&0) {
            return bad("layer widths must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be non-negative");
        }
        if !(self.soft_target > 0.0 && self.soft_target <= 1.0) {
            return bad("soft target must be in (0, 1]");
        }
        Ok(())
    }
}

/// Zeros with `soft_target` at `class`. Deliberately not normalised.
pub fn make_target(class: usize, num_class: usize, soft_target: f64) -> Result<Vec<f64>, GanError> {
    if class >= num_class {
        return Err(GanError::BadClass {
            class,
            classes: num_class,
        });
    }
    let mut t = vec![0.0; num_class];
    t[class] = soft_target;
    Ok(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub body: Mlp,
    pub class: usize,
    pub noise_size: usize,
}

impl Generator {
    /// Freshly initialised generator for `features` outputs.
    pub fn new<R: Rng + ?Sized>(
        class: usize,
        features: usize,
        cfg: &GeneratorConfig,
        rng: &mut R,
    ) -> Result<Self, GanError> {
        cfg.validate()?;
        let mut sizes = vec![cfg.noise_size];
        sizes.extend(&cfg.hidden);
        sizes.push(features);
        let body = Mlp::random(&sizes, Activation::Relu, Activation::Tanh, rng)?;
        Ok(Generator {
            body,
            class,
            noise_size: cfg.noise_size,
        })
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.noise_size).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    }

    pub fn output(&self, noise: &[f64]) -> Result<Vec<f64>, GanError> {
        Ok(self.body.forward(noise)?)
    }

    pub fn to_blob(&self) -> String {
        netcore::serialize_with_header(
            &self.body,
            &[
                ("class", self.class.to_string()),
                ("noise_size", self.noise_size.to_string()),
            ],
        )
    }

    pub fn from_blob(text: &str) -> Result<Self, GanError> {
        let blob = netcore::deserialize(text)?;
        let field = |k: &'static str| -> Result<usize, GanError> {
            blob.header_value(k)
                .and_then(|v| v.parse().ok())
                .ok_or(GanError::MissingHeader(k))
        };
        let class = field("class")?;
        let noise_size = field("noise_size")?;
        if noise_size != blob.net.input_dim() {
            return Err(GanError::BadConfig(format!(
                "noise_size {noise_size} disagrees with input width {}",
                blob.net.input_dim()
            )));
        }
        Ok(Generator {
            body: blob.net,
            class,
            noise_size,
        })
    }
}

/// Loss of `blackbox(generator(noise))` against `target` and its gradient
/// with respect to the generator's parameters. The blackbox contributes
/// only its input gradient.
pub fn composite_gradient(
    generator: &Mlp,
    blackbox: &Mlp,
    noise: &[f64],
    target: &[f64],
) -> Result<(f64, ParamGrads), NetError> {
    let g_trace = generator.forward_trace(noise)?;
    let b_trace = blackbox.forward_trace(g_trace.output())?;
    let l = loss(b_trace.output(), target)?;
    let d_probs = loss_grad(b_trace.output(), target)?;
    let d_record = blackbox.backward_input(&b_trace, &d_probs);
    let (grads, _) = generator.backward(&g_trace, &d_record);
    Ok((l, grads))
}

/// Composite loss only, for finite-difference checks.
pub fn composite_loss(
    generator: &Mlp,
    blackbox: &Mlp,
    noise: &[f64],
    target: &[f64],
) -> Result<f64, NetError> {
    let x = generator.forward(noise)?;
    loss(&blackbox.forward(&x)?, target)
}

#[derive(Clone, Debug)]
pub struct TrainedGenerator {
    pub generator: Generator,
    /// Mean batch loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Trains one generator for `class`. Each epoch draws one batch of
/// `batch_size` noise vectors and takes one Adam step.
pub fn train_generator(
    oracle: &OracleHandle,
    class: usize,
    cfg: &GeneratorConfig,
) -> Result<TrainedGenerator, GanError> {
    let blackbox = oracle.differentiable().ok_or(GanError::NoGradients)?;
    cfg.validate()?;
    let target = make_target(class, oracle.class_count(), cfg.soft_target)?;
    let mut rng = seed::rng(cfg.seed, &[0]);
    let mut generator = Generator::new(class, oracle.feature_count(), cfg, &mut rng)?;
    let mut opt = Optimizer::adam().state(&generator.body);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut acc = ParamGrads::zeros_like(&generator.body);
        let mut total = 0.0;
        for _ in 0..cfg.batch_size {
            let noise = generator.sample_noise(&mut rng);
            let (l, g) = composite_gradient(&generator.body, blackbox, &noise, &target)?;
            total += l;
            acc.add_assign(&g);
        }
        let mean = total / cfg.batch_size as f64;
        if !mean.is_finite() {
            return Err(GanError::NonFiniteLoss { epoch });
        }
        acc.scale(1.0 / cfg.batch_size as f64);
        opt.apply(&mut generator.body, &acc, cfg.learning_rate);
        if !generator.body.all_finite() {
            return Err(GanError::NonFiniteLoss { epoch });
        }
        history.push(mean);
    }
    Ok(TrainedGenerator {
        generator,
        loss_history: history,
    })
}

/// Output of [`generate`]: labelled records plus per-record wall time.
#[derive(Clone, Debug)]
pub struct Generated {
    pub records: SynthSet,
    pub record_seconds: Vec<f64>,
}

/// Draws `n` records from a generator, tagging each with the blackbox
/// confidence for the generator's class. The recorded time covers noise
/// sampling and the forward pass; the tagging query is excluded.
pub fn generate<R: Rng + ?Sized>(
    generator: &Generator,
    oracle: &OracleHandle,
    n: usize,
    rng: &mut R,
) -> Result<Generated, GanError> {
    let mut records = SynthSet::empty(oracle.feature_count(), oracle.class_count());
    let mut record_seconds = Vec::with_capacity(n);
    for _ in 0..n {
        let start = Instant::now();
        let noise = generator.sample_noise(rng);
        let x = generator.output(&noise)?;
        record_seconds.push(start.elapsed().as_secs_f64());
        let p = oracle.classify(&x)?;
        records.push(x, generator.class, p[generator.class]);
    }
    Ok(Generated {
        records,
        record_seconds,
    })
}

/// Trains `ensembles` generators per class, each from its own seed
/// `(cfg.seed, class, ensemble)`. Results are ordered by class, then by
/// ensemble index.
pub fn train_all_generators(
    oracle: &OracleHandle,
    cfg: &GeneratorConfig,
    ensembles: usize,
) -> Result<Vec<TrainedGenerator>, GanError> {
    if oracle.differentiable().is_none() {
        return Err(GanError::NoGradients);
    }
    let jobs: Vec<(usize, usize)> = (0..oracle.class_count())
        .flat_map(|c| (0..ensembles).map(move |e| (c, e)))
        .collect();
    jobs.par_iter()
        .map(|&(c, e)| {
            let cfg = GeneratorConfig {
                seed: seed::derive(cfg.seed, &[c as u64, e as u64]),
                ..cfg.clone()
            };
            train_generator(oracle, c, &cfg)
        })
        .collect()
}

/// Samples `n_per_class` records per class, split as evenly as possible
/// over that class's generators (pooled ensemble).
pub fn sample_pooled(
    generators: &[Generator],
    oracle: &OracleHandle,
    n_per_class: usize,
    seed_base: u64,
) -> Result<Generated, GanError> {
    let mut out = Generated {
        records: SynthSet::empty(oracle.feature_count(), oracle.class_count()),
        record_seconds: Vec::new(),
    };
    for class in 0..oracle.class_count() {
        let members: Vec<&Generator> = generators.iter().filter(|g| g.class == class).collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len();
        for (e, g) in members.into_iter().enumerate() {
            let n = n_per_class / m + usize::from(e < n_per_class % m);
            let mut rng = seed::rng(seed_base, &[class as u64, e as u64, 1]);
            let part = generate(g, oracle, n, &mut rng)?;
            out.records.append(part.records);
            out.record_seconds.extend(part.record_seconds);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::DenseLayer;
    use std::sync::Arc;

    fn linear_bb() -> Arc<Mlp> {
        let layer = DenseLayer {
            in_dim: 2,
            out_dim: 2,
            weights: vec![-3.0, -3.0, 3.0, 3.0],
            bias: vec![0.0, 0.0],
            activation: Activation::Softmax,
        };
        Arc::new(Mlp::from_layers(vec![layer]).unwrap())
    }

    #[test]
    fn targets() {
        assert_eq!(make_target(2, 4, 0.99).unwrap(), vec![0.0, 0.0, 0.99, 0.0]);
        assert_eq!(make_target(0, 2, 1.0).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(make_target(5, 3, 0.99), Err(GanError::BadClass { .. })));
    }

    #[test]
    fn remote_like_oracle_is_refused() {
        let h = OracleHandle::from_fn(2, 2, |_| vec![0.5, 0.5]).unwrap();
        let cfg = GeneratorConfig::for_features(2);
        assert!(matches!(train_generator(&h, 0, &cfg), Err(GanError::NoGradients)));
        assert!(matches!(train_all_generators(&h, &cfg, 1), Err(GanError::NoGradients)));
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let h = OracleHandle::in_process(linear_bb()).unwrap();
        let cfg = GeneratorConfig {
            epochs: 0,
            seed: 3,
            ..GeneratorConfig::for_features(2)
        };
        let trained = train_generator(&h, 1, &cfg).unwrap();
        let mut rng = seed::rng(3, &[0]);
        let fresh = Generator::new(1, 2, &cfg, &mut rng).unwrap();
        assert_eq!(trained.generator, fresh);
        assert!(trained.loss_history.is_empty());
    }

    #[test]
    fn training_moves_mass_to_the_class() {
        let bb = linear_bb();
        let h = OracleHandle::in_process(Arc::clone(&bb)).unwrap();
        let before = netcore::serialize(&bb);
        for class in 0..2 {
            let cfg = GeneratorConfig {
                epochs: 500,
                seed: 11,
                ..GeneratorConfig::for_features(2)
            };
            let trained = train_generator(&h, class, &cfg).unwrap();
            let mut rng = seed::rng(1, &[]);
            let out = generate(&trained.generator, &h, 1000, &mut rng).unwrap();
            let hits = out
                .records
                .data
                .rows
                .iter()
                .filter(|r| h.predict(r).unwrap() == class)
                .count();
            assert!(hits >= 900, "class {class}: {hits}");
            for r in &out.records.data.rows {
                assert!(r.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
        assert_eq!(netcore::serialize(&bb), before);
    }

    #[test]
    fn generate_is_seeded() {
        let h = OracleHandle::in_process(linear_bb()).unwrap();
        let cfg = GeneratorConfig::for_features(2);
        let g = Generator::new(0, 2, &cfg, &mut seed::rng(1, &[])).unwrap();
        let a = generate(&g, &h, 20, &mut seed::rng(9, &[])).unwrap();
        let b = generate(&g, &h, 20, &mut seed::rng(9, &[])).unwrap();
        assert_eq!(a.records, b.records);
        assert!(generate(&g, &h, 0, &mut seed::rng(9, &[])).unwrap().records.is_empty());
    }

    #[test]
    fn ensembles_have_distinct_seeds() {
        let h = OracleHandle::in_process(Arc::new(
            Mlp::from_layers(vec![DenseLayer::zeros(2, 3, Activation::Softmax)]).unwrap(),
        ))
        .unwrap();
        let cfg = GeneratorConfig {
            epochs: 0,
            ..GeneratorConfig::for_features(2)
        };
        let gens = train_all_generators(&h, &cfg, 2).unwrap();
        assert_eq!(gens.len(), 6);
        for (i, a) in gens.iter().enumerate() {
            assert_eq!(a.generator.class, i / 2);
            for b in &gens[i + 1..] {
                assert_ne!(a.generator.body, b.generator.body);
            }
        }
    }

    #[test]
    fn blob_round_trip() {
        let cfg = GeneratorConfig::for_features(3);
        let g = Generator::new(2, 3, &cfg, &mut seed::rng(1, &[])).unwrap();
        let back = Generator::from_blob(&g.to_blob()).unwrap();
        assert_eq!(back, g);
        let plain = netcore::serialize(&g.body);
        assert!(matches!(
            Generator::from_blob(&plain),
            Err(GanError::MissingHeader("class"))
        ));
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = seed::rng(5, &[]);
        let bb = Mlp::random(&[2, 2, 2], Activation::Relu, Activation::Softmax, &mut rng).unwrap();
        let cfg = GeneratorConfig {
            noise_size: 2,
            hidden: vec![2],
            ..GeneratorConfig::for_features(2)
        };
        let g = Generator::new(0, 2, &cfg, &mut rng).unwrap().body;
        let noise = [0.3, -0.7];
        let target = make_target(1, 2, 0.99).unwrap();
        let (_, grads) = composite_gradient(&g, &bb, &noise, &target).unwrap();
        let h = 1e-6;
        for (li, layer) in g.layers().iter().enumerate() {
            for wi in 0..layer.weights.len() {
                let mut plus = g.clone();
                plus.layers_mut()[li].weights[wi] += h;
                let mut minus = g.clone();
                minus.layers_mut()[li].weights[wi] -= h;
                let fd = (composite_loss(&plus, &bb, &noise, &target).unwrap()
                    - composite_loss(&minus, &bb, &noise, &target).unwrap())
                    / (2.0 * h);
                let an = grads.weights[li][wi];
                assert!((fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()) + 1e-7, "{fd} vs {an}");
            }
        }
    }

    fn mean_conf(out: &Generated) -> f64 {
        out.records.confidence.iter().sum::<f64>() / out.records.len() as f64
    }

    #[test]
    fn trained_beats_untrained() {
        let h = OracleHandle::in_process(linear_bb()).unwrap();
        let cfg = GeneratorConfig {
            epochs: 200,
            seed: 2,
            ..GeneratorConfig::for_features(2)
        };
        let untrained = Generator::new(0, 2, &cfg, &mut seed::rng(2, &[0])).unwrap();
        let trained = train_generator(&h, 0, &cfg).unwrap().generator;
        let a = generate(&untrained, &h, 500, &mut seed::rng(4, &[])).unwrap();
        let b = generate(&trained, &h, 500, &mut seed::rng(4, &[])).unwrap();
        assert!(mean_conf(&b) > mean_conf(&a));
    }

    fn variances(rows: &[Vec<f64>]) -> Vec<f64> {
        let n = rows.len() as f64;
        (0..rows[0].len())
            .map(|j| {
                let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n
            })
            .collect()
    }

    #[test]
    fn pooled_ensemble_spreads_wider() {
        let mut rng = seed::rng(8, &[]);
        let bb = Mlp::random(&[4, 8, 2], Activation::Relu, Activation::Softmax, &mut rng).unwrap();
        let h = OracleHandle::in_process(Arc::new(bb)).unwrap();
        let cfg = GeneratorConfig {
            epochs: 300,
            seed: 8,
            ..GeneratorConfig::for_features(4)
        };
        let gens: Vec<Generator> = train_all_generators(&h, &cfg, 4)
            .unwrap()
            .into_iter()
            .map(|t| t.generator)
            .filter(|g| g.class == 0)
            .collect();
        let pooled = sample_pooled(&gens, &h, 800, 1).unwrap();
        let single = generate(&gens[0], &h, 800, &mut seed::rng(1, &[])).unwrap();
        let vp = variances(&pooled.records.data.rows);
        let vs = variances(&single.records.data.rows);
        let wider = vp.iter().zip(&vs).filter(|(p, s)| p >= s).count();
        assert!(wider * 2 >= vp.len(), "{vp:?} vs {vs:?}");
    }
}
