//! Acceptance battery. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PtConfig, TestRunner};
use rand::Rng;

use dataview::data::Dataset;
use dataview::eval::fidelity;
use dataview::fca::{self, AttrSet, FormalContext};
use dataview::gansynth::{self, Generator, GeneratorConfig};
use dataview::netcore::{self, Activation, DenseLayer, Mlp};
use dataview::oracle::{self, OracleHandle};
use dataview::pipeline::run::sha256_hex;
use dataview::pipeline::{
    prepare, replicate, run_experiment, run_in_memory, synthesize, train_target, DataConfig,
    ExperimentSpec, Method, PipelineConfig, PurchaseShape, Sweep,
};
use dataview::seed;
use dataview::shadow_tree::{DecisionTree, Node, TreeParams};

type Verdict = Result<String, String>;
type Criterion = (u32, &'static str, u64, fn() -> Verdict);

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "gradient correctness", 10, c1_gradients),
        (2, "hill synthesis soundness", 300, c2_hill_soundness),
        (3, "freeze contract", 300, c3_freeze),
        (4, "GAN efficacy", 300, c4_gan_efficacy),
        (5, "fidelity direction", 600, c5_fidelity_direction),
        (6, "FCA oracle equivalence", 60, c6_fca_oracle),
        (7, "tree oracle equivalence", 30, c7_tree_oracle),
        (8, "fidelity properties", 5, c8_fidelity_properties),
        (9, "trend replication", 1200, c9_trends),
        (10, "reproducibility", 600, c10_reproducibility),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    for (n, name, limit, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|w| name.contains(w.as_str()) || *w == n.to_string()) {
            continue;
        }
        let t = Instant::now();
        let verdict = f();
        let secs = t.elapsed().as_secs_f64();
        let (ok, detail) = match verdict {
            Ok(d) if secs < limit as f64 => (true, d),
            Ok(d) => (false, format!("{d}; over the time limit")),
            Err(d) => (false, d),
        };
        println!(
            "criterion {n:>2} {name:<26} {} [{secs:.1}s / {limit}s] {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. Gradients against central finite differences.

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= (1e-4 * analytic.abs().max(numeric.abs())).max(1e-7)
}

fn random_net<R: Rng>(rng: &mut R, input: usize, output: usize, head: Activation) -> Mlp {
    let depth = rng.gen_range(1..=3);
    let mut sizes = vec![input];
    for _ in 1..depth {
        sizes.push(rng.gen_range(1..=6));
    }
    sizes.push(output);
    let hidden = if rng.gen_bool(0.5) { Activation::Relu } else { Activation::Tanh };
    let mut net = Mlp::random(&sizes, hidden, head, rng).unwrap();
    for l in net.layers_mut() {
        for b in &mut l.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    net
}

fn random_target<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn layer_param(l: &mut DenseLayer, i: usize) -> &mut f64 {
    let w = l.weights.len();
    if i < w {
        &mut l.weights[i]
    } else {
        &mut l.bias[i - w]
    }
}

fn c1_gradients() -> Verdict {
    const H: f64 = 1e-6;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = seed::rng(1, &[case]);
        let features = rng.gen_range(1..=6);
        let classes = rng.gen_range(2..=5);
        let bb = random_net(&mut rng, features, classes, Activation::Softmax);
        let x: Vec<f64> = (0..features).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let t = random_target(&mut rng, classes);
        let loss_at = |x: &[f64]| netcore::loss(&bb.forward(x).unwrap(), &t).unwrap();
        let g = bb.input_gradient(&x, &t).unwrap();
        for j in 0..features {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += H;
            xm[j] -= H;
            let num = (loss_at(&xp) - loss_at(&xm)) / (2.0 * H);
            worst = worst.max((g[j] - num).abs());
            if !close(g[j], num) {
                return Err(format!("case {case}: input grad {j} analytic {} numeric {num}", g[j]));
            }
            checked += 1;
        }

        let noise = rng.gen_range(1..=5);
        let gen = random_net(&mut rng, noise, features, Activation::Tanh);
        let z: Vec<f64> = (0..noise).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, grads) = gansynth::composite_gradient(&gen, &bb, &z, &t).unwrap();
        for li in 0..gen.layers().len() {
            let count = gen.layers()[li].weights.len() + gen.layers()[li].bias.len();
            for i in 0..count {
                let mut p = gen.clone();
                let mut m = gen.clone();
                *layer_param(&mut p.layers_mut()[li], i) += H;
                *layer_param(&mut m.layers_mut()[li], i) -= H;
                let num = (gansynth::composite_loss(&p, &bb, &z, &t).unwrap()
                    - gansynth::composite_loss(&m, &bb, &z, &t).unwrap())
                    / (2.0 * H);
                let w = gen.layers()[li].weights.len();
                let a = if i < w { grads.weights[li][i] } else { grads.bias[li][i - w] };
                worst = worst.max((a - num).abs());
                if !close(a, num) {
                    return Err(format!("case {case}: generator layer {li} param {i} analytic {a} numeric {num}"));
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} partials over 100 cases, max abs error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 2. Every hill record replays through a fresh served oracle.

fn c2_hill_soundness() -> Verdict {
    let mut parts = Vec::new();
    for ds in ["zoo", "pima"] {
        let cfg = PipelineConfig::new(DataConfig::builtin(ds));
        let prepared = prepare(&cfg).map_err(|e| e.to_string())?;
        let (net, _) = train_target(&prepared.train, &cfg.target, cfg.seed).map_err(|e| e.to_string())?;
        let net = Arc::new(net);
        let local = OracleHandle::in_process(Arc::clone(&net)).unwrap();
        let out = synthesize(&local, &cfg.synth, &prepared.domains(), 11).map_err(|e| e.to_string())?;
        let server = oracle::serve(Arc::clone(&net), "127.0.0.1:0").unwrap();
        let fresh = OracleHandle::remote(
            &server.local_addr().to_string(),
            Duration::from_secs(10),
            net.input_dim(),
            net.output_dim(),
        )
        .unwrap();
        let mut bad = 0;
        for (r, &l) in out.records.data.rows.iter().zip(&out.records.data.labels) {
            let (c, conf) = fresh.classify(r).unwrap().top();
            if c != l || conf < 0.7 {
                bad += 1;
            }
        }
        server.shutdown();
        let classes = net.output_dim();
        if bad > 0 || out.per_class != vec![1000; classes] {
            return Err(format!("{ds}: {bad} records failed replay, per class {:?}", out.per_class));
        }
        parts.push(format!("{ds} {} records replayed", out.records.len()));
    }
    Ok(parts.join(", "))
}

// ---------------------------------------------------------------------------
// 3. Target blob unchanged by generator training.

fn c3_freeze() -> Verdict {
    let mut runs = 0;
    for ds in ["zoo", "pima"] {
        for s in 0..3u64 {
            let mut cfg = PipelineConfig::new(DataConfig::builtin(ds));
            cfg.seed = s;
            let prepared = prepare(&cfg).map_err(|e| e.to_string())?;
            let (net, _) = train_target(&prepared.train, &cfg.target, s).map_err(|e| e.to_string())?;
            let before = sha256_hex(netcore::serialize(&net).as_bytes());
            let net = Arc::new(net);
            let oracle = OracleHandle::in_process(Arc::clone(&net)).unwrap();
            let gc = GeneratorConfig {
                epochs: 100,
                seed: s,
                ..GeneratorConfig::for_features(net.input_dim())
            };
            gansynth::train_all_generators(&oracle, &gc, 2).map_err(|e| e.to_string())?;
            let after = sha256_hex(netcore::serialize(&net).as_bytes());
            if before != after {
                return Err(format!("{ds} seed {s}: blob hash changed"));
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} training runs, hashes identical"))
}

// ---------------------------------------------------------------------------
// 4. Trained generators hit their class and beat their initialization.

fn c4_gan_efficacy() -> Verdict {
    let cfg = PipelineConfig::new(DataConfig::builtin("pima"));
    let prepared = prepare(&cfg).map_err(|e| e.to_string())?;
    if prepared.scaler.is_none() {
        return Err("target is not scaled".into());
    }
    let (net, _) = train_target(&prepared.train, &cfg.target, cfg.seed).map_err(|e| e.to_string())?;
    let oracle = OracleHandle::in_process(Arc::new(net)).unwrap();
    let gc = cfg.synth.generator_config(oracle.feature_count(), 21);
    let untrained_cfg = GeneratorConfig { epochs: 0, ..gc.clone() };
    let mut parts = Vec::new();
    let mut ok = true;
    for class in 0..oracle.class_count() {
        let trained = gansynth::train_generator(&oracle, class, &gc).map_err(|e| e.to_string())?;
        let untrained = gansynth::train_generator(&oracle, class, &untrained_cfg).map_err(|e| e.to_string())?;
        let sample = |g: &Generator| {
            let mut rng = seed::rng(99, &[class as u64]);
            gansynth::generate(g, &oracle, 1000, &mut rng).unwrap().records
        };
        let t = sample(&trained.generator);
        let u = sample(&untrained.generator);
        let hit = t
            .data
            .rows
            .iter()
            .filter(|r| oracle.predict(r).unwrap() == class)
            .count() as f64
            / 1000.0;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mt, mu) = (mean(&t.confidence), mean(&u.confidence));
        ok &= hit >= 0.8 && mt > mu;
        parts.push(format!("class {class}: {:.1}% on-class, confidence {mt:.3} vs untrained {mu:.3}", hit * 100.0));
    }
    check(ok, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 5. SShadow vs OShadow fidelity on the test split.

fn c5_fidelity_direction() -> Verdict {
    let mut lines = Vec::new();
    let mut wins = [0usize; 2];
    for (i, ds) in ["pima", "zoo"].into_iter().enumerate() {
        let mut pairs = Vec::new();
        for s in 0..5u64 {
            let mut cfg = PipelineConfig::new(DataConfig::builtin(ds));
            cfg.seed = s;
            let out = run_in_memory(&cfg).map_err(|e| e.to_string())?;
            let (o, sh) = (out.report.oshadow.fidelity, out.report.sshadow.fidelity);
            let slack = if ds == "zoo" { 0.02 } else { 0.0 };
            if sh >= o - slack - 1e-12 {
                wins[i] += 1;
            }
            pairs.push(format!("{o:.3}/{sh:.3}"));
        }
        lines.push(format!("{ds} O/S {} ({} of 5)", pairs.join(" "), wins[i]));
    }
    check(wins[0] >= 4 && wins[1] >= 4, lines.join("; "))
}

// ---------------------------------------------------------------------------
// 6. NextClosure and the canonical basis against brute force.

fn brute_closure(rows: &[AttrSet], m: usize, a: AttrSet) -> (Vec<usize>, AttrSet) {
    let full: AttrSet = if m == 64 { !0 } else { (1 << m) - 1 };
    let extent: Vec<usize> = (0..rows.len()).filter(|&g| rows[g] & a == a).collect();
    let intent = extent.iter().fold(full, |acc, &g| acc & rows[g]);
    (extent, intent)
}

fn c6_fca_oracle() -> Verdict {
    let mut total_concepts = 0;
    let mut total_rules = 0;
    for case in 0..200u64 {
        let mut rng = seed::rng(6, &[case]);
        let g = rng.gen_range(0..=8);
        let m = rng.gen_range(1..=8);
        let density = rng.gen_range(0.1..0.9);
        let rows: Vec<AttrSet> = (0..g)
            .map(|_| (0..m).filter(|_| rng.gen_bool(density)).fold(0, |acc, a| acc | 1 << a))
            .collect();
        let ctx = FormalContext::from_rows((0..m).map(|a| format!("a{a}")).collect(), rows.clone())
            .map_err(|e| e.to_string())?;
        let mut expected = BTreeSet::new();
        for a in 0..(1u64 << m) {
            expected.insert(brute_closure(&rows, m, a));
        }
        let got: BTreeSet<(Vec<usize>, AttrSet)> = fca::concepts(&ctx)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|c| (c.extent.iter().collect(), c.intent))
            .collect();
        if got != expected {
            return Err(format!("case {case}: {} concepts, brute force {}", got.len(), expected.len()));
        }
        let basis = fca::implications(&ctx).map_err(|e| e.to_string())?;
        for a in 0..(1u64 << m) {
            let want = brute_closure(&rows, m, a).1;
            let have = fca::implication_closure(&basis, a);
            if want != have {
                return Err(format!("case {case}: basis closure of {a:#b} is {have:#b}, context gives {want:#b}"));
            }
        }
        total_concepts += got.len();
        total_rules += basis.len();
    }
    Ok(format!("200 contexts, {total_concepts} concepts, {total_rules} basis implications"))
}

// ---------------------------------------------------------------------------
// 7. Root split against an exhaustive Gini scan; rules agree with predict.

fn weighted_gini(labels: &[usize], classes: usize) -> f64 {
    let n = labels.len() as f64;
    let mut counts = vec![0.0; classes];
    for &l in labels {
        counts[l] += 1.0;
    }
    1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
}

fn c7_tree_oracle() -> Verdict {
    let params = TreeParams::default();
    let mut splits = 0;
    for case in 0..50u64 {
        let mut rng = seed::rng(7, &[case]);
        let n = rng.gen_range(5..=30);
        let f = rng.gen_range(1..=4);
        let k = rng.gen_range(2..=3);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..f).map(|_| rng.gen_range(0..6) as f64 + if rng.gen_bool(0.3) { 0.25 } else { 0.0 }).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let data = Dataset::new(
            (0..f).map(|j| format!("x{j}")).collect(),
            (0..k).map(|c| c.to_string()).collect(),
            rows.clone(),
            labels.clone(),
        )
        .map_err(|e| e.to_string())?;
        let tree = DecisionTree::fit(&data, &params).map_err(|e| e.to_string())?;

        let parent = weighted_gini(&labels, k);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut candidates = Vec::new();
        for j in 0..f {
            let mut vals: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<usize>, Vec<usize>) = {
                    let l = (0..n).filter(|&i| rows[i][j] <= t).map(|i| labels[i]).collect();
                    let r = (0..n).filter(|&i| rows[i][j] > t).map(|i| labels[i]).collect();
                    (l, r)
                };
                let imp = (l.len() as f64 * weighted_gini(&l, k) + r.len() as f64 * weighted_gini(&r, k)) / n as f64;
                candidates.push((imp, j, t));
                if best.is_none_or(|b| imp < b.0) {
                    best = Some((imp, j, t));
                }
            }
        }
        let expected = best.and_then(|(b, _, _)| {
            if parent - b < params.min_impurity_decrease || parent == 0.0 {
                return None;
            }
            candidates
                .iter()
                .filter(|c| c.0 <= b + 1e-12)
                .min_by(|x, y| x.1.cmp(&y.1).then(x.2.total_cmp(&y.2)))
                .map(|c| (c.1, c.2))
        });
        let got = match &tree.nodes[0] {
            Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            Node::Leaf { .. } => None,
        };
        if got != expected {
            return Err(format!("case {case}: root {got:?}, exhaustive scan {expected:?}"));
        }
        splits += usize::from(got.is_some());

        let rules = tree.extract_rules();
        for _ in 0..1000 {
            let r: Vec<f64> = (0..f)
                .map(|_| if rng.gen_bool(0.5) { rng.gen_range(-2..14) as f64 / 2.0 } else { rng.gen_range(-1.0..6.0) })
                .collect();
            let matching: Vec<_> = rules.iter().filter(|ru| ru.matches(&r)).collect();
            let p = tree.predict(&r).map_err(|e| e.to_string())?;
            if matching.len() != 1 || matching[0].class != p {
                return Err(format!("case {case}: {} rules match {r:?}, predict {p}", matching.len()));
            }
        }
    }
    Ok(format!("50 datasets ({splits} split roots), 50000 rule/predict agreements"))
}

// ---------------------------------------------------------------------------
// 8. Fidelity identity, symmetry and permutation invariance.

fn c8_fidelity_properties() -> Verdict {
    let mut runner = TestRunner::new(PtConfig {
        failure_persistence: None,
        ..PtConfig::with_cases(1000)
    });
    let strategy = (1usize..200)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0usize..6, n),
                prop::collection::vec(0usize..6, n),
                Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
            )
        });
    runner
        .run(&strategy, |(a, b, perm)| {
            let fab = fidelity(&a, &b).unwrap();
            prop_assert_eq!(fidelity(&a, &a).unwrap(), 1.0);
            prop_assert_eq!(fab, fidelity(&b, &a).unwrap());
            let pa: Vec<usize> = perm.iter().map(|&i| a[i]).collect();
            let pb: Vec<usize> = perm.iter().map(|&i| b[i]).collect();
            prop_assert_eq!(fab, fidelity(&pa, &pb).unwrap());
            let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count();
            prop_assert_eq!(fab, agree as f64 / a.len() as f64);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 cases".into())
}

// ---------------------------------------------------------------------------
// 9. Sweep trends.

fn purchase_base(features: usize, classes: usize) -> PipelineConfig {
    PipelineConfig::new(DataConfig::purchase(PurchaseShape {
        users: 1000,
        features,
        classes,
    }))
}

fn c9_trends() -> Verdict {
    let seeds: Vec<u64> = (0..5).collect();
    let run = |sweep, values: Vec<usize>, methods: Vec<Method>, base| {
        run_experiment(&ExperimentSpec {
            sweep,
            values,
            methods,
            seeds: seeds.clone(),
            base,
        })
        .map_err(|e| e.to_string())
    };
    let mut parts = Vec::new();
    let mut ok = true;

    let feat = run(Sweep::NumFeatures, vec![10, 30], vec![Method::Hill], purchase_base(10, 2))?;
    let pass = feat[0].fidelity_mean >= feat[1].fidelity_mean;
    ok &= pass;
    parts.push(format!(
        "features 10->30 {:.3}->{:.3} {}",
        feat[0].fidelity_mean,
        feat[1].fidelity_mean,
        if pass { "ok" } else { "FAIL" }
    ));

    let cls = run(Sweep::NumClasses, vec![2, 5], vec![Method::Hill], purchase_base(15, 2))?;
    let pass = cls[1].fidelity_mean >= cls[0].fidelity_mean - 0.03;
    ok &= pass;
    parts.push(format!(
        "classes 2->5 {:.3}->{:.3} {}",
        cls[0].fidelity_mean,
        cls[1].fidelity_mean,
        if pass { "ok" } else { "FAIL" }
    ));

    let rec = run(
        Sweep::NumRecords,
        vec![200, 5000],
        vec![Method::Hill, Method::Gan],
        PipelineConfig::new(DataConfig::builtin("pima")),
    )?;
    let hill: Vec<_> = rec.iter().filter(|r| r.method == Method::Hill).collect();
    let gan: Vec<_> = rec.iter().filter(|r| r.method == Method::Gan).collect();
    let timing = hill
        .iter()
        .zip(&gan)
        .all(|(h, g)| g.seconds_per_record_mean < h.seconds_per_record_mean);
    ok &= timing;
    parts.push(format!(
        "per-record seconds gan/hill {} {}",
        hill.iter()
            .zip(&gan)
            .map(|(h, g)| format!("{:.1e}/{:.1e}", g.seconds_per_record_mean, h.seconds_per_record_mean))
            .collect::<Vec<_>>()
            .join(" "),
        if timing { "ok" } else { "FAIL" }
    ));
    let pass = hill[1].fidelity_mean >= hill[0].fidelity_mean - 0.03;
    ok &= pass;
    parts.push(format!(
        "pima records 200->5000 {:.3}->{:.3} {}",
        hill[0].fidelity_mean,
        hill[1].fidelity_mean,
        if pass { "ok" } else { "FAIL" }
    ));
    check(ok, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 10. Same seed, same artifact hashes.

fn c10_reproducibility() -> Verdict {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ra = replicate(0, 1000, a.path()).map_err(|e| e.to_string())?;
    let rb = replicate(0, 1000, b.path()).map_err(|e| e.to_string())?;
    if ra.hashes != rb.hashes {
        let diff: Vec<_> = ra.hashes.iter().filter(|(k, v)| rb.hashes.get(*k) != Some(v)).map(|(k, _)| k).collect();
        return Err(format!("hashes differ: {diff:?}"));
    }
    for (name, h) in &ra.hashes {
        let bytes = std::fs::read(b.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        if &sha256_hex(&bytes) != h {
            return Err(format!("{name}: file on disk does not match its hash"));
        }
    }
    let ma = std::fs::read(a.path().join("manifest.json")).map_err(|e| e.to_string())?;
    let mb = std::fs::read(b.path().join("manifest.json")).map_err(|e| e.to_string())?;
    check(ma == mb, format!("{} artifacts byte-identical across two runs", ra.hashes.len()))
}
