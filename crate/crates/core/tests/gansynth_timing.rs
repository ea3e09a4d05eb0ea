use std::sync::Arc;
use std::time::Duration;

use dataview::oracle::{self, OracleHandle};
use dataview::pipeline::{prepare, synthesize, train_target, DataConfig, Method, PipelineConfig};

// Hill synthesis is query-bound; GAN generation needs no query once trained.
// Against a served blackbox this shows up as an order-of-magnitude gap.
#[test]
fn gan_generation_is_ten_times_faster_than_hill_per_record() {
    let mut cfg = PipelineConfig::new(DataConfig::builtin("pima"));
    cfg.synth.records_per_class = 300;
    let prepared = prepare(&cfg).unwrap();
    let (net, _) = train_target(&prepared.train, &cfg.target, cfg.seed).unwrap();
    let net = Arc::new(net);
    let local = OracleHandle::in_process(Arc::clone(&net)).unwrap();
    let domains = prepared.domains();

    let mut gan_cfg = cfg.synth.clone();
    gan_cfg.method = Method::Gan;
    let gan = synthesize(&local, &gan_cfg, &domains, 1).unwrap();
    let hill_local = synthesize(&local, &cfg.synth, &domains, 1).unwrap();

    let server = oracle::serve(Arc::clone(&net), "127.0.0.1:0").unwrap();
    let remote = OracleHandle::remote(
        &server.local_addr().to_string(),
        Duration::from_secs(5),
        net.input_dim(),
        net.output_dim(),
    )
    .unwrap();
    let hill_remote = synthesize(&remote, &cfg.synth, &domains, 1).unwrap();
    server.shutdown();

    let g = gan.seconds_per_record;
    println!(
        "per record: gan {g:.3e}s, hill in-process {:.3e}s ({:.1}x), hill served {:.3e}s ({:.1}x)",
        hill_local.seconds_per_record,
        hill_local.seconds_per_record / g,
        hill_remote.seconds_per_record,
        hill_remote.seconds_per_record / g
    );
    assert!(g > 0.0);
    assert!(hill_local.seconds_per_record > g);
    assert!(hill_remote.seconds_per_record >= 10.0 * g);
    assert_eq!(hill_remote.records.data.rows, hill_local.records.data.rows);
}
