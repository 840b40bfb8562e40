use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use kwapi::bus::{Endpoint, Frame, Publisher, Subscription};
use kwapi::drivers::{
    DeviceMode, DeviceProfile, DriverManager, DriverSpec, Emulation, EmulatorOptions, ManagerOptions,
};
use kwapi::harness::{PollError, Pollster};
use kwapi::viz::{ArchiveSpec, ChartStats, Consolidation, VizConsumer, VizOptions};
use kwapi::{decode_measurement, encode_measurement, Measurement};

fn pull_spec(topic: &str, outlets: u32, interval: f64, fail_every: Option<u64>) -> DriverSpec {
    DriverSpec {
        topic: topic.parse().unwrap(),
        profile: DeviceProfile::new("test", 0.01, 0.1, DeviceMode::Pull, outlets).unwrap(),
        interval_s: interval,
        emulation: Emulation::RandomWalk {
            seed: 5,
            min_w: 50.0,
            max_w: 150.0,
        },
        options: EmulatorOptions {
            voltage: None,
            fail_every,
        },
    }
}

#[test]
fn driver_loss_accounting_and_topics() {
    let publisher = Arc::new(Publisher::local());
    let sub = publisher.subscribe_local(&Subscription::all());
    let ticks = 40;
    let mut mgr = DriverManager::start(
        vec![pull_spec("s/pdu", 3, 0.02, Some(4)), pull_spec("s/ipmi", 1, 0.02, None)],
        Arc::clone(&publisher),
        None,
        ManagerOptions {
            tick_budget: Some(ticks),
            ..Default::default()
        },
    );
    assert!(mgr.wait_completed(Duration::from_secs(20)));
    for st in mgr.statuses() {
        let outlets = if st.topic == "s/pdu" { 3 } else { 1 };
        assert_eq!(st.published + st.lost, ticks * outlets, "{st:?}");
    }
    assert_eq!(mgr.status("s/pdu").unwrap().lost, 10 * 3);
    mgr.stop();

    let mut stamps: Vec<f64> = Vec::new();
    while let Some(f) = sub.try_recv() {
        let m = decode_measurement(&f.payload).unwrap();
        assert_eq!(m.probe.topic(), f.topic);
        if f.topic == "s/ipmi" {
            stamps.push(m.timestamp);
        }
    }
    assert_eq!(stamps.len() as u64, ticks);
    let mean = (stamps[stamps.len() - 1] - stamps[0]) / (stamps.len() - 1) as f64;
    assert!((mean - 0.02).abs() <= 0.02 * 0.05, "mean spacing {mean}");
}

#[test]
fn viz_serves_stats_and_charts_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let publisher = Publisher::bind(&Endpoint::tcp("127.0.0.1", 0)).unwrap();
    let viz = VizConsumer::start(
        publisher.endpoint().unwrap(),
        VizOptions {
            listen: "127.0.0.1:0".into(),
            archives: vec![
                ArchiveSpec::new(1.0, 120, Consolidation::Average).unwrap(),
                ArchiveSpec::new(60.0, 60, Consolidation::Max).unwrap(),
            ],
            secret: None,
            price_eur_per_kwh: 0.25,
            archive_dir: Some(dir.path().join("rra")),
            cache_dir: dir.path().join("cache"),
            flush_period: Duration::from_secs(3600),
            subscription: Subscription::all(),
        },
    )
    .unwrap();
    assert!(publisher.wait_for_subscribers(1, Duration::from_secs(10)));
    for i in 0..60 {
        let m = Measurement::new("lyon/n1".parse().unwrap(), 6000.0 + f64::from(i), 360.0).unwrap();
        publisher
            .publish(&Frame::new("lyon/n1", encode_measurement(&m)).unwrap())
            .unwrap();
    }
    let deadline = Instant::now() + Duration::from_secs(10);
    while viz.state().counters().ingested < 60 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }

    let agent = ureq::agent();
    let stats: ChartStats = serde_json::from_str(
        &agent
            .get(&format!("{}/stats/lyon/n1?from=6000&to=6060", viz.url()))
            .call()
            .unwrap()
            .into_string()
            .unwrap(),
    )
    .unwrap();
    assert_eq!((stats.avg_w, stats.min_w, stats.max_w, stats.last_w), (360.0, 360.0, 360.0, 360.0));
    // 60 one-second buckets at 360 W = 21600 J = 0.006 kWh
    assert!((stats.total_kwh - 0.006).abs() < 1e-15);
    assert!((stats.cost_eur - 0.0015).abs() < 1e-15);

    let svg = agent
        .get(&format!("{}/charts/lyon/n1.svg", viz.url()))
        .call()
        .unwrap();
    assert_eq!(svg.content_type(), "image/svg+xml");
    let body = svg.into_string().unwrap();
    assert!(body.starts_with("<!-- generation-stamp:"));
    assert!(body.contains("data-avg-w=\"360\""));

    match agent.get(&format!("{}/stats/lyon/ghost", viz.url())).call() {
        Err(ureq::Error::Status(404, _)) => {}
        other => panic!("expected 404, got {other:?}"),
    }

    let url = viz.url();
    drop(viz);
    assert!(dir.path().join("rra/lyon/n1/1s-average.rra").exists());
    assert!(ureq::get(&url).timeout(Duration::from_millis(300)).call().is_err());
}

#[test]
fn pollster_gives_up_on_rejected_token() {
    // A server that rejects every token.
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = server.server_addr().to_ip().unwrap();
    let t = std::thread::spawn(move || {
        if let Ok(req) = server.recv() {
            let _ = req.respond(tiny_http::Response::empty(401));
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let p = Pollster::new(format!("http://{addr}"), "wrong", Duration::from_millis(10));
    assert!(matches!(p.run(&dir.path().join("sink"), Some(3)), Err(PollError::Unauthorized)));
    t.join().unwrap();
}

#[test]
fn cli_bench_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("s.json");
    std::fs::write(
        &scenario,
        r#"{"name":"tiny","fleet":"ipmi","signed":true,"interval_s":0.5,"duration_s":1.0}"#,
    )
    .unwrap();
    let out = dir.path().join("results.json");
    let status = Command::new(env!("CARGO_BIN_EXE_kwapi"))
        .args(["bench", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out)
        .env("RUST_LOG", "warn")
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let rows: serde_json::Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
    assert_eq!(rows[0]["frames_published"], 2000);
    assert_eq!(rows[0]["frames_received"], 2000);
    assert_eq!(rows[0]["verified"], 2000);
}

#[test]
fn cli_reports_config_errors_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    std::fs::write(&cfg, "[probe:s/a]\ndriver = ipmi\noops\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_kwapi"))
        .args(["drivers", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}
