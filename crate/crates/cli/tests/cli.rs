use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn vlcsim(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vlcsim"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("VLC_SIM_THREADS", t),
        None => cmd.env_remove("VLC_SIM_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn optimized_config() -> String {
    format!("{}/../../configs/optimized.json", env!("CARGO_MANIFEST_DIR"))
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = vlcsim(&["frobnicate"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(vlcsim(&[], None).status.code(), Some(1));
    assert_eq!(vlcsim(&["--help"], None).status.code(), Some(0));
}

#[test]
fn validation_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"scene": {"pds": {"bogus": 3}}}"#).unwrap();
    let o = vlcsim(&["trace", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("scene.pds.bogus"), "{}", stderr(&o));

    fs::write(&cfg, r#"{"noise_variance": -1}"#).unwrap();
    assert_eq!(vlcsim(&["capacity", "--config", cfg.to_str().unwrap()], None).status.code(), Some(1));
    fs::write(&cfg, "").unwrap();
    let o = vlcsim(&["trace", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1 column 0"), "{}", stderr(&o));

    let missing = dir.path().join("missing.json");
    assert_eq!(vlcsim(&["trace", "--config", missing.to_str().unwrap()], None).status.code(), Some(1));
    assert_eq!(vlcsim(&["capacity", "--offset", "wobble-rx:1"], None).status.code(), Some(1));
    assert_eq!(vlcsim(&["capacity", "--modes", "telepathy"], None).status.code(), Some(1));
    assert_eq!(vlcsim(&["trace", "--rays", "0"], None).status.code(), Some(1));
    assert_eq!(vlcsim(&["trace", "--rays", "10"], Some("many")).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = vlcsim(&["trace", "--rays", "10", "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn trace_writes_matrix_spots_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = vlcsim(&["trace", "--config", &optimized_config(), "--rays", "4000", "--seed", "7", "--out", out], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("half-power angle 21.1 deg"));

    let h = fs::read_to_string(dir.path().join("H.csv")).unwrap();
    assert!(h.starts_with("# seed=7 rays_per_led=4000 scene_digest="));
    let rows = data_lines(&h);
    assert_eq!(rows.len(), 17);
    assert!(rows.iter().all(|r| r.split(',').count() == 17));

    let spots = fs::read_to_string(dir.path().join("spots.csv")).unwrap();
    assert!(spots.lines().nth(1).unwrap() == "source_index,x_mm,y_mm,weight");

    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    let kappa = m["condition_number"].as_f64().unwrap();
    assert!((1.0..3.0).contains(&kappa), "{kappa}");
    assert_eq!(m["seed"], 7);
    assert_eq!(m["spots"].as_array().unwrap().len(), 16);
    assert!((m["half_power_angle_deg"].as_f64().unwrap() - 21.0).abs() < 0.2);
}

#[test]
fn trace_is_byte_identical_across_runs_and_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, Some("1")), (&b, Some("4")), (&c, None)] {
        let o = vlcsim(&["trace", "--seed", "7", "--rays", "3000", "--out", dir.path().to_str().unwrap()], threads);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let read = |d: &Path| fs::read(d.join("H.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(read(a.path()), read(c.path()));
}

#[test]
fn capacity_aligned_all_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["capacity", "--config", &optimized_config(), "--offset", "rotate-rx:0", "--modes", "all", "--rays", "3000", "--out", out];
    let o = vlcsim(&args, None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("capacity.csv")).unwrap();
    let rows = data_lines(&text);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0], "offset,mode,c0,c1,c2,c3,c4,c5,c6,c7,c8,c9,c10,c11,c12,c13,c14,c15");
    let modes: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(modes, ["no_processing", "combine_only", "sic_only", "combine_and_sic"]);
    for r in &rows[1..] {
        let caps: Vec<f64> = r.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        assert_eq!(caps.len(), 16);
        assert!(caps.iter().all(|c| c.is_finite() && *c >= 0.0));
    }
}

#[test]
fn optimize_sweep_and_symbols_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{
            "rays_per_led": 1500,
            "optimizer": {"max_evals": 8, "rays_per_led": 800, "restarts": 0},
            "sweeps": [
                {"target": "receiver", "motion": "translate-x", "start": -2, "stop": 2, "step": 1, "rays_per_led": 800},
                {"target": "transmitter", "motion": "rotate-x", "start": 0, "stop": 2, "step": 1, "metric": "capacity_report", "rays_per_led": 800}
            ],
            "n_symbols": 2000
        }"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let base = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];

    let o = vlcsim(&[&["optimize"], &base[..]].concat(), None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("params.json")).unwrap()).unwrap();
    assert!(p["evaluation_count"].as_u64().unwrap() <= 8);
    assert!(p["best_kappa"].as_f64().unwrap() <= p["initial_kappa"].as_f64().unwrap());
    let t = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(data_lines(&t)[0], "iteration,alpha_convex_front,alpha_convex_back,alpha_concave_front,alpha_concave_back,kappa");

    let o = vlcsim(&[&["sweep", "--threshold", "5"], &base[..]].concat(), None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows = data_lines(&s);
    // 5 condition-number rows, then 3 offsets x 4 modes
    assert_eq!(rows.len(), 1 + 5 + 12);
    assert!(rows[1].starts_with("translate-x-rx,-2.0,"));
    assert!(rows.last().unwrap().starts_with("rotate-x-tx,2.0,"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["sweeps"][0]["threshold"], 5.0);

    let o = vlcsim(&[&["symbols", "--modes", "no_processing,combine_and_sic"], &base[..]].concat(), None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let b = fs::read_to_string(out.join("ber.csv")).unwrap();
    let rows = data_lines(&b);
    assert_eq!(rows.len(), 1 + 32);
    assert!(rows[1].starts_with("0,no_processing,2000,"));
}

#[test]
fn sweep_without_specs_is_a_validation_error() {
    assert_eq!(vlcsim(&["sweep", "--rays", "10"], None).status.code(), Some(1));
}
