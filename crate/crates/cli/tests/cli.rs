use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn siegel(args: &[&str], cache: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_siegel"));
    cmd.args(args).env_remove("SIEGEL_CACHE_DIR");
    if let Some(dir) = cache {
        cmd.env("SIEGEL_CACHE_DIR", dir);
    }
    cmd.output().expect("spawn siegel")
}

fn ok_json(out: Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(0), "stderr: {stderr}");
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn dry_run_prints_plan_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let cache = dir.path().join("cache");
    let out = siegel(
        &["run", "--map", "quad", "--rot", ":1", "--level", "12", "--out-dir", p(&out_dir), "--dry-run"],
        Some(&cache),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(!out.stdout.is_empty());
    assert!(!out_dir.exists());
    assert!(!cache.exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad_map = siegel(&["run", "--map", "cubic", "--dry-run"], None);
    assert_eq!(bad_map.status.code(), Some(2));
    let zero_beta = siegel(&["orbit", "--map", "fmb:m=1:beta=0+0i", "--rot", ":1", "--out", "x.sgo"], None);
    assert_eq!(zero_beta.status.code(), Some(2));

    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "map = \"quad\"\nlevle = 12\n").unwrap();
    let unknown = siegel(&["run", "--config", p(&cfg), "--dry-run"], None);
    assert_eq!(unknown.status.code(), Some(2));

    let short = siegel(&["run", "--level", "12", "--iterations", "100", "--dry-run"], None);
    assert_eq!(short.status.code(), Some(2));

    let missing = siegel(&["regularity", "--spectrum", p(&dir.path().join("none.csv"))], None);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn unconverged_precision_exits_3() {
    let out = siegel(
        &["scaling", "--map", "quad", "--rot", ":1", "--q-max", "100000", "--start-bits", "64", "--max-bits", "64"],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_scaling_window_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = siegel(
        &[
            "run", "--map", "quad", "--rot", ":1", "--level", "10", "--no-scaling", "--no-geometry", "--no-phases",
            "--out-dir", p(dir.path()),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stage_by_stage_chain_through_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let orbit_args = ["orbit", "--map", "fmb:m=1:beta=1+3i", "--rot", ":1", "--level", "12", "--prec", "128"];

    let first = ok_json(siegel(&orbit_args, Some(&cache)));
    assert_eq!(first["source"], "computed");
    let orbit = first["orbit"].as_str().unwrap().to_string();
    assert!(Path::new(&orbit).starts_with(&cache));
    let second = ok_json(siegel(&orbit_args, Some(&cache)));
    assert_eq!(second["source"], "loaded");
    assert_eq!(first["digest"], second["digest"]);

    let csv = dir.path().join("spectrum.csv");
    let sp = ok_json(siegel(&["spectrum", "--orbit", &orbit, "--level", "12", "--out", p(&csv)], None));
    assert_eq!(sp["level"], 12);
    assert!(dir.path().join("spectrum.csv.meta.json").exists());
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 1 + 4096);

    let curves = dir.path().join("curves.csv");
    let reg = ok_json(siegel(
        &["regularity", "--spectrum", p(&csv), "--tau-window=-2.5,-1", "--curves", p(&curves)],
        None,
    ));
    let kappa = reg["kappa"].as_f64().unwrap();
    assert!(kappa > 0.0 && kappa < 1.0, "kappa {kappa}");
    assert!(std::fs::read_to_string(&curves).unwrap().starts_with("log10_tau,"));

    let geo = ok_json(siegel(&["geometry", "--spectrum", p(&csv)], None));
    let r = geo["radius"]["first"].as_f64().unwrap();
    assert!(r > 0.0 && r < 1.0, "radius {r}");

    let ph_dir = dir.path().join("phases");
    ok_json(siegel(&["phases", "--spectrum", p(&csv), "--out-dir", p(&ph_dir)], None));
    assert!(ph_dir.join("histogram.csv").exists());
}

#[test]
fn run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let args = |out: &Path| {
        vec![
            "run".to_string(), "--map".into(), "quad".into(), "--rot".into(), ":1".into(), "--level".into(),
            "12".into(), "--tau-window=-2.5,-1".into(), "--q-max".into(), "2000".into(), "--no-phases".into(),
            "--out-dir".into(), out.to_str().unwrap().into(),
        ]
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let va = args(&a);
    let vb = args(&b);
    ok_json(siegel(&va.iter().map(String::as_str).collect::<Vec<_>>(), Some(&cache)));
    ok_json(siegel(&vb.iter().map(String::as_str).collect::<Vec<_>>(), Some(&cache)));
    let ra = std::fs::read(a.join("report.json")).unwrap();
    let rb = std::fs::read(b.join("report.json")).unwrap();
    let (ja, jb): (Value, Value) = (serde_json::from_slice(&ra).unwrap(), serde_json::from_slice(&rb).unwrap());
    // Only the output directory differs between the two configs.
    assert_eq!(ja["regularity"], jb["regularity"]);
    assert_eq!(ja["scaling"], jb["scaling"]);
    assert_eq!(ja["geometry"], jb["geometry"]);
    assert_eq!(std::fs::read(a.join("spectrum.csv")).unwrap(), std::fs::read(b.join("spectrum.csv")).unwrap());
}

#[test]
fn sweep_writes_tables_and_reuses_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let args = ["sweep", "--quantity", "alpha", "--d", "1", "2", "--k", "1", "--q-max", "5000", "--out-dir", p(&out)];
    let t = ok_json(siegel(&args, None));
    assert_eq!(t["schema"], "siegel.sweep/1");
    let cells = t["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    for c in cells {
        let (v, r) = (c["value"].as_f64().unwrap(), c["reference"].as_f64().unwrap());
        assert!((v - r).abs() < 1e-3, "{c}");
        assert_eq!(c["loaded"], false);
    }
    for f in ["table.csv", "grid.csv", "sweep.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let again = ok_json(siegel(&args, None));
    assert!(again["cells"].as_array().unwrap().iter().all(|c| c["loaded"] == true));

    let empty = ok_json(siegel(&["sweep", "--quantity", "kappa", "--out-dir", p(&dir.path().join("e"))], None));
    assert!(empty["cells"].as_array().unwrap().is_empty());
}
