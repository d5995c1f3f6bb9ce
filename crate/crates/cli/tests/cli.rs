use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn cusp_config(dir: &Path) -> String {
    write_config(dir, "cusp.json", r#"{"model": "cusp", "window": [[-4.0, 1.0], [-3.0, 3.0]], "resolution": [40, 40]}"#)
}

fn square_config(dir: &Path) -> String {
    write_config(dir, "square.json", r#"{"model": "complex_square", "window": [[-2.0, 2.0], [-2.0, 2.0]], "resolution": [48, 48]}"#)
}

fn eqatlas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqatlas")).args(args).output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn radius_writes_certificate() {
    let dir = TempDir::new().unwrap();
    let cfg = square_config(dir.path());
    let out = dir.path().join("out");
    let o = eqatlas(&["radius", "--config", &cfg, "--out", out.to_str().unwrap(), "--x", "1.0,0.0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let c = read_json(&out.join("certificate.json"));
    for key in ["x", "d_x", "m_x", "m_x_lower", "case", "r_x", "ball_radius", "verdict", "fiber", "manifest", "config"] {
        assert!(c.get(key).is_some(), "missing {key}");
    }
    assert_eq!(c["case"], "nonzero");
    assert_eq!(c["sheet_count"], 2);
    assert!(out.join("loop.json").exists());
    assert!(fs::read_to_string(out.join("distance_field.csv")).unwrap().starts_with("# {"));
}

#[test]
fn malformed_input_exits_with_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = cusp_config(dir.path());
    let out = dir.path().join("out");
    let o = eqatlas(&["radius", "--config", &cfg, "--out", out.to_str().unwrap(), "--x", "1.0,abc"]);
    assert_eq!(o.status.code(), Some(2));
    let o = eqatlas(&["radius", "--config", &cfg, "--out", out.to_str().unwrap(), "--x", "7.0,0.0"]);
    assert_eq!(o.status.code(), Some(2));
    let empty = write_config(dir.path(), "empty.json", r#"{"model": "cusp", "window": [[1.0, 1.0], [-3.0, 3.0]], "resolution": [40, 40]}"#);
    let o = eqatlas(&["singular", "--config", &empty, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn point_on_fold_exits_with_numerical_error() {
    let dir = TempDir::new().unwrap();
    let cfg = cusp_config(dir.path());
    let out = dir.path().join("out");
    // (-3, 2) lies on the fold curve.
    let o = eqatlas(&["radius", "--config", &cfg, "--out", out.to_str().unwrap(), "--x", "-3.0,2.0"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("x-region"));
}

#[test]
fn outputs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = cusp_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = eqatlas(&["radius", "--config", &cfg, "--out", out.to_str().unwrap(), "--x", "-2.0,0.0"]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["certificate.json", "loop.json", "distance_field.csv"] {
        let strip = |p: &Path| {
            let text = fs::read_to_string(p.join(f)).unwrap();
            text.replace(p.to_str().unwrap(), "OUT")
        };
        assert_eq!(strip(&a), strip(&b), "{f}");
    }
}

#[test]
fn atlas_counts_match_discriminant() {
    let dir = TempDir::new().unwrap();
    let cfg = cusp_config(dir.path());
    let out = dir.path().join("out");
    let o = eqatlas(&["atlas", "--config", &cfg, "--out", out.to_str().unwrap(), "--resolution", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("fiber_counts.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        let (q1, q2): (f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        let disc = 4.0 * q1.powi(3) + 27.0 * q2 * q2;
        if f[3] == "0" && disc.abs() > 1e-6 {
            assert_eq!(f[2], if disc < 0.0 { "3" } else { "1" }, "{line}");
        }
        rows += 1;
    }
    assert_eq!(rows, 21 * 21);
    let atlas = read_json(&out.join("atlas.json"));
    assert!(atlas["histogram"].get("3").is_some());
}

#[test]
fn lift_round_trip_around_origin() {
    let dir = TempDir::new().unwrap();
    let cfg = square_config(dir.path());
    let path: Vec<[f64; 2]> = (0..=64)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / 64.0;
            [t.cos(), t.sin()]
        })
        .collect();
    let pf = dir.path().join("path.json");
    fs::write(&pf, serde_json::to_string(&path).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = eqatlas(&[
        "lift", "--config", &cfg, "--out", out.to_str().unwrap(), "--path", pf.to_str().unwrap(), "--start", "1.0,0.0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&out.join("lift.json"));
    let end: Vec<f64> = serde_json::from_value(v["lift"]["p_end"].clone()).unwrap();
    assert!((end[0] + 1.0).abs() < 1e-8 && end[1].abs() < 1e-8, "{end:?}");
    assert!(v["round_trip_deviation"].as_f64().unwrap() < 1e-8);
}

#[test]
fn verify_passes_on_cusp() {
    let dir = TempDir::new().unwrap();
    let cfg = cusp_config(dir.path());
    let out = dir.path().join("out");
    let o = eqatlas(&["verify", "--config", &cfg, "--out", out.to_str().unwrap(), "--x", "0.5,1.0"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out.join("verify.json"))["passed"], true);
}

#[test]
fn complex_square_atlas_counts_two_away_from_origin() {
    let dir = TempDir::new().unwrap();
    let cfg = square_config(dir.path());
    let out = dir.path().join("out");
    let o = eqatlas(&["atlas", "--config", &cfg, "--out", out.to_str().unwrap(), "--resolution", "16"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("fiber_counts.csv")).unwrap();
    for line in csv.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        let origin = f[0].parse::<f64>().unwrap() == 0.0 && f[1].parse::<f64>().unwrap() == 0.0;
        if origin {
            assert_eq!(f[3], "1", "{line}");
        } else {
            assert_eq!((f[2], f[3]), ("2", "0"), "{line}");
        }
    }
}
