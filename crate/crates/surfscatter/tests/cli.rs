use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_surfscatter"))
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = match fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect(),
        Err(_) => vec![],
    };
    v.sort();
    v
}

#[test]
fn unknown_flag_exits_2_without_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = bin().args(["melnikov", "--frobnicate", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert!(!out.exists());
}

#[test]
fn bad_config_exits_2_without_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.ini");
    fs::write(&cfg, "[physical]\nD = -1\n").unwrap();
    let out = tmp.path().join("run");
    let o = bin().args(["melnikov", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(files(&out).is_empty());
}

#[test]
fn melnikov_csv_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("m");
    let o = bin().args(["melnikov", "--nuI0", "5", "--kmax", "2", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files(&out), vec!["manifest.txt", "melnikov.csv"]);
    let csv = fs::read_to_string(out.join("melnikov.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,nuI0,closed_re,closed_im,quad_re,quad_im,rel_err"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "1");
    let l1: f64 = row[2].parse().unwrap();
    // -(r1/4)(π/2)e^{-5}·6 with r1 = 0.06.
    let oracle = -0.015 * std::f64::consts::PI * 0.5 * (-5.0f64).exp() * 6.0;
    assert!((l1 / oracle - 1.0).abs() < 1e-14);
    assert!((l1 / -9.52529e-4 - 1.0).abs() < 1e-4);
    let mantissa = row[2].trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.replace('.', "").len(), 17);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("nuI0 = 5e0"));
    assert!(manifest.contains("kmax = 2"));
    assert!(manifest.contains("melnikov.csv = "));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.ini");
    fs::write(&cfg, "[physical]\nD = 6.35\na = 3.6\nalpha = 1.05\nm = 4.002602\nr = 0.06,0.008\n[run]\nkmax = 2\n").unwrap();
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let o = bin().args(["melnikov", "--nuI0", "3:8:1", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        texts.push(fs::read(out.join("melnikov.csv")).unwrap());
        let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
        let sums: Vec<&str> = manifest.lines().filter(|l| l.starts_with("melnikov.csv")).collect();
        texts.push(sums.join("\n").into_bytes());
    }
    assert_eq!(texts[0], texts[2]);
    assert_eq!(texts[1], texts[3]);
    assert_eq!(String::from_utf8_lossy(&texts[0]).lines().count(), 1 + 2 * 6);
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.ini");
    fs::write(&cfg, "[run]\nnuI0 = 3,4\nkmax = 2\n").unwrap();
    let out = tmp.path().join("o");
    let o = bin().args(["melnikov", "--kmax", "1", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("melnikov.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn inner_csv_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("i");
    let o = bin().args(["inner", "--epsilon", "1e-3", "--kmax", "1", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("inner.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epsilon,k,f_re,f_im,err_est,theta_V,residual"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    // f1 ≈ -π r1 ε/8.
    let want = -std::f64::consts::PI * 0.06 * 1e-3 / 8.0;
    assert!((row[2] / want - 1.0).abs() < 0.05, "{} {}", row[2], want);
}

#[test]
fn help_exits_0() {
    let o = bin().arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["melnikov", "splitting", "sweep", "inner", "horseshoe", "oscillate", "verify-all"] {
        assert!(text.contains(sub), "{sub}");
    }
}

#[test]
fn oscillate_writes_orbit_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("osc");
    let o = bin().args(["oscillate", "--k", "3", "--zret", "8.0", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files(&out), vec!["manifest.txt", "orbit.csv", "orbit.svg"]);
    let csv = fs::read_to_string(out.join("orbit.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x,z,px,pz"));
    let zmax = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap()).fold(f64::MIN, f64::max);
    assert!(zmax > 5.0 && zmax < 8.0, "{zmax}");
    assert!(fs::read_to_string(out.join("orbit.svg")).unwrap().contains("<polyline"));
}

#[test]
fn verify_all_reports_every_criterion() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = bin().args(["verify-all", "--out"]).arg(&out).output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    let verdicts = text.lines().filter(|l| l.starts_with("PASS [") || l.starts_with("FAIL [")).count();
    assert_eq!(verdicts, 12, "{text}");
    let all_pass = !text.lines().any(|l| l.starts_with("FAIL ["));
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 1 }));
    assert!(out.join("acceptance.txt").exists());
}
