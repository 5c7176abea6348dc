use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cace")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cace-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn malformed_csv_reports_line_and_exits_2() {
    let dir = scratch("malformed");
    let input = dir.join("bad.csv");
    fs::write(&input, "z,d,y,r\n1,1,3.5,1\n0,2,1.0,1\n").unwrap();
    let o = cace(&["fit", "--input", s(&input), "--out", s(&dir)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn perfect_compliance_exits_3() {
    let dir = scratch("perfect");
    let input = dir.join("perfect.csv");
    let mut body = String::from("z,d,y,r\n");
    for i in 0..120 {
        let z = i % 2;
        body.push_str(&format!("{z},{z},{},1\n", 1.0 + z as f64 + (i % 5) as f64 * 0.2));
    }
    fs::write(&input, body).unwrap();
    let o = cace(&["fit", "--input", s(&input), "--bootstrap", "100", "--out", s(&dir)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = scratch("config");
    let o = cace(&["sweep", "--delta", "", "-n", "100", "--reps", "2", "--out", s(&dir)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = cace(&["simulate", "--scenario", "nope", "-n", "10", "--out", s(&dir)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = cace(&["sweep", "--delta", "0.6", "-n", "100", "--reps", "2", "--out", s(&dir)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let cfg = dir.join("bad.cfg");
    fs::write(&cfg, "seed = 3\ncolour = blue\n").unwrap();
    let o = cace(&["--config", s(&cfg), "simulate", "--scenario", "LI1", "-n", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn complete_simulation_has_every_outcome() {
    let dir = scratch("complete");
    let o = cace(&["simulate", "--scenario", "homo_normal", "-n", "500", "--complete", "--out", s(&dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.join("homo_normal.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("z,d,y,r"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 500);
    assert!(rows.iter().all(|r| r.ends_with(",1") && !r.contains(",,")));
    let meta = fs::read_to_string(dir.join("homo_normal.meta.json")).unwrap();
    assert!(meta.contains("\"true_cace\": 1.0"), "{meta}");
}

#[test]
fn simulated_data_round_trips_through_fit() {
    let dir = scratch("roundtrip");
    let o = cace(&["simulate", "--scenario", "LI2", "-n", "1500", "--seed", "9", "--out", s(&dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.join("LI2.csv")).unwrap();
    assert!(text.lines().skip(1).any(|r| r.ends_with(",,0")));
    let input = dir.join("LI2.csv");
    let o = cace(&[
        "fit", "--input", s(&input), "--method", "both", "--family", "homo-normal,hetero-normal", "--bootstrap", "100",
        "--levels", "0.95,0.9", "--out", s(&dir),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.join("fit.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "method,family,estimate,se,ci95_lo,ci95_hi,ci90_lo,ci90_hi");
    let labels: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["ODN(homo)", "ODN(hetero)", "LI"]);
    for row in &rows[1..] {
        let v: Vec<f64> = row.split(',').skip(2).map(|x| x.parse().unwrap()).collect();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!(v[2] <= v[4] && v[4] <= v[5] && v[5] <= v[3], "{row}");
    }
    assert!(String::from_utf8_lossy(&o.stdout).contains("ODN(hetero)"));
}

#[test]
fn config_file_and_flags_merge() {
    let dir = scratch("merge");
    let cfg = dir.join("study.cfg");
    fs::write(&cfg, format!("# small study\nscenario = homo_normal\nn = 200\nreps = 3\nbootstrap = 100\nseed = 5\nout = {}\n", s(&dir))).unwrap();
    let o = cace(&["--config", s(&cfg), "study", "--method", "both"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let study = fs::read_to_string(dir.join("study.csv")).unwrap();
    let rows: Vec<&str> = study.lines().collect();
    assert_eq!(rows[0], "scenario,n,method,reps,true_cace,bias,std_dev,cp95,ci95_lo,ci95_hi,failures");
    assert!(rows[1].starts_with("homo_normal,200,ODN,3,1,"));
    assert!(rows[2].starts_with("homo_normal,200,LI,3,1,"));
}

#[test]
fn config_fuzz_seeds_parse_or_fail_cleanly() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/parse_config");
    let mut accepted = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        if let Ok(file) = cace_cli::parse_config(&text) {
            let mut cfg = cace_cli::AnalysisConfig::default();
            if cfg.apply(&file).is_ok() && cfg.validate().is_ok() {
                accepted += 1;
            }
        }
    }
    assert_eq!(accepted, 3);
}
