use std::io::Write;
use std::process::{Command, Output};

use serde_json::Value;

fn geolin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geolin"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SZEKERES: &str = r#"{
    "name": "szekeres",
    "coordinates": ["u", "v"],
    "parameters": {"h": 0},
    "metric": [["0", "1"], ["1", "0"]],
    "potential": "v/u^2 - h",
    "domain": {"u": [0.5, 2], "v": [0.5, 2]},
    "guards": ["u", "v"]
}"#;

fn spec_file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn validate_exit_codes() {
    let good = spec_file(SZEKERES);
    let o = geolin(&["validate", good.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout_json(&o)["valid"], true);

    let bad = spec_file(&SZEKERES.replace(r#"[["0", "1"], ["1", "0"]]"#, r#"[["0", "1"], ["2", "0"]]"#));
    let o = geolin(&["validate", bad.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("(u,v)"), "{}", stderr(&o));

    let typo = spec_file(&SZEKERES.replace("v/u^2 - h", "v/u^2 - hh"));
    let o = geolin(&["validate", typo.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("$.potential"), "{}", stderr(&o));

    let o = geolin(&["validate", "/definitely/not/here.json"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/definitely/not/here.json"));
}

#[test]
fn analyze_decisions_map_to_exit_codes() {
    let o = geolin(&["analyze", "--catalog", "szekeres", "--set", "h=0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = stdout_json(&o);
    assert_eq!(v["decision"], "LINEARIZABLE");
    assert_eq!(v["parameters"]["h"], 0.0);

    let o = geolin(&["analyze", "--catalog", "szekeres", "--set", "h=1"]);
    assert_eq!(code(&o), 3);
    assert_eq!(stdout_json(&o)["parameters"]["h"], 1.0);

    assert_eq!(code(&geolin(&["analyze", "--catalog", "one-dim-exp"])), 0);

    let file = spec_file(SZEKERES);
    assert_eq!(
        code(&geolin(&["analyze", file.path().to_str().unwrap(), "--samples", "10"])),
        0
    );

    let o = geolin(&["analyze", "--catalog", "szekeres", "--set", "nope=1"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn integrate_writes_csv() {
    let o = geolin(&["integrate", "--catalog", "szekeres"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..7], ["t", "u", "v", "du/dt", "dv/dt", "H", "tau"]);
    assert!(header.contains(&"U") && header.contains(&"X3"));
    let h = header.iter().position(|c| *c == "H").unwrap();
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 501);
    assert!(rows.iter().all(|r| r[h].abs() < 1e-8));

    let o = geolin(&["integrate", "--catalog", "harmonic-oscillator-control"]);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("opposite signs"), "{}", stderr(&o));

    let o = geolin(&["integrate", "--catalog", "free-particle", "--format", "json"]);
    let v = stdout_json(&o);
    let y = v["columns"]["y"].as_array().unwrap();
    assert!(y.iter().all(|x| x.as_f64().unwrap().abs() < 1e-12));
}

#[test]
fn integrate_file_needs_initial_data() {
    let file = spec_file(SZEKERES);
    let path = file.path().to_str().unwrap();
    assert_eq!(code(&geolin(&["integrate", path])), 1);
    let o = geolin(&[
        "integrate",
        path,
        "--q0",
        "1,1",
        "--direction",
        "1,-1",
        "--horizon",
        "0.1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 102);
}

#[test]
fn verify_szekeres_fixtures() {
    let o = geolin(&["verify", "--catalog", "szekeres", "transform"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = stdout_json(&o);
    assert_eq!(v["pass"], true);
    assert!(v["items"][0]["measured"].as_f64().unwrap() < 1e-6);

    let v = stdout_json(&geolin(&["verify", "--catalog", "szekeres", "charges"]));
    let items = v["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);
    assert!(items.iter().all(|i| i["measured"].as_f64().unwrap() < 1e-7));

    let v = stdout_json(&geolin(&["verify", "--catalog", "szekeres", "lift-recovery"]));
    assert_eq!(v["pass"], true);
    assert!(v["items"][0]["measured"].as_f64().unwrap() < 1e-8);

    let o = geolin(&["verify", "--catalog", "one-dim-exp", "charges"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("generators"));
}

#[test]
fn catalog_commands() {
    let o = geolin(&["catalog", "list"]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 12);

    let v = stdout_json(&geolin(&["catalog", "show", "reissner-nordstrom"]));
    assert_eq!(v["system"]["coordinates"][2], "zeta");
    assert!(!v["notes"].as_array().unwrap().is_empty());

    assert_eq!(code(&geolin(&["catalog", "show", "nope"])), 1);

    let o = geolin(&["catalog", "run-all", "--seed", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let claims = stdout_json(&o);
    let claims = claims.as_array().unwrap();
    assert!(claims.len() > 50);
    for key in [
        "entry",
        "claim",
        "provenance",
        "expected",
        "measured",
        "tolerance",
        "pass",
    ] {
        assert!(claims[0].get(key).is_some(), "{key}");
    }
}

#[test]
fn output_is_deterministic_and_can_go_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let o = geolin(&[
            "analyze",
            "--catalog",
            "szekeres",
            "--seed",
            "7",
            "--output",
            p.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let o = geolin(&["analyze", "--catalog", "szekeres", "--output", "/no/such/dir/out.json"]);
    assert_eq!(code(&o), 2);
}
