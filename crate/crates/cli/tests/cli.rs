use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: [&str; 8] = [
    "--set",
    "workload.kind=closed",
    "--set",
    "workload.requests=16",
    "--set",
    "workload.input_len=8",
    "--set",
    "workload.output_len=20",
];

fn speclab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speclab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = speclab(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn summary_field(dir: &Path, field: &str) -> f64 {
    let mut r = csv::Reader::from_path(dir.join("summary.csv")).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == field).unwrap();
    let row = r.records().next().unwrap().unwrap();
    row[idx].parse().unwrap()
}

fn assert_csv_numeric(path: &Path, text_columns: &[&str]) -> usize {
    let mut r = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let headers = r.headers().unwrap().clone();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        assert_eq!(rec.len(), headers.len());
        for (h, v) in headers.iter().zip(rec.iter()) {
            if !text_columns.contains(&h) {
                assert!(v.parse::<f64>().is_ok(), "{}: column {h} = {v:?}", path.display());
            }
        }
        rows += 1;
    }
    rows
}

#[test]
fn simulate_writes_parseable_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    ok(&[&["simulate", "--oracle-check"][..], &SMALL[..]].concat(), &out);
    let files: Vec<_> = tree(&out).into_keys().collect();
    for f in ["manifest.json", "metrics.jsonl", "summary.csv", "requests.csv"] {
        assert!(files.contains(&PathBuf::from(f)), "{files:?}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    let lines: Vec<serde_json::Value> = fs::read_to_string(out.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["type"], "summary");
    assert_eq!(lines[0]["oracle_mismatches"], 0);
    assert_eq!(assert_csv_numeric(&out.join("summary.csv"), &["mode"]), 1);
    assert_eq!(assert_csv_numeric(&out.join("requests.csv"), &[]), 16);
}

#[test]
fn manifest_precedes_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bad-sweep");
    let o = speclab(&[&["sweep", "--axis", "batch", "--values", "0"][..], &SMALL[..]].concat(), &out);
    assert!(!o.status.success());
    assert!(out.join("manifest.json").exists());
    assert!(!out.join("sweep.csv").exists());
}

#[test]
fn bad_inputs_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let missing = tmp.path().join("nope.json");
    let cases: Vec<Vec<&str>> = vec![
        vec!["simulate", "--params", missing.to_str().unwrap()],
        vec!["simulate", "--set", "sim.mode=TURBO"],
        vec!["simulate", "--set", "sim.unknown=1"],
        vec!["simulate", "--config", missing.to_str().unwrap()],
        vec!["sweep", "--axis", "depth"],
    ];
    for args in cases {
        let o = speclab(&args, &out);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty());
    }
    let o = speclab(&["simulate", "--params", missing.to_str().unwrap()], &out);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config error"));
}

#[test]
fn empty_trace_yields_zero_tokens() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("empty.csv");
    fs::write(&trace, "arrival_ms,input_len,output_len\n").unwrap();
    let out = tmp.path().join("empty");
    let path_set = format!("workload.path={}", trace.display());
    ok(&["simulate", "--set", "workload.kind=trace", "--set", &path_set], &out);
    assert_eq!(summary_field(&out, "total_tokens"), 0.0);
    assert_eq!(summary_field(&out, "requests"), 0.0);
}

#[test]
fn single_value_sweep_equals_simulate() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep = tmp.path().join("sweep");
    let sim = tmp.path().join("sim");
    ok(&[&["sweep", "--axis", "spec_length", "--values", "3"][..], &SMALL[..]].concat(), &sweep);
    ok(
        &[&["simulate", "--set", "sim.mode=VSD", "--set", "sim.fixed_spec_length=3"][..], &SMALL[..]].concat(),
        &sim,
    );
    assert_eq!(tree(&sweep.join("runs").join("spec_length=3")), tree(&sim));
    assert_eq!(assert_csv_numeric(&sweep.join("sweep.csv"), &["axis"]), 1);
}

#[test]
fn fitted_params_round_trip_through_simulate() {
    let tmp = tempfile::tempdir().unwrap();
    let prof = tmp.path().join("prof");
    ok(&["profile", "--seed", "3"], &prof);
    assert_eq!(assert_csv_numeric(&prof.join("mape.csv"), &["stage"]), 4);
    assert_eq!(assert_csv_numeric(&prof.join("profile.csv"), &["stage"]), 4 * 350);
    let params = prof.join("fits.json");
    let out = tmp.path().join("sim");
    ok(&[&["simulate", "--params", params.to_str().unwrap()][..], &SMALL[..]].concat(), &out);
    assert_eq!(summary_field(&out, "finished"), 16.0);
}

#[test]
fn full_is_no_slower_per_token_than_vsd() {
    let tmp = tempfile::tempdir().unwrap();
    let workload = [
        "--set",
        "workload.kind=closed",
        "--set",
        "workload.requests=64",
        "--set",
        "workload.input_len=16",
        "--set",
        "workload.output_len=64",
    ];
    let mut tpot = vec![];
    for mode in ["VSD", "FULL"] {
        let out = tmp.path().join(mode);
        let set = format!("sim.mode={mode}");
        ok(&[&["simulate", "--seed", "2", "--set", &set][..], &workload[..]].concat(), &out);
        tpot.push(summary_field(&out, "tpot_ms"));
    }
    assert!(tpot[1] <= tpot[0], "FULL {} vs VSD {}", tpot[1], tpot[0]);
}

#[test]
fn ablation_rows_follow_the_ladder() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ablate");
    ok(&[&["ablate"][..], &SMALL[..]].concat(), &out);
    let mut r = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    let modes: Vec<String> = r.records().map(|x| x.unwrap()[0].to_string()).collect();
    assert_eq!(modes, ["VSD", "VSD_AD", "VSD_AD_EE", "FULL"]);
    assert_csv_numeric(&out.join("ablation.csv"), &["mode"]);
    for m in &modes {
        assert!(out.join("runs").join(m).join("manifest.json").exists());
    }
}
