use std::fs;

use assert_cmd::Command;
use ocdci_core::TuningPreset;

fn ocdci() -> Command {
    Command::cargo_bin("ocdci").unwrap()
}

fn stdout(cmd: &mut Command) -> String {
    let out = cmd.assert().success().get_output().stdout.clone();
    String::from_utf8(out).unwrap()
}

fn stderr_of_failure(cmd: &mut Command) -> String {
    let out = cmd.assert().failure().get_output().stderr.clone();
    String::from_utf8(out).unwrap()
}

#[test]
fn preset_prints_closed_form_thresholds() {
    let text = stdout(ocdci().args(["preset", "--p", "100", "--gamma", "5000"]));
    let preset = TuningPreset::from_toml(&text).unwrap();
    assert!((preset.t_diag - 18.051_800_901_150_668).abs() < 1e-9);
    assert!((preset.t_off - 143.430_834_498_937_87).abs() < 1e-9);
}

#[test]
fn practical_preset_values() {
    let text = stdout(ocdci().args(["preset", "--p", "100", "--gamma", "5000", "--kind", "practical"]));
    let preset = TuningPreset::from_toml(&text).unwrap();
    assert!((preset.a - 3.034_854_258_770_293).abs() < 1e-12);
    assert!((preset.d1 - 1.378_486_711_900_234_7).abs() < 1e-12);
    assert!((preset.d2 - 7.600_902_459_542_082).abs() < 1e-9);
}

#[test]
fn ell_with_plain_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    fs::write(&csv, "a,b\n0,1\n1,0\n0.5,0.5\n").unwrap();
    let err = stderr_of_failure(ocdci().args([
        "detect",
        "--input",
        csv.to_str().unwrap(),
        "--train-rows",
        "2",
        "--beta",
        "1",
        "--gamma",
        "100",
        "--ell",
        "5",
        "--variant",
        "ocd",
    ]));
    assert!(err.contains("ocd-prime"), "{err}");
}

#[test]
fn unknown_flag_fails() {
    ocdci().args(["preset", "--p", "10", "--gamma", "10", "--bogus"]).assert().failure();
}

#[test]
fn bad_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "a,b\n0,1\n1,x\n").unwrap();
    let err = stderr_of_failure(ocdci().args([
        "detect",
        "--input",
        csv.to_str().unwrap(),
        "--train-rows",
        "2",
        "--beta",
        "1",
        "--gamma",
        "100",
    ]));
    assert!(err.contains("line 3") && err.contains("non-numeric"), "{err}");
}

/// Two series with a large shift in both from row 300 on.
fn shifted_csv(rows: usize, change: usize) -> String {
    let mut s = String::from("first,second,third\n");
    let mut state = 12345u64;
    let mut noise = || {
        // Small LCG; the values only need to look noisy and be reproducible.
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 3.0
    };
    for t in 0..rows {
        let shift = if t >= change { 4.0 } else { 0.0 };
        s.push_str(&format!("{},{},{}\n", noise() + shift, noise() + shift, noise()));
    }
    s
}

#[test]
fn detect_reports_change_with_row_indices() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    fs::write(&csv, shifted_csv(400, 300)).unwrap();
    let text = stdout(ocdci().args([
        "detect",
        "--input",
        csv.to_str().unwrap(),
        "--train-rows",
        "100",
        "--beta",
        "2",
        "--gamma",
        "1000",
        "--cooldown",
        "1000",
    ]));
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1, "{text}");
    let rec = &lines[0];
    let decl = rec["declaration_row"].as_i64().unwrap();
    assert!((300..320).contains(&decl), "{rec}");
    assert!(rec["ci_left_row"].as_i64().unwrap() <= 299);
    assert!(rec["ci_right_row"].as_i64().unwrap() >= 299);
    assert_eq!(rec["config"]["p"], 3);
}

#[test]
fn explicit_flags_override_preset() {
    let dir = tempfile::tempdir().unwrap();
    let preset = dir.path().join("preset.toml");
    let csv = dir.path().join("data.csv");
    fs::write(&csv, shifted_csv(400, 300)).unwrap();
    let text = stdout(ocdci().args(["preset", "--p", "3", "--gamma", "1000", "--kind", "practical", "--beta", "2"]));
    fs::write(&preset, text).unwrap();
    let base = [
        "detect",
        "--input",
        csv.to_str().unwrap(),
        "--train-rows",
        "100",
        "--preset-file",
        preset.to_str().unwrap(),
    ];
    let from_preset = stdout(ocdci().args(base));
    let v: serde_json::Value = serde_json::from_str(from_preset.lines().next().unwrap()).unwrap();
    assert_eq!(v["config"]["beta"], 2.0);
    let overridden = stdout(ocdci().args(base).args(["--t-diag", "7.5", "--d1", "2.0"]));
    let v: serde_json::Value = serde_json::from_str(overridden.lines().next().unwrap()).unwrap();
    assert_eq!(v["config"]["t_diag"], 7.5);
    assert_eq!(v["config"]["d1"], 2.0);
    assert_eq!(v["config"]["d2"], 16.0);
}

#[test]
fn simulation_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let path = dir.path().join(name);
        ocdci()
            .args([
                "simulate-coverage",
                "--p",
                "10",
                "--s",
                "2",
                "--vartheta",
                "2",
                "--beta",
                "2",
                "--z",
                "100",
                "--gamma",
                "500",
                "--reps",
                "60",
                "--seed",
                "3",
                "--threads",
                threads,
                "--output",
                path.to_str().unwrap(),
            ])
            .assert()
            .success();
        fs::read(path).unwrap()
    };
    let a = run("a.csv", "1");
    let b = run("b.csv", "1");
    let c = run("c.csv", "4");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.contains("coverage") && header.contains("mean_delay") && header.contains("mean_ci_length"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn support_sweep_and_selection_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let sel = dir.path().join("sel.csv");
    let text = stdout(ocdci().args([
        "simulate-support",
        "--p",
        "8",
        "--s",
        "2",
        "--vartheta",
        "3",
        "--shape",
        "uniform",
        "--beta",
        "3",
        "--z",
        "50",
        "--gamma",
        "500",
        "--variant",
        "ocd-prime",
        "--ell",
        "10",
        "--reps",
        "40",
        "--d1-grid",
        "0.5,1,100",
        "--selection-output",
        sel.to_str().unwrap(),
    ]));
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 4);
    // d1 = 100 admits nothing, so Ŝ ⊆ S_β always holds.
    let last: Vec<&str> = rows[3].split(',').collect();
    let header: Vec<&str> = rows[0].split(',').collect();
    let col = header.iter().position(|h| *h == "support_fp_free").unwrap();
    assert_eq!(last[col], "1.00000");
    assert_eq!(fs::read_to_string(sel).unwrap().lines().count(), 1 + 3 * 8);
}

#[test]
fn calibrate_writes_monte_carlo_preset() {
    let text = stdout(ocdci().args([
        "calibrate", "--p", "5", "--beta", "1", "--gamma", "50", "--reps", "50", "--seed", "2",
    ]));
    let preset = TuningPreset::from_toml(&text).unwrap();
    assert_eq!(preset.provenance, ocdci_core::Provenance::MonteCarlo);
    assert_eq!(preset.p, Some(5));
    let again = stdout(ocdci().args([
        "calibrate", "--p", "5", "--beta", "1", "--gamma", "50", "--reps", "50", "--seed", "2",
    ]));
    assert_eq!(text, again);
    ocdci()
        .args(["calibrate", "--p", "5", "--beta", "1", "--gamma", "50", "--reps", "10"])
        .assert()
        .failure();
}
