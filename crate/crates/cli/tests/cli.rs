use std::path::Path;
use std::process::{Command, Output};

fn bioconvex(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bioconvex"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("the binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn preset_text(name: &str, cwd: &Path) -> String {
    let out = bioconvex(&["presets", name], cwd);
    assert_eq!(code(&out), 0);
    stdout(&out)
}

#[test]
fn presets_are_listed_and_printed() {
    let dir = tempfile::tempdir().unwrap();
    let out = bioconvex(&["presets"], dir.path());
    assert_eq!(code(&out), 0);
    let names: Vec<String> = stdout(&out).lines().map(str::to_string).collect();
    assert_eq!(names, ["wastewater", "gradostat"]);
    assert!(preset_text("gradostat", dir.path()).contains("name = \"gradostat\""));
    assert_eq!(code(&bioconvex(&["presets", "nonesuch"], dir.path())), 2);
}

#[test]
fn validate_reports_the_scenario_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = bioconvex(&["validate", "preset:wastewater"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("ok: wastewater (Transient, 3 tanks, 4 states, 4 reactions, 96 steps)"), "{text}");
    assert!(text.contains("note: units"));
}

#[test]
fn validation_errors_name_the_location_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = preset_text("gradostat", dir.path()).replacen("b = 1", "b = 7", 1);
    std::fs::write(dir.path().join("bad.toml"), bad).unwrap();
    let out = bioconvex(&["validate", "bad.toml"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("network.diffusion[0]"), "{}", stderr(&out));

    std::fs::write(dir.path().join("short.toml"), "name = \"x\"\n").unwrap();
    let out = bioconvex(&["validate", "short.toml"], dir.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("states"));
}

#[test]
fn missing_files_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = bioconvex(&["validate", "absent.toml"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("absent.toml"));
}

#[test]
fn run_writes_outputs_and_the_manifest_reproduces_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = bioconvex(&["run", "preset:gradostat", "--out", "first"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("status                        optimal"), "{table}");
    assert!(table.contains("steady-state certificate      positive"), "{table}");
    for f in ["manifest.json", "report.json", "solution.csv", "plot.tsv"] {
        assert!(dir.path().join("first").join(f).is_file(), "{f} missing");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("first/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "optimal");
    assert_eq!(manifest["exit_code"], 0);
    let files: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["file"].as_str().unwrap())
        .collect();
    assert_eq!(files, ["report.json", "solution.csv", "plot.tsv"]);

    let out = bioconvex(&["run", "first/manifest.json", "--out", "second"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let a = std::fs::read(dir.path().join("first/solution.csv")).unwrap();
    let b = std::fs::read(dir.path().join("second/solution.csv")).unwrap();
    assert_eq!(a, b, "a rerun from the manifest changed the solution");
}

#[test]
fn json_report_carries_the_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = bioconvex(&["run", "preset:gradostat", "--json", "--out", "o"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["scenario"], "gradostat");
    assert_eq!(report["exit_code"], 0);
}

#[test]
fn an_unattainable_effluent_limit_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = preset_text("wastewater", dir.path()).replace("value = 150.0", "value = 0.0");
    std::fs::write(dir.path().join("tight.toml"), text).unwrap();
    let out = bioconvex(&["run", "tight.toml", "--tau", "8", "--out", "o"], dir.path());
    assert_eq!(code(&out), 3, "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("infeasible"));
    assert!(!dir.path().join("o/solution.csv").exists());
    assert!(dir.path().join("o/manifest.json").is_file());
}

#[test]
fn exported_programs_solve_to_the_run_objective() {
    let dir = tempfile::tempdir().unwrap();
    let out = bioconvex(&["export-program", "preset:gradostat", "-o", "g.conic"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = bioconvex(&["solve-program", "g.conic", "--json"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sol: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(sol["status"], "optimal");
    assert_eq!(sol["kkt-pass"], true);
    assert!(sol["kkt-relative"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap() <= 1e-7));

    let run = bioconvex(&["run", "preset:gradostat", "--json", "--no-simulate", "--out", "o"], dir.path());
    let report: serde_json::Value = serde_json::from_str(&stdout(&run)).unwrap();
    let (a, b) = (sol["pcost"].as_f64().unwrap(), report["objective"].as_f64().unwrap());
    assert!((a - b).abs() <= 1e-7 * (1.0 + b.abs()), "{a} vs {b}");
}

#[test]
fn saved_solutions_can_be_certified_again() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&bioconvex(&["run", "preset:gradostat", "--out", "o"], dir.path())), 0);
    let out = bioconvex(&["certify", "preset:gradostat", "--solution", "o/solution.csv"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("residual: 1 of 1 steps exact"), "{text}");
    assert!(text.contains("steady-state certificate: Positive"), "{text}");

    // a solution for a different horizon is rejected
    let out = bioconvex(&["certify", "preset:wastewater", "--tau", "8", "--solution", "o/solution.csv"], dir.path());
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn influent_totals_are_written_as_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = bioconvex(&["synth-influent", "preset:wastewater"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("step,BOD,NH4"));
    assert_eq!(lines.count(), 96);
    assert_eq!(code(&bioconvex(&["synth-influent", "preset:gradostat"], dir.path())), 2);
}
