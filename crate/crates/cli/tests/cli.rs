//! End-to-end tests driving the smlcheck binary the way a shell user
//! would: real processes, real fixtures, exit codes and both report
//! formats.

use serde_json::Value;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smlcheck"))
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn fixture(name: &str) -> String {
    repo_path("fixtures").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("smlcheck runs")
}

fn exit(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf-8 stderr")
}

/// Runs with --format json and returns (exit code, parsed report).
fn json_report(args: &[&str]) -> (i32, Value) {
    let out = bin()
        .arg("--format")
        .arg("json")
        .args(args)
        .output()
        .expect("smlcheck runs");
    let report: Value = serde_json::from_str(&stdout(&out))
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", stdout(&out)));
    (exit(&out), report)
}

fn findings(report: &Value, unit: usize) -> &Vec<Value> {
    report["results"][unit]["findings"]
        .as_array()
        .expect("findings array")
}

fn notes(report: &Value, unit: usize) -> Vec<String> {
    report["results"][unit]["notes"]
        .as_array()
        .expect("notes array")
        .iter()
        .map(|n| n.as_str().expect("note string").to_string())
        .collect()
}

#[test]
fn check_accepts_a_clean_class() {
    let out = run(&["check", &fixture("chamber.sml")]);
    assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).ends_with("no findings\n"));
}

#[test]
fn check_reports_parse_errors_with_positions() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sml");
    std::fs::write(&bad, "class: Broken\n    state OFF\n").unwrap();
    let (code, report) = json_report(&["check", bad.to_str().unwrap()]);
    assert_eq!(code, 1);
    let fs = findings(&report, 0);
    assert_eq!(fs.len(), 1);
    assert_eq!(fs[0]["kind"], "parse-error");
    assert!(fs[0]["data"]["line"].is_u64());
    assert!(fs[0]["data"]["col"].is_u64());
}

#[test]
fn missing_inputs_are_usage_errors() {
    let out = run(&["check", "no_such_file.sml"]);
    assert_eq!(exit(&out), 2);
    assert!(stderr(&out).starts_with("smlcheck:"));
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = run(&["loops", "--no-such-flag", &fixture("chamber.sml")]);
    assert_eq!(exit(&out), 2);
}

#[test]
fn loops_finds_the_cooling_alternation() {
    let (code, report) = json_report(&["loops", &fixture("ecal_cooling_dee.sml")]);
    assert_eq!(code, 1);
    let fs = findings(&report, 0);
    assert_eq!(fs.len(), 2, "one witness per child permutation");
    for f in fs {
        assert_eq!(f["kind"], "loop");
        let states: Vec<&str> = f["data"]["states"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s.as_str().unwrap())
            .collect();
        assert_eq!(states, ["ERROR", "NO_CONNECTION"]);
        let mut child_states: Vec<&str> = f["data"]["config"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["state"].as_str().unwrap())
            .collect();
        child_states.sort_unstable();
        assert_eq!(child_states, ["ERROR", "NO_CONNECTION"]);
    }
}

#[test]
fn loops_passes_the_monitor_class() {
    let out = run(&["loops", &fixture("rpc_monitor.sml")]);
    assert_eq!(exit(&out), 0, "stdout: {}", stdout(&out));
}

#[test]
fn the_witness_cap_truncates_and_says_so() {
    let (code, report) = json_report(&[
        "loops",
        &fixture("ecal_cooling_dee.sml"),
        "--max-witnesses",
        "1",
    ]);
    assert_eq!(code, 1);
    assert_eq!(findings(&report, 0).len(), 1);
    assert!(
        notes(&report, 0).iter().any(|n| n.contains("witness cap")),
        "notes: {:?}",
        notes(&report, 0)
    );
}

#[test]
fn dimacs_output_is_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let cnf = dir.path().join("loop.cnf");
    let out = run(&[
        "loops",
        &fixture("ecal_cooling_dee.sml"),
        "--dimacs",
        cnf.to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 1);
    let text = std::fs::read_to_string(&cnf).unwrap();
    let header = text
        .lines()
        .find(|l| !l.starts_with('c'))
        .expect("problem line");
    let parts: Vec<&str> = header.split_whitespace().collect();
    assert_eq!(&parts[..2], ["p", "cnf"]);
    let clauses: usize = parts[3].parse().unwrap();
    let clause_lines = text
        .lines()
        .filter(|l| !l.starts_with('c') && !l.starts_with('p'))
        .count();
    assert_eq!(clause_lines, clauses);
    assert!(stdout(&out).contains("wrote DIMACS"));
}

#[test]
fn reach_reports_the_endcap_strata() {
    let (code, report) = json_report(&["reach", &fixture("endcap_like.sml")]);
    assert_eq!(code, 1);
    let fs = findings(&report, 0);
    let kinds: Vec<&str> = fs
        .iter()
        .map(|f| f["data"]["kind"].as_str().unwrap())
        .collect();
    assert_eq!(
        kinds,
        ["not_strongly_connected", "source_only", "trap"],
        "messages: {:?}",
        fs.iter().map(|f| &f["message"]).collect::<Vec<_>>()
    );
    assert_eq!(fs[0]["data"]["components"], 2);
    assert_eq!(
        fs[1]["data"]["states"].as_array().unwrap(),
        &[Value::from("OFF")]
    );
    assert!(notes(&report, 0)
        .iter()
        .any(|n| n.contains("not a proof of impossibility")));
}

#[test]
fn reach_writes_the_transition_graph() {
    let dir = tempfile::tempdir().unwrap();
    let dot = dir.path().join("g.dot");
    let out = run(&[
        "reach",
        &fixture("endcap_like.sml"),
        "--dot",
        dot.to_str().unwrap(),
    ]);
    assert_eq!(exit(&out), 1);
    let text = std::fs::read_to_string(&dot).unwrap();
    assert!(text.starts_with("digraph"));
    assert!(text.contains("OFF"));
}

#[test]
fn sim_scripted_wheel_turns_on() {
    let (code, report) = json_report(&[
        "sim",
        &fixture("wheel_8.json"),
        "--script",
        &fixture("wheel_on.script"),
    ]);
    assert_eq!(code, 0);
    let summary = &report["results"][0]["summary"];
    assert_eq!(summary["halt"]["kind"], "quiescent");
    let states = summary["states"].as_object().unwrap();
    assert_eq!(states.len(), 8);
    assert!(states.values().all(|s| s == "ON"));
    let counters = &summary["counters"];
    assert_eq!(counters["commands_delivered"], counters["commands_enqueued"]);
}

#[test]
fn seeded_runs_are_reproducible() {
    let args = [
        "sim",
        &fixture("wheel_8.json"),
        "--script",
        &fixture("wheel_on.script"),
        "--seed",
        "7",
    ];
    let (_, first) = json_report(&args);
    let (_, second) = json_report(&args);
    assert_eq!(
        first["results"][0]["summary"],
        second["results"][0]["summary"]
    );
}

#[test]
fn sim_flags_the_cooling_livelock() {
    let (code, report) = json_report(&["sim", &fixture("ecal_live.json"), "--seed", "3"]);
    assert_eq!(code, 1);
    let fs = findings(&report, 0);
    assert_eq!(fs.len(), 1);
    assert_eq!(fs[0]["kind"], "livelock");
    assert!(!fs[0]["data"]["cycle"].as_array().unwrap().is_empty());
}

#[test]
fn enumeration_visits_every_schedule() {
    let (code, report) = json_report(&[
        "sim",
        &fixture("sector_2ch.json"),
        "--script",
        &fixture("wheel_on.script"),
        "--enumerate",
        "200000",
    ]);
    assert_eq!(code, 0, "deadlock or livelock found: {report}");
    let summary = &report["results"][0]["summary"];
    assert_eq!(summary["enumeration"]["truncated"], false);
    assert_eq!(summary["enumeration"]["deadlocks"], 0);
    assert!(notes(&report, 0)
        .iter()
        .any(|n| n.starts_with("every schedule explored")));
}

#[test]
fn the_trace_is_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("steps.jsonl");
    let (code, report) = json_report(&[
        "sim",
        &fixture("wheel_8.json"),
        "--script",
        &fixture("wheel_on.script"),
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&trace).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    for line in &lines {
        let record: Value = serde_json::from_str(line).expect("trace line is JSON");
        assert!(record.is_object());
    }
    let steps = report["results"][0]["summary"]["steps"].as_u64().unwrap();
    assert_eq!(lines.len() as u64, steps);
}

#[test]
fn export_stdout_matches_the_committed_model() {
    let out = run(&["export-mcrl2", &fixture("chamber.sml")]);
    assert_eq!(exit(&out), 0);
    let golden = std::fs::read_to_string(repo_path("fixtures/golden/chamber.mcrl2")).unwrap();
    assert_eq!(stdout(&out), golden);
}

#[test]
fn export_writes_the_model_and_requirements() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("wheel.mcrl2");
    let props = dir.path().join("props");
    let (code, report) = json_report(&[
        "export-mcrl2",
        &fixture("wheel_8.json"),
        "-o",
        model.to_str().unwrap(),
        "--props",
        props.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "structure findings: {report}");
    let golden = std::fs::read_to_string(repo_path("fixtures/golden/wheel_8.mcrl2")).unwrap();
    assert_eq!(std::fs::read_to_string(&model).unwrap(), golden);
    let mut written: Vec<String> = std::fs::read_dir(&props)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    written.sort();
    assert_eq!(
        written,
        [
            "deadlock-freedom.mcf",
            "no-intermediate-states.mcf",
            "progress-weakened.mcf",
            "progress.mcf",
            "responsiveness-weakened.mcf",
            "responsiveness.mcf",
        ]
    );
    for name in &written {
        let text = std::fs::read_to_string(props.join(name)).unwrap();
        assert!(!text.trim().is_empty());
        assert!(!text.contains("%i"), "unsubstituted parameter in {name}");
    }
}

#[test]
fn single_class_requirements_skip_child_properties() {
    let dir = tempfile::tempdir().unwrap();
    let props = dir.path().join("props");
    let (code, report) = json_report(&[
        "export-mcrl2",
        &fixture("chamber.sml"),
        "-o",
        dir.path().join("m.mcrl2").to_str().unwrap(),
        "--props",
        props.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let mut written: Vec<String> = std::fs::read_dir(&props)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    written.sort();
    assert_eq!(
        written,
        [
            "deadlock-freedom.mcf",
            "no-intermediate-states.mcf",
            "progress-weakened.mcf",
            "progress.mcf",
        ],
        "the responsiveness pair needs a child instance"
    );
    let skipped = notes(&report, 0)
        .iter()
        .filter(|n| n.starts_with("skipped responsiveness"))
        .count();
    assert_eq!(skipped, 2);
}

#[test]
fn export_json_format_requires_an_output_path() {
    let out = bin()
        .args(["--format", "json", "export-mcrl2", &fixture("chamber.sml")])
        .output()
        .unwrap();
    assert_eq!(exit(&out), 2);
    assert!(stderr(&out).contains("-o"));
}

#[test]
fn multi_class_files_need_a_choice() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("pair.sml");
    std::fs::write(
        &file,
        "class: PairFirst\n\
         \x20   state: OFF\n\
         \x20       when ( $ALL$FwCHILDREN in_state ON ) move_to ON\n\
         \x20       action: ON\n\
         \x20           do ON $ALL$FwCHILDREN\n\
         \x20   state: ON\n\
         class: PairSecond\n\
         \x20   state: IDLE\n\
         \x20       action: PING\n\
         \x20           do PING $ALL$FwCHILDREN\n",
    )
    .unwrap();
    let out = run(&["export-mcrl2", file.to_str().unwrap(), "-o", "/dev/null"]);
    assert_eq!(exit(&out), 0);
    assert!(stdout(&out).contains("file defines 2 classes"));

    let (_, picked) = json_report(&[
        "export-mcrl2",
        file.to_str().unwrap(),
        "-o",
        "/dev/null",
        "--class",
        "PairSecond",
    ]);
    assert_eq!(picked["results"][0]["class"], "PairSecond");
}

#[test]
fn text_and_json_render_the_same_findings() {
    for args in [
        vec!["loops".to_string(), fixture("ecal_cooling_dee.sml")],
        vec!["reach".to_string(), fixture("endcap_like.sml")],
        vec!["check".to_string(), fixture("chamber.sml")],
    ] {
        let strs: Vec<&str> = args.iter().map(String::as_str).collect();
        let (json_code, report) = json_report(&strs);
        let out = run(&strs);
        assert_eq!(exit(&out), json_code);
        let total = report["findings_total"].as_u64().unwrap();
        let footer = stdout(&out);
        let footer = footer.lines().last().unwrap();
        let text_total: u64 = match footer {
            "no findings" => 0,
            "1 finding" => 1,
            other => other
                .strip_suffix(" findings")
                .and_then(|n| n.parse().ok())
                .unwrap_or_else(|| panic!("unexpected footer: {other}")),
        };
        assert_eq!(text_total, total);
        for finding in findings(&report, 0) {
            let line = format!(
                "  {}: {}",
                finding["kind"].as_str().unwrap(),
                finding["message"].as_str().unwrap()
            );
            assert!(
                stdout(&out).contains(&line),
                "text report lacks: {line}"
            );
        }
    }
}

#[test]
fn repl_accepts_piped_choices() {
    let mut child = bin()
        .args([
            "sim",
            &fixture("wheel_8.json"),
            "--script",
            &fixture("wheel_on.script"),
            "--repl",
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all(b"0\n\ns\nc\nq\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(exit(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("interactive scheduler"));
    assert!(text.contains("node 1: RPC_Monitor"));
    assert!(text.contains("stopped at the prompt after 2 steps"));
}

mod schema {
    //! A validator for the subset of JSON Schema the published report
    //! schema uses: type, enum, minimum, required, properties,
    //! additionalProperties, items and local $ref.

    use serde_json::Value;

    pub fn validate(root: &Value, value: &Value) -> Vec<String> {
        let mut errors = Vec::new();
        check(root, root, value, "$", &mut errors);
        errors
    }

    fn resolve<'a>(schema: &'a Value, root: &'a Value) -> &'a Value {
        match schema.get("$ref").and_then(Value::as_str) {
            Some(r) => {
                let name = r
                    .strip_prefix("#/definitions/")
                    .unwrap_or_else(|| panic!("non-local ref {r}"));
                &root["definitions"][name]
            }
            None => schema,
        }
    }

    fn check(schema: &Value, root: &Value, value: &Value, at: &str, errors: &mut Vec<String>) {
        let schema = resolve(schema, root);
        if let Some(ty) = schema.get("type").and_then(Value::as_str) {
            let ok = match ty {
                "object" => value.is_object(),
                "array" => value.is_array(),
                "string" => value.is_string(),
                "integer" => value.is_i64() || value.is_u64(),
                "number" => value.is_number(),
                "boolean" => value.is_boolean(),
                other => panic!("unhandled type {other}"),
            };
            if !ok {
                errors.push(format!("{at}: expected {ty}, got {value}"));
                return;
            }
        }
        if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
            if !allowed.contains(value) {
                errors.push(format!("{at}: {value} not in {allowed:?}"));
            }
        }
        if let Some(min) = schema.get("minimum").and_then(Value::as_i64) {
            if value.as_i64().is_some_and(|v| v < min) {
                errors.push(format!("{at}: {value} below minimum {min}"));
            }
        }
        if let (Some(props), Some(object)) = (
            schema.get("properties").and_then(Value::as_object),
            value.as_object(),
        ) {
            if let Some(required) = schema.get("required").and_then(Value::as_array) {
                for name in required {
                    let name = name.as_str().unwrap();
                    if !object.contains_key(name) {
                        errors.push(format!("{at}: missing required field {name}"));
                    }
                }
            }
            let closed = schema.get("additionalProperties") == Some(&Value::Bool(false));
            for (name, field) in object {
                match props.get(name) {
                    Some(sub) => check(sub, root, field, &format!("{at}.{name}"), errors),
                    None if closed => {
                        errors.push(format!("{at}: unexpected field {name}"))
                    }
                    None => {}
                }
            }
        }
        if let (Some(items), Some(array)) = (schema.get("items"), value.as_array()) {
            for (i, item) in array.iter().enumerate() {
                check(items, root, item, &format!("{at}[{i}]"), errors);
            }
        }
    }
}

#[test]
fn reports_validate_against_the_published_schema() {
    let schema: Value = serde_json::from_str(
        &std::fs::read_to_string(repo_path("docs/report-schema.json")).unwrap(),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sml");
    std::fs::write(&bad, "state: nonsense\n").unwrap();
    let model = dir.path().join("m.mcrl2").display().to_string();

    let cases: Vec<Vec<String>> = vec![
        vec!["check".into(), fixture("chamber.sml")],
        vec!["check".into(), fixture("rpc_sector.sml"), fixture("rpc_hv.sml")],
        vec!["check".into(), bad.display().to_string()],
        vec!["loops".into(), fixture("ecal_cooling_dee.sml")],
        vec!["loops".into(), fixture("rpc_monitor.sml")],
        vec!["reach".into(), fixture("endcap_like.sml")],
        vec![
            "sim".into(),
            fixture("wheel_8.json"),
            "--script".into(),
            fixture("wheel_on.script"),
        ],
        vec!["sim".into(), fixture("ecal_live.json"), "--seed".into(), "3".into()],
        vec![
            "sim".into(),
            fixture("sector_2ch.json"),
            "--script".into(),
            fixture("wheel_on.script"),
            "--enumerate".into(),
            "50000".into(),
        ],
        vec![
            "export-mcrl2".into(),
            fixture("wheel_8.json"),
            "-o".into(),
            model.clone(),
            "--props".into(),
            dir.path().join("props").display().to_string(),
        ],
        vec!["export-mcrl2".into(), fixture("chamber.sml"), "-o".into(), model],
    ];
    for case in cases {
        let strs: Vec<&str> = case.iter().map(String::as_str).collect();
        let (_, report) = json_report(&strs);
        let errors = schema::validate(&schema, &report);
        assert!(errors.is_empty(), "{case:?}: {errors:?}");
    }
}
