use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trace-lab"));
    cmd.env_remove("TRACE_LAB_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join(name)
}

fn parse_csv(bytes: &[u8]) -> Vec<Vec<String>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(bytes)
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

#[test]
fn missing_experiment_is_a_usage_error() {
    let out = run(&["--mdp", "chain2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["--experiment", "control", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_strategy_names_the_token() {
    let out = run(&["--experiment", "control", "--strategy", "retrace:lamda=0.9"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda"));
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_thread_count_is_rejected() {
    let out = bin()
        .args(["--experiment", "control", "--iterations", "2"])
        .env("TRACE_LAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn policy_shape_mismatch_is_rejected() {
    let out = run(&["--experiment", "contraction_suite", "--target", "table:0.5,0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn unwritable_output_is_a_resource_failure() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("missing").join("out.csv");
    let out = run(&[
        "--experiment",
        "control",
        "--iterations",
        "2",
        "--out",
        target.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trace-lab"));
}

#[test]
fn budget_exhaustion_is_a_resource_failure() {
    let out = run(&[
        "--experiment",
        "evaluate_operator",
        "--mdp",
        "garnet:8,4,8,1,0.95",
        "--strategy",
        "nonmarkov_retrace:lambda=1",
        "--tol",
        "1e-12",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn identical_specs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--experiment", "evaluate_operator", "--episodes", "5000"],
        vec!["--experiment", "contraction_suite"],
        vec!["--experiment", "learn", "--episodes", "500"],
        vec!["--experiment", "control", "--iterations", "30"],
    ] {
        let mut outputs = Vec::new();
        for i in 0..2 {
            let path = dir.path().join(format!("run{i}.csv"));
            let mut full = args.clone();
            full.extend(["--seed", "17", "--out", path.to_str().unwrap()]);
            let out = run(&full);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            assert!(out.stdout.is_empty());
            outputs.push(std::fs::read(&path).unwrap());
        }
        assert_eq!(outputs[0], outputs[1], "{args:?}");
    }
}

#[test]
fn schemas_have_headers() {
    let cases = [
        (
            vec!["--experiment", "evaluate_operator", "--episodes", "100"],
            "state,action,q,mq,tail_bound,closed_form,q_pi,mc_estimate,mc_std_error",
            4,
        ),
        (
            vec!["--experiment", "contraction_suite"],
            "strategy,gamma,norm_before,norm_after,map_norm,lemma2_norm,admissible",
            7,
        ),
        (vec!["--experiment", "learn", "--episodes", "25"], "episode,sup_norm_error,steps", 25),
        (vec!["--experiment", "control", "--iterations", "3"], "k,err,epsilon,bound_rhs,bound_ok", 3),
    ];
    for (args, header, rows) in cases {
        let out = run(&args);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(header));
        assert_eq!(lines.count(), rows, "{args:?}");
    }
}

#[test]
fn seed_changes_random_components() {
    let a = run(&["--experiment", "contraction_suite", "--seed", "1"]).stdout;
    let b = run(&["--experiment", "contraction_suite", "--seed", "2"]).stdout;
    assert_ne!(a, b);
}

#[test]
fn fixture_file_matches_builtin() {
    let path = fixture("fixtures/chain2.toml");
    let from_file = run(&["--experiment", "contraction_suite", "--mdp", path.to_str().unwrap()]);
    let builtin = run(&["--experiment", "contraction_suite", "--mdp", "chain2"]);
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, builtin.stdout);
}

#[test]
fn control_preset_matches_golden() {
    let out = run(&[
        "--experiment",
        "control",
        "--mdp",
        "chain2",
        "--strategy",
        "retrace:lambda=0.9",
        "--seed",
        "1",
        "--init",
        "optimistic",
        "--iterations",
        "60",
    ]);
    assert!(out.status.success());
    let actual = parse_csv(&out.stdout);
    let golden = parse_csv(&std::fs::read(fixture("golden/control_chain2_retrace.csv")).unwrap());
    assert_eq!(actual.len(), golden.len());
    assert_eq!(actual[0], golden[0]);
    for (row, expected) in actual.iter().zip(&golden).skip(1) {
        assert_eq!(row.len(), expected.len());
        for (x, y) in row.iter().zip(expected) {
            match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(x), Ok(y)) => assert!((x - y).abs() <= 1e-9, "{x} vs {y}"),
                _ => assert_eq!(x, y),
            }
        }
    }
    assert!(golden.iter().skip(1).all(|r| r[4] == "true"));
}
