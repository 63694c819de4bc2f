use std::path::Path;
use std::process::{Command, Output};

fn cascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn simulate_dumps_a_trace_table() {
    let out = cascade(&["simulate", "--graph", "lattice:1", "--n", "5", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# cascade-campaign schema=trace version=1"));
    assert!(lines.next().unwrap().starts_with("# config {"));
    assert_eq!(lines.next().unwrap(), "t,vertex,affected,observation");
    let first = lines.next().unwrap();
    assert!(first.starts_with("0,("), "{first}");
}

#[test]
fn jsonl_output_is_one_object_per_line() {
    let out = cascade(&["bayes-scaling", "--n", "20", "--trials", "5", "--format", "jsonl"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.lines().count() >= 2);
    for line in text.lines() {
        assert!(line.starts_with('{') && line.ends_with('}'), "{line}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "graph = \"lattice:2\"\nn = [25]\ntrials = 4\nseed = 5\nchannel = \"bernoulli:0.2,0.8\"\n").unwrap();
    let out_path = dir.path().join("out.csv");
    let out = cascade(&[
        "bayes-scaling",
        "--config",
        cfg.to_str().unwrap(),
        "--trials",
        "6",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.contains("\"graph\":\"lattice:2\""));
    assert!(text.contains("\"trials\":6"));
    assert!(text.contains("\"seed\":5"));
    assert!(text.contains("bernoulli:0.2,0.8"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "graf = \"tree:3\"\n").unwrap();
    let out = cascade(&["transition", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_arguments_exit_with_code_two() {
    assert_eq!(cascade(&["bayes-scaling", "--channel", "bernoulli:0.5,0.5"]).status.code(), Some(2));
    assert_eq!(cascade(&["bayes-scaling", "--graph", "tree:2"]).status.code(), Some(2));
    assert_eq!(cascade(&["transition", "--plan", "uniform"]).status.code(), Some(2));
}

#[test]
fn failing_check_sets_exit_code_one() {
    // A horizon of one step is too short for n = 1000, so runs exhaust it.
    let out = cascade(&["bayes-scaling", "--n", "1000", "--trials", "10", "--horizon-factor", "0.01"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL no horizon exhaustion"));
}

fn run_to(dir: &Path, name: &str, workers: &str) -> Vec<u8> {
    let path = dir.join(name);
    let out = cascade(&[
        "minimax-scaling",
        "--graph",
        "lattice:2",
        "--n",
        "30,60",
        "--trials",
        "20",
        "--seed",
        "8",
        "--workers",
        workers,
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::read(path).unwrap()
}

#[test]
fn output_does_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let one = run_to(dir.path(), "a.csv", "1");
    let four = run_to(dir.path(), "b.csv", "4");
    assert_eq!(one, four);
}
