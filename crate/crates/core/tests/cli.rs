mod common;

use lifted_bp::netir::parse_network;

use std::path::PathBuf;
use std::process::{Command, Output};

struct Scratch(PathBuf);

impl Scratch {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("liftbp-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        Scratch(dir)
    }

    fn file(&self, name: &str, body: &str) -> String {
        let p = self.0.join(name);
        std::fs::write(&p, body).unwrap();
        p.display().to_string()
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn liftbp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liftbp"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn grad_prints_fixture_adjoints() {
    let dir = Scratch::new("grad");
    let fixture = dir.file("fixture.fn", common::FIXTURE);
    for method in ["backprop", "bp-delta"] {
        let out = liftbp(&["grad", &fixture, "--method", method]);
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(
            stdout(&out),
            "w 3\nt 24\ny 3\nx 12\nu 3\nv 3\nz 1\n",
            "{method}"
        );
    }
}

#[test]
fn grad_json_and_csv() {
    let dir = Scratch::new("formats");
    let lin = dir.file("lin.fn", common::LINEAR);
    let out = liftbp(&[
        "grad", &lin, "--method", "bp-grid", "--sigma", "0.01", "--format", "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((json["x"].as_f64().unwrap() - 3.0).abs() < 1e-9);

    let out = liftbp(&["grad", &lin, "--method", "fd", "--format", "csv"]);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("name,"));
    let x: f64 = lines
        .next()
        .unwrap()
        .strip_prefix("x,")
        .unwrap()
        .parse()
        .unwrap();
    assert!((x - 3.0).abs() < 1e-6);
}

#[test]
fn eval_prints_forward_values() {
    let dir = Scratch::new("eval");
    let fixture = dir.file("fixture.fn", common::FIXTURE);
    let out = liftbp(&["eval", &fixture]);
    assert_eq!(stdout(&out), "w 2\nt 1\ny 3\nx 1\nu 3\nv 3\nz 9\n");
}

#[test]
fn check_passes_on_the_fixture_and_random_networks() {
    let dir = Scratch::new("check");
    let fixture = dir.file("fixture.fn", common::FIXTURE);
    assert_eq!(liftbp(&["check", &fixture]).status.code(), Some(0));
    assert_eq!(
        liftbp(&["check", "--random", "12", "--seed", "7"])
            .status
            .code(),
        Some(0)
    );
}

#[test]
fn check_fails_on_an_impossible_threshold() {
    let dir = Scratch::new("strict");
    let fixture = dir.file("fixture.fn", common::FIXTURE);
    let out = liftbp(&["check", &fixture, "--tol-grid", "1e-15"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    let dir = Scratch::new("usage");
    let fixture = dir.file("fixture.fn", common::FIXTURE);
    let cases: Vec<Vec<&str>> = vec![
        vec!["grad", &fixture, "--method", "fd", "--h", "0"],
        vec!["grad", &fixture, "--no-such-flag"],
        vec!["grad", &fixture, "--grid-points", "64"],
        vec!["grad", &fixture, "--quad-nodes", "12"],
        vec!["grad", "/nonexistent/network.fn"],
        vec!["eval"],
    ];
    for args in cases {
        assert_eq!(liftbp(&args).status.code(), Some(2), "{args:?}");
    }
    let broken = dir.file("broken.fn", "input a = 1\nz = frobnicate(a)\nobjective z\n");
    assert_eq!(liftbp(&["eval", &broken]).status.code(), Some(2));
}

#[test]
fn domain_errors_exit_3() {
    let dir = Scratch::new("domain");
    let bad = dir.file("bad.fn", "input a = -1\nz = log(a)\nobjective z\n");
    let out = liftbp(&["grad", &bad]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
}

#[test]
fn dumps_parse_back() {
    let dir = Scratch::new("dump");
    let fixture = dir.file("fixture.fn", common::FIXTURE);
    for what in ["messages", "graph"] {
        let out = liftbp(&["dump", &fixture, "--what", what, "--format", "json"]);
        assert_eq!(out.status.code(), Some(0), "{what}");
        serde_json::from_str::<serde_json::Value>(&stdout(&out)).unwrap();
    }
    let out = liftbp(&["dump", &fixture, "--what", "network"]);
    assert_eq!(parse_network(&stdout(&out)).unwrap(), common::fixture());
    let out = liftbp(&[
        "dump", &fixture, "--what", "messages", "--method", "bp-grid", "--format", "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    serde_json::from_str::<serde_json::Value>(&stdout(&out)).unwrap();
}

#[test]
fn report_writes_to_a_file() {
    let dir = Scratch::new("report");
    let fixture = dir.file("fixture.fn", common::FIXTURE);
    let target = dir.0.join("report.json");
    let out = liftbp(&["report", &fixture, "-o", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&target).unwrap()).unwrap();
    assert_eq!(json["variables"].as_array().unwrap().len(), 7);
}

#[test]
fn gauss_shift_figure() {
    let dir = Scratch::new("figure");
    let lin = dir.file("lin.fn", common::LINEAR);
    let out = liftbp(&[
        "report",
        &lin,
        "--emit-figure",
        "gauss-shift",
        "--figure-var",
        "x",
        "--sigma",
        "0.01",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "x,log_message_before,log_message_after,posterior_density"
    );
    assert_eq!(lines.count(), 129);
    let out = liftbp(&[
        "report",
        &lin,
        "--emit-figure",
        "gauss-shift",
        "--figure-var",
        "nope",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
