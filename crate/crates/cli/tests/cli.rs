use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/synthetic_ff3.csv")
}

fn markowitz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_markowitz"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn infer_prints_one_row_per_asset() {
    let f = fixture();
    let o = markowitz(&["infer", "--input", f.to_str().unwrap(), "--assets", "mkt,smb,hml"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("section\tlabel\testimate\tstd_error\tz\tp_value"));
    assert_eq!(out.lines().filter(|l| l.starts_with("markowitz\t")).count(), 3);
}

#[test]
fn json_output_parses() {
    let f = fixture();
    let o = markowitz(&[
        "attribute",
        "--input",
        f.to_str().unwrap(),
        "--assets",
        "mkt,smb,hml",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["attribution"]["columns"], serde_json::json!(["vanilla", "weighted"]));
}

#[test]
fn usage_errors_exit_one() {
    let f = fixture();
    let f = f.to_str().unwrap();
    assert_eq!(markowitz(&["bogus"]).status.code(), Some(1));
    assert_eq!(markowitz(&["infer"]).status.code(), Some(1));
    assert_eq!(
        markowitz(&["infer", "--input", f, "--risk-budget", "1", "--rfr", "-0.01"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        markowitz(&["infer", "--input", f, "--model", "nope"]).status.code(),
        Some(1)
    );
    assert_eq!(
        markowitz(&["infer", "--input", f, "--hac", "qs"]).status.code(),
        Some(1)
    );
    assert_eq!(
        markowitz(&["simulate", "--suite", "nope", "--seed", "1"]).status.code(),
        Some(1)
    );
    assert_eq!(markowitz(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let f = fixture();
    let f = f.to_str().unwrap();
    assert_eq!(
        markowitz(&["infer", "--input", "/no/such/file.csv"]).status.code(),
        Some(2)
    );
    assert_eq!(
        markowitz(&["infer", "--input", f, "--assets", "mkt,missing"])
            .status
            .code(),
        Some(2)
    );
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.csv", "date,a,b\n2000-01,0.1,x\n");
    let o = markowitz(&["infer", "--input", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn singular_second_moment_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("date,a,b\n");
    for i in 0..40 {
        let v = ((i * 7) as f64).sin() * 0.05;
        text.push_str(&format!("2000-{i},{v},{v}\n"));
    }
    let path = write(dir.path(), "dup.csv", &text);
    assert_eq!(
        markowitz(&["infer", "--input", path.to_str().unwrap()]).status.code(),
        Some(3)
    );
}

#[test]
fn mglh_and_lrt_commands() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture();
    let f = f.to_str().unwrap();
    let a = write(dir.path(), "a.csv", "1,0,0\n0,1,0\n");
    let c = write(dir.path(), "c.csv", "0\n1\n");
    let o = markowitz(&[
        "mglh",
        "--input",
        f,
        "--assets",
        "mkt,smb,hml",
        "--features",
        "cape",
        "--model",
        "biconditional",
        "--A",
        a.to_str().unwrap(),
        "--C",
        c.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("mglh\t")).count(), 4);

    // trace of the (1,1) entry of the inverse second moment against a
    // value far from its estimate
    let cons = write(dir.path(), "cons.csv", "0,0,0,0,1,0,0,0,0,0,1000\n");
    let o = markowitz(&[
        "lrt",
        "--input",
        f,
        "--assets",
        "mkt,smb,hml",
        "--constraints",
        cons.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let stat: f64 = out
        .lines()
        .find(|l| l.starts_with("lrt\tstatistic"))
        .and_then(|l| l.split('\t').nth(2))
        .unwrap()
        .parse()
        .unwrap();
    assert!(stat > 10.0, "{stat}");
}

#[test]
fn selftest_passes_and_simulate_is_reproducible() {
    let o = markowitz(&["selftest"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.lines().skip(1).all(|l| l.ends_with("PASS")));

    let sim = || {
        stdout(&markowitz(&[
            "simulate",
            "--suite",
            "britten-jones",
            "--seed",
            "9",
            "--trials",
            "20",
        ]))
    };
    let first = sim();
    assert_eq!(first, sim());
    assert!(first.contains("britten-jones/mean_abs_difference"));
}
