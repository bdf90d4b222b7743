use std::io::Write;
use std::path::{Path, PathBuf};

use markowitz_core::harness::pipeline::{attribute_report, infer_report, prepare};
use markowitz_core::harness::{
    load_csv, read_csv, run, synthetic_ff3, write_csv, Command, CsvSelection, HacChoice, ModelChoice, OutputFormat,
    RollingVolSpec, RunConfig, FIXTURE_MONTHS, FIXTURE_SEED,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic_ff3.csv")
}

fn selection(assets: &[&str], features: &[&str]) -> CsvSelection {
    CsvSelection {
        assets: assets.iter().map(|s| s.to_string()).collect(),
        features: features.iter().map(|s| s.to_string()).collect(),
        date_column: Some("date".into()),
    }
}

fn ff3() -> CsvSelection {
    selection(&["mkt", "smb", "hml"], &[])
}

fn infer_cfg() -> RunConfig {
    RunConfig {
        input: Some(fixture()),
        selection: ff3(),
        ..Default::default()
    }
}

#[test]
fn shipped_fixture_matches_generator() {
    let want = synthetic_ff3(FIXTURE_SEED, FIXTURE_MONTHS).unwrap();
    let got = load_csv(&fixture(), &selection(&["mkt", "smb", "hml", "cape"], &[])).unwrap();
    assert_eq!(got.panel.n_periods(), FIXTURE_MONTHS);
    assert_eq!(got.panel.timestamps().unwrap(), want.dates.as_slice());
    // values are rounded in the generator; allow half a unit of the last
    // printed digit in case a platform's exp differs in the final bit
    for i in 0..FIXTURE_MONTHS {
        for j in 0..3 {
            assert!((got.panel.values()[(i, j)] - want.values[(i, j)]).abs() <= 5e-7 + 1e-12);
        }
        assert!((got.panel.values()[(i, 3)] - want.values[(i, 3)]).abs() <= 5e-3 + 1e-12);
    }
}

#[test]
fn csv_round_trip() {
    let values = DMatrix::from_fn(12, 3, |i, j| {
        ((i * 31 + j * 17) as f64).sin() * 0.0731 + 1e-9 * j as f64
    });
    let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let dates: Vec<String> = (0..12).map(|i| format!("2001-{:02}", i + 1)).collect();
    let mut buf = Vec::new();
    write_csv(&mut buf, &names, &values, Some(&dates)).unwrap();
    let back = read_csv(buf.as_slice(), &selection(&[], &[])).unwrap();
    assert!((back.panel.values() - &values).amax() <= 1e-12);
    assert_eq!(back.panel.timestamps().unwrap(), dates.as_slice());
}

#[test]
fn infer_shapes_and_determinism() {
    let a = run(&infer_cfg()).unwrap();
    let b = run(&infer_cfg()).unwrap();
    assert_eq!(a.text, b.text);
    let rows: Vec<&str> = a.text.lines().filter(|l| l.starts_with("markowitz\t")).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let cells: Vec<&str> = r.split('\t').collect();
        assert_eq!(cells.len(), 6);
        assert!(cells[3].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn unit_weights_change_nothing() {
    let cfg = infer_cfg();
    let loaded = load_csv(&fixture(), &cfg.selection).unwrap();
    let plain = prepare(&cfg, &loaded).unwrap();
    let ones = markowitz_core::harness::PreparedData {
        weights: Some(DVector::from_element(plain.returns.nrows(), 1.0)),
        ..plain.clone()
    };
    let a = infer_report(&cfg, &plain).unwrap();
    let b = infer_report(&cfg, &ones).unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert_eq!(x.label, y.label);
        assert!((x.estimate - y.estimate).abs() <= 1e-12);
        assert!((x.std_error.unwrap() - y.std_error.unwrap()).abs() <= 1e-12);
    }
}

#[test]
fn weighted_hac_and_budgeted() {
    let cfg = RunConfig {
        vol: Some(RollingVolSpec::default()),
        hac: Some("bartlett:6".parse::<HacChoice>().unwrap()),
        risk_budget: Some(0.05),
        rfr: Some(0.001),
        format: OutputFormat::Json,
        ..infer_cfg()
    };
    let out = run(&cfg).unwrap();
    let v: serde_json::Value = serde_json::from_str(&out.text).unwrap();
    assert_eq!(v["metadata"]["rows_warmup"], "11");
    assert_eq!(v["metadata"]["estimator"], "hac:bartlett:6");
    let rows = v["rows"].as_array().unwrap();
    let portfolio: Vec<_> = rows.iter().filter(|r| r["section"] == "portfolio").collect();
    // three weights, the Sharpe ratio and the signal-noise ratio
    assert_eq!(portfolio.len(), 5);
}

#[test]
fn biconditional_coefficient_labels() {
    let cfg = RunConfig {
        selection: selection(&["mkt", "smb", "hml"], &["cape"]),
        model: ModelChoice::BiConditional,
        center_features: true,
        ..infer_cfg()
    };
    let out = run(&cfg).unwrap();
    let labels: Vec<&str> = out
        .text
        .lines()
        .filter(|l| l.starts_with("coefficient\t"))
        .map(|l| l.split('\t').nth(1).unwrap())
        .collect();
    assert_eq!(
        labels,
        [
            "mkt~intercept",
            "smb~intercept",
            "hml~intercept",
            "mkt~cape",
            "smb~cape",
            "hml~cape"
        ]
    );
}

#[test]
fn floating_model_runs() {
    let cfg = RunConfig {
        model: ModelChoice::Floating,
        vol: Some(RollingVolSpec::default()),
        ..infer_cfg()
    };
    let out = run(&cfg).unwrap();
    assert_eq!(out.text.lines().filter(|l| l.starts_with("coefficient\t")).count(), 3);
}

#[test]
fn attribution_table() {
    let cfg = RunConfig {
        command: Command::Attribute,
        ..infer_cfg()
    };
    let out = run(&cfg).unwrap();
    let tail: Vec<&str> = out.text.lines().skip_while(|l| !l.starts_with("asset\t")).collect();
    assert_eq!(tail[0], "asset\tvanilla\tweighted");
    assert_eq!(tail.len(), 4);
    for line in &tail[1..] {
        let cells: Vec<&str> = line.split('\t').collect();
        assert_eq!(cells.len(), 3);
        for c in &cells[1..] {
            let pct: f64 = c.trim_end_matches(" %").parse().unwrap();
            assert!((0.0..=100.0).contains(&pct));
        }
    }
}

fn temp_csv(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::File::create(&p).unwrap().write_all(text.as_bytes()).unwrap();
    p
}

#[test]
fn mglh_command() {
    let dir = tempfile::tempdir().unwrap();
    // do the three assets load on the valuation signal at all?
    let a = temp_csv(dir.path(), "a.csv", "1,0,0\n0,1,0\n0,0,1\n");
    let c = temp_csv(dir.path(), "c.csv", "0\n1\n");
    let cfg = RunConfig {
        command: Command::Mglh,
        selection: selection(&["mkt", "smb", "hml"], &["cape"]),
        model: ModelChoice::BiConditional,
        hypothesis_a: Some(a),
        hypothesis_c: Some(c),
        ..infer_cfg()
    };
    let out = run(&cfg).unwrap();
    let rows: Vec<Vec<&str>> = out
        .text
        .lines()
        .filter(|l| l.starts_with("mglh\t"))
        .map(|l| l.split('\t').collect())
        .collect();
    assert_eq!(rows.len(), 4);
    let hlt: f64 = rows[0][2].parse().unwrap();
    let wilks: f64 = rows[2][2].parse().unwrap();
    assert!(hlt >= 0.0);
    assert!(wilks > 0.0 && wilks <= 1.0);
}

#[test]
fn lrt_command() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = infer_cfg();
    let loaded = load_csv(&fixture(), &cfg.selection).unwrap();
    let tm = markowitz_core::moments::sample_theta(
        &markowitz_core::moments::augment(loaded.panel.values(), None, None).unwrap(),
    )
    .unwrap();
    let inv = tm.inverse().unwrap();
    // one constraint that holds in sample: the statistic is zero
    let q = 4;
    let mut vech = vec![0.0; q * (q + 1) / 2];
    vech[q] = 1.0; // entry (1, 1)
    let line: Vec<String> = vech
        .iter()
        .map(|v| v.to_string())
        .chain([inv[(1, 1)].to_string()])
        .collect();
    let path = temp_csv(dir.path(), "cons.csv", &(line.join(",") + "\n"));
    let out = run(&RunConfig {
        command: Command::Lrt,
        constraints: Some(path),
        ..cfg
    })
    .unwrap();
    let stat_line = out.text.lines().find(|l| l.starts_with("lrt\tstatistic")).unwrap();
    let stat: f64 = stat_line.split('\t').nth(2).unwrap().parse().unwrap();
    assert!(stat.abs() < 1e-6, "{stat}");
}

#[test]
fn selftest_and_simulate_commands() {
    let out = run(&RunConfig {
        command: Command::Selftest,
        ..Default::default()
    })
    .unwrap();
    assert!(out.passed);
    assert!(out.text.lines().skip(1).all(|l| l.ends_with("PASS")));

    let sim = |seed| {
        run(&RunConfig {
            command: Command::Simulate,
            suite: Some("lrt".parse().unwrap()),
            seed: Some(seed),
            trials: Some(40),
            ..Default::default()
        })
        .unwrap()
        .text
    };
    assert_eq!(sim(11), sim(11));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn attribution_on_subpanels(start in 0usize..200, len in 150usize..400, drop in 0usize..3) {
        let mut assets = vec!["mkt", "smb", "hml"];
        assets.remove(drop);
        let cfg = RunConfig {
            command: Command::Attribute,
            selection: selection(&assets, &[]),
            ..infer_cfg()
        };
        let full = load_csv(&fixture(), &cfg.selection).unwrap();
        let rows: Vec<usize> = (start..(start + len).min(FIXTURE_MONTHS)).collect();
        let loaded = markowitz_core::harness::LoadedPanel {
            panel: full.panel.select_rows(&rows).unwrap(),
            ..full
        };
        let report = attribute_report(&cfg, &loaded).unwrap();
        let table = report.attribution.unwrap();
        prop_assert_eq!(table.columns.len(), 2);
        prop_assert_eq!(table.values.len(), 2);
        for row in &table.values {
            prop_assert_eq!(row.len(), 2);
            for v in row {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
        let sections: Vec<&str> = report.rows.iter().map(|r| r.section.as_str()).collect();
        prop_assert_eq!(sections.iter().filter(|s| **s == "markowitz/vanilla").count(), 2);
        prop_assert_eq!(sections.iter().filter(|s| **s == "markowitz/weighted").count(), 2);
    }
}
