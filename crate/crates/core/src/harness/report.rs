use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::asymptotics::{wald_statistics, DistributionResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Tsv,
    Json,
}

/// One estimated quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub section: String,
    pub label: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
}

/// Fractions of each asset's weight error explained by the rest, one column
/// per estimation variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionTable {
    pub assets: Vec<String>,
    pub columns: Vec<String>,
    /// `values[asset][column]`, in `[0, 1]`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Report {
    pub metadata: BTreeMap<String, String>,
    pub rows: Vec<ReportRow>,
    pub attribution: Option<AttributionTable>,
}

/// Two-sided normal p-value.
pub fn normal_p_value(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { f64::NAN } else { 0.0 };
    }
    let n = Normal::standard();
    2.0 * n.cdf(-z.abs())
}

impl Report {
    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.insert(key.to_string(), value.to_string());
    }

    /// Adds every coordinate of a distribution with its Wald statistics.
    pub fn add_distribution(&mut self, section: &str, dr: &DistributionResult) {
        let se = dr.standard_errors();
        let wald = wald_statistics(dr);
        for i in 0..dr.point.len() {
            self.rows.push(ReportRow {
                section: section.to_string(),
                label: dr.labels.get(i).cloned().unwrap_or_else(|| i.to_string()),
                estimate: dr.point[i],
                std_error: Some(se[i]),
                z: Some(wald.z[i]),
                p_value: Some(normal_p_value(wald.z[i])),
            });
        }
    }

    pub fn add_value(&mut self, section: &str, label: &str, estimate: f64) {
        self.rows.push(ReportRow {
            section: section.to_string(),
            label: label.to_string(),
            estimate,
            std_error: None,
            z: None,
            p_value: None,
        });
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Tsv => self.to_tsv(),
            OutputFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
        }
    }

    fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(out, "# {k}\t{v}");
        }
        out.push_str("section\tlabel\testimate\tstd_error\tz\tp_value\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, fmt_num);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.section,
                r.label,
                fmt_num(r.estimate),
                opt(r.std_error),
                opt(r.z),
                opt(r.p_value)
            );
        }
        if let Some(t) = &self.attribution {
            out.push('\n');
            let _ = writeln!(out, "asset\t{}", t.columns.join("\t"));
            for (name, row) in t.assets.iter().zip(&t.values) {
                let cells: Vec<String> = row.iter().map(|v| format!("{:.0} %", 100.0 * v)).collect();
                let _ = writeln!(out, "{name}\t{}", cells.join("\t"));
            }
        }
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        v.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(
            Report::default().render(OutputFormat::Tsv),
            "section\tlabel\testimate\tstd_error\tz\tp_value\n"
        );
    }

    #[test]
    fn json_round_trip() {
        let mut r = Report::default();
        r.meta("estimator", "vanilla");
        r.add_distribution(
            "markowitz",
            &DistributionResult {
                point: DVector::from_vec(vec![1.5, -0.5]),
                covariance: DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
                n_obs: 100,
                labels: vec!["a".into(), "b".into()],
            },
        );
        r.attribution = Some(AttributionTable {
            assets: vec!["a".into(), "b".into()],
            columns: vec!["vanilla".into(), "weighted".into()],
            values: vec![vec![0.41, 0.32], vec![0.1, 0.2]],
        });
        let text = r.render(OutputFormat::Json);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["rows"][0]["label"], "a");
        assert!((v["rows"][0]["z"].as_f64().unwrap() - 7.5).abs() < 1e-12);
        assert_eq!(v["metadata"]["estimator"], "vanilla");
        assert_eq!(v["attribution"]["values"][0][1].as_f64().unwrap(), 0.32);
    }

    #[test]
    fn attribution_as_percentages() {
        let r = Report {
            attribution: Some(AttributionTable {
                assets: vec!["mkt".into()],
                columns: vec!["vanilla".into(), "weighted".into()],
                values: vec![vec![0.41, 0.32]],
            }),
            ..Default::default()
        };
        let text = r.render(OutputFormat::Tsv);
        assert!(text.ends_with("asset\tvanilla\tweighted\nmkt\t41 %\t32 %\n"));
    }

    #[test]
    fn p_values() {
        assert!((normal_p_value(1.959963984540054) - 0.05).abs() < 1e-9);
        assert_eq!(normal_p_value(f64::INFINITY), 0.0);
    }
}
