use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::moments::ReturnsPanel;

/// Which columns of a CSV file to read. An empty asset list means every
/// column that is neither the date nor a feature.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvSelection {
    pub assets: Vec<String>,
    pub features: Vec<String>,
    pub date_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPanel {
    pub panel: ReturnsPanel,
    pub features: Option<DMatrix<f64>>,
    pub feature_names: Vec<String>,
    /// Rows dropped because a selected value was missing.
    pub dropped: usize,
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "N/A" | "NaN" | "nan" | "null" | "NULL")
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            row: 1,
            column: name.to_string(),
            message: "no such column".into(),
        })
}

pub fn load_csv(path: &Path, sel: &CsvSelection) -> Result<LoadedPanel> {
    read_csv(std::fs::File::open(path)?, sel)
}

/// Reads a headed CSV. Rows with a missing selected value are dropped and
/// counted; any other non-numeric value is an error.
pub fn read_csv<R: Read>(reader: R, sel: &CsvSelection) -> Result<LoadedPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let date_idx = sel
        .date_column
        .as_deref()
        .map(|d| column_index(&headers, d))
        .transpose()?;
    let feature_idx = sel
        .features
        .iter()
        .map(|f| column_index(&headers, f))
        .collect::<Result<Vec<_>>>()?;
    let asset_names: Vec<String> = if sel.assets.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != date_idx && !feature_idx.contains(i))
            .map(|(_, h)| h.trim().to_string())
            .collect()
    } else {
        sel.assets.clone()
    };
    let asset_idx = asset_names
        .iter()
        .map(|a| column_index(&headers, a))
        .collect::<Result<Vec<_>>>()?;

    let mut returns = Vec::new();
    let mut features = Vec::new();
    let mut dates = Vec::new();
    let mut dropped = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse = |idx: &[usize], names: &[String]| -> Result<Option<Vec<f64>>> {
            let mut out = Vec::with_capacity(idx.len());
            for (k, &i) in idx.iter().enumerate() {
                let raw = rec.get(i).unwrap_or("");
                if is_missing(raw) {
                    return Ok(None);
                }
                let v: f64 = raw.parse().map_err(|_| Error::Parse {
                    row: line,
                    column: names[k].clone(),
                    message: format!("'{raw}' is not a number"),
                })?;
                if !v.is_finite() {
                    return Ok(None);
                }
                out.push(v);
            }
            Ok(Some(out))
        };
        let r = parse(&asset_idx, &asset_names)?;
        let f = parse(&feature_idx, &sel.features)?;
        match (r, f) {
            (Some(r), Some(f)) => {
                returns.extend(r);
                features.extend(f);
                if let Some(d) = date_idx {
                    dates.push(rec.get(d).unwrap_or("").to_string());
                }
            }
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} rows with missing values");
    }
    let t = returns.len() / asset_names.len().max(1);
    if t == 0 {
        return Err(Error::EmptyPanel);
    }
    if date_idx.is_some() && dates.windows(2).any(|w| w[0] >= w[1]) {
        log::warn!("timestamps are not strictly increasing; rows kept in file order");
    }
    let values = DMatrix::from_row_slice(t, asset_names.len(), &returns);
    let feats = (!sel.features.is_empty()).then(|| DMatrix::from_row_slice(t, sel.features.len(), &features));
    let panel = ReturnsPanel::new(values, asset_names, date_idx.map(|_| dates))?;
    Ok(LoadedPanel {
        panel,
        features: feats,
        feature_names: sel.features.clone(),
        dropped,
    })
}

/// Writes a headed CSV with an optional leading date column. Values use the
/// shortest representation that reads back exactly.
pub fn write_csv<W: Write>(writer: W, names: &[String], values: &DMatrix<f64>, dates: Option<&[String]>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = Vec::new();
    if dates.is_some() {
        header.push("date");
    }
    header.extend(names.iter().map(String::as_str));
    wtr.write_record(&header)?;
    for i in 0..values.nrows() {
        let mut rec: Vec<String> = Vec::with_capacity(values.ncols() + 1);
        if let Some(d) = dates {
            rec.push(d[i].clone());
        }
        rec.extend(values.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Headerless numeric CSV, one matrix row per record.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, s)| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    row: r + 1,
                    column: (c + 1).to_string(),
                    message: format!("'{s}' is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::LengthMismatch(format!(
                    "row {} has {} entries, expected {}",
                    r + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), rows[0].len(), &flat))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text(rows: &[&str]) -> String {
        rows.join("\n") + "\n"
    }

    #[test]
    fn plain_numeric_file() {
        let mut lines = vec!["a,b,c".to_string()];
        for i in 0..10 {
            lines.push(format!("{},{},{}", i, i * 2, i * 3));
        }
        let text = lines.join("\n");
        let out = read_csv(text.as_bytes(), &CsvSelection::default()).unwrap();
        assert_eq!(out.panel.values().shape(), (10, 3));
        assert_eq!(out.panel.asset_names(), ["a", "b", "c"]);
        assert_eq!(out.dropped, 0);
        assert_eq!(out.panel.values()[(9, 2)], 27.0);
    }

    #[test]
    fn missing_row_is_dropped() {
        let mut lines = vec!["date,x,y".to_string()];
        for i in 0..10 {
            if i == 4 {
                lines.push(format!("2000-{:02},NA,1", i + 1));
            } else {
                lines.push(format!("2000-{:02},{},{}", i + 1, i, -i));
            }
        }
        let sel = CsvSelection {
            date_column: Some("date".into()),
            ..Default::default()
        };
        let out = read_csv(lines.join("\n").as_bytes(), &sel).unwrap();
        assert_eq!(out.panel.n_periods(), 9);
        assert_eq!(out.dropped, 1);
        assert_eq!(out.panel.timestamps().unwrap()[4], "2000-06");
    }

    #[test]
    fn bad_value_reports_position() {
        let text = csv_text(&["x,y", "1,2", "3,oops", "5,6", "7,8"]);
        match read_csv(text.as_bytes(), &CsvSelection::default()) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn selects_features_and_assets() {
        let text = csv_text(&["d,f,x,y", "1,0.5,1,2", "2,0.6,3,4", "3,0.7,5,6", "4,0.8,7,9"]);
        let sel = CsvSelection {
            assets: vec!["y".into()],
            features: vec!["f".into()],
            date_column: Some("d".into()),
        };
        let out = read_csv(text.as_bytes(), &sel).unwrap();
        assert_eq!(out.panel.values().column(0).as_slice(), &[2.0, 4.0, 6.0, 9.0]);
        assert_eq!(out.features.unwrap().column(0).as_slice(), &[0.5, 0.6, 0.7, 0.8]);
    }

    #[test]
    fn unknown_column() {
        let text = csv_text(&["x", "1", "2", "3"]);
        let sel = CsvSelection {
            assets: vec!["z".into()],
            ..Default::default()
        };
        assert!(matches!(read_csv(text.as_bytes(), &sel), Err(Error::Parse { .. })));
    }
}
