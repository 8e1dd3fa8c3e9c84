use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use spinn_core::collocation::StepRecord;

use crate::CliError;

pub const HEADER: [&str; 14] = [
    "step", "t", "loss", "l2_error", "F_x", "F_y", "F_z", "beta_x", "beta_y", "beta_z", "x_L", "N", "epochs", "wall_ms",
];

/// Seventeen significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn per_dim(values: &[f64], k: usize) -> String {
    values.get(k).map(|v| fmt_f64(*v)).unwrap_or_default()
}

fn row(r: &StepRecord) -> Vec<String> {
    vec![
        r.step.to_string(),
        fmt_f64(r.t),
        fmt_f64(r.loss),
        r.l2_error.map(fmt_f64).unwrap_or_default(),
        per_dim(&r.indicator, 0),
        per_dim(&r.indicator, 1),
        per_dim(&r.indicator, 2),
        per_dim(&r.beta, 0),
        per_dim(&r.beta, 1),
        per_dim(&r.beta, 2),
        fmt_f64(r.x_l),
        r.n.to_string(),
        r.epochs.to_string(),
        fmt_f64(r.wall_ms),
    ]
}

pub fn records_to_csv(records: &[StepRecord]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).map_err(csv_err)?;
    for r in records {
        if r.indicator.len() > 3 || r.beta.len() > 3 {
            return Err(CliError::Runtime(format!("record {} has more than three dimensions", r.step)));
        }
        w.write_record(row(r)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn json_number(v: f64) -> String {
    if v.is_finite() {
        fmt_f64(v)
    } else {
        "null".into()
    }
}

fn json_dim(values: &[f64], k: usize) -> String {
    values.get(k).map(|v| json_number(*v)).unwrap_or_else(|| "null".into())
}

/// Array of objects keyed by the CSV header; absent values are `null`.
pub fn records_to_json(records: &[StepRecord]) -> String {
    let mut s = String::from("[\n");
    for (i, r) in records.iter().enumerate() {
        let values = [
            r.step.to_string(),
            json_number(r.t),
            json_number(r.loss),
            r.l2_error.map(json_number).unwrap_or_else(|| "null".into()),
            json_dim(&r.indicator, 0),
            json_dim(&r.indicator, 1),
            json_dim(&r.indicator, 2),
            json_dim(&r.beta, 0),
            json_dim(&r.beta, 1),
            json_dim(&r.beta, 2),
            json_number(r.x_l),
            r.n.to_string(),
            r.epochs.to_string(),
            json_number(r.wall_ms),
        ];
        s.push_str("  {");
        for (k, (key, v)) in HEADER.iter().zip(&values).enumerate() {
            if k > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "\"{key}\": {v}");
        }
        s.push('}');
        s.push_str(if i + 1 < records.len() { ",\n" } else { "\n" });
    }
    s.push_str("]\n");
    s
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn emit_records(records: &[StepRecord], dir: &Path, stem: &str) -> Result<(), CliError> {
    if records.is_empty() {
        return Err(CliError::Runtime(format!("{stem}: no records to write")));
    }
    write_file(&dir.join(format!("{stem}.csv")), &records_to_csv(records)?)?;
    write_file(&dir.join(format!("{stem}.json")), &records_to_json(records))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)
}

/// Table with a header row and pre-formatted cells.
pub fn table_to_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// Parses CSV produced by [`records_to_csv`].
pub fn read_records(text: &str) -> Result<Vec<StepRecord>, CliError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER) {
        return Err(CliError::Invalid(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |col: &str| CliError::Invalid(format!("row {}: bad `{col}` value", line + 1));
        let f = |k: usize| -> Result<f64, CliError> { rec[k].parse::<f64>().map_err(|_| bad(HEADER[k])) };
        let opt = |k: usize| -> Result<Option<f64>, CliError> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                f(k).map(Some)
            }
        };
        let u = |k: usize| -> Result<usize, CliError> { rec[k].parse::<usize>().map_err(|_| bad(HEADER[k])) };
        let dims = |from: usize| -> Result<Vec<f64>, CliError> { Ok((from..from + 3).map(opt).collect::<Result<Vec<_>, _>>()?.into_iter().flatten().collect()) };
        out.push(StepRecord {
            step: u(0)?,
            t: f(1)?,
            loss: f(2)?,
            l2_error: opt(3)?,
            indicator: dims(4)?,
            beta: dims(7)?,
            x_l: f(10)?,
            n: u(11)?,
            epochs: u(12)?,
            wall_ms: f(13)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(dims: usize, step: usize) -> StepRecord {
        StepRecord {
            step,
            t: 0.1 * step as f64,
            loss: 1.0 / 3.0,
            l2_error: (step % 2 == 0).then_some(std::f64::consts::PI * 1e-7),
            indicator: (0..dims).map(|k| 0.1 + k as f64 / 7.0).collect(),
            beta: (0..dims).map(|k| 0.8 - k as f64 * 1e-3).collect(),
            x_l: -0.3,
            n: 20,
            epochs: 512,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn one_record_gives_header_and_one_row() {
        let csv = records_to_csv(&[record(1, 1)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], HEADER.join(","));
    }

    #[test]
    fn unused_dimensions_are_empty() {
        let csv = records_to_csv(&[record(1, 1)]).unwrap();
        let cells: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        for k in [5, 6, 8, 9] {
            assert_eq!(cells[k], "", "column {}", HEADER[k]);
        }
        assert!(!cells[4].is_empty() && !cells[7].is_empty());
    }

    #[test]
    fn json_keys_follow_the_header() {
        let js = records_to_json(&[record(2, 1), record(2, 2)]);
        let v: serde_json::Value = serde_json::from_str(&js).unwrap();
        let obj = v[1].as_object().unwrap();
        assert_eq!(obj.len(), HEADER.len());
        assert_eq!(obj["beta_z"], serde_json::Value::Null);
        assert_eq!(obj["l2_error"].as_f64().unwrap(), std::f64::consts::PI * 1e-7);
        assert_eq!(v[0]["l2_error"], serde_json::Value::Null);
    }
}
