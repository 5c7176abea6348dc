//! Reading and writing record files.
//!
//! The format is CSV with the exact header `z,d,y,r`. `z`, `d` and `r` are `0` or `1`; `y` is a
//! decimal number when `r = 1` and empty when `r = 0`. Outcomes are written in the shortest
//! decimal form that parses back to the same `f64`, so a write/read cycle is lossless.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::ObservedRecord;

pub const HEADER: [&str; 4] = ["z", "d", "y", "r"];

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn bit(field: &str, name: &str, line: u64) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(parse_error(line, format!("{name} must be 0 or 1, got {other:?}"))),
    }
}

fn parse_row(row: &csv::StringRecord, line: u64) -> Result<ObservedRecord> {
    if row.len() != 4 {
        return Err(parse_error(line, format!("expected 4 fields, found {}", row.len())));
    }
    let z = bit(&row[0], "z", line)?;
    let d = bit(&row[1], "d", line)?;
    let r = bit(&row[3], "r", line)?;
    let y_text = row[2].trim();
    let y = if y_text.is_empty() {
        None
    } else {
        let v: f64 = y_text
            .parse()
            .map_err(|_| parse_error(line, format!("y is not a number: {y_text:?}")))?;
        if !v.is_finite() {
            return Err(parse_error(line, format!("y must be finite, got {y_text:?}")));
        }
        Some(v)
    };
    ObservedRecord::new(z, d, y, r).map_err(|e| parse_error(line, e.to_string()))
}

/// Parses a record file. Errors carry the 1-based line number of the offending row.
pub fn read_records<R: Read>(input: R) -> Result<Vec<ObservedRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = reader.records();
    let header = match rows.next() {
        None => return Err(parse_error(1, "empty input; expected header z,d,y,r")),
        Some(h) => h.map_err(|e| csv_error(&e))?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != HEADER {
        return Err(parse_error(
            header.position().map_or(1, |p| p.line()),
            format!("header must be z,d,y,r, found {}", names.join(",")),
        ));
    }
    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| csv_error(&e))?;
        let line = row.position().map_or(0, |p| p.line());
        records.push(parse_row(&row, line)?);
    }
    Ok(records)
}

fn csv_error(e: &csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_error(line, e.to_string())
}

/// Parses an in-memory record file.
pub fn parse_records(bytes: &[u8]) -> Result<Vec<ObservedRecord>> {
    read_records(bytes)
}

/// Shortest decimal text that parses back to exactly `v`.
pub fn format_float(v: f64) -> String {
    format!("{v}")
}

pub fn write_records<W: Write>(out: W, records: &[ObservedRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for rec in records {
        let y = rec.y.map(format_float).unwrap_or_default();
        w.write_record([
            if rec.z { "1" } else { "0" },
            if rec.d { "1" } else { "0" },
            y.as_str(),
            if rec.r() { "1" } else { "0" },
        ])?;
    }
    w.flush()
}

pub fn records_to_string(records: &[ObservedRecord]) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_rows() {
        let text = "z,d,y,r\n1,1,2.5,1\n0,0,,0\n";
        let recs = parse_records(text.as_bytes()).unwrap();
        assert_eq!(recs, vec![ObservedRecord::observed(true, true, 2.5), ObservedRecord::missing(false, false)]);
    }

    #[test]
    fn errors_report_lines() {
        let cases = [
            ("z,d,y\n", 1),
            ("z,d,y,r\n1,1,2.5,1\n1,2,3,1\n", 3),
            ("z,d,y,r\n1,1,,1\n", 2),
            ("z,d,y,r\n1,1,3,0\n", 2),
            ("z,d,y,r\n1,1,abc,1\n", 2),
            ("z,d,y,r\n1,1,inf,1\n", 2),
            ("z,d,y,r\n1,1,1\n", 2),
            ("", 1),
        ];
        for (text, line) in cases {
            match parse_records(text.as_bytes()) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn write_read_is_lossless() {
        let recs = vec![
            ObservedRecord::observed(true, false, 0.1 + 0.2),
            ObservedRecord::observed(false, true, -1.0e-300),
            ObservedRecord::observed(false, false, 123456789.123456789),
            ObservedRecord::missing(true, true),
        ];
        let text = records_to_string(&recs);
        assert!(text.starts_with("z,d,y,r\n"));
        assert_eq!(parse_records(text.as_bytes()).unwrap(), recs);
    }
}
