//! CSV layout: header `f0,...,f{d-1},label`, one sample per row, label last
//! and exactly `-1` or `1`. Values are written with 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::Dataset;
use crate::error::{NsvmError, Result};

fn parse_err(line: u64, reason: impl Into<String>) -> NsvmError {
    NsvmError::Parse {
        line: line as usize,
        reason: reason.into(),
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let width = header.len();
    if width < 2 {
        return Err(parse_err(1, "header needs at least one feature and a label column"));
    }
    for (i, name) in header.iter().enumerate() {
        let expected = if i + 1 == width { "label".to_string() } else { format!("f{i}") };
        if name != expected {
            return Err(parse_err(1, format!("expected column `{expected}`, found `{name}`")));
        }
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(line, format!("expected {width} columns, found {}", record.len())));
        }
        let mut x = Vec::with_capacity(width - 1);
        for field in record.iter().take(width - 1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("invalid number `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{field}`")));
            }
            x.push(v);
        }
        let label = match record[width - 1].trim() {
            "1" => 1.0,
            "-1" => -1.0,
            other => return Err(parse_err(line, format!("label must be -1 or 1, found `{other}`"))),
        };
        inputs.push(x);
        labels.push(label);
    }
    if inputs.is_empty() {
        return Err(parse_err(1, "no data rows"));
    }
    Dataset::new(inputs, labels)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    read_csv(File::open(path)?)
}

pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let d = data.dim();
    let header: Vec<String> = (0..d).map(|i| format!("f{i}")).chain(["label".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    for (x, y) in data.inputs.iter().zip(&data.labels) {
        for v in x {
            write!(w, "{v:.16e},")?;
        }
        writeln!(w, "{}", if *y > 0.0 { "1" } else { "-1" })?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(data, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_ringnorm;

    #[test]
    fn handcrafted_file() {
        let text = "f0,f1,label\n0.5,-1.25,1\n3,0.1,-1\n1e-3,2.5E2,1\n";
        let d = read_csv(text.as_bytes()).unwrap();
        assert_eq!(d.inputs, vec![vec![0.5, -1.25], vec![3.0, 0.1], vec![1e-3, 250.0]]);
        assert_eq!(d.labels, vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn bad_label_names_line() {
        let text = "f0,label\n0.5,1\n0.7,0\n";
        match read_csv(text.as_bytes()) {
            Err(NsvmError::Parse { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("label"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_column_count() {
        let text = "f0,f1,label\n0.5,1,1\n0.7,1\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(NsvmError::Parse { line: 3, .. })));
        let text = "f0,f1,label\n0.5,abc,1\n";
        assert!(matches!(read_csv(text.as_bytes()), Err(NsvmError::Parse { line: 2, .. })));
        assert!(read_csv("x,label\n1,1\n".as_bytes()).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let d = gen_ringnorm(100, 5);
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }
}
