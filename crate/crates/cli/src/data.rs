//! CSV data files: a header row, the count response in the first column and
//! real covariates in the rest.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use zispline::Dataset;

use crate::error::{CliError, Result};

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_dataset(file, path)
}

pub fn parse_dataset<R: Read>(input: R, path: &Path) -> Result<Dataset> {
    let data_err = |line: u64, message: String| CliError::Data {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| data_err(1, e.to_string()))?
        .clone();
    if header.is_empty() || header.iter().all(str::is_empty) {
        return Err(data_err(1, "empty header row".into()));
    }
    if let Some(j) = header.iter().position(str::is_empty) {
        return Err(data_err(1, format!("column {} has no name", j + 1)));
    }
    let names: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut y = Vec::new();
    let mut columns = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            data_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(data_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        for (j, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                return Err(data_err(line, format!("missing value in column `{}`", &header[j])));
            }
        }
        y.push(parse_count(&record[0]).ok_or_else(|| {
            data_err(
                line,
                format!("response `{}` is not a non-negative integer: {}", &header[0], &record[0]),
            )
        })?);
        for (j, col) in columns.iter_mut().enumerate() {
            let cell = &record[j + 1];
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    data_err(line, format!("column `{}` is not a finite number: {cell}", names[j]))
                })?;
            col.push(v);
        }
    }
    if y.is_empty() {
        return Err(data_err(2, "no data rows".into()));
    }
    Ok(Dataset::new(y, columns, names)?)
}

fn parse_count(cell: &str) -> Option<u64> {
    if let Ok(v) = cell.parse::<u64>() {
        return Some(v);
    }
    let v: f64 = cell.parse().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v < 9.0e15).then_some(v as u64)
}

/// Writes `data` with `response` as the first header field. Floats use the
/// shortest representation that reads back to the same value.
pub fn write_dataset<W: Write>(out: W, data: &Dataset, response: &str) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![response.to_string()];
    header.extend(data.names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row = vec![data.y()[i].to_string()];
        row.extend(data.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        parse_dataset(text.as_bytes(), Path::new("t.csv"))
    }

    #[test]
    fn reads_header_and_columns() {
        let d = parse("y,a,b\n1,0.5,2\n0,1.5,3\n").unwrap();
        assert_eq!(d.y(), &[1, 0]);
        assert_eq!(d.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.column(1), &[2.0, 3.0]);
    }

    #[test]
    fn integral_float_counts_are_accepted() {
        assert_eq!(parse("y\n3.0\n").unwrap().y(), &[3]);
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let cases = [
            ("y,a\n1,0.5\n2\n", "line 3"),
            ("y,a\n1,0.5\n2,\n", "line 3"),
            ("y,a\n1,x\n", "line 2"),
            ("y,a\n-1,0\n", "line 2"),
            ("y,a\n1.5,0\n", "line 2"),
            ("y,a\n1,0\n1,0\n1,inf\n", "line 4"),
        ];
        for (text, want) in cases {
            let msg = parse(text).unwrap_err().to_string();
            assert!(msg.contains(want), "{msg} vs {want}");
        }
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(parse("").is_err());
        assert!(parse("y,a\n").is_err());
        assert!(parse("y,,b\n1,2,3\n").is_err());
    }

    #[test]
    fn write_then_read_is_lossless() {
        let d = Dataset::new(
            vec![0, 4, 2],
            vec![vec![0.1, 1.0 / 3.0, 1e-300]],
            vec!["x".into()],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &d, "y").unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), d);
    }
}
