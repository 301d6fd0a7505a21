//! Headered numeric CSV used for all data dumps. Floats are written with
//! Rust's shortest round-trip formatting, so everything the harness emits
//! parses back losslessly through [`read_matrix_csv`].

use std::path::Path;

use monge_core::{Error, Result, Tensor};

pub fn write_matrix_csv(path: impl AsRef<Path>, header: &[&str], data: &Tensor) -> Result<()> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..data.rows() {
        let row = data.row(r);
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Tensor)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Empty("csv file"))?;
    let header: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let cols = header.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::Csv {
                line: i + 1,
                msg: format!("expected {cols} columns, got {}", fields.len()),
            });
        }
        for f in fields {
            data.push(f.trim().parse::<f64>().map_err(|_| Error::Csv {
                line: i + 1,
                msg: format!("bad float `{f}`"),
            })?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Empty("csv body"));
    }
    Ok((header, Tensor::matrix(rows, cols, data)?))
}
