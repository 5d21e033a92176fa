//! Plain-text complex matrices: one row per line, whitespace-separated
//! entries such as `1`, `-2.5e-1`, `3i`, `-i`, `1+2i`, `0.5-1e-3i`.

use std::path::Path;

use cohdec::{CMatrix, Error, Result, C64};

/// Parses one complex token.
pub fn parse_complex(token: &str) -> Option<C64> {
    let t = token.trim();
    if t.is_empty() {
        return None;
    }
    let Some(body) = t.strip_suffix(['i', 'j']) else {
        return t.parse::<f64>().ok().map(|re| C64::new(re, 0.0));
    };
    // split at the last sign that is not a leading sign or an exponent sign
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| matches!(bytes[k], b'+' | b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (body[..k].parse::<f64>().ok()?, imag_coefficient(&body[k..])?),
        None => (0.0, imag_coefficient(body)?),
    };
    Some(C64::new(re, im))
}

fn imag_coefficient(s: &str) -> Option<f64> {
    match s {
        "" | "+" => Some(1.0),
        "-" => Some(-1.0),
        _ => s.parse().ok(),
    }
}

/// Parses a square matrix. Blank lines and `#` comments are skipped.
pub fn parse_matrix(text: &str) -> Result<CMatrix> {
    let mut rows: Vec<(usize, Vec<C64>)> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                parse_complex(tok).ok_or_else(|| Error::Parse {
                    line: k + 1,
                    message: format!("bad entry `{tok}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((k + 1, row));
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "empty matrix".into(),
        });
    }
    for (line, row) in &rows {
        if row.len() != n {
            return Err(Error::Parse {
                line: *line,
                message: format!("row has {} entries, matrix has {n} rows", row.len()),
            });
        }
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i].1[j]))
}

pub fn read_matrix(path: &Path) -> Result<CMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_matrix(&text)
}

/// Diagonal matrix with the given entries.
pub fn diagonal_from_list(list: &[f64]) -> CMatrix {
    CMatrix::from_fn(list.len(), list.len(), |i, j| {
        if i == j {
            C64::new(list[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Compact text form of a matrix for reports: rows separated by `;`.
pub fn format_matrix(m: &CMatrix) -> String {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| format_complex(m[(i, j)]))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn format_complex(z: C64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else if z.re == 0.0 {
        format!("{}i", z.im)
    } else {
        format!("{}{:+}i", z.re, z.im)
    }
}
