//! Plain-text matrix and vector formats.
//!
//! A symmetric matrix file starts with `dim d`, a rectangular one with
//! `rows n cols k`. Each following line is one `i j value` triple with 0-based
//! indices. Symmetric off-diagonal pairs appear once, in either orientation;
//! absent entries are zero. A vector file holds one value per line. Tokens are
//! separated by single spaces and lines end in LF.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::{RectangularMatrix, SparseSymmetricMatrix, Vector};

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

/// Numbered non-empty lines. A single trailing LF is allowed; anything else
/// that is empty, or contains CR or tabs, is rejected.
fn lines(text: &str) -> Result<Vec<(usize, Vec<&str>)>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let number = i + 1;
            if line.contains('\r') {
                return Err(parse_err(number, "CR line ending; expected LF"));
            }
            if line.is_empty() {
                return Err(parse_err(number, "empty line"));
            }
            let tokens: Vec<&str> = line.split(' ').collect();
            if tokens.iter().any(|t| t.is_empty()) {
                return Err(parse_err(
                    number,
                    "tokens must be separated by single spaces",
                ));
            }
            Ok((number, tokens))
        })
        .collect()
}

fn parse_usize(line: usize, token: &str) -> Result<usize> {
    token.parse().map_err(|_| {
        parse_err(
            line,
            format!("expected a non-negative integer, got {token:?}"),
        )
    })
}

fn parse_f64(line: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(line, format!("expected a number, got {token:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value {token:?}")));
    }
    Ok(v)
}

fn triples(
    body: &[(usize, Vec<&str>)],
    rows: usize,
    cols: usize,
    symmetric: bool,
) -> Result<Vec<(usize, usize, f64)>> {
    let mut seen = HashMap::new();
    let mut out = Vec::with_capacity(body.len());
    for (line, tokens) in body {
        let line = *line;
        if tokens.len() != 3 {
            return Err(parse_err(
                line,
                format!("expected \"i j value\", got {} tokens", tokens.len()),
            ));
        }
        let i = parse_usize(line, tokens[0])?;
        let j = parse_usize(line, tokens[1])?;
        let v = parse_f64(line, tokens[2])?;
        if i >= rows || j >= cols {
            return Err(parse_err(
                line,
                format!("index ({i}, {j}) out of bounds for {rows}x{cols}"),
            ));
        }
        let key = if symmetric {
            (i.min(j), i.max(j))
        } else {
            (i, j)
        };
        if let Some(first) = seen.insert(key, line) {
            return Err(parse_err(
                line,
                format!("entry ({i}, {j}) already given on line {first}"),
            ));
        }
        out.push((i, j, v));
    }
    Ok(out)
}

pub fn parse_symmetric(text: &str) -> Result<SparseSymmetricMatrix> {
    let all = lines(text)?;
    let Some((line, header)) = all.first() else {
        return Err(parse_err(1, "missing \"dim d\" header"));
    };
    let dim = match header.as_slice() {
        ["dim", d] => parse_usize(*line, d)?,
        _ => return Err(parse_err(*line, "expected \"dim d\" header")),
    };
    if dim == 0 {
        return Err(parse_err(*line, "dimension must be positive"));
    }
    let entries = triples(&all[1..], dim, dim, true)?;
    SparseSymmetricMatrix::from_triplets(dim, entries)
}

pub fn parse_rectangular(text: &str) -> Result<RectangularMatrix> {
    let all = lines(text)?;
    let Some((line, header)) = all.first() else {
        return Err(parse_err(1, "missing \"rows n cols k\" header"));
    };
    let (rows, cols) = match header.as_slice() {
        ["rows", n, "cols", k] => (parse_usize(*line, n)?, parse_usize(*line, k)?),
        _ => return Err(parse_err(*line, "expected \"rows n cols k\" header")),
    };
    if rows == 0 || cols == 0 {
        return Err(parse_err(*line, "dimensions must be positive"));
    }
    let mut data = vec![0.0; rows * cols];
    for (i, j, v) in triples(&all[1..], rows, cols, false)? {
        data[i * cols + j] = v;
    }
    RectangularMatrix::new(rows, cols, data)
}

pub fn parse_vector(text: &str) -> Result<Vector> {
    let values = lines(text)?
        .into_iter()
        .map(|(line, tokens)| match tokens.as_slice() {
            [t] => parse_f64(line, t),
            _ => Err(parse_err(line, "expected one value per line")),
        })
        .collect::<Result<Vec<_>>>()?;
    Vector::new(values)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_vector(v: &[f64]) -> String {
    v.iter().map(|x| format_value(*x) + "\n").collect()
}

/// Upper triangle plus diagonal; zero diagonal entries are omitted.
pub fn write_symmetric(m: &SparseSymmetricMatrix) -> String {
    let mut out = format!("dim {}\n", m.dim());
    let mut entries: Vec<(usize, usize, f64)> = m
        .diagonal()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, i, *v))
        .chain(m.off_diagonal().iter().copied())
        .collect();
    entries.sort_by_key(|&(i, j, _)| (i, j));
    for (i, j, v) in entries {
        out.push_str(&format!("{i} {j} {}\n", format_value(v)));
    }
    out
}

/// Nonzero entries in row-major order.
pub fn write_rectangular(m: &RectangularMatrix) -> String {
    let mut out = format!("rows {} cols {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            if *v != 0.0 {
                out.push_str(&format!("{i} {j} {}\n", format_value(*v)));
            }
        }
    }
    out
}
