//! Text formats.
//!
//! Sample files: one record per line, either `value` or `value,weight`.
//! Lines starting with `#` and blank lines are ignored; mixing weighted and
//! unweighted records is an error. A file whose first record is the header
//! `x,p` is read as a measure (the format written by [`write_measure_csv`]).
//!
//! Every number is written in its shortest round-trip decimal form, so
//! parsing an output file gives back exactly the in-memory values.

use std::fmt::Write as _;

use thiserror::Error;

use crate::estimator::DerivativeEstimate;
use crate::measure::{DiscreteMeasure, EmpiricalSample, MeasureError};
use crate::verify::StudyRow;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

/// Shortest decimal representation that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64, ParseError> {
    let v: f64 = field
        .parse()
        .map_err(|_| ParseError::new(line, format!("cannot parse {what} `{field}` as a number")))?;
    if !v.is_finite() {
        return Err(ParseError::new(line, format!("{what} `{field}` is not finite")));
    }
    Ok(v)
}

type Record = (usize, Vec<String>);

/// `(line, fields)` for every non-comment record, plus the line count.
fn records(text: &str) -> Result<(Vec<Record>, usize), ParseError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            ParseError::new(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if fields.iter().all(String::is_empty) {
            continue;
        }
        out.push((line, fields));
    }
    let total_lines = text.lines().count();
    Ok((out, total_lines))
}

fn no_records(total_lines: usize) -> ParseError {
    ParseError::new(total_lines.max(1), "no sample records found")
}

fn map_measure_error(err: MeasureError, lines: &[usize], last: usize) -> ParseError {
    match err {
        MeasureError::NonFinite { index, .. }
        | MeasureError::NegativeWeight { index, .. }
        | MeasureError::NonPositiveWeight { index, .. } => {
            ParseError::new(lines.get(index).copied().unwrap_or(last), err.to_string())
        }
        other => ParseError::new(last, other.to_string()),
    }
}

/// Reads a sample file (see the module docs).
///
/// Weighted samples whose weights sum to 1 within `1e-9` are renormalized;
/// unweighted samples get uniform weights.
pub fn parse_sample(text: &str) -> Result<EmpiricalSample, ParseError> {
    let (recs, total_lines) = records(text)?;
    let Some((first_line, first)) = recs.first() else {
        return Err(no_records(total_lines));
    };
    if first.len() == 2 && first[0] == "x" && first[1] == "p" {
        let mu = parse_measure_records(&recs[1..], *first_line, total_lines)?;
        return Ok(EmpiricalSample::from_measure(&mu));
    }

    let weighted = first.len() == 2;
    let mut values = Vec::with_capacity(recs.len());
    let mut weights = Vec::with_capacity(recs.len());
    let mut lines = Vec::with_capacity(recs.len());
    for (line, fields) in &recs {
        match (fields.len(), weighted) {
            (1, false) => values.push(parse_f64(&fields[0], *line, "value")?),
            (2, true) => {
                values.push(parse_f64(&fields[0], *line, "value")?);
                weights.push(parse_f64(&fields[1], *line, "weight")?);
            }
            (1, true) | (2, false) => {
                return Err(ParseError::new(
                    *line,
                    "mixing weighted (`value,weight`) and unweighted (`value`) records",
                ))
            }
            (n, _) => return Err(ParseError::new(*line, format!("expected 1 or 2 fields, found {n}"))),
        }
        lines.push(*line);
    }
    let last = *lines.last().expect("non-empty");
    let sample = if weighted {
        EmpiricalSample::normalized(values, weights)
    } else {
        EmpiricalSample::uniform(values)
    };
    sample.map_err(|e| map_measure_error(e, &lines, last))
}

fn parse_measure_records(
    recs: &[(usize, Vec<String>)],
    header_line: usize,
    total_lines: usize,
) -> Result<DiscreteMeasure, ParseError> {
    if recs.is_empty() {
        return Err(ParseError::new(total_lines.max(header_line), "measure has no atoms"));
    }
    let mut atoms = Vec::with_capacity(recs.len());
    let mut weights = Vec::with_capacity(recs.len());
    let mut lines = Vec::with_capacity(recs.len());
    for (line, fields) in recs {
        if fields.len() != 2 {
            return Err(ParseError::new(*line, format!("expected `x,p`, found {} fields", fields.len())));
        }
        atoms.push(parse_f64(&fields[0], *line, "atom")?);
        weights.push(parse_f64(&fields[1], *line, "weight")?);
        lines.push(*line);
    }
    let last = *lines.last().expect("non-empty");
    DiscreteMeasure::new(atoms, weights).map_err(|e| map_measure_error(e, &lines, last))
}

/// Reads the `x,p` measure format.
pub fn parse_measure_csv(text: &str) -> Result<DiscreteMeasure, ParseError> {
    let (recs, total_lines) = records(text)?;
    match recs.first() {
        Some((line, h)) if h.len() == 2 && h[0] == "x" && h[1] == "p" => {
            parse_measure_records(&recs[1..], *line, total_lines)
        }
        Some((line, _)) => Err(ParseError::new(*line, "expected header `x,p`")),
        None => Err(no_records(total_lines)),
    }
}

/// `x,p` header, atoms ascending.
pub fn write_measure_csv(mu: &DiscreteMeasure) -> String {
    let mut out = String::from("x,p\n");
    for (x, p) in mu.iter() {
        let _ = writeln!(out, "{},{}", format_f64(x), format_f64(p));
    }
    out
}

/// One row of the derivative grid file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRow {
    pub x: f64,
    pub g_hat: f64,
    pub err_est: f64,
}

/// `x,g_hat,err_est`, positive-mass grid atoms in ascending order.
pub fn write_grid_csv(est: &DerivativeEstimate) -> String {
    let mut out = String::from("x,g_hat,err_est\n");
    for ((&x, &g), &e) in est
        .grid_atoms()
        .iter()
        .zip(est.g_values())
        .zip(est.error_estimates())
    {
        let _ = writeln!(out, "{},{},{}", format_f64(x), format_f64(g), format_f64(e));
    }
    out
}

fn parse_cell(field: &str, line: usize) -> Result<f64, ParseError> {
    field
        .parse()
        .map_err(|_| ParseError::new(line, format!("cannot parse `{field}` as a number")))
}

fn parse_table(text: &str, header: &[&str]) -> Result<Vec<Record>, ParseError> {
    let (recs, total_lines) = records(text)?;
    let Some((line, h)) = recs.first() else {
        return Err(no_records(total_lines));
    };
    if h.iter().map(String::as_str).ne(header.iter().copied()) {
        return Err(ParseError::new(*line, format!("expected header `{}`", header.join(","))));
    }
    for (line, fields) in &recs[1..] {
        if fields.len() != header.len() {
            return Err(ParseError::new(
                *line,
                format!("expected {} fields, found {}", header.len(), fields.len()),
            ));
        }
    }
    Ok(recs.into_iter().skip(1).collect())
}

pub fn parse_grid_csv(text: &str) -> Result<Vec<GridRow>, ParseError> {
    parse_table(text, &["x", "g_hat", "err_est"])?
        .into_iter()
        .map(|(line, f)| {
            Ok(GridRow {
                x: parse_cell(&f[0], line)?,
                g_hat: parse_cell(&f[1], line)?,
                err_est: parse_cell(&f[2], line)?,
            })
        })
        .collect()
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_f64).unwrap_or_default()
}

/// `n,w2_quant,succ_diff,oracle_err`; undefined cells are left empty.
pub fn write_study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("n,w2_quant,succ_diff,oracle_err\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.n,
            format_f64(r.w2_quant),
            format_opt(r.succ_diff),
            format_opt(r.oracle_err)
        );
    }
    out
}

pub fn parse_study_csv(text: &str) -> Result<Vec<StudyRow>, ParseError> {
    let opt = |s: &str, line| -> Result<Option<f64>, ParseError> {
        if s.is_empty() {
            Ok(None)
        } else {
            parse_cell(s, line).map(Some)
        }
    };
    parse_table(text, &["n", "w2_quant", "succ_diff", "oracle_err"])?
        .into_iter()
        .map(|(line, f)| {
            Ok(StudyRow {
                n: f[0]
                    .parse()
                    .map_err(|_| ParseError::new(line, format!("bad level `{}`", f[0])))?,
                w2_quant: parse_cell(&f[1], line)?,
                succ_diff: opt(&f[2], line)?,
                oracle_err: opt(&f[3], line)?,
            })
        })
        .collect()
}
