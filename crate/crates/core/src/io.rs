//! CSV readers and writers for cohorts, graphs and result tables.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::cox::LocationFit;
use crate::error::{Error, Result};
use crate::graph::{build_graph, Centroid, DistanceMatrix, Node, SpatialGraph};
use crate::sim::{ArchiveRow, MetricsTable, SelectionCount};
use crate::survival::{validate_cohort, Cohort, KmCurve, RawRecord};
use crate::tic::TicTrace;

/// Formats a number to at most 9 significant digits.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if !(1e-4..1e15).contains(&a) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    let t = field.trim();
    match t.to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => return Ok(f64::INFINITY),
        "-inf" | "-infinity" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    t.parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: {what} {t:?} is not a number")))
}

/// Renumbers record-level validation errors to 1-based file lines.
fn with_file_lines(e: Error, lines: &[u64]) -> Error {
    let at = |row: usize| lines.get(row).copied().unwrap_or(row as u64 + 2) as usize;
    match e {
        Error::NegativeTime { row, time } => Error::NegativeTime { row: at(row), time },
        Error::NonFiniteTime { row } => Error::NonFiniteTime { row: at(row) },
        Error::BadStatus { row, status } => Error::BadStatus { row: at(row), status },
        Error::CovariateCount { row, expected, found } => {
            Error::CovariateCount { row: at(row), expected, found }
        }
        Error::NonFiniteCovariate { row } => Error::NonFiniteCovariate { row: at(row) },
        other => other,
    }
}

/// Reads `id,time,status,location,<covariates…>`. Row numbers in errors are
/// file lines (the header is line 1).
pub fn read_cohort<R: Read>(reader: R) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 4 || headers.iter().all(|h| h.is_empty()) {
        if headers.iter().all(|h| h.is_empty()) {
            return Err(Error::NoSubjects);
        }
        return Err(Error::Parse(
            "line 1: header must start with id,time,status,location".into(),
        ));
    }
    let expected = ["id", "time", "status", "location"];
    for (h, e) in headers.iter().zip(expected) {
        if !h.eq_ignore_ascii_case(e) {
            return Err(Error::Parse(format!("line 1: expected column {e:?}, found {h:?}")));
        }
    }
    let names: Vec<String> = headers.iter().skip(4).map(str::to_string).collect();
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(Error::CovariateCount {
                row: line as usize,
                expected: names.len(),
                found: rec.len().saturating_sub(4),
            });
        }
        let status_raw = &rec[2];
        let status = status_raw.parse::<i64>().map_err(|_| Error::BadStatus {
            row: line as usize,
            status: status_raw.to_string(),
        })?;
        let covariates = rec
            .iter()
            .skip(4)
            .zip(&names)
            .map(|(f, n)| parse_f64(f, line, n))
            .collect::<Result<Vec<_>>>()?;
        records.push(RawRecord {
            id: rec[0].to_string(),
            time: parse_f64(&rec[1], line, "time")?,
            status,
            location: rec[3].to_string(),
            covariates,
        });
        lines.push(line);
    }
    validate_cohort(&records, names).map_err(|e| with_file_lines(e, &lines))
}

pub fn read_cohort_file(path: &Path) -> Result<Cohort> {
    read_cohort(File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
}

/// Reads `label[,latitude,longitude]`. Blank coordinates leave the
/// centroid unset.
pub fn read_nodes<R: Read>(reader: R) -> Result<Vec<Node>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let label = col("label").ok_or_else(|| Error::Parse("line 1: nodes file needs a label column".into()))?;
    let (lat, lon) = (col("latitude"), col("longitude"));
    let mut nodes = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: Option<usize>| k.and_then(|k| rec.get(k)).filter(|s| !s.is_empty());
        let centroid = match (field(lat), field(lon)) {
            (Some(a), Some(b)) => Some(Centroid {
                latitude: parse_f64(a, line, "latitude")?,
                longitude: parse_f64(b, line, "longitude")?,
            }),
            (None, None) => None,
            _ => return Err(Error::Parse(format!("line {line}: centroid needs both coordinates"))),
        };
        let label = rec
            .get(label)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Parse(format!("line {line}: empty label")))?;
        nodes.push(Node { label: label.to_string(), centroid });
    }
    Ok(nodes)
}

/// Reads edges as two label columns after a header row.
pub fn read_edges<R: Read>(reader: R) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        match (rec.get(0), rec.get(1)) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => edges.push((a.to_string(), b.to_string())),
            _ => return Err(Error::Parse(format!("line {line}: edge needs two labels"))),
        }
    }
    Ok(edges)
}

/// Loads a graph from a nodes file and an edges file.
pub fn read_graph(nodes: &Path, edges: &Path) -> Result<SpatialGraph> {
    let open = |p: &Path| File::open(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())));
    build_graph(read_nodes(open(nodes)?)?, &read_edges(open(edges)?)?)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

/// Square matrix with a label header row and label first column.
pub fn write_matrix<W: Write>(w: W, labels: &[String], m: &DistanceMatrix) -> Result<()> {
    if labels.len() != m.len() {
        return Err(Error::LengthMismatch { expected: m.len(), found: labels.len() });
    }
    let mut out = writer(w);
    out.write_record(std::iter::once("label").chain(labels.iter().map(String::as_str)))?;
    for (i, l) in labels.iter().enumerate() {
        let row: Vec<String> = m.row(i).iter().map(|&x| fmt_num(x)).collect();
        out.write_record(std::iter::once(l.as_str()).chain(row.iter().map(String::as_str)))?;
    }
    out.flush()?;
    Ok(())
}

/// One row per location and covariate. Failed fits are written with NaN
/// estimates and `converged = false`.
pub fn write_fits<W: Write>(w: W, locations: &[String], covariates: &[String], fits: &[LocationFit]) -> Result<()> {
    if locations.len() != fits.len() {
        return Err(Error::LengthMismatch { expected: fits.len(), found: locations.len() });
    }
    let mut out = writer(w);
    out.write_record(["location", "covariate", "estimate", "se", "z", "converged", "iterations", "loglik"])?;
    for (loc, fit) in locations.iter().zip(fits) {
        for (m, cov) in covariates.iter().enumerate() {
            let row = match fit {
                Ok(f) => [
                    fmt_num(f.beta[m]),
                    fmt_num(f.se[m]),
                    fmt_num(f.z[m]),
                    f.converged.to_string(),
                    f.iterations.to_string(),
                    fmt_num(f.loglik),
                ],
                Err(e) => {
                    let iterations = match e {
                        crate::cox::FitError::Diverged { iterations } => *iterations,
                        _ => 0,
                    };
                    let nan = fmt_num(f64::NAN);
                    [nan.clone(), nan.clone(), nan.clone(), "false".into(), iterations.to_string(), nan]
                }
            };
            out.write_record([loc.as_str(), cov.as_str()].into_iter().chain(row.iter().map(String::as_str)))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_tic_trace<W: Write>(w: W, trace: &TicTrace) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["h", "tic", "loglik_term", "trace_term", "n_failed_locations", "selected"])?;
    for (k, e) in trace.entries.iter().enumerate() {
        out.write_record([
            fmt_num(e.h),
            fmt_num(e.tic),
            fmt_num(e.loglik_term),
            fmt_num(e.trace_term),
            e.n_failed_locations.to_string(),
            (trace.selected == k).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `variant` carries the model label with its bandwidth, e.g. `gd h=1`.
pub fn write_metrics<W: Write>(w: W, table: &MetricsTable) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["variant", "coefficient", "MAB", "MSD", "MMSE", "MCP"])?;
    for r in &table.rows {
        out.write_record([
            r.model_label(),
            r.coefficient.clone(),
            fmt_num(r.metrics.mab),
            fmt_num(r.metrics.msd),
            fmt_num(r.metrics.mmse),
            fmt_num(r.metrics.mcp),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_selection<W: Write>(w: W, counts: &[SelectionCount]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["variant", "h", "times_selected"])?;
    for c in counts {
        out.write_record([c.variant.clone(), fmt_num(c.h), c.times_selected.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_archive<W: Write>(w: W, rows: &[ArchiveRow]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["replicate", "variant", "h", "county", "coefficient", "estimate", "se"])?;
    for r in rows {
        out.write_record([
            r.replicate.to_string(),
            r.variant.clone(),
            r.bandwidth.map(fmt_num).unwrap_or_default(),
            r.county.clone(),
            r.coefficient.clone(),
            fmt_num(r.estimate),
            fmt_num(r.se),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_km<W: Write>(w: W, curve: &KmCurve) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["time", "survival", "at_risk", "events"])?;
    for k in 0..curve.times.len() {
        out.write_record([
            fmt_num(curve.times[k]),
            fmt_num(curve.survival[k]),
            curve.at_risk[k].to_string(),
            curve.events[k].to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-location Kaplan–Meier survival at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct KmAtRow {
    pub location: String,
    pub n: usize,
    pub events: usize,
    pub survival: f64,
}

pub fn write_km_at<W: Write>(w: W, t: f64, rows: &[KmAtRow]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(["location", "n", "events", "time", "survival"])?;
    for r in rows {
        out.write_record([
            r.location.clone(),
            r.n.to_string(),
            r.events.to_string(),
            fmt_num(t),
            fmt_num(r.survival),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a cohort in the input format with shortest round-trip floats, so
/// reading it back reproduces every value exactly.
pub fn write_cohort<W: Write>(w: W, cohort: &Cohort) -> Result<()> {
    let mut out = writer(w);
    out.write_record(
        ["id", "time", "status", "location"]
            .into_iter()
            .map(str::to_string)
            .chain(cohort.covariate_names().iter().cloned()),
    )?;
    for s in cohort.subjects() {
        let mut row = vec![
            s.id.clone(),
            s.time.to_string(),
            u8::from(s.event).to_string(),
            cohort.locations()[s.location].clone(),
        ];
        row.extend(s.covariates.iter().map(f64::to_string));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
