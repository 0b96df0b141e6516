//! File formats: CSV datasets, label and probability-trace tables, and the
//! self-describing JSON documents for models, fit reports, evaluation
//! reports and simulation specs.
//!
//! Every floating-point number is emitted with 17 significant digits
//! (`{:.16e}`), which round-trips any f64 bit-exactly, and identical
//! inputs always produce byte-identical files.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{
    FitReport, Hyperparams, LogisticWeights, MrhlpModel, RegimeParams, TimeSeries,
};
use crate::segmentation::{EvalReport, LabeledGroundTruth};
use crate::selection::SelectionOutcome;
use crate::simulate::SimulationSpec;

/// Canonical decimal encoding: 17 significant digits, exponent form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn escape_json(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

fn json_float_array(values: impl Iterator<Item = f64>) -> String {
    let items: Vec<String> = values.map(fmt_f64).collect();
    format!("[{}]", items.join(", "))
}

fn json_matrix(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| json_float_array((0..m.ncols()).map(|j| m[(i, j)])))
        .collect();
    format!("[{}]", rows.join(", "))
}

// ---------------------------------------------------------------------------
// CSV datasets
// ---------------------------------------------------------------------------

/// A parsed CSV dataset: channel names, the validated series, and the
/// optional ground-truth labels from a `label` column.
#[derive(Debug, Clone)]
pub struct CsvDataset {
    pub names: Vec<String>,
    pub series: TimeSeries,
    pub truth: Option<LabeledGroundTruth>,
}

fn parse_field(raw: &str, line: usize, column: usize) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|e| Error::ParseError {
        line,
        column,
        message: format!("{e}: {raw:?}"),
    })
}

fn parse_label(raw: &str, line: usize, column: usize) -> Result<usize> {
    let value: usize = raw.trim().parse().map_err(|e| Error::ParseError {
        line,
        column,
        message: format!("{e}: {raw:?}"),
    })?;
    if value == 0 {
        return Err(Error::ParseError {
            line,
            column,
            message: "labels must be positive integers".into(),
        });
    }
    Ok(value - 1)
}

/// Reads a dataset: a header row with a `t` column, one or more channel
/// columns, and an optional `label` column of positive integers.
pub fn read_csv<R: Read>(reader: R) -> Result<CsvDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedDocument(format!("cannot read CSV header: {e}")))?
        .clone();
    let t_col = headers.iter().position(|h| h == "t").ok_or_else(|| {
        Error::MalformedDocument("CSV header must contain a `t` column".into())
    })?;
    let label_col = headers.iter().position(|h| h == "label");
    let channel_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != t_col && Some(*i) != label_col)
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if channel_cols.is_empty() {
        return Err(Error::EmptySeries);
    }

    let mut t = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 2; // 1-based, after the header line
        let record = record.map_err(|e| Error::ParseError {
            line,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::RaggedRow {
                line,
                expected: headers.len(),
                actual: record.len(),
            });
        }
        t.push(parse_field(&record[t_col], line, t_col + 1)?);
        let mut row = Vec::with_capacity(channel_cols.len());
        for (col, _) in &channel_cols {
            row.push(parse_field(&record[*col], line, col + 1)?);
        }
        rows.push(row);
        if let Some(col) = label_col {
            labels.push(parse_label(&record[col], line, col + 1)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptySeries);
    }
    let d = channel_cols.len();
    let y = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let series = TimeSeries::new(t, y)?;
    let truth = label_col.map(|_| LabeledGroundTruth { labels });
    Ok(CsvDataset {
        names: channel_cols.into_iter().map(|(_, h)| h).collect(),
        series,
        truth,
    })
}

pub fn read_csv_path(path: &Path) -> Result<CsvDataset> {
    read_csv(std::fs::File::open(path)?)
}

/// Writes a dataset in the same schema `read_csv` accepts. Labels are
/// written 1-based in a trailing `label` column when present.
pub fn write_csv<W: Write>(
    mut w: W,
    series: &TimeSeries,
    names: &[String],
    labels: Option<&[usize]>,
) -> Result<()> {
    let d = series.dim();
    if names.len() != d {
        return Err(Error::DimensionMismatch {
            context: "channel names vs series dimension",
            expected: d,
            actual: names.len(),
        });
    }
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    if labels.is_some() {
        header.push("label".to_string());
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..series.len() {
        let mut fields = vec![fmt_f64(series.t[i])];
        for j in 0..d {
            fields.push(fmt_f64(series.y[(i, j)]));
        }
        if let Some(labels) = labels {
            fields.push((labels[i] + 1).to_string());
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Default channel names `y1..yd` for generated datasets.
pub fn default_channel_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("y{j}")).collect()
}

/// Extracts the `label` column from any CSV that has one; other columns
/// are ignored. Accepts both full datasets and bare label tables.
pub fn read_labels<R: Read>(reader: R) -> Result<Vec<usize>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedDocument(format!("cannot read CSV header: {e}")))?
        .clone();
    let label_col = headers.iter().position(|h| h == "label").ok_or_else(|| {
        Error::MalformedDocument("CSV header must contain a `label` column".into())
    })?;
    let mut labels = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| Error::ParseError {
            line,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::RaggedRow {
                line,
                expected: headers.len(),
                actual: record.len(),
            });
        }
        labels.push(parse_label(&record[label_col], line, label_col + 1)?);
    }
    if labels.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(labels)
}

pub fn read_labels_path(path: &Path) -> Result<Vec<usize>> {
    read_labels(std::fs::File::open(path)?)
}

/// Writes per-sample labels (1-based) with their time stamps.
pub fn write_labels<W: Write>(mut w: W, t: &[f64], labels: &[usize]) -> Result<()> {
    writeln!(w, "t,label")?;
    for (ti, label) in t.iter().zip(labels) {
        writeln!(w, "{},{}", fmt_f64(*ti), label + 1)?;
    }
    Ok(())
}

/// Writes the prior-probability trace: one `pi_k` column per regime.
pub fn write_pi_trace<W: Write>(mut w: W, t: &[f64], pi: &DMatrix<f64>) -> Result<()> {
    let k = pi.ncols();
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|j| format!("pi_{j}")));
    writeln!(w, "{}", header.join(","))?;
    for i in 0..pi.nrows() {
        let mut fields = vec![fmt_f64(t[i])];
        for j in 0..k {
            fields.push(fmt_f64(pi[(i, j)]));
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Reads a probability trace written by [`write_pi_trace`].
pub fn read_pi_trace<R: Read>(reader: R) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let dataset = read_csv(reader)?;
    Ok((dataset.series.t.clone(), dataset.series.y.clone()))
}

// ---------------------------------------------------------------------------
// Model document
// ---------------------------------------------------------------------------

/// Fit provenance stored inside a model file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub loglik: f64,
    pub bic: f64,
}

/// Serializes a model to the canonical JSON document.
pub fn write_model<W: Write>(
    mut w: W,
    model: &MrhlpModel,
    metadata: Option<&ModelMetadata>,
) -> Result<()> {
    let degrees: Vec<String> = model.hyper.degrees.iter().map(|p| p.to_string()).collect();
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"k\": {},", model.hyper.k);
    let _ = writeln!(out, "  \"degrees\": [{}],", degrees.join(", "));
    let _ = writeln!(out, "  \"u\": {},", model.hyper.u);
    let _ = writeln!(out, "  \"d\": {},", model.dim());
    let _ = writeln!(out, "  \"weights\": {},", json_matrix(&model.weights.w));
    out.push_str("  \"regimes\": [\n");
    for (k, regime) in model.regimes.iter().enumerate() {
        let _ = writeln!(
            out,
            "    {{\"coefficients\": {}, \"covariance\": {}}}{}",
            json_matrix(&regime.coefficients),
            json_matrix(&regime.covariance),
            if k + 1 < model.regimes.len() { "," } else { "" }
        );
    }
    out.push_str("  ],\n");
    match metadata {
        Some(meta) => {
            let _ = writeln!(
                out,
                "  \"metadata\": {{\"seed\": {}, \"loglik\": {}, \"bic\": {}}}",
                meta.seed,
                fmt_f64(meta.loglik),
                fmt_f64(meta.bic)
            );
        }
        None => out.push_str("  \"metadata\": null\n"),
    }
    out.push_str("}\n");
    w.write_all(out.as_bytes())?;
    Ok(())
}

#[derive(Deserialize)]
struct RegimeDoc {
    coefficients: Vec<Vec<f64>>,
    covariance: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct ModelDoc {
    k: usize,
    degrees: Vec<usize>,
    u: usize,
    d: usize,
    weights: Vec<Vec<f64>>,
    regimes: Vec<RegimeDoc>,
    #[serde(default)]
    metadata: Option<ModelMetadata>,
}

fn matrix_from_rows(rows: &[Vec<f64>], context: &'static str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 {
        return Err(Error::MalformedDocument(format!("{context}: empty matrix")));
    }
    for row in rows {
        if row.len() != ncols {
            return Err(Error::MalformedDocument(format!(
                "{context}: ragged matrix rows"
            )));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn model_from_doc(doc: ModelDoc) -> Result<(MrhlpModel, Option<ModelMetadata>)> {
    let weights = LogisticWeights::new(matrix_from_rows(&doc.weights, "weights")?)?;
    let mut regimes = Vec::with_capacity(doc.regimes.len());
    for regime in &doc.regimes {
        let coefficients = matrix_from_rows(&regime.coefficients, "coefficients")?;
        let covariance = matrix_from_rows(&regime.covariance, "covariance")?;
        regimes.push(RegimeParams::new(coefficients, covariance));
    }
    let hyper = Hyperparams {
        k: doc.k,
        degrees: doc.degrees,
        u: doc.u,
    };
    let model = MrhlpModel::new(hyper, weights, regimes)?;
    if model.dim() != doc.d {
        return Err(Error::DimensionMismatch {
            context: "declared d vs regime dimension",
            expected: doc.d,
            actual: model.dim(),
        });
    }
    Ok((model, doc.metadata))
}

/// Parses and validates a model document.
pub fn read_model<R: Read>(reader: R) -> Result<(MrhlpModel, Option<ModelMetadata>)> {
    let doc: ModelDoc = serde_json::from_reader(reader)
        .map_err(|e| Error::MalformedDocument(format!("model document: {e}")))?;
    model_from_doc(doc)
}

pub fn read_model_path(path: &Path) -> Result<(MrhlpModel, Option<ModelMetadata>)> {
    read_model(std::fs::File::open(path)?)
}

// ---------------------------------------------------------------------------
// Simulation spec document
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct SpecDoc {
    n: usize,
    t_start: f64,
    t_end: f64,
    seed: u64,
    model: ModelDoc,
}

/// Parses a simulation spec: sample count, time span, seed and the model
/// to sample from.
pub fn read_simulation_spec<R: Read>(reader: R) -> Result<SimulationSpec> {
    let doc: SpecDoc = serde_json::from_reader(reader)
        .map_err(|e| Error::MalformedDocument(format!("simulation spec: {e}")))?;
    let (model, _) = model_from_doc(doc.model)?;
    let spec = SimulationSpec {
        model,
        n: doc.n,
        t_start: doc.t_start,
        t_end: doc.t_end,
        seed: doc.seed,
    };
    spec.validate()?;
    Ok(spec)
}

/// Serializes a simulation spec (inverse of [`read_simulation_spec`]).
pub fn write_simulation_spec<W: Write>(mut w: W, spec: &SimulationSpec) -> Result<()> {
    let mut model_buf = Vec::new();
    write_model(&mut model_buf, &spec.model, None)?;
    let model_json = String::from_utf8(model_buf)
        .expect("model document is valid UTF-8")
        .trim_end()
        .to_string();
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"n\": {},", spec.n);
    let _ = writeln!(out, "  \"t_start\": {},", fmt_f64(spec.t_start));
    let _ = writeln!(out, "  \"t_end\": {},", fmt_f64(spec.t_end));
    let _ = writeln!(out, "  \"seed\": {},", spec.seed);
    let _ = writeln!(out, "  \"model\": {model_json}");
    out.push_str("}\n");
    w.write_all(out.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Report documents
// ---------------------------------------------------------------------------

/// Serializes a fit report.
pub fn write_report<W: Write>(mut w: W, report: &FitReport) -> Result<()> {
    let rescued: Vec<String> = report
        .rescued_iterations
        .iter()
        .map(|i| i.to_string())
        .collect();
    let warnings: Vec<String> = report
        .warnings
        .iter()
        .map(|s| format!("\"{}\"", escape_json(s)))
        .collect();
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"loglik\": {},", fmt_f64(report.final_loglik()));
    let _ = writeln!(
        out,
        "  \"loglik_history\": {},",
        json_float_array(report.loglik_history.iter().copied())
    );
    let _ = writeln!(out, "  \"converged\": {},", report.converged);
    let _ = writeln!(out, "  \"iterations\": {},", report.iterations);
    let _ = writeln!(out, "  \"bic\": {},", fmt_f64(report.bic));
    let _ = writeln!(out, "  \"restart_index\": {},", report.restart_index);
    let _ = writeln!(out, "  \"seed\": {},", report.seed);
    let _ = writeln!(out, "  \"rescued_iterations\": [{}],", rescued.join(", "));
    let _ = writeln!(out, "  \"warnings\": [{}]", warnings.join(", "));
    out.push_str("}\n");
    w.write_all(out.as_bytes())?;
    Ok(())
}

/// Serializes an evaluation report. The winning label map is written as
/// `{from, to}` pairs over the actual class labels (1-based, matching the
/// CSV convention).
pub fn write_eval<W: Write>(mut w: W, report: &EvalReport) -> Result<()> {
    let classes: Vec<String> = report
        .classes
        .iter()
        .map(|c| (c + 1).to_string())
        .collect();
    let permutation: Vec<String> = report
        .permutation
        .iter()
        .enumerate()
        .map(|(from, &to)| {
            format!(
                "{{\"from\": {}, \"to\": {}}}",
                report.classes[from] + 1,
                report.classes[to] + 1
            )
        })
        .collect();
    let confusion: Vec<String> = report
        .confusion
        .iter()
        .map(|row| {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    let bools = |v: &[bool]| -> String {
        let items: Vec<String> = v.iter().map(|b| b.to_string()).collect();
        format!("[{}]", items.join(", "))
    };
    let mut out = String::new();
    out.push_str("{\n");
    let _ = writeln!(out, "  \"accuracy\": {},", fmt_f64(report.accuracy));
    let _ = writeln!(out, "  \"classes\": [{}],", classes.join(", "));
    let _ = writeln!(out, "  \"permutation\": [{}],", permutation.join(", "));
    let _ = writeln!(out, "  \"confusion\": [{}],", confusion.join(", "));
    let _ = writeln!(
        out,
        "  \"fp_rates\": {},",
        json_float_array(report.fp_rates.iter().copied())
    );
    let _ = writeln!(
        out,
        "  \"fn_rates\": {},",
        json_float_array(report.fn_rates.iter().copied())
    );
    let _ = writeln!(out, "  \"fp_defined\": {},", bools(&report.fp_defined));
    let _ = writeln!(out, "  \"fn_defined\": {}", bools(&report.fn_defined));
    out.push_str("}\n");
    w.write_all(out.as_bytes())?;
    Ok(())
}

/// Writes the confusion matrix of an evaluation as CSV, rows = true
/// classes, columns = obtained classes.
pub fn write_confusion_csv<W: Write>(mut w: W, report: &EvalReport) -> Result<()> {
    let header: Vec<String> = std::iter::once("true\\obtained".to_string())
        .chain(report.classes.iter().map(|c| (c + 1).to_string()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (i, row) in report.confusion.iter().enumerate() {
        let mut fields = vec![(report.classes[i] + 1).to_string()];
        fields.extend(row.iter().map(|c| c.to_string()));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Writes the grid-search ranking as CSV: one row per fitted cell, ranked
/// by BIC, then one row per failed cell with an error note.
pub fn write_ranking_csv<W: Write>(mut w: W, outcome: &SelectionOutcome) -> Result<()> {
    writeln!(w, "k,p,u,loglik,nu,bic,converged")?;
    for entry in &outcome.ranked {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            entry.hyper.k,
            entry.hyper.degrees[0],
            entry.hyper.u,
            fmt_f64(entry.report.final_loglik()),
            entry.nu,
            fmt_f64(entry.report.bic),
            entry.report.converged
        )?;
    }
    for (hyper, error) in &outcome.failed {
        writeln!(
            w,
            "{},{},{},failed,,,\"{}\"",
            hyper.k,
            hyper.degrees[0],
            hyper.u,
            error.replace('"', "'")
        )?;
    }
    Ok(())
}
