//! Dataset CSV, prior-network and results-bundle files.

use std::fs;
use std::path::Path;

use bggm::inference::PosteriorSummary;
use bggm::model::{Evidence, PriorEdge, PriorNetwork, Scope};
use bggm::sampler::ChainSamples;
use bggm::{Class, Dataset};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// How labels are spelled in a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSpec {
    pub label_column: String,
    /// Label values for class 1 and class 2.
    pub class_names: [String; 2],
    /// Label value marking a sample of unknown class.
    pub unknown: String,
}

impl Default for CsvSpec {
    fn default() -> Self {
        Self { label_column: "label".into(), class_names: ["class1".into(), "class2".into()], unknown: "?".into() }
    }
}

impl CsvSpec {
    fn parse_label(&self, s: &str) -> Option<Option<Class>> {
        if s == self.unknown {
            Some(None)
        } else if s == self.class_names[0] {
            Some(Some(Class::One))
        } else if s == self.class_names[1] {
            Some(Some(Class::Two))
        } else {
            None
        }
    }

    pub fn label_name(&self, l: Option<Class>) -> &str {
        match l {
            None => &self.unknown,
            Some(k) => &self.class_names[k.index()],
        }
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Reads a CSV with a header row of variable names plus the label column.
/// Lines starting with `#` are skipped.
pub fn read_dataset(path: &Path, spec: &CsvSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let label_at = headers.iter().position(|h| h == spec.label_column).ok_or_else(|| CliError::Format {
        path: path.into(),
        message: format!("no label column `{}` in the header", spec.label_column),
    })?;
    let names: Vec<String> = headers.iter().enumerate().filter(|(c, _)| *c != label_at).map(|(_, h)| h.to_string()).collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(CliError::Parse {
                path: path.into(),
                line,
                column: headers.get(rec.len().min(headers.len() - 1)).unwrap_or("").to_string(),
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            if c == label_at {
                let l = spec.parse_label(cell).ok_or_else(|| {
                    CliError::Core(bggm::Error::Validation(format!(
                        "{}: line {line}: unknown class label `{cell}` (expected `{}`, `{}` or `{}`)",
                        path.display(),
                        spec.class_names[0],
                        spec.class_names[1],
                        spec.unknown
                    )))
                })?;
                labels.push(l);
                continue;
            }
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| CliError::Parse {
                path: path.into(),
                line,
                column: headers[c].to_string(),
                message: format!("`{cell}` is not a finite number"),
            })?;
            values.push(v);
        }
    }
    let y = DMatrix::from_row_slice(labels.len(), names.len(), &values);
    Ok(Dataset::new(y, labels, names)?)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    CliError::Parse { path: path.into(), line, column: String::new(), message: e.to_string() }
}

/// Writes the dataset with the label column last. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_dataset(path: &Path, d: &Dataset, spec: &CsvSpec, header: Option<&str>) -> Result<()> {
    let mut out = Vec::new();
    if let Some(h) = header {
        out.extend_from_slice(h.as_bytes());
        out.push(b'\n');
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut head: Vec<&str> = d.names().iter().map(String::as_str).collect();
        head.push(&spec.label_column);
        w.write_record(&head).map_err(|e| csv_error(path, e))?;
        for r in 0..d.n() {
            let mut rec: Vec<String> = d.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(spec.label_name(d.labels()[r]).to_string());
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Whitespace-separated `first second evidence [scope]` lines; `#` starts a comment.
pub fn read_prior_network(path: &Path, class_names: &[String; 2]) -> Result<PriorNetwork> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |column: &str, message: String| CliError::Parse {
            path: path.into(),
            line: n as u64 + 1,
            column: column.into(),
            message,
        };
        if !(3..=4).contains(&f.len()) {
            return Err(bad("", format!("expected 3 or 4 fields, found {}", f.len())));
        }
        let evidence = match f[2].to_ascii_lowercase().as_str() {
            "important" => Evidence::Important,
            "unimportant" => Evidence::Unimportant,
            "none" => Evidence::None,
            other => return Err(bad("evidence", format!("`{other}` is not important, unimportant or none"))),
        };
        let scope = match f.get(3) {
            None => Scope::Both,
            Some(s) if s.eq_ignore_ascii_case("both") => Scope::Both,
            Some(s) if s.eq_ignore_ascii_case("class1") || *s == class_names[0] => Scope::Class1,
            Some(s) if s.eq_ignore_ascii_case("class2") || *s == class_names[1] => Scope::Class2,
            Some(s) => return Err(bad("scope", format!("`{s}` is not class1, class2 or both"))),
        };
        edges.push(PriorEdge { first: f[0].into(), second: f[1].into(), evidence, scope });
    }
    Ok(PriorNetwork { edges })
}

pub const FORMAT_VERSION: u32 = 1;

/// Everything `fit` produces, persisted as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub format_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub names: Vec<String>,
    pub summary: PosteriorSummary,
    pub samples: ChainSamples,
}

pub fn write_bundle(path: &Path, b: &ResultsBundle) -> Result<()> {
    let json = serde_json::to_string(b).map_err(|e| CliError::Format { path: path.into(), message: e.to_string() })?;
    write_text(path, &json)
}

pub fn read_bundle(path: &Path) -> Result<ResultsBundle> {
    let text = read_text(path)?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Format { path: path.into(), message: e.to_string() })?;
    match v.get("format_version").and_then(|x| x.as_u64()) {
        Some(x) if x == FORMAT_VERSION as u64 => {}
        other => {
            return Err(CliError::Format {
                path: path.into(),
                message: format!("unsupported results format version {other:?}, expected {FORMAT_VERSION}"),
            })
        }
    }
    serde_json::from_value(v).map_err(|e| CliError::Format { path: path.into(), message: e.to_string() })
}
