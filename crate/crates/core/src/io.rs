//! File formats: test cohorts (long CSV or JSON), informative priors (JSON),
//! agreement outcome tables and versioned output tables.
//!
//! Numbers are written with 17 significant digits so that a write/read
//! round trip returns identical values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{InferenceError, PriorSpec};
use crate::model::{BreathSeries, SeriesError};
use crate::synthgen::AgreementRow;

pub const COHORT_SCHEMA: &str = "mbw-tests/1";
pub const PRIOR_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 7] = ["test_id", "participant_id", "replicate_id", "k", "gas", "cevgm", "cevtg"];
pub const AGREEMENT_HEADER: [&str; 4] = ["method", "participant", "replicate", "value"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("line {line}: missing column {column:?}")]
    MissingColumn { line: u64, column: &'static str },
    #[error("line {line}: field {field} holds {value:?}, which is not a valid number")]
    MalformedNumber { line: u64, field: &'static str, value: String },
    #[error("test {test_id}: breath {breath} appears where breath {expected} was expected")]
    NonContiguousK { test_id: String, expected: usize, breath: i64 },
    #[error("test {test_id}: rows are split by other tests (line {line})")]
    Interleaved { test_id: String, line: u64 },
    #[error("test {test_id}: participant or replicate changes at breath {breath}")]
    InconsistentIds { test_id: String, breath: usize },
    #[error("test {test_id}: {field} has {found} entries but M = {expected}")]
    Length {
        test_id: String,
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("test {test_id}: {source}")]
    Series {
        test_id: String,
        #[source]
        source: SeriesError,
    },
    #[error("test {test_id}: prior: {source}")]
    Prior {
        test_id: String,
        #[source]
        source: InferenceError,
    },
    #[error("JSON: {0}")]
    Json(String),
    #[error("unsupported schema version {found}, expected {expected}")]
    SchemaVersion { expected: u32, found: u32 },
}

impl IoError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            IoError::File { .. } => "file",
            IoError::Csv { .. } => "csv",
            IoError::MissingColumn { .. } => "missing_column",
            IoError::MalformedNumber { .. } => "malformed_number",
            IoError::NonContiguousK { .. } => "non_contiguous_k",
            IoError::Interleaved { .. } => "interleaved",
            IoError::InconsistentIds { .. } => "inconsistent_ids",
            IoError::Length { .. } => "length",
            IoError::Series { source, .. } => match source {
                SeriesError::NotIncreasing { .. } => "not_increasing",
                SeriesError::NonPositiveGas { .. } => "non_positive_gas",
                SeriesError::NonZeroStart { .. } => "non_zero_start",
                SeriesError::NonFinite { .. } => "non_finite",
                SeriesError::TooShort { .. } => "too_short",
                SeriesError::NonContiguousK { .. } => "non_contiguous_k",
                SeriesError::LengthMismatch { .. } => "length",
            },
            IoError::Prior { .. } => "prior",
            IoError::Json(_) => "json",
            IoError::SchemaVersion { .. } => "schema_version",
        }
    }

    /// Breath index the error refers to, when there is one.
    pub fn breath(&self) -> Option<usize> {
        match self {
            IoError::NonContiguousK { expected, .. } => Some(*expected),
            IoError::InconsistentIds { breath, .. } => Some(*breath),
            IoError::Series { source, .. } => match source {
                SeriesError::NotIncreasing { breath, .. }
                | SeriesError::NonFinite { breath, .. }
                | SeriesError::NonPositiveGas { breath, .. } => Some(*breath),
                SeriesError::NonZeroStart { .. } => Some(0),
                SeriesError::NonContiguousK { index, .. } => Some(*index),
                _ => None,
            },
            _ => None,
        }
    }
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// Formats with 17 significant digits in scientific notation.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// One test of a cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortTest {
    pub test_id: String,
    pub participant_id: Option<u64>,
    pub replicate_id: Option<u64>,
    pub series: BreathSeries,
    /// Per-test informative prior carried in JSON files.
    pub prior: Option<PriorSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` files are JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

pub fn read_tests(path: &Path, format: Format) -> Result<Vec<CohortTest>, IoError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    match format {
        Format::Csv => parse_tests_csv(&text),
        Format::Json => parse_tests_json(&text),
    }
}

pub fn write_tests(path: &Path, tests: &[CohortTest], format: Format) -> Result<(), IoError> {
    let text = match format {
        Format::Csv => tests_to_csv(tests),
        Format::Json => tests_to_json(tests)?,
    };
    fs::write(path, text).map_err(file_err(path))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn csv_err(e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    IoError::Csv {
        line,
        message: e.to_string(),
    }
}

/// Column positions by name.
fn columns<const N: usize>(
    rdr: &mut csv::Reader<&[u8]>,
    names: [&'static str; N],
) -> Result<[usize; N], IoError> {
    let header = rdr.headers().map_err(csv_err)?.clone();
    let mut idx = [0; N];
    for (slot, name) in idx.iter_mut().zip(names) {
        *slot = header
            .iter()
            .position(|h| h == name)
            .ok_or(IoError::MissingColumn { line: 1, column: name })?;
    }
    Ok(idx)
}

fn field<'a>(rec: &'a csv::StringRecord, i: usize, name: &'static str, line: u64) -> Result<&'a str, IoError> {
    rec.get(i).ok_or(IoError::MissingColumn { line, column: name })
}

fn number<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &'static str, line: u64) -> Result<T, IoError> {
    let s = field(rec, i, name, line)?;
    s.parse().map_err(|_| IoError::MalformedNumber {
        line,
        field: name,
        value: s.to_string(),
    })
}

fn optional_id(rec: &csv::StringRecord, i: usize, name: &'static str, line: u64) -> Result<Option<u64>, IoError> {
    if field(rec, i, name, line)?.is_empty() {
        Ok(None)
    } else {
        number(rec, i, name, line).map(Some)
    }
}

struct Pending {
    test_id: String,
    participant_id: Option<u64>,
    replicate_id: Option<u64>,
    gas: Vec<f64>,
    cevgm: Vec<f64>,
    cevtg: Vec<f64>,
}

impl Pending {
    fn finish(self) -> Result<CohortTest, IoError> {
        let series = BreathSeries::new(self.gas, self.cevgm, self.cevtg).map_err(|source| IoError::Series {
            test_id: self.test_id.clone(),
            source,
        })?;
        Ok(CohortTest {
            test_id: self.test_id,
            participant_id: self.participant_id,
            replicate_id: self.replicate_id,
            series,
            prior: None,
        })
    }
}

/// Parses the long CSV layout. Rows of a test must be contiguous and in
/// breath order. Lines starting with `#` are ignored.
pub fn parse_tests_csv(text: &str) -> Result<Vec<CohortTest>, IoError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv_reader(text);
    let [ti, pi, ri, ki, gi, vi, ci] = columns(&mut rdr, CSV_HEADER)?;
    let mut done: Vec<CohortTest> = Vec::new();
    let mut current: Option<Pending> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let test_id = field(&rec, ti, "test_id", line)?.to_string();
        let participant_id = optional_id(&rec, pi, "participant_id", line)?;
        let replicate_id = optional_id(&rec, ri, "replicate_id", line)?;
        let k: i64 = number(&rec, ki, "k", line)?;
        let (gas, cevgm, cevtg) = (
            number(&rec, gi, "gas", line)?,
            number(&rec, vi, "cevgm", line)?,
            number(&rec, ci, "cevtg", line)?,
        );
        if current.as_ref().is_none_or(|c| c.test_id != test_id) {
            if let Some(c) = current.take() {
                done.push(c.finish()?);
            }
            if done.iter().any(|t| t.test_id == test_id) {
                return Err(IoError::Interleaved { test_id, line });
            }
            current = Some(Pending {
                test_id: test_id.clone(),
                participant_id,
                replicate_id,
                gas: Vec::new(),
                cevgm: Vec::new(),
                cevtg: Vec::new(),
            });
        }
        let c = current.as_mut().expect("set above");
        let expected = c.gas.len();
        if k != expected as i64 {
            return Err(IoError::NonContiguousK {
                test_id,
                expected,
                breath: k,
            });
        }
        if (c.participant_id, c.replicate_id) != (participant_id, replicate_id) {
            return Err(IoError::InconsistentIds { test_id, breath: expected });
        }
        c.gas.push(gas);
        c.cevgm.push(cevgm);
        c.cevtg.push(cevtg);
    }
    if let Some(c) = current {
        done.push(c.finish()?);
    }
    Ok(done)
}

pub fn tests_to_csv(tests: &[CohortTest]) -> String {
    let mut out = format!("# schema: {COHORT_SCHEMA}\n{}\n", CSV_HEADER.join(","));
    let id = |v: Option<u64>| v.map_or(String::new(), |v| v.to_string());
    for t in tests {
        let s = &t.series;
        for k in 0..s.len() {
            out.push_str(&format!(
                "{},{},{},{k},{},{},{}\n",
                csv_quote(&t.test_id),
                id(t.participant_id),
                id(t.replicate_id),
                fmt_f64(s.gas()[k]),
                fmt_f64(s.cevgm()[k]),
                fmt_f64(s.cevtg()[k]),
            ));
        }
    }
    out
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) || s.starts_with('#') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// JSON form of one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate_id: Option<u64>,
    #[serde(rename = "M")]
    pub m: usize,
    pub k: Vec<i64>,
    pub gas: Vec<f64>,
    pub cevgm: Vec<f64>,
    pub cevtg: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(rename = "Sigma", default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
}

impl TestFile {
    fn into_test(self, index: usize) -> Result<CohortTest, IoError> {
        let test_id = self.test_id.unwrap_or_else(|| (index + 1).to_string());
        for (field, found) in [
            ("k", self.k.len()),
            ("gas", self.gas.len()),
            ("cevgm", self.cevgm.len()),
            ("cevtg", self.cevtg.len()),
        ] {
            if found != self.m {
                return Err(IoError::Length {
                    test_id,
                    field,
                    expected: self.m,
                    found,
                });
            }
        }
        if let Some((expected, &breath)) = self.k.iter().enumerate().find(|(i, &v)| v != *i as i64) {
            return Err(IoError::NonContiguousK {
                test_id,
                expected,
                breath,
            });
        }
        let series = BreathSeries::from_parts(&self.k, self.gas, self.cevgm, self.cevtg).map_err(|source| {
            IoError::Series {
                test_id: test_id.clone(),
                source,
            }
        })?;
        let prior = match (self.mu, self.sigma) {
            (Some(mu), Some(sigma)) => {
                let flat: Vec<f64> = sigma.into_iter().flatten().collect();
                Some(PriorSpec::informative(&mu, &flat).map_err(|source| IoError::Prior {
                    test_id: test_id.clone(),
                    source,
                })?)
            }
            _ => None,
        };
        Ok(CohortTest {
            test_id,
            participant_id: self.participant_id,
            replicate_id: self.replicate_id,
            series,
            prior,
        })
    }

    fn from_test(t: &CohortTest) -> Self {
        let s = &t.series;
        let (mu, sigma) = match &t.prior {
            Some(PriorSpec::Informative(inf)) => (
                Some(inf.mu().to_vec()),
                Some(inf.sigma().chunks(6).map(<[f64]>::to_vec).collect()),
            ),
            _ => (None, None),
        };
        Self {
            test_id: Some(t.test_id.clone()),
            participant_id: t.participant_id,
            replicate_id: t.replicate_id,
            m: s.len(),
            k: (0..s.len() as i64).collect(),
            gas: s.gas().to_vec(),
            cevgm: s.cevgm().to_vec(),
            cevtg: s.cevtg().to_vec(),
            mu,
            sigma,
        }
    }
}

/// A JSON array of test records, or a single record.
pub fn parse_tests_json(text: &str) -> Result<Vec<CohortTest>, IoError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| IoError::Json(e.to_string()))?;
    let records: Vec<TestFile> = match value {
        serde_json::Value::Array(_) => serde_json::from_value(value),
        _ => serde_json::from_value(value).map(|r| vec![r]),
    }
    .map_err(|e| IoError::Json(e.to_string()))?;
    records.into_iter().enumerate().map(|(i, r)| r.into_test(i)).collect()
}

pub fn tests_to_json(tests: &[CohortTest]) -> Result<String, IoError> {
    let records: Vec<TestFile> = tests.iter().map(TestFile::from_test).collect();
    serde_json::to_string_pretty(&records)
        .map(|s| s + "\n")
        .map_err(|e| IoError::Json(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct PriorFile {
    schema_version: u32,
    mu: Vec<f64>,
    /// Row-major 6x6.
    sigma: Vec<f64>,
}

pub fn prior_to_json(prior: &PriorSpec) -> Option<String> {
    let PriorSpec::Informative(inf) = prior else {
        return None;
    };
    let f = PriorFile {
        schema_version: PRIOR_SCHEMA_VERSION,
        mu: inf.mu().to_vec(),
        sigma: inf.sigma().to_vec(),
    };
    serde_json::to_string_pretty(&f).ok().map(|s| s + "\n")
}

pub fn parse_prior_json(text: &str) -> Result<PriorSpec, IoError> {
    let f: PriorFile = serde_json::from_str(text).map_err(|e| IoError::Json(e.to_string()))?;
    if f.schema_version != PRIOR_SCHEMA_VERSION {
        return Err(IoError::SchemaVersion {
            expected: PRIOR_SCHEMA_VERSION,
            found: f.schema_version,
        });
    }
    PriorSpec::informative(&f.mu, &f.sigma).map_err(|source| IoError::Prior {
        test_id: "prior file".into(),
        source,
    })
}

pub fn read_prior(path: &Path) -> Result<PriorSpec, IoError> {
    parse_prior_json(&fs::read_to_string(path).map_err(file_err(path))?)
}

/// Reads `method,participant,replicate,value` rows.
pub fn parse_agreement_csv(text: &str) -> Result<Vec<AgreementRow>, IoError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv_reader(text);
    let [mi, pi, ri, vi] = columns(&mut rdr, AGREEMENT_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push(AgreementRow {
            method: number(&rec, mi, "method", line)?,
            participant: number(&rec, pi, "participant", line)?,
            replicate: number(&rec, ri, "replicate", line)?,
            value: number(&rec, vi, "value", line)?,
        });
    }
    Ok(rows)
}

pub fn read_agreement(path: &Path) -> Result<Vec<AgreementRow>, IoError> {
    parse_agreement_csv(&fs::read_to_string(path).map_err(file_err(path))?)
}

pub fn agreement_to_csv(rows: &[AgreementRow]) -> String {
    let mut t = Table::new("mbw-agreement/1", &AGREEMENT_HEADER);
    for r in rows {
        t.push(vec![
            r.method.to_string(),
            r.participant.to_string(),
            r.replicate.to_string(),
            fmt_f64(r.value),
        ]);
    }
    t.to_csv()
}

/// A CSV table preceded by a `# schema: name/version` line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(schema: &str, header: &[&str]) -> Self {
        Self {
            schema: schema.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# schema: {}\n", self.schema);
        let line = |cells: &[String]| cells.iter().map(|c| csv_quote(c)).collect::<Vec<_>>().join(",");
        out.push_str(&line(&self.header));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let mut f = fs::File::create(path).map_err(file_err(path))?;
        f.write_all(self.to_csv().as_bytes()).map_err(file_err(path))
    }
}
