//! Labeled example pools and evaluation splits.
//!
//! Files are headered TSV/CSV with the columns `id`, `text`, `label`, `target`
//! (extra columns are ignored), or JSONL objects with the same keys. An empty
//! target cell means the target group is unknown.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary label. `Hate` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Hate,
    NotHate,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hate => "hate",
            Label::NotHate => "not_hate",
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Hate
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Hate => Label::NotHate,
            Label::NotHate => Label::Hate,
        }
    }

    /// Parses a label cell; accepts `hate`/`1` and `not_hate`/`not hate`/`0`,
    /// case-insensitively.
    pub fn parse_token(token: &str) -> Option<Label> {
        match token.trim().to_lowercase().as_str() {
            "hate" | "1" => Some(Label::Hate),
            "not_hate" | "not hate" | "0" => Some(Label::NotHate),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Pool,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pool" | "train" => Ok(Split::Pool),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: Label,
    /// Raw target-group annotation; `None` when the dataset has no value.
    pub target: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Tsv,
    Csv,
    Jsonl,
}

impl Format {
    /// Guesses the format from a file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Tsv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::Config(format!("unknown format '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Target cell value treated as missing, e.g. `NULL` or `none`.
    pub null_token: Option<String>,
}

/// An immutable, ordered collection of examples with unique ids.
#[derive(Debug, Clone, Default)]
pub struct ExamplePool {
    examples: Vec<Example>,
    by_id: HashMap<String, usize>,
}

impl ExamplePool {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if by_id.insert(ex.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(ex.id.clone()));
            }
        }
        Ok(ExamplePool { examples, by_id })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.by_id.get(id).map(|&i| &self.examples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Example> {
        self.examples.iter()
    }
}

impl<'a> IntoIterator for &'a ExamplePool {
    type Item = &'a Example;
    type IntoIter = std::slice::Iter<'a, Example>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

pub fn load_examples(path: impl AsRef<Path>, format: Format, split: Split, opts: &LoadOptions) -> Result<ExamplePool> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_examples(&bytes, path, format, split, opts)
}

/// Parses examples from in-memory bytes; `origin` is only used in messages.
pub fn parse_examples(
    bytes: &[u8],
    origin: &Path,
    format: Format,
    split: Split,
    opts: &LoadOptions,
) -> Result<ExamplePool> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        line: line_of_offset(bytes, e.valid_up_to()),
        message: "invalid UTF-8".into(),
    })?;
    let examples = match format {
        Format::Tsv => parse_delimited(text, origin, b'\t', split, opts)?,
        Format::Csv => parse_delimited(text, origin, b',', split, opts)?,
        Format::Jsonl => parse_jsonl(text, origin, split, opts)?,
    };
    ExamplePool::new(examples)
}

fn line_of_offset(bytes: &[u8], offset: usize) -> usize {
    1 + bytes[..offset].iter().filter(|&&b| b == b'\n').count()
}

struct RawRow<'a> {
    id: &'a str,
    text: &'a str,
    label: &'a str,
    target: Option<&'a str>,
}

fn build_example(row: RawRow<'_>, origin: &Path, line: usize, split: Split, opts: &LoadOptions) -> Result<Example> {
    let parse_err = |message: &str| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message: message.to_string(),
    };
    let id = row.id.trim();
    if id.is_empty() {
        return Err(parse_err("empty id"));
    }
    if row.text.trim().is_empty() {
        return Err(parse_err("empty text"));
    }
    let label = Label::parse_token(row.label).ok_or_else(|| Error::UnknownLabel {
        token: row.label.trim().to_string(),
        line,
    })?;
    let target = row
        .target
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .filter(|t| opts.null_token.as_deref() != Some(*t))
        .map(str::to_string);
    Ok(Example {
        id: id.to_string(),
        text: row.text.to_string(),
        label,
        target,
        split,
    })
}

fn parse_delimited(text: &str, origin: &Path, delimiter: u8, split: Split, opts: &LoadOptions) -> Result<Vec<Example>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .quoting(delimiter != b'\t')
        .from_reader(text.as_bytes());

    let csv_err = |e: csv::Error| {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            path: origin.to_path_buf(),
            line,
            message: e.to_string(),
        }
    };

    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: 1,
                message: format!("header is missing column '{name}'"),
            })
    };
    let (id_col, text_col, label_col, target_col) =
        (column("id")?, column("text")?, column("label")?, column("target")?);

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        if record.len() != headers.len() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line,
                message: format!("expected {} columns, found {}", headers.len(), record.len()),
            });
        }
        let row = RawRow {
            id: &record[id_col],
            text: &record[text_col],
            label: &record[label_col],
            target: Some(&record[target_col]),
        };
        out.push(build_example(row, origin, line, split, opts)?);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct JsonRow {
    id: serde_json::Value,
    text: String,
    label: serde_json::Value,
    #[serde(default)]
    target: Option<String>,
}

fn parse_jsonl(text: &str, origin: &Path, split: Split, opts: &LoadOptions) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonRow = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let id = scalar_to_string(&row.id);
        let label = scalar_to_string(&row.label);
        let raw = RawRow {
            id: &id,
            text: &row.text,
            label: &label,
            target: row.target.as_deref(),
        };
        out.push(build_example(raw, origin, line_no, split, opts)?);
    }
    Ok(out)
}

fn scalar_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Writes examples in the canonical layout for `format`.
///
/// TSV output is unquoted, so texts containing tabs or line breaks are
/// rejected; use JSONL for such data.
pub fn write_examples(path: impl AsRef<Path>, examples: &[Example], format: Format) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    match format {
        Format::Jsonl => {
            for ex in examples {
                let row = serde_json::json!({
                    "id": ex.id,
                    "text": ex.text,
                    "label": ex.label.as_str(),
                    "target": ex.target,
                });
                serde_json::to_writer(&mut buf, &row)?;
                buf.push(b'\n');
            }
        }
        Format::Tsv | Format::Csv => {
            let delimiter = if format == Format::Tsv { b'\t' } else { b',' };
            if format == Format::Tsv {
                if let Some(ex) = examples.iter().find(|ex| {
                    [ex.id.as_str(), ex.text.as_str(), ex.target.as_deref().unwrap_or("")]
                        .iter()
                        .any(|f| f.contains(['\t', '\n', '\r']))
                }) {
                    return Err(Error::Data(format!(
                        "example '{}' contains a tab or line break and cannot be written as TSV",
                        ex.id
                    )));
                }
            }
            let mut writer = csv::WriterBuilder::new()
                .delimiter(delimiter)
                .quote_style(if format == Format::Tsv {
                    csv::QuoteStyle::Never
                } else {
                    csv::QuoteStyle::Necessary
                })
                .from_writer(&mut buf);
            let io = |e: csv::Error| Error::Data(e.to_string());
            writer.write_record(["id", "text", "label", "target"]).map_err(io)?;
            for ex in examples {
                writer
                    .write_record([
                        ex.id.as_str(),
                        ex.text.as_str(),
                        ex.label.as_str(),
                        ex.target.as_deref().unwrap_or(""),
                    ])
                    .map_err(io)?;
            }
            writer.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub total: usize,
    pub hate: usize,
    pub not_hate: usize,
    pub null_targets: usize,
    /// Groups of ids sharing an identical text.
    pub duplicate_texts: Vec<Vec<String>>,
}

impl ValidationReport {
    pub fn warnings(&self) -> Vec<String> {
        self.duplicate_texts
            .iter()
            .map(|ids| format!("identical text shared by ids: {}", ids.join(", ")))
            .collect()
    }
}

pub fn validate_pool(pool: &ExamplePool) -> ValidationReport {
    let mut report = ValidationReport {
        total: pool.len(),
        ..Default::default()
    };
    let mut by_text: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for ex in pool {
        match ex.label {
            Label::Hate => report.hate += 1,
            Label::NotHate => report.not_hate += 1,
        }
        if ex.target.is_none() {
            report.null_targets += 1;
        }
        by_text.entry(ex.text.as_str()).or_default().push(ex.id.clone());
    }
    let mut dups: Vec<Vec<String>> = by_text.into_values().filter(|ids| ids.len() > 1).collect();
    // keep report order tied to file order rather than text order
    dups.sort_by_key(|ids| pool.position(&ids[0]));
    report.duplicate_texts = dups;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: Format) -> Result<ExamplePool> {
        parse_examples(
            text.as_bytes(),
            Path::new("fixture"),
            format,
            Split::Pool,
            &LoadOptions::default(),
        )
    }

    #[test]
    fn tsv_row_maps_fields() {
        let pool = parse("id\ttext\tlabel\ttarget\ne1\thello world\thate\tjews\n", Format::Tsv).unwrap();
        let ex = pool.get("e1").unwrap();
        assert_eq!(ex.text, "hello world");
        assert_eq!(ex.label, Label::Hate);
        assert_eq!(ex.target.as_deref(), Some("jews"));
    }

    #[test]
    fn empty_target_is_absent() {
        let pool = parse("id\ttext\tlabel\ttarget\ne1\tsome text\t0\t\n", Format::Tsv).unwrap();
        assert_eq!(pool.get("e1").unwrap().target, None);
        assert_eq!(pool.get("e1").unwrap().label, Label::NotHate);
    }

    #[test]
    fn unknown_label_names_token_and_line() {
        let text = "id\ttext\tlabel\ttarget\n\
                    a\tone\thate\t\n\
                    b\ttwo\tnot_hate\t\n\
                    c\tthree\tNot Hate\tx\n\
                    d\tfour\tmaybe\t\n";
        let err = parse(text, Format::Tsv).unwrap_err();
        assert_eq!(err.to_string(), "unknown label 'maybe' at line 5");
    }

    #[test]
    fn wrong_column_count_names_line() {
        let err = parse("id\ttext\tlabel\ttarget\na\tone\thate\n", Format::Tsv).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let err = parse("id\ttext\tlabel\ttarget\na\tone\thate\t\na\ttwo\thate\t\n", Format::Tsv).unwrap_err();
        assert_eq!(err.to_string(), "duplicate id 'a'");
    }

    #[test]
    fn crlf_and_csv_quoting() {
        let pool = parse(
            "id,text,label,target\r\nq1,\"hello, there\",HATE,\r\nq2,plain,0,muslims\r\n",
            Format::Csv,
        )
        .unwrap();
        assert_eq!(pool.get("q1").unwrap().text, "hello, there");
        assert_eq!(pool.get("q2").unwrap().target.as_deref(), Some("muslims"));
    }

    #[test]
    fn jsonl_accepts_numeric_labels_and_null_targets() {
        let text = "{\"id\":\"a\",\"text\":\"x\",\"label\":1,\"target\":null}\n\n{\"id\":7,\"text\":\"y\",\"label\":\"not hate\"}\n";
        let pool = parse(text, Format::Jsonl).unwrap();
        assert_eq!(pool.get("a").unwrap().label, Label::Hate);
        assert_eq!(pool.get("7").unwrap().target, None);
    }

    #[test]
    fn null_token_maps_to_absent() {
        let opts = LoadOptions {
            null_token: Some("NULL".into()),
        };
        let pool = parse_examples(
            b"id\ttext\tlabel\ttarget\na\tx\thate\tNULL\n",
            Path::new("f"),
            Format::Tsv,
            Split::Pool,
            &opts,
        )
        .unwrap();
        assert_eq!(pool.get("a").unwrap().target, None);
    }

    #[test]
    fn validation_counts() {
        let rows = "id\ttext\tlabel\ttarget\n\
                    a\tt1\thate\tjews\n\
                    b\tt2\thate\tblacks\n\
                    c\tt3\t0\t\n\
                    d\tt4\t0\tmuslims\n\
                    e\tt5\t0\timmigrants\n";
        let report = validate_pool(&parse(rows, Format::Tsv).unwrap());
        assert_eq!((report.hate, report.not_hate, report.null_targets), (2, 3, 1));
        assert!(report.duplicate_texts.is_empty());

        let empty = validate_pool(&ExamplePool::default());
        assert_eq!(empty, ValidationReport::default());
    }

    #[test]
    fn validation_warns_on_identical_texts() {
        let rows = "id\ttext\tlabel\ttarget\na\tsame\thate\t\nb\tother\t0\t\nc\tsame\t0\t\n";
        let report = validate_pool(&parse(rows, Format::Tsv).unwrap());
        assert_eq!(report.duplicate_texts, vec![vec!["a".to_string(), "c".to_string()]]);
        assert_eq!(report.warnings().len(), 1);
    }
}
