//! On-disk formats: language vectors, cluster configs, JSONL datasets,
//! monolingual corpora and generic JSON / JSONL helpers.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use xnlg_core::corpus::{Dataset, Example, Split, SplitCounts, Task, QG_DELIMITER};
use xnlg_core::langspace::{ClusterSet, LanguageSpace};
use xnlg_core::LangCode;

use crate::error::{in_file, CliError, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(path, e.to_string()))
}

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::data(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Every non-blank line of a JSONL file, parsed, with 1-based line numbers in errors.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| CliError::data(path, format!("line {}: {e}", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = JsonlWriter::create(path)?;
    for item in items {
        w.write(item)?;
    }
    w.finish()
}

/// Line-at-a-time JSONL output, flushed after each record.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        Ok(JsonlWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn write<T: Serialize>(&mut self, item: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, item).map_err(|e| CliError::data(&self.path, e.to_string()))?;
        self.out.write_all(b"\n").map_err(|e| CliError::io(&self.path, e))?;
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorFormat {
    Csv,
    Jsonl,
}

impl VectorFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(VectorFormat::Csv),
            Some("jsonl") | Some("json") => Ok(VectorFormat::Jsonl),
            _ => Err(CliError::Config(format!(
                "cannot tell the vector format of {}; use .csv or .jsonl",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct VectorRecord {
    code: String,
    vector: Vec<f64>,
}

/// Read `code,v0,...` CSV (with header) or `{"code","vector"}` JSONL.
pub fn load_language_vectors(path: &Path, format: VectorFormat) -> Result<LanguageSpace> {
    let rows: Vec<(usize, String, Vec<f64>)> = match format {
        VectorFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(path)
                .map_err(|e| CliError::data(path, e.to_string()))?;
            let mut rows = Vec::new();
            for (i, rec) in reader.records().enumerate() {
                // Row 1 is the header.
                let row = i + 2;
                let rec = rec.map_err(|e| CliError::data(path, format!("row {row}: {e}")))?;
                let mut fields = rec.iter();
                let code = fields
                    .next()
                    .filter(|c| !c.is_empty())
                    .ok_or_else(|| CliError::data(path, format!("row {row}: missing language code")))?;
                let v = fields
                    .map(|f| f.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| CliError::data(path, format!("row {row}: {e}")))?;
                rows.push((row, code.to_string(), v));
            }
            rows
        }
        VectorFormat::Jsonl => {
            let file = File::open(path).map_err(|e| CliError::io(path, e))?;
            let mut rows = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| CliError::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: VectorRecord = serde_json::from_str(&line).map_err(|e| CliError::data(path, format!("row {}: {e}", i + 1)))?;
                rows.push((i + 1, r.code, r.vector));
            }
            rows
        }
    };
    let mut seen = BTreeSet::new();
    let mut dim = None;
    for (row, code, v) in &rows {
        if !seen.insert(code.as_str()) {
            return Err(CliError::data(path, format!("row {row}: duplicate language code {code}")));
        }
        let d = *dim.get_or_insert(v.len());
        if v.len() != d {
            return Err(CliError::data(
                path,
                format!("row {row}: {} values where earlier rows have {d}", v.len()),
            ));
        }
    }
    LanguageSpace::from_records(rows.into_iter().map(|(_, c, v)| (LangCode::new(c), v))).map_err(in_file(path))
}

pub fn write_language_vectors(path: &Path, space: &LanguageSpace, format: VectorFormat) -> Result<()> {
    match format {
        VectorFormat::Csv => {
            let mut text = String::from("code");
            for i in 0..space.dimension() {
                text.push_str(&format!(",v{i}"));
            }
            text.push('\n');
            for (code, v) in space.iter() {
                text.push_str(code.as_str());
                for x in v {
                    text.push_str(&format!(",{x}"));
                }
                text.push('\n');
            }
            write_text(path, &text)
        }
        VectorFormat::Jsonl => {
            let recs: Vec<VectorRecord> = space
                .iter()
                .map(|(c, v)| VectorRecord {
                    code: c.to_string(),
                    vector: v.to_vec(),
                })
                .collect();
            write_jsonl(path, &recs)
        }
    }
}

pub fn load_clusters(path: &Path) -> Result<ClusterSet> {
    let set: ClusterSet = read_json(path)?;
    set.validate().map_err(in_file(path))?;
    Ok(set)
}

#[derive(Debug, Serialize, Deserialize)]
struct SummarizationRecord {
    document: String,
    summary: String,
    lang: LangCode,
}

#[derive(Debug, Serialize, Deserialize)]
struct QuestionRecord {
    passage: String,
    answer: String,
    question: String,
    lang: LangCode,
}

#[derive(Debug, Serialize, Deserialize)]
struct TextRecord {
    text: String,
    lang: LangCode,
}

/// Load a JSONL dataset in the schema of `task` and check it against `lang`.
pub fn load_dataset(path: &Path, task: Task, lang: &LangCode, split: Split) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: String| CliError::data(path, format!("line {}: {e}", i + 1));
        let ex = match task {
            Task::Summarization => {
                let r: SummarizationRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
                Example::new(r.document, r.summary, r.lang, task)
            }
            Task::QuestionGeneration => {
                let r: QuestionRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
                Example::question_generation(&r.answer, &r.passage, &r.question, r.lang)
            }
            Task::Denoising => {
                let r: TextRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
                Example::monolingual(r.text, r.lang)
            }
        }
        .map_err(|e| at(e.to_string()))?;
        if &ex.lang != lang {
            return Err(at(format!("language {} in a file declared {lang}", ex.lang)));
        }
        examples.push(ex);
    }
    if examples.is_empty() {
        return Err(CliError::data(path, "empty dataset"));
    }
    Dataset::new(lang.clone(), task, split, examples).map_err(in_file(path))
}

pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    let mut w = JsonlWriter::create(path)?;
    for ex in examples {
        match ex.task {
            Task::Summarization => w.write(&SummarizationRecord {
                document: ex.source.clone(),
                summary: ex.target.clone(),
                lang: ex.lang.clone(),
            })?,
            Task::QuestionGeneration => {
                let sep = format!(" {QG_DELIMITER} ");
                let (answer, passage) = ex
                    .source
                    .split_once(&sep)
                    .ok_or_else(|| CliError::data(path, "question-generation source without delimiter"))?;
                w.write(&QuestionRecord {
                    passage: passage.to_string(),
                    answer: answer.to_string(),
                    question: ex.target.clone(),
                    lang: ex.lang.clone(),
                })?
            }
            Task::Denoising => w.write(&TextRecord {
                text: ex.source.clone(),
                lang: ex.lang.clone(),
            })?,
        }
    }
    w.finish()
}

/// Monolingual corpus description: one plain-text file per language, one
/// sentence per line. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonoManifest {
    pub counts: SplitCounts,
    pub languages: BTreeMap<LangCode, PathBuf>,
}

impl MonoManifest {
    pub fn load(path: &Path) -> Result<(Self, BTreeMap<LangCode, Vec<String>>)> {
        let manifest: MonoManifest = read_json(path)?;
        if manifest.languages.is_empty() {
            return Err(CliError::data(path, "manifest lists no languages"));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mut lines = BTreeMap::new();
        for (lang, p) in &manifest.languages {
            let full = base.join(p);
            let text = fs::read_to_string(&full).map_err(|e| CliError::io(&full, e))?;
            lines.insert(
                lang.clone(),
                text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect(),
            );
        }
        Ok((manifest, lines))
    }
}
