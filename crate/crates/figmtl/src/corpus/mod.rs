//! Corpus handling: the jointly-labeled sentence schema, JSONL/CSV loaders,
//! quadrant statistics, label balancing, and the synthetic corpus generator.
//!
//! JSONL is the canonical interchange format, one object per line with keys
//! `id`, `text`, `hyperbole`, `metaphor`, `source`. CSV is accepted for
//! ingestion with header columns `text,hyperbole,metaphor[,id,source]`.

pub mod synth;
pub mod tokenizer;

pub use synth::{synth_corpus, SynthSpec};
pub use tokenizer::{tokenize, TokenIdSequence, Vocabulary};

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One corpus row: sentence text plus binary hyperbole and metaphor labels,
/// either of which may be absent on single-task datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: String,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hyperbole: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metaphor: Option<u8>,
    pub source: String,
}

/// The two detection tasks; also selects which label column an operation
/// reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Hyperbole,
    Metaphor,
}

impl Task {
    pub fn label_of(self, s: &LabeledSentence) -> Option<u8> {
        match self {
            Task::Hyperbole => s.hyperbole,
            Task::Metaphor => s.metaphor,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Hyperbole => "hyperbole",
            Task::Metaphor => "metaphor",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Counts over the four joint (hyperbole, metaphor) label combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadrantStats {
    /// Hyperbole and metaphor.
    pub both: usize,
    /// Hyperbole only.
    pub hyperbole_only: usize,
    /// Metaphor only.
    pub metaphor_only: usize,
    /// Neither label positive.
    pub neither: usize,
    pub total: usize,
}

impl QuadrantStats {
    pub fn new(both: usize, hyperbole_only: usize, metaphor_only: usize, neither: usize) -> Self {
        QuadrantStats {
            both,
            hyperbole_only,
            metaphor_only,
            neither,
            total: both + hyperbole_only + metaphor_only + neither,
        }
    }
}

/// Which of the four quadrants a fully labeled sentence falls into.
pub fn quadrant_of(s: &LabeledSentence) -> Option<usize> {
    match (s.hyperbole?, s.metaphor?) {
        (1, 1) => Some(0),
        (1, 0) => Some(1),
        (0, 1) => Some(2),
        _ => Some(3),
    }
}

/// Exact joint-label counts. Every row must carry both labels.
pub fn quadrant_stats(dataset: &[LabeledSentence]) -> Result<QuadrantStats> {
    let missing: Vec<&str> = dataset
        .iter()
        .filter(|s| s.hyperbole.is_none() || s.metaphor.is_none())
        .map(|s| s.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "rows missing a label for quadrant statistics: {}",
            missing.join(", ")
        )));
    }
    let mut counts = [0usize; 4];
    for s in dataset {
        counts[quadrant_of(s).expect("labels checked above")] += 1;
    }
    Ok(QuadrantStats::new(counts[0], counts[1], counts[2], counts[3]))
}

// ── Loading and saving ──────────────────────────────────────────────────

/// On-disk formats the loader understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Jsonl,
    Csv,
}

impl FileFormat {
    /// Infer from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") | Some("tsv") => FileFormat::Csv,
            _ => FileFormat::Jsonl,
        }
    }
}

/// A row the loader could not accept, with its 1-based line number.
#[derive(Debug, Clone, Serialize)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

/// Parse outcome: valid rows in file order plus a report of rejected rows.
/// Malformed rows are collected, never silently dropped.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub sentences: Vec<LabeledSentence>,
    pub row_errors: Vec<RowError>,
}

fn parse_label_json(value: &serde_json::Value, field: &str) -> std::result::Result<Option<u8>, String> {
    match value {
        serde_json::Value::Null => Ok(None),
        serde_json::Value::Bool(b) => Ok(Some(u8::from(*b))),
        serde_json::Value::Number(n) => match n.as_u64() {
            Some(0) => Ok(Some(0)),
            Some(1) => Ok(Some(1)),
            _ => Err(format!("unknown {field} label value {n}")),
        },
        other => Err(format!("unknown {field} label value {other}")),
    }
}

fn parse_label_csv(raw: &str, field: &str) -> std::result::Result<Option<u8>, String> {
    match raw.trim() {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(format!("unknown {field} label value {other:?}")),
    }
}

fn validate_row(
    id: String,
    text: String,
    hyperbole: Option<u8>,
    metaphor: Option<u8>,
    source: String,
) -> std::result::Result<LabeledSentence, String> {
    if text.trim().is_empty() {
        return Err("text is empty".into());
    }
    if hyperbole.is_none() && metaphor.is_none() {
        return Err("row carries neither a hyperbole nor a metaphor label".into());
    }
    Ok(LabeledSentence { id, text, hyperbole, metaphor, source })
}

fn load_jsonl(reader: impl BufRead) -> Result<LoadReport> {
    let mut sentences = Vec::new();
    let mut row_errors = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<LabeledSentence, String> = (|| {
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| format!("invalid json: {e}"))?;
            let obj = value.as_object().ok_or("line is not a json object")?;
            let text = obj
                .get("text")
                .and_then(|v| v.as_str())
                .ok_or("missing text field")?
                .to_string();
            let id = obj
                .get("id")
                .and_then(|v| v.as_str())
                .map(str::to_string)
                .unwrap_or_else(|| format!("row{line_no}"));
            let source = obj
                .get("source")
                .and_then(|v| v.as_str())
                .unwrap_or("other")
                .to_string();
            let hyperbole =
                parse_label_json(obj.get("hyperbole").unwrap_or(&serde_json::Value::Null), "hyperbole")?;
            let metaphor =
                parse_label_json(obj.get("metaphor").unwrap_or(&serde_json::Value::Null), "metaphor")?;
            validate_row(id, text, hyperbole, metaphor, source)
        })();
        match parsed {
            Ok(s) => sentences.push(s),
            Err(message) => row_errors.push(RowError { line: line_no, message }),
        }
    }
    Ok(LoadReport { sentences, row_errors })
}

fn load_csv(reader: impl std::io::Read) -> Result<LoadReport> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = col("text").ok_or_else(|| Error::Data("csv is missing a text column".into()))?;
    let hyp_col = col("hyperbole");
    let met_col = col("metaphor");
    if hyp_col.is_none() && met_col.is_none() {
        return Err(Error::Data("csv has neither a hyperbole nor a metaphor column".into()));
    }
    let id_col = col("id");
    let source_col = col("source");

    let mut sentences = Vec::new();
    let mut row_errors = Vec::new();
    for (idx, record) in csv_reader.records().enumerate() {
        let line_no = idx + 2; // 1-based, after the header
        let parsed: std::result::Result<LabeledSentence, String> = (|| {
            let record = record.map_err(|e| e.to_string())?;
            let field = |i: Option<usize>| i.and_then(|i| record.get(i)).unwrap_or("");
            let hyperbole = parse_label_csv(field(hyp_col), "hyperbole")?;
            let metaphor = parse_label_csv(field(met_col), "metaphor")?;
            let id = match field(id_col) {
                "" => format!("row{line_no}"),
                other => other.to_string(),
            };
            let source = match field(source_col) {
                "" => "other".to_string(),
                other => other.to_string(),
            };
            validate_row(id, field(Some(text_col)).to_string(), hyperbole, metaphor, source)
        })();
        match parsed {
            Ok(s) => sentences.push(s),
            Err(message) => row_errors.push(RowError { line: line_no, message }),
        }
    }
    Ok(LoadReport { sentences, row_errors })
}

/// Load a dataset file, preserving row order. An empty file (or one whose
/// rows were all rejected) is a dataset-level error.
pub fn load(path: &Path, format: FileFormat) -> Result<LoadReport> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let report = match format {
        FileFormat::Jsonl => load_jsonl(BufReader::new(file))?,
        FileFormat::Csv => load_csv(file)?,
    };
    if report.sentences.is_empty() {
        let detail = if report.row_errors.is_empty() {
            "file contains no rows".to_string()
        } else {
            format!(
                "no usable rows; first error at line {}: {}",
                report.row_errors[0].line, report.row_errors[0].message
            )
        };
        return Err(Error::Data(format!("{}: {detail}", path.display())));
    }
    Ok(report)
}

/// Serialize to canonical JSONL, one object per line.
pub fn to_jsonl(dataset: &[LabeledSentence]) -> Result<String> {
    let mut out = String::new();
    for s in dataset {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

/// Write canonical JSONL to a file.
pub fn save(path: &Path, dataset: &[LabeledSentence]) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(to_jsonl(dataset)?.as_bytes())?;
    Ok(())
}

/// SHA-256 of the canonical JSONL serialization; the corpus identity used in
/// run manifests.
pub fn corpus_hash(dataset: &[LabeledSentence]) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(to_jsonl(dataset)?.as_bytes());
    Ok(hex::encode(hasher.finalize()))
}

// ── Label balancing ─────────────────────────────────────────────────────

/// Downsample the rows negative for `minority_label` until their count is at
/// most `ratio` times the positive count. All positive rows survive, row
/// contents are untouched, and survivor order is the input order.
pub fn balance(
    dataset: &[LabeledSentence],
    minority_label: Task,
    ratio: f64,
    seed: u64,
) -> Result<Vec<LabeledSentence>> {
    if !(ratio >= 1.0) {
        return Err(Error::Config(format!("balance ratio {ratio} must be at least 1")));
    }
    let mut minority = 0usize;
    let mut majority_rows: Vec<usize> = Vec::new();
    for (i, s) in dataset.iter().enumerate() {
        match minority_label.label_of(s) {
            Some(1) => minority += 1,
            Some(_) => majority_rows.push(i),
            None => {
                return Err(Error::Data(format!(
                    "row {} is missing the {} label required for balancing",
                    s.id, minority_label
                )))
            }
        }
    }
    // The small epsilon absorbs float dust in ratio * minority so exact
    // targets like 2.5 × 10 = 25 stay exact.
    let target = ((ratio * minority as f64) + 1e-9).floor() as usize;
    if majority_rows.len() <= target {
        return Ok(dataset.to_vec());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut shuffled = majority_rows;
    shuffled.shuffle(&mut rng);
    let mut keep = vec![false; dataset.len()];
    for &i in shuffled.iter().take(target) {
        keep[i] = true;
    }
    Ok(dataset
        .iter()
        .enumerate()
        .filter(|(i, s)| minority_label.label_of(s) == Some(1) || keep[*i])
        .map(|(_, s)| s.clone())
        .collect())
}

// ── Reference statistics for the four annotated datasets ────────────────

/// The four annotated source datasets with published joint-label counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnownDataset {
    Hypo,
    HypoL,
    Trofi,
    Lcc,
}

impl KnownDataset {
    pub fn parse(name: &str) -> Option<KnownDataset> {
        match name.to_lowercase().replace('_', "-").as_str() {
            "hypo" => Some(KnownDataset::Hypo),
            "hypo-l" | "hypol" => Some(KnownDataset::HypoL),
            "trofi" => Some(KnownDataset::Trofi),
            "lcc" => Some(KnownDataset::Lcc),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KnownDataset::Hypo => "HYPO",
            KnownDataset::HypoL => "HYPO-L",
            KnownDataset::Trofi => "TroFi",
            KnownDataset::Lcc => "LCC",
        }
    }

    /// Published joint-label counts, plus the advertised sentence total
    /// (which for HYPO-L disagrees with the quadrant sum).
    pub fn reference(self) -> ReferenceStats {
        let (stats, header_count) = match self {
            KnownDataset::Hypo => (QuadrantStats::new(515, 194, 107, 602), 1_418),
            KnownDataset::HypoL => (QuadrantStats::new(237, 770, 19, 2_200), 3_326),
            KnownDataset::Trofi => (QuadrantStats::new(209, 235, 1_710, 1_684), 3_838),
            KnownDataset::Lcc => (QuadrantStats::new(615, 144, 3_187, 3_596), 7_542),
        };
        ReferenceStats { stats, header_count }
    }
}

/// Published counts for a known dataset.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceStats {
    pub stats: QuadrantStats,
    /// Sentence count the dataset advertises; usually equals
    /// `stats.total`, but not for HYPO-L (3,326 vs 3,226).
    pub header_count: usize,
}

/// Outcome of checking observed stats against the published counts.
#[derive(Debug, Clone, Serialize)]
pub struct ReferenceCheck {
    pub dataset: String,
    pub matches: bool,
    pub warnings: Vec<String>,
}

/// Compare observed quadrant counts with the published reference. A header
/// total that disagrees with its own quadrant sum (HYPO-L) is reported as a
/// warning, never an error.
pub fn check_reference(observed: &QuadrantStats, dataset: KnownDataset) -> ReferenceCheck {
    let reference = dataset.reference();
    let mut warnings = Vec::new();
    if reference.header_count != reference.stats.total {
        warnings.push(format!(
            "{} advertises {} sentences but its quadrant counts sum to {}",
            dataset.name(),
            reference.header_count,
            reference.stats.total
        ));
    }
    ReferenceCheck {
        dataset: dataset.name().to_string(),
        matches: *observed == reference.stats,
        warnings,
    }
}
