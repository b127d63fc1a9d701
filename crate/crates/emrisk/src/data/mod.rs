//! EMR record schema, line-delimited JSON ingestion with validation,
//! ICD-10 truncation, vocabulary construction, label derivation, and
//! stratified k-fold splitting. The synthetic cohort generator lives in
//! [`synth`].

pub mod synth;

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::Vocabulary;
use crate::rng;

pub use synth::{gen_synthetic, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("line {line}: malformed record: {detail}")]
    MalformedLine { line: usize, detail: String },

    #[error("line {line}: record {patient_id:?} has fewer than 2 visits; cohort inclusion requires at least 2 hospital visits")]
    TooFewVisits { line: usize, patient_id: String },

    #[error("line {line}: visit times decrease within record {patient_id:?}")]
    DecreasingTimes { line: usize, patient_id: String },

    #[error("line {line}: duplicate patient_id {patient_id:?}")]
    DuplicatePatient { line: usize, patient_id: String },

    #[error("line {line}: visit {visit} of record {patient_id:?} lists no diseases and no treatments")]
    EmptyVisit { line: usize, patient_id: String, visit: usize },

    #[error("line {line}: record {patient_id:?} contains a code that is empty after normalization")]
    EmptyCode { line: usize, patient_id: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot split {size} records into {k} folds (need 2 <= k <= record count)")]
    InvalidFolds { k: usize, size: usize },
}

mod label_serde {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<bool>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(true) => s.serialize_u8(1),
            Some(false) => s.serialize_u8(0),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<bool>, D::Error> {
        match Option::<u8>::deserialize(d)? {
            None => Ok(None),
            Some(0) => Ok(Some(false)),
            Some(1) => Ok(Some(true)),
            Some(other) => Err(D::Error::custom(format!(
                "label must be 0, 1, or null, got {other}"
            ))),
        }
    }
}

/// One hospital visit: what was diagnosed, what was done, and whether an
/// unplanned readmission followed (the optional supervision target).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Visit {
    /// Days since an arbitrary per-cohort epoch.
    pub time: i64,
    pub diseases: Vec<String>,
    pub treatments: Vec<String>,
    /// True when this admission itself was unplanned.
    pub unplanned: bool,
    /// Whether an unplanned admission follows this discharge; null when the
    /// outcome is unobserved (e.g. censored final visits).
    #[serde(default, with = "label_serde")]
    pub label: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

/// Where a cohort came from; carried into artifact metadata so results can
/// be traced back to their inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    File { path: String },
    Synthetic { config: SynthConfig },
    Memory,
}

/// A validated set of patient records plus the vocabulary covering every
/// code they mention.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub records: Vec<PatientRecord>,
    pub vocabulary: Vocabulary,
    pub provenance: Provenance,
}

impl Cohort {
    /// Assemble a cohort from in-memory records, building the vocabulary.
    pub fn from_records(records: Vec<PatientRecord>, provenance: Provenance) -> Self {
        let vocabulary = build_vocab(&records);
        Self { records, vocabulary, provenance }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// (positive final labels, labeled finals) — the stratification signal.
    pub fn final_label_stats(&self) -> (usize, usize) {
        let mut positives = 0;
        let mut labeled = 0;
        for r in &self.records {
            if let Some(y) = r.visits.last().and_then(|v| v.label) {
                labeled += 1;
                if y {
                    positives += 1;
                }
            }
        }
        (positives, labeled)
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Reject unknown JSON keys (default). When false, unknown keys are
    /// dropped and reported as warnings instead.
    pub strict: bool,
    /// Pass disease codes through [`truncate_icd10`].
    pub truncate_icd10: bool,
    /// Recompute labels from `unplanned` flags: y_t = 1 iff a later visit
    /// within this many days is unplanned. Final visits become unlabeled
    /// (their follow-up window is unobserved).
    pub derive_labels: Option<i64>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { strict: true, truncate_icd10: false, derive_labels: None }
    }
}

#[derive(Debug)]
pub struct ParseReport {
    pub cohort: Cohort,
    /// Lenient-mode notes (ignored keys), in input order.
    pub warnings: Vec<String>,
}

/// Normalize an ICD-10 code to its two-level prefix: uppercase, drop
/// everything from the first '.', keep at most three characters (chapter
/// letter plus two-digit category). Idempotent.
pub fn truncate_icd10(code: &str) -> Result<String, String> {
    let trimmed = code.trim();
    let stem = trimmed.split('.').next().unwrap_or("");
    let out: String = stem.to_uppercase().chars().take(3).collect();
    if out.is_empty() {
        return Err(format!("code {code:?} is empty after truncation"));
    }
    Ok(out)
}

/// Collect every disease and treatment code across the records into a
/// sorted, deduplicated vocabulary. Record order never affects the result.
pub fn build_vocab(records: &[PatientRecord]) -> Vocabulary {
    let mut diseases = Vec::new();
    let mut treatments = Vec::new();
    for r in records {
        for v in &r.visits {
            diseases.extend(v.diseases.iter().cloned());
            treatments.extend(v.treatments.iter().cloned());
        }
    }
    Vocabulary::new(diseases, treatments)
}

/// Parse a line-delimited JSON cohort (one patient record per line),
/// validating structure and ordering. Blank lines are skipped.
pub fn parse_cohort<R: BufRead>(reader: R, options: &ParseOptions) -> Result<ParseReport, DataError> {
    let mut records: Vec<PatientRecord> = Vec::new();
    let mut warnings = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let mut record = parse_line(&text, line_no, options, &mut warnings)?;

        if options.truncate_icd10 {
            for visit in &mut record.visits {
                for code in &mut visit.diseases {
                    *code = truncate_icd10(code).map_err(|_| DataError::EmptyCode {
                        line: line_no,
                        patient_id: record.patient_id.clone(),
                    })?;
                }
            }
        }
        validate_record(&record, line_no)?;
        if !seen_ids.insert(record.patient_id.clone()) {
            return Err(DataError::DuplicatePatient {
                line: line_no,
                patient_id: record.patient_id,
            });
        }
        if let Some(window) = options.derive_labels {
            derive_labels(&mut record, window);
        }
        records.push(record);
    }

    Ok(ParseReport {
        cohort: Cohort::from_records(records, Provenance::Memory),
        warnings,
    })
}

/// [`parse_cohort`] over a file path, recording the path as provenance.
pub fn load_cohort(path: &Path, options: &ParseOptions) -> Result<ParseReport, DataError> {
    let file = std::fs::File::open(path)?;
    let mut report = parse_cohort(std::io::BufReader::new(file), options)?;
    report.cohort.provenance = Provenance::File { path: path.display().to_string() };
    Ok(report)
}

fn parse_line(
    text: &str,
    line_no: usize,
    options: &ParseOptions,
    warnings: &mut Vec<String>,
) -> Result<PatientRecord, DataError> {
    let malformed = |detail: String| DataError::MalformedLine { line: line_no, detail };
    if options.strict {
        return serde_json::from_str(text).map_err(|e| malformed(e.to_string()));
    }
    // Lenient: drop unknown keys with a warning, then parse the cleaned
    // value with the same strict schema.
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| malformed("expected a JSON object".into()))?;
    let mut drop_unknown = |obj: &mut serde_json::Map<String, serde_json::Value>,
                            allowed: &[&str],
                            context: &str| {
        let unknown: Vec<String> = obj
            .keys()
            .filter(|k| !allowed.contains(&k.as_str()))
            .cloned()
            .collect();
        for key in unknown {
            obj.remove(&key);
            warnings.push(format!("line {line_no}: ignoring unknown key {key:?} in {context}"));
        }
    };
    drop_unknown(obj, &["patient_id", "visits"], "record");
    if let Some(visits) = obj.get_mut("visits").and_then(|v| v.as_array_mut()) {
        for visit in visits {
            if let Some(vo) = visit.as_object_mut() {
                drop_unknown(vo, &["time", "diseases", "treatments", "unplanned", "label"], "visit");
            }
        }
    }
    serde_json::from_value(value).map_err(|e| malformed(e.to_string()))
}

fn validate_record(record: &PatientRecord, line: usize) -> Result<(), DataError> {
    let pid = || record.patient_id.clone();
    if record.visits.len() < 2 {
        return Err(DataError::TooFewVisits { line, patient_id: pid() });
    }
    for pair in record.visits.windows(2) {
        if pair[1].time < pair[0].time {
            return Err(DataError::DecreasingTimes { line, patient_id: pid() });
        }
    }
    for (i, visit) in record.visits.iter().enumerate() {
        if visit.diseases.is_empty() && visit.treatments.is_empty() {
            return Err(DataError::EmptyVisit { line, patient_id: pid(), visit: i });
        }
        if visit.diseases.iter().chain(&visit.treatments).any(|c| c.trim().is_empty()) {
            return Err(DataError::EmptyCode { line, patient_id: pid() });
        }
    }
    Ok(())
}

/// Recompute labels from the `unplanned` flags of later visits: visit t is
/// positive iff some visit after it, within `window_days`, is unplanned.
/// The final visit has no observed follow-up and becomes unlabeled.
fn derive_labels(record: &mut PatientRecord, window_days: i64) {
    let times: Vec<i64> = record.visits.iter().map(|v| v.time).collect();
    let unplanned: Vec<bool> = record.visits.iter().map(|v| v.unplanned).collect();
    let n = record.visits.len();
    for (t, visit) in record.visits.iter_mut().enumerate() {
        if t + 1 == n {
            visit.label = None;
        } else {
            visit.label = Some(
                (t + 1..n).any(|j| unplanned[j] && times[j] - times[t] <= window_days),
            );
        }
    }
}

/// Write a cohort as line-delimited JSON, one record per line.
pub fn serialize_cohort<W: Write>(cohort: &Cohort, mut writer: W) -> std::io::Result<()> {
    for record in &cohort.records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Split record indices into `k` disjoint folds, stratified by final-visit
/// label class so every fold mirrors the cohort's outcome rate. Patients
/// are assigned whole; fold sizes differ by at most one. Deterministic in
/// (cohort, k, seed), and insensitive to record order (records are keyed by
/// patient_id before shuffling).
pub fn kfold_split(cohort: &Cohort, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    use rand::seq::SliceRandom;
    if k < 2 || k > cohort.records.len() {
        return Err(DataError::InvalidFolds { k, size: cohort.records.len() });
    }
    // Classes: final label positive / negative / unlabeled.
    let mut classes: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, r) in cohort.records.iter().enumerate() {
        let class = match r.visits.last().and_then(|v| v.label) {
            Some(true) => 0,
            Some(false) => 1,
            None => 2,
        };
        classes[class].push(i);
    }
    let mut r = rng::derive_rng(seed, rng::purpose::FOLD_SPLIT, 0);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    // One cursor across all classes keeps both each class and the overall
    // fold sizes balanced to within one.
    let mut cursor = 0usize;
    for class in &mut classes {
        class.sort_by(|&a, &b| cohort.records[a].patient_id.cmp(&cohort.records[b].patient_id));
        class.shuffle(&mut r);
        for &idx in class.iter() {
            folds[cursor % k].push(idx);
            cursor += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}
