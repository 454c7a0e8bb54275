//! Two-session reader study: response records, validation and per-reader
//! sensitivity / specificity against the AI on the same cases.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use panscreen_core::cascade::CaseResult;
use panscreen_core::phantom::{CaseLabel, Setting};
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::StudyError;

pub const RESPONSE_HEADER: [&str; 7] = ["reader_id", "case_id", "session", "lesion_present", "location", "suspicion", "timestamp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionPresent {
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Head,
    Body,
    Tail,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Suspicion {
    #[serde(rename = "PDAC")]
    Pdac,
    #[serde(rename = "nonPDAC")]
    NonPdac,
    #[serde(rename = "indeterminate")]
    Indeterminate,
    #[serde(rename = "none")]
    None,
}

/// Answers to the three per-case questions, as submitted by a reader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub reader_id: String,
    pub case_id: String,
    pub session: u8,
    pub lesion_present: LesionPresent,
    pub location: Location,
    pub suspicion: Suspicion,
}

/// One logged response. `timestamp` is ISO-8601 UTC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderResponse {
    pub reader_id: String,
    pub case_id: String,
    pub session: u8,
    pub lesion_present: LesionPresent,
    pub location: Location,
    pub suspicion: Suspicion,
    pub timestamp: String,
}

impl Submission {
    pub fn validate(&self) -> Result<(), String> {
        if self.reader_id.trim().is_empty() || self.case_id.trim().is_empty() {
            return Err("reader_id and case_id must be non-empty".into());
        }
        if !matches!(self.session, 1 | 2) {
            return Err(format!("session must be 1 or 2, got {}", self.session));
        }
        let none_loc = self.location == Location::None;
        let none_susp = self.suspicion == Suspicion::None;
        match self.lesion_present {
            LesionPresent::No if !(none_loc && none_susp) => Err("location and suspicion must be none when lesion_present is no".into()),
            LesionPresent::Yes if none_loc || none_susp => Err("location and suspicion are required when lesion_present is yes".into()),
            _ => Ok(()),
        }
    }

    pub fn stamped(self, timestamp: String) -> ReaderResponse {
        ReaderResponse {
            reader_id: self.reader_id,
            case_id: self.case_id,
            session: self.session,
            lesion_present: self.lesion_present,
            location: self.location,
            suspicion: self.suspicion,
            timestamp,
        }
    }
}

impl ReaderResponse {
    pub fn submission(&self) -> Submission {
        Submission {
            reader_id: self.reader_id.clone(),
            case_id: self.case_id.clone(),
            session: self.session,
            lesion_present: self.lesion_present,
            location: self.location,
            suspicion: self.suspicion,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.submission().validate()?;
        chrono::DateTime::parse_from_rfc3339(&self.timestamp).map_err(|e| format!("timestamp '{}': {e}", self.timestamp))?;
        Ok(())
    }

    pub fn key(&self) -> (&str, &str, u8) {
        (&self.reader_id, &self.case_id, self.session)
    }
}

pub fn read_responses<R: Read>(input: R) -> Result<Vec<ReaderResponse>, StudyError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(StudyError::csv)?;
    if headers.iter().ne(RESPONSE_HEADER) {
        return Err(StudyError::Format(format!("response log header must be {}", RESPONSE_HEADER.join(","))));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(k, r)| r.map_err(|e| StudyError::Format(format!("response row {}: {e}", k + 1))))
        .collect()
}

pub fn write_header<W: Write>(out: W) -> Result<(), StudyError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESPONSE_HEADER).map_err(StudyError::csv)?;
    w.flush().map_err(|e| StudyError::Format(e.to_string()))
}

/// One CSV line, without header.
pub fn response_line(r: &ReaderResponse) -> Result<Vec<u8>, StudyError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.serialize(r).map_err(StudyError::csv)?;
    w.into_inner().map_err(|e| StudyError::Format(e.to_string()))
}

pub fn write_responses<W: Write>(mut out: W, responses: &[ReaderResponse]) -> Result<(), StudyError> {
    let mut buf = Vec::new();
    write_header(&mut buf)?;
    for r in responses {
        buf.extend(response_line(r)?);
    }
    out.write_all(&buf).map_err(|e| StudyError::Format(e.to_string()))
}

/// How a response becomes a positive PDAC call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveCall {
    /// lesion_present yes and suspicion PDAC. Indeterminate counts negative.
    #[default]
    PdacOnly,
    /// lesion_present yes, whatever the suspicion.
    AnyLesion,
}

impl PositiveCall {
    pub fn is_positive(self, r: &ReaderResponse) -> bool {
        match self {
            PositiveCall::PdacOnly => r.lesion_present == LesionPresent::Yes && r.suspicion == Suspicion::Pdac,
            PositiveCall::AnyLesion => r.lesion_present == LesionPresent::Yes,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub k: u64,
    pub n: u64,
}

impl Rate {
    pub fn value(&self) -> Option<f64> {
        (self.n > 0).then(|| self.k as f64 / self.n as f64)
    }

    fn add(&mut self, hit: bool) {
        self.k += hit as u64;
        self.n += 1;
    }

    fn merge(&mut self, o: &Rate) {
        self.k += o.k;
        self.n += o.n;
    }
}

/// Detection metrics of one rater (reader session or AI) over PDAC and
/// normal cases.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub sensitivity: Rate,
    pub sensitivity_diagnostic: Rate,
    pub sensitivity_prediagnostic: Rate,
    pub specificity: Rate,
    /// Responses with suspicion indeterminate (kept, counted negative under
    /// the default mapping).
    pub indeterminate: u64,
}

impl SessionMetrics {
    pub fn balanced_accuracy(&self) -> Option<f64> {
        Some((self.sensitivity.value()? + self.specificity.value()?) / 2.0)
    }

    fn record(&mut self, label: CaseLabel, setting: Setting, positive: bool) {
        match label {
            CaseLabel::Pdac => {
                self.sensitivity.add(positive);
                match setting {
                    Setting::Diagnostic => self.sensitivity_diagnostic.add(positive),
                    Setting::Prediagnostic => self.sensitivity_prediagnostic.add(positive),
                    Setting::Normal => {}
                }
            }
            CaseLabel::Normal => self.specificity.add(!positive),
            CaseLabel::NonPdac => {}
        }
    }

    fn merge(&mut self, o: &SessionMetrics) {
        self.sensitivity.merge(&o.sensitivity);
        self.sensitivity_diagnostic.merge(&o.sensitivity_diagnostic);
        self.sensitivity_prediagnostic.merge(&o.sensitivity_prediagnostic);
        self.specificity.merge(&o.specificity);
        self.indeterminate += o.indeterminate;
    }

    pub fn values(&self) -> MetricValues {
        MetricValues {
            sensitivity: self.sensitivity.value(),
            sensitivity_diagnostic: self.sensitivity_diagnostic.value(),
            sensitivity_prediagnostic: self.sensitivity_prediagnostic.value(),
            specificity: self.specificity.value(),
            balanced_accuracy: self.balanced_accuracy(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub sensitivity: Option<f64>,
    pub sensitivity_diagnostic: Option<f64>,
    pub sensitivity_prediagnostic: Option<f64>,
    pub specificity: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

impl MetricValues {
    fn macro_mean(rows: &[MetricValues]) -> Self {
        Self {
            sensitivity: mean(rows.iter().map(|r| r.sensitivity)),
            sensitivity_diagnostic: mean(rows.iter().map(|r| r.sensitivity_diagnostic)),
            sensitivity_prediagnostic: mean(rows.iter().map(|r| r.sensitivity_prediagnostic)),
            specificity: mean(rows.iter().map(|r| r.specificity)),
            balanced_accuracy: mean(rows.iter().map(|r| r.balanced_accuracy)),
        }
    }

    fn minus(&self, o: &MetricValues) -> Self {
        Self {
            sensitivity: diff(self.sensitivity, o.sensitivity),
            sensitivity_diagnostic: diff(self.sensitivity_diagnostic, o.sensitivity_diagnostic),
            sensitivity_prediagnostic: diff(self.sensitivity_prediagnostic, o.sensitivity_prediagnostic),
            specificity: diff(self.specificity, o.specificity),
            balanced_accuracy: diff(self.balanced_accuracy, o.balanced_accuracy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderRow {
    pub reader_id: String,
    pub session: u8,
    pub metrics: SessionMetrics,
    pub values: MetricValues,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Mean of per-reader values.
    Macro,
    /// Pooled counts over readers.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub session: u8,
    pub averaging: Averaging,
    pub values: MetricValues,
}

/// Session 2 minus session 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderDelta {
    pub reader_id: String,
    pub values: MetricValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderReport {
    pub positive_call: PositiveCall,
    pub n_cases: usize,
    pub readers: Vec<ReaderRow>,
    pub aggregates: Vec<AggregateRow>,
    pub deltas: Vec<ReaderDelta>,
    pub ai: ReaderRow,
}

/// Validate responses and compute per-reader metrics. The case list is the
/// manifest; every (reader, session) present must cover all of it. The AI
/// row uses `patient_detected` on the same cases.
pub fn reader_analysis(
    responses: &[ReaderResponse],
    manifest: &Manifest,
    ai_results: &[CaseResult],
    positive_call: PositiveCall,
) -> Result<ReaderReport, StudyError> {
    let cases: BTreeMap<&str, (CaseLabel, Setting)> =
        manifest.rows.iter().map(|r| (r.id.as_str(), (r.covariates.label, r.covariates.setting))).collect();
    let mut errors = Vec::new();
    let mut seen: HashMap<(&str, &str, u8), usize> = HashMap::new();
    let mut covered: BTreeMap<(&str, u8), BTreeSet<&str>> = BTreeMap::new();
    for (k, r) in responses.iter().enumerate() {
        let row = k + 1;
        if let Err(e) = r.validate() {
            errors.push(format!("response {row}: {e}"));
            continue;
        }
        if !cases.contains_key(r.case_id.as_str()) {
            errors.push(format!("response {row}: unknown case '{}'", r.case_id));
            continue;
        }
        if let Some(first) = seen.insert(r.key(), row) {
            errors.push(format!(
                "response {row}: duplicate of response {first} for reader '{}', case '{}', session {}",
                r.reader_id, r.case_id, r.session
            ));
            continue;
        }
        covered.entry((r.reader_id.as_str(), r.session)).or_default().insert(r.case_id.as_str());
    }
    for ((reader, session), got) in &covered {
        for id in cases.keys().filter(|id| !got.contains(*id)) {
            errors.push(format!("missing response: reader '{reader}', case '{id}', session {session}"));
        }
    }
    let ai_by_id: HashMap<&str, &CaseResult> = ai_results.iter().map(|r| (r.case_id.as_str(), r)).collect();
    for id in cases.keys().filter(|id| !ai_by_id.contains_key(*id)) {
        errors.push(format!("missing AI result for case '{id}'"));
    }
    if !errors.is_empty() {
        return Err(StudyError::Responses(errors));
    }

    let mut per: BTreeMap<(&str, u8), SessionMetrics> = BTreeMap::new();
    for r in responses {
        let (label, setting) = cases[r.case_id.as_str()];
        let m = per.entry((r.reader_id.as_str(), r.session)).or_default();
        m.record(label, setting, positive_call.is_positive(r));
        if r.suspicion == Suspicion::Indeterminate && label != CaseLabel::NonPdac {
            m.indeterminate += 1;
        }
    }
    let readers: Vec<ReaderRow> = per
        .iter()
        .map(|(&(id, session), m)| ReaderRow { reader_id: id.to_string(), session, metrics: *m, values: m.values() })
        .collect();

    let mut aggregates = Vec::new();
    for session in [1u8, 2] {
        let rows: Vec<&ReaderRow> = readers.iter().filter(|r| r.session == session).collect();
        if rows.is_empty() {
            continue;
        }
        let values: Vec<MetricValues> = rows.iter().map(|r| r.values).collect();
        aggregates.push(AggregateRow { session, averaging: Averaging::Macro, values: MetricValues::macro_mean(&values) });
        let mut pooled = SessionMetrics::default();
        for r in &rows {
            pooled.merge(&r.metrics);
        }
        aggregates.push(AggregateRow { session, averaging: Averaging::Micro, values: pooled.values() });
    }

    let mut deltas = Vec::new();
    for ((id, session), m) in &per {
        if *session == 2 {
            if let Some(s1) = per.get(&(*id, 1)) {
                deltas.push(ReaderDelta { reader_id: id.to_string(), values: m.values().minus(&s1.values()) });
            }
        }
    }

    let mut ai = SessionMetrics::default();
    for (id, &(label, setting)) in &cases {
        ai.record(label, setting, ai_by_id[id].patient_detected);
    }
    let ai = ReaderRow { reader_id: "AI".into(), session: 0, metrics: ai, values: ai.values() };

    Ok(ReaderReport { positive_call, n_cases: cases.len(), readers, aggregates, deltas, ai })
}
