//! Cohort manifests: one row of covariates and volume paths per case, as CSV
//! with a JSON mirror.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use panscreen_core::phantom::{CaseCovariates, CaseLabel, Phase, Setting, TStage};
use panscreen_core::volume::Segment;
use serde::{Deserialize, Serialize};

use crate::StudyError;

pub const SCHEMA_VERSION: u32 = 1;
pub const MIN_LEAD_DAYS: i64 = 90;
pub const MAX_LEAD_DAYS: i64 = 1095;

pub const CSV_HEADER: [&str; 13] = [
    "id",
    "label",
    "setting",
    "diameter_mm",
    "t_stage",
    "site",
    "phase",
    "scan_date",
    "dx_date",
    "segment",
    "scalar_path",
    "anatomy_path",
    "lesion_path",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub covariates: CaseCovariates,
    /// Paths relative to the manifest's directory.
    pub scalar_path: String,
    pub anatomy_path: String,
    pub lesion_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub rows: Vec<ManifestRow>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// One validation problem. `line` is the 1-based line in the CSV file, or
/// the 1-based row position for JSON manifests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub line: u64,
    pub id: Option<String>,
    pub message: String,
}

impl fmt::Display for RowIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} ({id}): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

pub(crate) fn parse_label(s: &str) -> Result<CaseLabel, String> {
    match s {
        "pdac" => Ok(CaseLabel::Pdac),
        "non_pdac" => Ok(CaseLabel::NonPdac),
        "normal" => Ok(CaseLabel::Normal),
        _ => Err(format!("unknown label '{s}'")),
    }
}

fn parse_setting(s: &str) -> Result<Setting, String> {
    match s {
        "diagnostic" => Ok(Setting::Diagnostic),
        "prediagnostic" => Ok(Setting::Prediagnostic),
        "normal" => Ok(Setting::Normal),
        _ => Err(format!("unknown setting '{s}'")),
    }
}

fn parse_phase(s: &str) -> Result<Phase, String> {
    match s {
        "arterial" => Ok(Phase::Arterial),
        "portal_venous" => Ok(Phase::PortalVenous),
        _ => Err(format!("unknown phase '{s}'")),
    }
}

fn parse_t_stage(s: &str) -> Result<Option<TStage>, String> {
    match s {
        "" => Ok(None),
        "T1" => Ok(Some(TStage::T1)),
        "T2" => Ok(Some(TStage::T2)),
        "T3" => Ok(Some(TStage::T3)),
        "T4" => Ok(Some(TStage::T4)),
        _ => Err(format!("unknown t_stage '{s}'")),
    }
}

fn parse_date(s: &str, field: &str) -> Result<Option<NaiveDate>, String> {
    if s.is_empty() {
        return Ok(None);
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map(Some).map_err(|e| format!("{field} '{s}': {e}"))
}

fn parse_optional<T: std::str::FromStr>(s: &str, field: &str) -> Result<Option<T>, String>
where
    T::Err: fmt::Display,
{
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|e| format!("{field} '{s}': {e}"))
}

fn opt_str<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

impl ManifestRow {
    fn from_record(rec: &csv::StringRecord, header: &HashMap<String, usize>) -> Result<Self, String> {
        let get = |name: &str| header.get(name).and_then(|&k| rec.get(k)).unwrap_or("").trim();
        let id = get("id").to_string();
        if id.is_empty() {
            return Err("empty id".into());
        }
        let diameter: Option<f64> = parse_optional(get("diameter_mm"), "diameter_mm")?;
        if let Some(d) = diameter {
            if !(d.is_finite() && d > 0.0) {
                return Err(format!("diameter_mm {d} must be positive"));
            }
        }
        let covariates = CaseCovariates {
            label: parse_label(get("label"))?,
            tumor_diameter_mm: diameter,
            t_stage: parse_t_stage(get("t_stage"))?,
            site: get("site").to_string(),
            scan_date: parse_date(get("scan_date"), "scan_date")?,
            dx_date: parse_date(get("dx_date"), "dx_date")?,
            phase: parse_phase(get("phase"))?,
            setting: parse_setting(get("setting"))?,
            segment: parse_optional::<Segment>(get("segment"), "segment")?,
        };
        let lesion = get("lesion_path");
        Ok(Self {
            id,
            covariates,
            scalar_path: get("scalar_path").to_string(),
            anatomy_path: get("anatomy_path").to_string(),
            lesion_path: (!lesion.is_empty()).then(|| lesion.to_string()),
        })
    }

    fn to_record(&self) -> Vec<String> {
        let c = &self.covariates;
        vec![
            self.id.clone(),
            c.label.as_str().to_string(),
            c.setting.as_str().to_string(),
            c.tumor_diameter_mm.map(|d| format!("{d}")).unwrap_or_default(),
            c.t_stage.map(|t| t.as_str().to_string()).unwrap_or_default(),
            c.site.clone(),
            c.phase.as_str().to_string(),
            opt_str(&c.scan_date),
            opt_str(&c.dx_date),
            c.segment.map(|s| s.as_str().to_string()).unwrap_or_default(),
            self.scalar_path.clone(),
            self.anatomy_path.clone(),
            self.lesion_path.clone().unwrap_or_default(),
        ]
    }

    /// Semantic checks that do not touch the file system.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        let c = &self.covariates;
        if c.site.is_empty() {
            out.push("empty site".to_string());
        }
        if let Err(e) = c.validate() {
            out.push(e);
        }
        if c.setting == Setting::Prediagnostic {
            if let (Some(scan), Some(dx)) = (c.scan_date, c.dx_date) {
                let gap = (dx - scan).num_days();
                if gap < MIN_LEAD_DAYS {
                    out.push(format!("prediagnostic gap of {gap} days is below the {MIN_LEAD_DAYS}-day floor"));
                } else if gap > MAX_LEAD_DAYS {
                    out.push(format!("prediagnostic gap of {gap} days exceeds the {MAX_LEAD_DAYS}-day ceiling"));
                }
            }
        }
        if self.scalar_path.is_empty() || self.anatomy_path.is_empty() {
            out.push("scalar_path and anatomy_path are required".to_string());
        }
        out
    }
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>, base_dir: impl Into<PathBuf>) -> Self {
        Self { schema_version: SCHEMA_VERSION, rows, base_dir: base_dir.into() }
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    pub fn row(&self, id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.id.clone()).collect()
    }

    /// Load a `.csv` or `.json` manifest and validate every row.
    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let text = std::fs::read_to_string(path).map_err(|e| StudyError::io(path, e))?;
        let (schema_version, rows) = if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text).map_err(|e| StudyError::Format(format!("{}: {e}", path.display())))?;
            let rows = m.rows.into_iter().enumerate().map(|(k, r)| (k as u64 + 1, Ok(r))).collect();
            (m.schema_version, rows)
        } else {
            parse_csv(&text, path)?
        };
        if schema_version != SCHEMA_VERSION {
            return Err(StudyError::Format(format!(
                "{}: unsupported schema version {schema_version} (expected {SCHEMA_VERSION})",
                path.display()
            )));
        }

        let mut issues = Vec::new();
        let mut seen: HashMap<String, u64> = HashMap::new();
        let mut out = Vec::new();
        for (line, parsed) in rows {
            let row = match parsed {
                Ok(r) => r,
                Err(message) => {
                    issues.push(RowIssue { line, id: None, message });
                    continue;
                }
            };
            let id = Some(row.id.clone());
            if let Some(&first) = seen.get(&row.id) {
                issues.push(RowIssue { line, id: id.clone(), message: format!("duplicate id '{}' (lines {first} and {line})", row.id) });
            } else {
                seen.insert(row.id.clone(), line);
            }
            for message in row.check() {
                issues.push(RowIssue { line, id: id.clone(), message });
            }
            for rel in [Some(&row.scalar_path), Some(&row.anatomy_path), row.lesion_path.as_ref()].into_iter().flatten() {
                if !rel.is_empty() && !base_dir.join(rel).is_file() {
                    issues.push(RowIssue { line, id: id.clone(), message: format!("missing file {rel}") });
                }
            }
            out.push(row);
        }
        if !issues.is_empty() {
            return Err(StudyError::Manifest { path: path.to_path_buf(), issues });
        }
        Ok(Self { schema_version, rows: out, base_dir })
    }

    pub fn to_csv(&self) -> Result<String, StudyError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(StudyError::csv)?;
        for r in &self.rows {
            w.write_record(r.to_record()).map_err(StudyError::csv)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| StudyError::Format(e.to_string()))?)
            .map_err(|e| StudyError::Format(e.to_string()))?;
        Ok(format!("# schema_version={}\n{body}", self.schema_version))
    }

    pub fn to_json(&self) -> Result<String, StudyError> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| StudyError::Format(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Write `manifest.csv` and `manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), StudyError> {
        crate::write_file(&dir.join("manifest.csv"), self.to_csv()?.as_bytes())?;
        crate::write_file(&dir.join("manifest.json"), self.to_json()?.as_bytes())
    }
}

type ParsedRows = Vec<(u64, Result<ManifestRow, String>)>;

fn parse_csv(text: &str, path: &Path) -> Result<(u32, ParsedRows), StudyError> {
    let mut version = SCHEMA_VERSION;
    if let Some(first) = text.lines().next() {
        if let Some(v) = first.trim().strip_prefix("# schema_version=") {
            version = v.trim().parse().map_err(|_| StudyError::Format(format!("{}: bad schema line '{first}'", path.display())))?;
        }
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).flexible(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(StudyError::csv)?.clone();
    let header: HashMap<String, usize> = headers.iter().enumerate().map(|(k, h)| (h.trim().to_string(), k)).collect();
    for required in ["id", "label", "setting", "site", "phase", "scalar_path", "anatomy_path"] {
        if !header.contains_key(required) {
            return Err(StudyError::Format(format!("{}: header lacks column '{required}'", path.display())));
        }
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        match rec {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                rows.push((line, ManifestRow::from_record(&rec, &header)));
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                rows.push((line, Err(e.to_string())));
            }
        }
    }
    Ok((version, rows))
}
