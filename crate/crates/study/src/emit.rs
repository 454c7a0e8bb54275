//! Report files. Output depends only on the inputs: no timestamps, fixed
//! row order and fixed number formatting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::leadtime::LeadTimeSummary;
use crate::reader::{MetricValues, ReaderReport};
use crate::strata::{Estimate, MetricRow, StratifiedReport, CLASS_ORDER};
use crate::{write_file, write_json, StudyError};

pub const TABLE_A5_HEADER: &str = "site,n,sensitivity,specificity,auc";
pub const TABLE_A6_HEADER: &str = "site,size,n,sensitivity,specificity,auc";

/// Fixed six decimals; undefined values print as `NA`.
pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        Some(x) if x > 0.0 => "inf".into(),
        Some(x) if x < 0.0 => "-inf".into(),
        _ => "NA".into(),
    }
}

fn est_cells(e: &Estimate) -> String {
    format!("{},{},{}", fmt_opt(e.value), fmt_opt(e.ci_lo), fmt_opt(e.ci_hi))
}

fn metrics_csv(r: &StratifiedReport) -> String {
    let o = &r.overall;
    let mut s = String::from("name,value,ci_lo,ci_hi,n\n");
    let named = [
        ("sensitivity", &o.sensitivity),
        ("specificity", &o.specificity),
        ("ppv", &o.ppv),
        ("accuracy", &o.accuracy),
        ("balanced_accuracy", &o.balanced_accuracy),
        ("f1", &o.f1),
        ("auc", &o.auc),
        ("localization_overlap", &o.localization_overlap),
        ("localization_segment", &o.localization_segment),
        ("nonpdac_flagged", &r.nonpdac_flagged),
    ];
    for (name, e) in named {
        let _ = writeln!(s, "{name},{},{}", est_cells(e), e.n);
    }
    let _ = writeln!(s, "hd95_median_mm,{},NA,NA,{}", fmt_opt(o.hd95_median_mm), o.hd95_count);
    s
}

fn strata_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(
        "axis,stratum,n,n_pdac,n_normal,sensitivity,sensitivity_lo,sensitivity_hi,specificity,specificity_lo,specificity_hi,\
         auc,auc_lo,auc_hi,localization,localization_lo,localization_hi\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.axis,
            r.stratum,
            r.n,
            r.n_pdac,
            r.n_normal,
            est_cells(&r.sensitivity),
            est_cells(&r.specificity),
            est_cells(&r.auc),
            est_cells(&r.localization)
        );
    }
    s
}

fn table_a5(r: &StratifiedReport) -> String {
    let mut s = format!("{TABLE_A5_HEADER}\n");
    for row in r.axis("site") {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            row.stratum,
            row.n,
            fmt_opt(row.sensitivity.value),
            fmt_opt(row.specificity.value),
            fmt_opt(row.auc.value)
        );
    }
    s
}

fn table_a6(r: &StratifiedReport) -> String {
    let mut s = format!("{TABLE_A6_HEADER}\n");
    for row in &r.site_size {
        let (site, size) = row.stratum.rsplit_once('/').unwrap_or((&row.stratum, ""));
        let _ = writeln!(
            s,
            "{site},{size},{},{},{},{}",
            row.n,
            fmt_opt(row.sensitivity.value),
            fmt_opt(row.specificity.value),
            fmt_opt(row.auc.value)
        );
    }
    s
}

fn roc_csv(r: &StratifiedReport) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for p in &r.roc {
        let _ = writeln!(s, "{},{},{}", fmt_opt(Some(p.threshold)), fmt_opt(Some(p.fpr)), fmt_opt(Some(p.tpr)));
    }
    s
}

fn stage3_csv(r: &StratifiedReport) -> String {
    let mut s = String::from("truth");
    for c in CLASS_ORDER {
        s.push(',');
        s.push_str(c.as_str());
    }
    s.push('\n');
    for (c, counts) in CLASS_ORDER.iter().zip(&r.stage3.counts) {
        let _ = writeln!(s, "{},{},{},{}", c.as_str(), counts[0], counts[1], counts[2]);
    }
    s
}

fn lead_time_csv(l: &LeadTimeSummary) -> String {
    let mut s = String::from("case_id,lead_time_days\n");
    for c in &l.cases {
        let _ = writeln!(s, "{},{}", c.case_id, c.days);
    }
    s
}

fn values_cells(v: &MetricValues) -> String {
    format!(
        "{},{},{},{},{}",
        fmt_opt(v.sensitivity),
        fmt_opt(v.sensitivity_diagnostic),
        fmt_opt(v.sensitivity_prediagnostic),
        fmt_opt(v.specificity),
        fmt_opt(v.balanced_accuracy)
    )
}

pub fn reader_csv(r: &ReaderReport) -> String {
    let mut s = String::from(
        "row,reader_id,session,sensitivity,sensitivity_diagnostic,sensitivity_prediagnostic,specificity,balanced_accuracy\n",
    );
    for row in &r.readers {
        let _ = writeln!(s, "reader,{},{},{}", row.reader_id, row.session, values_cells(&row.values));
    }
    for a in &r.aggregates {
        let name = serde_json::to_value(a.averaging).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let _ = writeln!(s, "{name},,{},{}", a.session, values_cells(&a.values));
    }
    for d in &r.deltas {
        let _ = writeln!(s, "delta,{},2-1,{}", d.reader_id, values_cells(&d.values));
    }
    let _ = writeln!(s, "ai,AI,,{}", values_cells(&r.ai.values));
    s
}

/// Write every available report into `out_dir` and return the paths.
pub fn emit_reports(
    out_dir: &Path,
    report: &StratifiedReport,
    lead_time: Option<&LeadTimeSummary>,
    readers: Option<&ReaderReport>,
) -> Result<Vec<PathBuf>, StudyError> {
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), StudyError> {
        let p = out_dir.join(name);
        write_file(&p, body.as_bytes())?;
        written.push(p);
        Ok(())
    };
    put("metrics.csv", metrics_csv(report))?;
    put("strata.csv", strata_csv(&report.rows))?;
    put("table_a5_sites.csv", table_a5(report))?;
    put("table_a6_size_by_site.csv", table_a6(report))?;
    put("roc.csv", roc_csv(report))?;
    put("stage3_confusion.csv", stage3_csv(report))?;
    if let Some(l) = lead_time {
        put("lead_time.csv", lead_time_csv(l))?;
    }
    if let Some(r) = readers {
        put("reader_report.csv", reader_csv(r))?;
    }
    let json = [
        ("metrics.json", serde_json::to_value(report)),
        ("lead_time.json", serde_json::to_value(lead_time)),
        ("reader_report.json", serde_json::to_value(readers)),
    ];
    for (name, value) in json {
        let value = value.map_err(|e| StudyError::Format(e.to_string()))?;
        if value.is_null() {
            continue;
        }
        let p = out_dir.join(name);
        write_json(&p, &value)?;
        written.push(p);
    }
    Ok(written)
}
