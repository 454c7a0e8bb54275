mod common;

use common::{ai_results, manifest10, response};
use panscreen_core::phantom::CaseLabel;
use panscreen_study::reader::{read_responses, write_responses, LesionPresent, Location, Suspicion};
use panscreen_study::{reader_analysis, PositiveCall, ReaderResponse, StudyError};
use proptest::prelude::*;

fn errors(e: StudyError) -> Vec<String> {
    match e {
        StudyError::Responses(v) => v,
        other => panic!("expected response errors, got {other}"),
    }
}

/// Readers who call exactly `positive` cases.
fn session(reader: &str, s: u8, positive: &[usize]) -> Vec<ReaderResponse> {
    (0..10).map(|k| response(reader, k, s, positive.contains(&k), Suspicion::Pdac)).collect()
}

#[test]
fn perfect_reader() {
    let m = manifest10();
    // Cases 0..5 are PDAC.
    let rows = session("r1", 1, &[0, 1, 2, 3, 4]);
    let rep = reader_analysis(&rows, &m, &ai_results(&m, &[]), PositiveCall::PdacOnly).unwrap();
    let v = rep.readers[0].values;
    assert_eq!((v.sensitivity, v.specificity, v.balanced_accuracy), (Some(1.0), Some(1.0), Some(1.0)));
}

#[test]
fn hand_counted_table() {
    let m = manifest10();
    // TP: 0, 1, 2. FN: 3, 4. FP: 5. TN: 6, 7, 8, 9.
    let rows = session("r1", 1, &[0, 1, 2, 5]);
    let rep = reader_analysis(&rows, &m, &ai_results(&m, &[0, 1, 2, 3, 4]), PositiveCall::PdacOnly).unwrap();
    let r = &rep.readers[0];
    assert_eq!((r.metrics.sensitivity.k, r.metrics.sensitivity.n), (3, 5));
    assert_eq!((r.metrics.specificity.k, r.metrics.specificity.n), (4, 5));
    assert_eq!(r.values.sensitivity, Some(0.6));
    assert_eq!(r.values.specificity, Some(0.8));
    assert!((r.values.balanced_accuracy.unwrap() - 0.7).abs() < 1e-15);
    // Cases 0..3 are diagnostic, 3 and 4 prediagnostic.
    assert_eq!(r.values.sensitivity_diagnostic, Some(1.0));
    assert_eq!(r.values.sensitivity_prediagnostic, Some(0.0));
    assert_eq!(rep.ai.values.sensitivity, Some(1.0));
    assert_eq!(rep.ai.values.specificity, Some(1.0));
}

#[test]
fn identical_sessions_have_zero_deltas() {
    let m = manifest10();
    let mut rows = session("r1", 1, &[0, 2, 6]);
    rows.extend(session("r1", 2, &[0, 2, 6]));
    rows.extend(session("r2", 1, &[1, 3]));
    rows.extend(session("r2", 2, &[1, 3]));
    let rep = reader_analysis(&rows, &m, &ai_results(&m, &[]), PositiveCall::PdacOnly).unwrap();
    assert_eq!(rep.deltas.len(), 2);
    for d in &rep.deltas {
        assert_eq!(d.values.sensitivity, Some(0.0));
        assert_eq!(d.values.specificity, Some(0.0));
        assert_eq!(d.values.balanced_accuracy, Some(0.0));
    }
    assert_eq!(rep.aggregates.len(), 4);
}

#[test]
fn macro_and_micro_differ_when_readers_differ() {
    let m = manifest10();
    let mut rows = session("r1", 1, &[0, 1, 2, 3, 4]);
    rows.extend(session("r2", 1, &[0]));
    let rep = reader_analysis(&rows, &m, &ai_results(&m, &[]), PositiveCall::PdacOnly).unwrap();
    let macro_ = &rep.aggregates[0];
    let micro = &rep.aggregates[1];
    assert_eq!(macro_.values.sensitivity, Some((1.0 + 0.2) / 2.0));
    assert_eq!(micro.values.sensitivity, Some(6.0 / 10.0));
}

#[test]
fn incomplete_coverage_lists_missing_pairs() {
    let m = manifest10();
    let mut rows = session("r1", 1, &[]);
    rows.retain(|r| r.case_id != "c003" && r.case_id != "c007");
    let errs = errors(reader_analysis(&rows, &m, &ai_results(&m, &[]), PositiveCall::PdacOnly).unwrap_err());
    assert_eq!(errs.len(), 2, "{errs:?}");
    assert!(errs[0].contains("reader 'r1', case 'c003', session 1"));
    assert!(errs[1].contains("case 'c007'"));
}

#[test]
fn duplicates_unknown_cases_and_invariants_rejected() {
    let m = manifest10();
    let mut rows = session("r1", 1, &[]);
    rows.push(rows[0].clone());
    let mut bad = rows[1].clone();
    bad.location = Location::Head;
    rows.push(bad);
    let mut unknown = rows[2].clone();
    unknown.case_id = "zzz".into();
    rows.push(unknown);
    let errs = errors(reader_analysis(&rows, &m, &ai_results(&m, &[]), PositiveCall::PdacOnly).unwrap_err());
    assert_eq!(errs.len(), 3, "{errs:?}");
    assert!(errs[0].contains("duplicate of response 1"));
    assert!(errs[1].contains("must be none"));
    assert!(errs[2].contains("unknown case 'zzz'"));
}

#[test]
fn indeterminate_counts_negative_but_is_kept() {
    let m = manifest10();
    let mut rows = session("r1", 1, &[0, 1, 2, 3, 4]);
    rows[4].suspicion = Suspicion::Indeterminate;
    let pdac_only = reader_analysis(&rows, &m, &ai_results(&m, &[]), PositiveCall::PdacOnly).unwrap();
    assert_eq!(pdac_only.readers[0].values.sensitivity, Some(0.8));
    assert_eq!(pdac_only.readers[0].metrics.indeterminate, 1);
    let any = reader_analysis(&rows, &m, &ai_results(&m, &[]), PositiveCall::AnyLesion).unwrap();
    assert_eq!(any.readers[0].values.sensitivity, Some(1.0));
}

#[test]
fn csv_round_trip() {
    let rows = session("r1", 2, &[0, 5]);
    let mut buf = Vec::new();
    write_responses(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("reader_id,case_id,session,lesion_present,location,suspicion,timestamp\n"));
    assert!(text.contains(",yes,head,PDAC,"));
    assert_eq!(read_responses(&buf[..]).unwrap(), rows);
}

fn arb_answer() -> impl Strategy<Value = (LesionPresent, Location, Suspicion)> {
    prop_oneof![
        Just((LesionPresent::No, Location::None, Suspicion::None)),
        (
            prop_oneof![Just(Location::Head), Just(Location::Body), Just(Location::Tail)],
            prop_oneof![Just(Suspicion::Pdac), Just(Suspicion::NonPdac), Just(Suspicion::Indeterminate)]
        )
            .prop_map(|(l, s)| (LesionPresent::Yes, l, s)),
    ]
}

proptest! {
    #[test]
    fn mappings_agree_with_direct_counts(answers in prop::collection::vec(arb_answer(), 10)) {
        let m = manifest10();
        let rows: Vec<ReaderResponse> = answers
            .iter()
            .enumerate()
            .map(|(k, &(lp, loc, s))| {
                let mut r = response("r1", k, 1, false, Suspicion::None);
                r.lesion_present = lp;
                r.location = loc;
                r.suspicion = s;
                r
            })
            .collect();
        let mut sens = Vec::new();
        let mut spec = Vec::new();
        for call in [PositiveCall::PdacOnly, PositiveCall::AnyLesion] {
            let rep = reader_analysis(&rows, &m, &ai_results(&m, &[]), call).unwrap();
            let v = rep.readers[0].values;
            let positive = |r: &ReaderResponse| match call {
                PositiveCall::PdacOnly => r.lesion_present == LesionPresent::Yes && r.suspicion == Suspicion::Pdac,
                PositiveCall::AnyLesion => r.lesion_present == LesionPresent::Yes,
            };
            let tp = rows.iter().zip(&m.rows).filter(|(r, row)| row.covariates.label == CaseLabel::Pdac && positive(r)).count();
            let tn = rows.iter().zip(&m.rows).filter(|(r, row)| row.covariates.label == CaseLabel::Normal && !positive(r)).count();
            prop_assert_eq!(v.sensitivity, Some(tp as f64 / 5.0));
            prop_assert_eq!(v.specificity, Some(tn as f64 / 5.0));
            prop_assert_eq!(v.balanced_accuracy, Some((tp as f64 / 5.0 + tn as f64 / 5.0) / 2.0));
            sens.push(v.sensitivity.unwrap());
            spec.push(v.specificity.unwrap());
        }
        prop_assert!(sens[1] >= sens[0]);
        prop_assert!(spec[1] <= spec[0]);
    }
}
