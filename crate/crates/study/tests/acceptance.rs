//! Acceptance suite. Every test prints one `ACCEPTANCE <name>: PASS|FAIL`
//! line with the measured values, then asserts the verdict.

mod common;

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use panscreen_core::cascade::{
    objective, Classifier, ComponentClass, OracleConfig, Pipeline, PipelineConfig, PreparedCase, TrainConfig, FEATURE_DIM,
};
use panscreen_core::decision::{patient_detection, DecisionConfig};
use panscreen_core::phantom::{plan_cohort, realize_case, CaseLabel, CohortConfig, PhantomConfig};
use panscreen_core::rng;
use panscreen_core::stats::{ppv_projection, roc_auc, wilson_ci, ScreeningScenario};
use panscreen_core::volume::{hd95, AnatomyLabel, BinaryMask, ProbabilityMap, Segment, VolumeGeometry};
use panscreen_study::lead_time_summary;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

fn verdict(name: &str, ok: bool, detail: impl AsRef<str>) {
    println!("ACCEPTANCE {name}: {} ({})", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
    assert!(ok, "{name}: {}", detail.as_ref());
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed < Duration::from_secs(secs)
}

// ---------------------------------------------------------------------------

#[test]
fn ppv_screening_yield_exactness() {
    let t = Instant::now();
    // (sensitivity, specificity, prevalence, TP, flagged, PPV %)
    let expected = [
        (0.944, 0.966, 0.036, 3398, 6676, 50.9),
        (0.985, 0.995, 0.044, 4334, 4812, 90.0),
        (0.944, 0.966, 0.00014, 13, 3413, 0.4),
        (0.985, 0.995, 0.0003, 30, 530, 5.6),
    ];
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for (s, c, p, tp, flagged, ppv) in expected {
        let y = ppv_projection(&ScreeningScenario { sensitivity: s, specificity: c, prevalence: p, population: 100_000 }).unwrap();
        let got = (y.display_true_positives(), y.display_flagged(), y.display_ppv_percent().unwrap());
        for (what, ok, shown) in [
            ("TP", got.0 == tp, format!("{} vs {tp}", got.0)),
            ("flagged", got.1 == flagged, format!("{} vs {flagged}", got.1)),
            ("PPV", got.2 == ppv, format!("{:.1}% vs {ppv:.1}%", got.2)),
        ] {
            checked += 1;
            if !ok {
                mismatches.push(format!("p={p} {what} {shown}"));
            }
        }
    }
    let elapsed = t.elapsed();
    let ok = mismatches.is_empty() && within(elapsed, 1);
    verdict(
        "ppv_screening_yield_exactness",
        ok,
        format!("{}/{checked} displayed values match, mismatches {mismatches:?}, {elapsed:?}", checked - mismatches.len()),
    );
}

// ---------------------------------------------------------------------------

/// Wilson bounds written as the roots of the score-test quadratic.
fn wilson_oracle(k: u64, n: u64, z: f64) -> (f64, f64) {
    let (k, n) = (k as f64, n as f64);
    let z2 = z * z;
    let root = z * (z2 + 4.0 * k * (n - k) / n).sqrt();
    let denom = 2.0 * (n + z2);
    (((2.0 * k + z2 - root) / denom).max(0.0), ((2.0 * k + z2 + root) / denom).min(1.0))
}

#[test]
fn wilson_ci_oracle_equivalence() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut count = 0;
    for n in 1..=200u64 {
        for k in 0..=n {
            let (lo, hi) = wilson_ci(k, n, 1.96).unwrap();
            let (olo, ohi) = wilson_oracle(k, n, 1.96);
            worst = worst.max((lo - olo).abs()).max((hi - ohi).abs());
            count += 1;
        }
    }
    let elapsed = t.elapsed();
    verdict(
        "wilson_ci_oracle_equivalence",
        worst <= 1e-9 && within(elapsed, 5),
        format!("{count} (k, n) pairs, max deviation {worst:.3e}, {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn auc_pair_counting_equivalence() {
    let t = Instant::now();
    let mut r = rng::stream(2024, 1);
    let mut mismatches = 0;
    let mut with_ties = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..=50);
        let levels = r.random_range(2..=20);
        let mut labels: Vec<bool> = (0..n).map(|_| r.random::<bool>()).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
        let mut twice = 0u64;
        let (mut pos, mut neg) = (0u64, 0u64);
        for i in 0..n {
            if labels[i] {
                pos += 1;
            } else {
                neg += 1;
            }
        }
        let mut tied = false;
        for i in (0..n).filter(|&i| labels[i]) {
            for j in (0..n).filter(|&j| !labels[j]) {
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                    tied = true;
                }
            }
        }
        with_ties += tied as usize;
        let oracle = twice as f64 / (2 * pos * neg) as f64;
        if roc_auc(&scores, &labels).unwrap().auc != oracle {
            mismatches += 1;
        }
    }
    let elapsed = t.elapsed();
    verdict(
        "auc_pair_counting_equivalence",
        mismatches == 0 && with_ties > 0 && within(elapsed, 10),
        format!("1000 score sets ({with_ties} with tied pairs), {mismatches} mismatches, {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------

const D: usize = 16;

#[derive(Default)]
struct Branches {
    no_candidate: usize,
    outside_largest: usize,
    size_tie: usize,
    sub_threshold: usize,
    detected: usize,
}

/// Literal reading of the rule: the largest region of `p >= 0.5` counted as
/// inside the pancreas (half its voxels within two voxels of the gland) is
/// detected when its maximum probability is greater than 0.5.
fn brute_force_detection(p: &[f32], pancreas: &[bool], branches: &mut Branches) -> (bool, f64) {
    let idx = |x: usize, y: usize, z: usize| x + D * (y + D * z);
    let near_gland = |x: usize, y: usize, z: usize| {
        for (i, &g) in pancreas.iter().enumerate() {
            if g {
                let (gx, gy, gz) = (i % D, (i / D) % D, i / (D * D));
                let d2 = (gx as i64 - x as i64).pow(2) + (gy as i64 - y as i64).pow(2) + (gz as i64 - z as i64).pow(2);
                if d2 <= 4 {
                    return true;
                }
            }
        }
        false
    };
    let mut seen = vec![false; D * D * D];
    // (size, max, inside voxels, min index)
    let mut regions: Vec<(usize, f64, usize, usize)> = Vec::new();
    for start in 0..D * D * D {
        if seen[start] || (p[start] as f64) < 0.5 {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let (mut size, mut max, mut inside, mut min_index) = (0, 0.0f64, 0, start);
        while let Some(v) = queue.pop_front() {
            let (x, y, z) = (v % D, (v / D) % D, v / (D * D));
            size += 1;
            max = max.max(p[v] as f64);
            inside += near_gland(x, y, z) as usize;
            min_index = min_index.min(v);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if (0..D as i64).contains(&nx) && (0..D as i64).contains(&ny) && (0..D as i64).contains(&nz) {
                            let j = idx(nx as usize, ny as usize, nz as usize);
                            if !seen[j] && (p[j] as f64) >= 0.5 {
                                seen[j] = true;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }
        regions.push((size, max, inside, min_index));
    }
    if regions.is_empty() {
        branches.no_candidate += 1;
        return (false, 0.0);
    }
    let largest_any = regions.iter().map(|r| r.0).max().unwrap();
    let inside: Vec<_> = regions.iter().filter(|r| 2 * r.2 >= r.0).collect();
    if regions.iter().any(|r| r.0 == largest_any && 2 * r.2 < r.0) {
        branches.outside_largest += 1;
    }
    let Some(&&best) = inside.iter().max_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(b.3.cmp(&a.3))) else {
        branches.no_candidate += 1;
        return (false, 0.0);
    };
    if inside.iter().filter(|r| r.0 == best.0).count() > 1 {
        branches.size_tie += 1;
    }
    let detected = best.1 > 0.5;
    if !detected {
        branches.sub_threshold += 1;
    } else {
        branches.detected += 1;
    }
    (detected, best.1)
}

fn fill_box(p: &mut [f32], lo: [usize; 3], hi: [usize; 3], value: impl Fn(usize) -> f32) {
    for z in lo[2]..hi[2].min(D) {
        for y in lo[1]..hi[1].min(D) {
            for x in lo[0]..hi[0].min(D) {
                let i = x + D * (y + D * z);
                p[i] = value(i);
            }
        }
    }
}

fn detection_map(kind: usize, r: &mut rng::Rng) -> (Vec<f32>, Vec<bool>) {
    let mut p: Vec<f32> = (0..D * D * D).map(|_| r.random_range(0.0..0.3f32)).collect();
    let lo = r.random_range(6..9);
    let gland = [lo, lo, lo];
    let pancreas: Vec<bool> = (0..D * D * D)
        .map(|i| {
            let c = [i % D, (i / D) % D, i / (D * D)];
            (0..3).all(|a| c[a] >= gland[a] && c[a] < gland[a] + 6)
        })
        .collect();
    let levels = [0.5f32, 0.55, 0.7, 0.9, 1.0];
    let pick = |r: &mut rng::Rng| levels[r.random_range(0..levels.len())];
    match kind {
        // Nothing reaches the candidate threshold.
        0 => {
            if r.random::<bool>() {
                p.iter_mut().for_each(|v| *v = 0.0);
            } else {
                let k = r.random_range(0..p.len());
                p[k] = 0.499;
            }
        }
        // Large region in the far corner, smaller one in the gland.
        1 => {
            let s = r.random_range(3..5);
            let v = pick(r);
            fill_box(&mut p, [0, 0, 0], [s, s, s], |_| v);
            let c = gland[0] + 2;
            let w = pick(r) - if r.random::<bool>() { 0.1 } else { 0.0 };
            fill_box(&mut p, [c, c, c], [c + 2, c + 2, c + 1], |_| w);
        }
        // Two equal-size inside regions, separated by a gap.
        2 => {
            let (a, b) = (pick(r), if r.random::<bool>() { pick(r) } else { 0.9 });
            let b = if r.random_range(0..3) == 0 { a } else { b };
            let z = gland[2] + 2;
            fill_box(&mut p, [gland[0], gland[1], z], [gland[0] + 2, gland[1] + 2, z + 2], |_| a);
            fill_box(&mut p, [gland[0] + 4, gland[1] + 3, z], [gland[0] + 6, gland[1] + 5, z + 2], |_| b);
        }
        // Winner sits exactly at 0.5; a smaller region is hotter.
        3 => {
            let c = gland[0] + 1;
            fill_box(&mut p, [c, c, c], [c + 3, c + 3, c + 2], |_| 0.5);
            let e = gland[0] + 5;
            fill_box(&mut p, [e, e, e], [e + 1, e + 1, e + 1], |_| 0.95);
        }
        // Random regions anywhere, some straddling the gland border.
        _ => {
            for _ in 0..r.random_range(1..6) {
                let lo = [r.random_range(0..D - 2), r.random_range(0..D - 2), r.random_range(0..D - 2)];
                let size = [r.random_range(1..5), r.random_range(1..5), r.random_range(1..4)];
                let hi = [lo[0] + size[0], lo[1] + size[1], lo[2] + size[2]];
                let base = r.random_range(0.45..0.8f32);
                let top = r.random_range(0.45..1.0f32);
                let peak = lo[0] + D * (lo[1] + D * lo[2]);
                fill_box(&mut p, lo, hi, |i| if i == peak { top } else { base });
            }
        }
    }
    (p, pancreas)
}

#[test]
fn detection_rule_fidelity() {
    let t = Instant::now();
    let g = VolumeGeometry::cube(D);
    let mut r = rng::stream(16, 3);
    let mut branches = Branches::default();
    let mut agree = 0;
    let mut disagreements = Vec::new();
    for k in 0..200 {
        let (p, gland) = detection_map(k % 5, &mut r);
        let (oracle_detected, oracle_score) = brute_force_detection(&p, &gland, &mut branches);
        let prob = ProbabilityMap::new(g, p).unwrap();
        let pancreas = BinaryMask::new(g, gland).unwrap();
        let res = patient_detection(&prob, &pancreas, &DecisionConfig::default()).unwrap();
        if res.detected == oracle_detected && res.patient_score == oracle_score {
            agree += 1;
        } else {
            disagreements.push(k);
        }
    }
    let elapsed = t.elapsed();
    let covered = branches.no_candidate > 0
        && branches.outside_largest > 0
        && branches.size_tie > 0
        && branches.sub_threshold > 0
        && branches.detected > 0;
    verdict(
        "detection_rule_fidelity",
        agree == 200 && covered && within(elapsed, 5),
        format!(
            "{agree}/200 agree (disagreeing maps {disagreements:?}); branches: no candidate {}, outside largest {}, size ties {}, \
             sub-threshold {}, detected {}; {elapsed:?}",
            branches.no_candidate, branches.outside_largest, branches.size_tie, branches.sub_threshold, branches.detected
        ),
    );
}

// ---------------------------------------------------------------------------

/// Wilson interval around a proportion that need not be k/n for integer k.
fn wilson_at(p: f64, n: f64, z: f64) -> (f64, f64) {
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    (center - half, center + half)
}

#[test]
fn end_to_end_binomial_consistency() {
    const REPS: usize = 30;
    const MISS: f64 = 0.10;
    const BLOB: f64 = 0.05;
    let t = Instant::now();
    let seed = 4242;
    let cohort = CohortConfig { phantom: PhantomConfig::default(), n_pdac: 400, n_nonpdac: 0, n_normal: 400, ..CohortConfig::default() };
    let plans = plan_cohort(&cohort, seed).unwrap();
    let config = PipelineConfig {
        oracle: OracleConfig { miss_probability: MISS, blob_rate: BLOB, jitter_voxels: 0, ..OracleConfig::default() },
        compute_hd95: false,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(config, Classifier::zeros(FEATURE_DIM)).unwrap();

    // Each phantom is realized once and reused for every replication.
    let calls: Vec<(CaseLabel, Vec<bool>)> = plans
        .par_iter()
        .enumerate()
        .map(|(k, plan)| {
            let case = realize_case(plan, &cohort.phantom).unwrap();
            let prepared = PreparedCase::new(&case, &pipeline.config, rng::derive(seed, k as u64)).unwrap();
            let flags = (0..REPS)
                .map(|rep| pipeline.run_prepared(&prepared, rng::derive2(seed, k as u64, rep as u64)).unwrap().result.patient_detected)
                .collect();
            (case.covariates.label, flags)
        })
        .collect();

    let n_pdac = calls.iter().filter(|c| c.0 == CaseLabel::Pdac).count() as f64;
    let n_normal = calls.iter().filter(|c| c.0 == CaseLabel::Normal).count() as f64;
    let sens_ci = wilson_at(1.0 - MISS, n_pdac, 1.96);
    let spec_ci = wilson_at((-BLOB).exp(), n_normal, 1.96);
    let (mut sens_in, mut spec_in, mut both_in) = (0, 0, 0);
    let mut lines = Vec::new();
    for rep in 0..REPS {
        let tp = calls.iter().filter(|c| c.0 == CaseLabel::Pdac && c.1[rep]).count() as f64;
        let tn = calls.iter().filter(|c| c.0 == CaseLabel::Normal && !c.1[rep]).count() as f64;
        let (sens, spec) = (tp / n_pdac, tn / n_normal);
        let a = (sens_ci.0..=sens_ci.1).contains(&sens);
        let b = (spec_ci.0..=spec_ci.1).contains(&spec);
        sens_in += a as usize;
        spec_in += b as usize;
        both_in += (a && b) as usize;
        lines.push(format!("{sens:.4}/{spec:.4}"));
    }
    let elapsed = t.elapsed();
    let need = (0.93 * REPS as f64).ceil() as usize;
    println!("replications (sensitivity/specificity): {}", lines.join(" "));
    verdict(
        "end_to_end_binomial_consistency",
        sens_in >= need && spec_in >= need && within(elapsed, 600),
        format!(
            "sensitivity in [{:.4}, {:.4}] for {sens_in}/{REPS}, specificity in [{:.4}, {:.4}] for {spec_in}/{REPS}, \
             both {both_in}/{REPS}, need {need}; {elapsed:?}",
            sens_ci.0, sens_ci.1, spec_ci.0, spec_ci.1
        ),
    );
}

// ---------------------------------------------------------------------------

fn brute_force_vote(voxels: &[usize], anatomy: &[AnatomyLabel]) -> Option<Segment> {
    let (mut head, mut body, mut tail) = (0, 0, 0);
    for &v in voxels {
        match anatomy[v] {
            AnatomyLabel::PancreasHead => head += 1,
            AnatomyLabel::PancreasBody => body += 1,
            AnatomyLabel::PancreasTail => tail += 1,
            _ => {}
        }
    }
    let mut best = None;
    let mut best_votes = 0;
    for (seg, votes) in [(Segment::Head, head), (Segment::Body, body), (Segment::Tail, tail)] {
        if votes > best_votes {
            best = Some(seg);
            best_votes = votes;
        }
    }
    best
}

#[test]
fn localization_regimes() {
    let t = Instant::now();
    let cohort = CohortConfig { phantom: PhantomConfig::small(), n_pdac: 40, n_nonpdac: 0, n_normal: 10, ..CohortConfig::default() };
    let cases: Vec<_> = plan_cohort(&cohort, 606).unwrap().iter().map(|p| realize_case(p, &cohort.phantom).unwrap()).collect();

    let run = |jitter: u32| {
        let config = PipelineConfig { oracle: OracleConfig { jitter_voxels: jitter, ..OracleConfig::perfect() }, ..PipelineConfig::default() };
        let pipeline = Pipeline::new(config, Classifier::zeros(FEATURE_DIM)).unwrap();
        let (mut overlap, mut lesions, mut segment, mut reported) = (0, 0, 0, 0);
        let (mut votes, mut vote_mismatch) = (0, 0);
        for (k, case) in cases.iter().enumerate() {
            let out = pipeline.run(case, k as u64).unwrap();
            for l in &out.result.lesions {
                lesions += 1;
                overlap += l.overlap as usize;
            }
            if let Some(m) = out.result.segment_match {
                reported += 1;
                segment += m as usize;
            }
            let det = out.detection.as_ref().unwrap();
            for (cand, comp) in det.candidates.iter().zip(&out.result.components) {
                votes += 1;
                if brute_force_vote(cand.component.voxels(), case.anatomy.labels()) != comp.segment {
                    vote_mismatch += 1;
                }
            }
            let expected_match = case.covariates.segment.map(|s| {
                out.result.patient_detected
                    && det.winning().is_some_and(|w| brute_force_vote(w.component.voxels(), case.anatomy.labels()) == Some(s))
            });
            if expected_match != out.result.segment_match {
                vote_mismatch += 1;
            }
        }
        (overlap as f64 / lesions as f64, segment as f64 / reported as f64, votes, vote_mismatch)
    };

    let (o0, s0, v0, m0) = run(0);
    let (o3, s3, v3, m3) = run(3);
    let elapsed = t.elapsed();
    verdict(
        "localization_regimes",
        o0 == 1.0 && s0 == 1.0 && m0 == 0 && m3 == 0 && within(elapsed, 120),
        format!(
            "jitter 0: overlap {o0:.4}, segment {s0:.4}; jitter 3: overlap {o3:.4}, segment {s3:.4}; \
             majority-vote mismatches {m0}/{v0} and {m3}/{v3} components; {elapsed:?}"
        ),
    );
}

// ---------------------------------------------------------------------------

fn hd95_oracle(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let g = *a.geometry();
    let [nx, ny, nz] = g.dims();
    let sp = g.spacing();
    let surface = |m: &BinaryMask| -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if !m.get(g.index(x, y, z)) {
                        continue;
                    }
                    let face = |dx: i64, dy: i64, dz: i64| {
                        let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        px < 0 || py < 0 || pz < 0 || px >= nx as i64 || py >= ny as i64 || pz >= nz as i64
                            || !m.get(g.index(px as usize, py as usize, pz as usize))
                    };
                    if face(1, 0, 0) || face(-1, 0, 0) || face(0, 1, 0) || face(0, -1, 0) || face(0, 0, 1) || face(0, 0, -1) {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        out
    };
    let (sa, sb) = (surface(a), surface(b));
    let dist = |p: &[usize; 3], q: &[usize; 3]| {
        (0..3).map(|k| ((p[k] as f64 - q[k] as f64) * sp[k]).powi(2)).sum::<f64>().sqrt()
    };
    let mut d: Vec<f64> = sa.iter().map(|p| sb.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min)).collect();
    d.extend(sb.iter().map(|q| sa.iter().map(|p| dist(p, q)).fold(f64::INFINITY, f64::min)));
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pos = 0.95 * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(d.len() - 1);
    d[lo] + (pos - lo as f64) * (d[hi] - d[lo])
}

#[test]
fn hd95_all_pairs_equivalence() {
    let t = Instant::now();
    let mut r = rng::stream(95, 7);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    while pairs < 100 {
        let dims = [r.random_range(4..=20), r.random_range(4..=20), r.random_range(4..=20)];
        let spacing = [r.random_range(0.5..2.5), r.random_range(0.5..2.5), r.random_range(0.5..3.0)];
        let g = VolumeGeometry::new(dims, spacing).unwrap();
        let blob = |r: &mut rng::Rng| {
            let fill = r.random_range(0.5..1.0f64);
            let sprinkle = r.random_range(0.0..0.03f64);
            let c = [r.random_range(0..dims[0]), r.random_range(0..dims[1]), r.random_range(0..dims[2])];
            let rad = r.random_range(1.0..8.0f64);
            let bits: Vec<bool> = (0..g.len())
                .map(|i| {
                    let p = g.coords(i);
                    let d2: f64 = (0..3).map(|k| (p[k] as f64 - c[k] as f64).powi(2)).sum();
                    (d2 <= rad * rad && r.random::<f64>() < fill) || r.random::<f64>() < sprinkle
                })
                .collect();
            BinaryMask::new(g, bits).unwrap()
        };
        let a = blob(&mut r);
        let b = blob(&mut r);
        if a.is_empty() || b.is_empty() {
            continue;
        }
        pairs += 1;
        worst = worst.max((hd95(&a, &b).unwrap() - hd95_oracle(&a, &b)).abs());
    }
    let elapsed = t.elapsed();
    verdict(
        "hd95_all_pairs_equivalence",
        worst <= 1e-9 && within(elapsed, 30),
        format!("100 mask pairs up to 20^3, anisotropic spacing, max deviation {worst:.3e} mm, {elapsed:?}"),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn classifier_gradient_check() {
    let t = Instant::now();
    let mut r = rng::stream(77, 8);
    let dim = FEATURE_DIM;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(5..40);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| 2.0 * rng::normal(&mut r)).collect()).collect();
        let ys: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let theta: Vec<f64> = (0..3 * dim + 3).map(|_| rng::normal(&mut r)).collect();
        let l2 = r.random_range(0.0..0.1);
        let (_, grad) = objective(&theta, &xs, &ys, l2);
        let h = 1e-5;
        let numeric: Vec<f64> = (0..theta.len())
            .map(|j| {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[j] += h;
                minus[j] -= h;
                (objective(&plus, &xs, &ys, l2).0 - objective(&minus, &xs, &ys, l2).0) / (2.0 * h)
            })
            .collect();
        let diff: f64 = grad.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|b| b * b).sum::<f64>().sqrt());
        worst = worst.max(diff / scale);
    }

    // Three overlapping clusters; training must never increase the loss.
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for k in 0..300 {
        let class = ComponentClass::ALL[k % 3];
        feats.push((0..dim).map(|j| if j == class.index() { 1.5 } else { 0.0 } + rng::normal(&mut r)).collect::<Vec<f64>>());
        labels.push(class);
    }
    let model = Classifier::train(&feats, &labels, &TrainConfig::default()).unwrap();
    let rises = model.training_loss.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
    let elapsed = t.elapsed();
    verdict(
        "classifier_gradient_check",
        worst <= 1e-5 && rises == 0 && model.training_loss.len() > 1 && within(elapsed, 10),
        format!(
            "max relative gradient error {worst:.3e} over 50 points; loss {:.4} -> {:.4} over {} epochs with {rises} increases; {elapsed:?}",
            model.training_loss[0],
            model.training_loss.last().unwrap(),
            model.training_loss.len() - 1
        ),
    );
}

// ---------------------------------------------------------------------------

const DETERMINISM_CONFIG: &str = r#"
[cohort]
n_pdac = 16
n_nonpdac = 4
n_normal = 12

[cohort.phantom]
dims = [64, 64, 48]
spacing = [3.0, 3.0, 3.0]
duct_radius_mm = 3.0

[pipeline.oracle]
miss_probability = 0.15
blob_rate = 0.5
jitter_voxels = 1

[training]
n_pdac = 4
n_nonpdac = 3
n_normal = 2

[stats]
bootstrap_resamples = 300
"#;

fn panscreen(config: &Path, threads: usize, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_panscreen"))
        .arg("--config")
        .arg(config)
        .args(["--seed", "31", "--threads", &threads.to_string()])
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn pipeline_run(root: &Path, config: &Path, threads: usize) -> BTreeMap<String, Vec<u8>> {
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (cohort, eval, report) = (root.join("cohort"), root.join("eval"), root.join("report"));
    panscreen(config, threads, &["cohort", "gen", "--out", &s(&cohort)]);
    let manifest = s(&cohort.join("manifest.csv"));
    panscreen(config, threads, &["eval", "--manifest", &manifest, "--out", &s(&eval)]);
    panscreen(config, threads, &["report", "--manifest", &manifest, "--eval", &s(&eval), "--out", &s(&report)]);
    tree(root)
}

#[test]
fn determinism_byte_identical_trees() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let a = pipeline_run(&dir.path().join("a"), &config, 3);
    let b = pipeline_run(&dir.path().join("b"), &config, 3);
    let c = pipeline_run(&dir.path().join("c"), &config, 1);
    let differing = |x: &BTreeMap<String, Vec<u8>>, y: &BTreeMap<String, Vec<u8>>| {
        let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter().filter(|k| x.get(*k) != y.get(*k)).cloned().collect::<Vec<_>>()
    };
    let (ab, ac) = (differing(&a, &b), differing(&a, &c));
    let elapsed = t.elapsed();
    let has_reports = a.contains_key("report/metrics.csv") && a.contains_key("eval/results.json");
    verdict(
        "determinism_byte_identical_trees",
        ab.is_empty() && ac.is_empty() && has_reports && within(elapsed, 900),
        format!(
            "{} files per tree; 3 vs 3 workers differ in {ab:?}; 3 vs 1 workers differ in {ac:?}; {elapsed:?}",
            a.len()
        ),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn lead_time_fixture_median() {
    use chrono::NaiveDate;
    use panscreen_core::phantom::{CaseCovariates, Phase, Setting, TStage};
    use panscreen_study::{Manifest, ManifestRow};

    // Detected gaps straddle 347 symmetrically; undetected ones are far away
    // and must not move the median.
    let detected = [120, 200, 290, 347, 347, 410, 700, 1000, 347];
    let undetected = [95, 96, 97, 1090, 1095];
    let mut gaps: Vec<(i64, bool)> = detected.iter().map(|&d| (d, true)).chain(undetected.iter().map(|&d| (d, false))).collect();
    gaps.shuffle(&mut rng::stream(347, 0));
    let scan0 = NaiveDate::from_ymd_opt(2017, 2, 1).unwrap();
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (k, &(gap, hit)) in gaps.iter().enumerate() {
        let id = format!("pre{k:02}");
        let scan = scan0 + chrono::Duration::days(31 * k as i64);
        rows.push(ManifestRow {
            id: id.clone(),
            covariates: CaseCovariates {
                label: CaseLabel::Pdac,
                tumor_diameter_mm: Some(9.0),
                t_stage: Some(TStage::T1),
                site: "site-a".into(),
                scan_date: Some(scan),
                dx_date: Some(scan + chrono::Duration::days(gap)),
                phase: Phase::PortalVenous,
                setting: Setting::Prediagnostic,
                segment: Some(Segment::Body),
            },
            scalar_path: "ct.nii".into(),
            anatomy_path: "anatomy.nii".into(),
            lesion_path: None,
        });
        results.push(common::result(&id, CaseLabel::Pdac, hit));
    }
    let summary = lead_time_summary(&results, &Manifest::new(rows, "."));
    verdict(
        "lead_time_fixture_median",
        summary.median_days == Some(347.0) && summary.cases.len() == detected.len(),
        format!("median {:?} days over {} detected of {} prediagnostic cases", summary.median_days, summary.cases.len(), summary.n_prediagnostic),
    );
}
