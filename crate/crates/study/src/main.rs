use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use panscreen_core::cascade::{CaseResult, Classifier, Pipeline};
use panscreen_core::phantom::{generate_phantom, inject_lesion, LesionClass, LesionSpec};
use panscreen_core::rng;
use panscreen_core::volume::{nifti, Segment};
use panscreen_study::cohort::write_case;
use panscreen_study::evaluate::{case_seed, config_for_manifest, train_classifier};
use panscreen_study::reader::read_responses;
use panscreen_study::service::{load_case_images, AppState, ResponseLog, SessionConfig};
use panscreen_study::{
    emit_reports, evaluate_cohort, generate_cohort, lead_time_summary, load_case, read_json, reader_analysis,
    stratified_report, write_json, Manifest, StudyConfig, StudyError,
};

#[derive(Parser)]
#[command(name = "panscreen", version, about = "Synthetic pancreatic screening study harness")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Single phantoms.
    Phantom {
        #[command(subcommand)]
        cmd: PhantomCmd,
    },
    /// Cohorts of phantoms with a manifest.
    Cohort {
        #[command(subcommand)]
        cmd: CohortCmd,
    },
    /// The detection cascade on single cases.
    Cascade {
        #[command(subcommand)]
        cmd: CascadeCmd,
    },
    /// Run the cascade over a manifest and write per-case results.
    Eval(EvalArgs),
    /// Stratified, lead-time and reader reports from evaluation results.
    Report(ReportArgs),
    /// Reader-study analysis.
    Study {
        #[command(subcommand)]
        cmd: StudyCmd,
    },
    /// HTTP service for one reader-study session.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LesionArg {
    None,
    Pdac,
    NonPdac,
}

#[derive(Subcommand)]
enum PhantomCmd {
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "phantom-0001")]
        id: String,
        #[arg(long, value_enum, default_value = "none")]
        lesion: LesionArg,
        #[arg(long, default_value = "head")]
        segment: Segment,
        #[arg(long, default_value_t = 15.0)]
        diameter: f64,
        #[arg(long)]
        duct_dilation: bool,
    },
}

#[derive(Subcommand)]
enum CohortCmd {
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_pdac: Option<usize>,
        #[arg(long)]
        n_nonpdac: Option<usize>,
        #[arg(long)]
        n_normal: Option<usize>,
    },
}

#[derive(Subcommand)]
enum CascadeCmd {
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        case: String,
        #[arg(long)]
        out: PathBuf,
        /// Stage-3 model; an untrained model is used when omitted.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Stage-3 model; trained on a fresh in-memory cohort when omitted.
    #[arg(long)]
    classifier: Option<PathBuf>,
    #[arg(long)]
    miss_rate: Option<f64>,
    #[arg(long)]
    blob_rate: Option<f64>,
    #[arg(long)]
    jitter: Option<u32>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory written by `eval`.
    #[arg(long)]
    eval: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reader response log to include.
    #[arg(long)]
    responses: Option<PathBuf>,
}

#[derive(Subcommand)]
enum StudyCmd {
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        /// `results.json` from `eval`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    session: Option<u8>,
    /// Directory of `<id>_pred.nii` masks (required for session 2).
    #[arg(long)]
    overlays: Option<PathBuf>,
    #[arg(long)]
    addr: Option<String>,
}

fn load_config(common: &Common) -> Result<StudyConfig, StudyError> {
    let mut cfg = match &common.config {
        Some(p) => StudyConfig::load(p)?,
        None => StudyConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn phantom_gen(
    cfg: &StudyConfig,
    out: &Path,
    id: &str,
    lesion: LesionArg,
    segment: Segment,
    diameter: f64,
    duct_dilation: bool,
) -> Result<(), StudyError> {
    let mut case = generate_phantom(rng::derive(cfg.seed, 1), &cfg.cohort.phantom)?;
    case.id = id.to_string();
    case.covariates.site = cfg.cohort.sites.first().cloned().unwrap_or_else(|| "site-a".into());
    let class = match lesion {
        LesionArg::None => None,
        LesionArg::Pdac => Some((LesionClass::Pdac, cfg.cohort.pdac_contrast, cfg.cohort.pdac_irregularity)),
        LesionArg::NonPdac => Some((LesionClass::NonPdac, cfg.cohort.nonpdac_contrast, cfg.cohort.nonpdac_irregularity)),
    };
    if let Some((class, contrast, irregularity)) = class {
        let spec = LesionSpec { segment, diameter_mm: diameter, contrast, irregularity, induces_duct_dilation: duct_dilation, class };
        case = inject_lesion(&case, &spec, rng::derive(cfg.seed, 2))?;
    }
    let row = write_case(&case, out)?;
    Manifest::new(vec![row], out).write(out)?;
    println!("wrote {} to {}", case.id, out.display());
    Ok(())
}

fn cohort_gen(
    cfg: &mut StudyConfig,
    out: &Path,
    counts: [Option<usize>; 3],
) -> Result<(), StudyError> {
    let [p, np, n] = counts;
    cfg.cohort.n_pdac = p.unwrap_or(cfg.cohort.n_pdac);
    cfg.cohort.n_nonpdac = np.unwrap_or(cfg.cohort.n_nonpdac);
    cfg.cohort.n_normal = n.unwrap_or(cfg.cohort.n_normal);
    let m = generate_cohort(&cfg.cohort, cfg.seed, out, cfg.threads)?;
    println!("wrote {} cases to {}", m.rows.len(), out.display());
    Ok(())
}

fn pipeline(cfg: &StudyConfig, manifest: &Manifest, classifier: Option<&Path>, train: bool) -> Result<Pipeline, StudyError> {
    let pcfg = config_for_manifest(&cfg.pipeline, manifest)?;
    let model = match classifier {
        Some(p) => read_json::<Classifier>(p)?,
        None if train => train_classifier(&cfg.cohort, &cfg.training, &pcfg, cfg.seed, cfg.threads)?,
        None => Classifier::zeros(panscreen_core::cascade::FEATURE_DIM),
    };
    Ok(Pipeline::new(pcfg, model)?)
}

fn cascade_run(cfg: &StudyConfig, manifest: &Path, id: &str, out: &Path, classifier: Option<&Path>) -> Result<(), StudyError> {
    let m = Manifest::load(manifest)?;
    let row = m.row(id).ok_or_else(|| StudyError::Config(format!("case '{id}' not in manifest")))?;
    let p = pipeline(cfg, &m, classifier, false)?;
    let case = load_case(&m, row)?;
    let result = p.run(&case, case_seed(cfg.seed, id))?;
    write_json(&out.join(format!("{id}_result.json")), &result.result)?;
    let path = out.join(format!("{id}_pred.nii"));
    nifti::write_mask(&path, &result.predicted_mask()).map_err(|e| StudyError::nifti(&path, e))?;
    println!(
        "{id}: detected={} score={:.4} class={}",
        result.result.patient_detected,
        result.result.patient_score,
        result.result.predicted_class.as_str()
    );
    Ok(())
}

fn eval(cfg: &mut StudyConfig, a: &EvalArgs) -> Result<(), StudyError> {
    if let Some(v) = a.miss_rate {
        cfg.pipeline.oracle.miss_probability = v;
    }
    if let Some(v) = a.blob_rate {
        cfg.pipeline.oracle.blob_rate = v;
    }
    if let Some(v) = a.jitter {
        cfg.pipeline.oracle.jitter_voxels = v;
    }
    cfg.validate()?;
    let m = Manifest::load(&a.manifest)?;
    let p = pipeline(cfg, &m, a.classifier.as_deref(), true)?;
    let ev = evaluate_cohort(&m, &p, &cfg.stats, cfg.seed, cfg.threads, Some(&a.out.join("masks")))?;
    write_json(&a.out.join("classifier.json"), &p.classifier)?;
    write_json(&a.out.join("pipeline.json"), &p.config)?;
    write_json(&a.out.join("results.json"), &ev.results)?;
    write_json(&a.out.join("failures.json"), &ev.failures)?;
    for f in &ev.failures {
        eprintln!("case {} failed: {}", f.case_id, f.error);
    }
    let o = &ev.report.overall;
    println!(
        "{} cases ({} failed): sensitivity {} specificity {} auc {}",
        ev.results.len(),
        ev.failures.len(),
        panscreen_study::emit::fmt_opt(o.sensitivity.value),
        panscreen_study::emit::fmt_opt(o.specificity.value),
        panscreen_study::emit::fmt_opt(o.auc.value)
    );
    Ok(())
}

fn analyze_readers(
    cfg: &StudyConfig,
    m: &Manifest,
    responses: &Path,
    results: &[CaseResult],
) -> Result<panscreen_study::ReaderReport, StudyError> {
    let f = std::fs::File::open(responses).map_err(|e| StudyError::io(responses, e))?;
    reader_analysis(&read_responses(f)?, m, results, cfg.positive_call)
}

fn report(cfg: &StudyConfig, a: &ReportArgs) -> Result<(), StudyError> {
    let m = Manifest::load(&a.manifest)?;
    let results: Vec<CaseResult> = read_json(&a.eval.join("results.json"))?;
    let strat = stratified_report(&m, &results, &cfg.stats)?;
    let lead = lead_time_summary(&results, &m);
    let readers = a.responses.as_deref().map(|p| analyze_readers(cfg, &m, p, &results)).transpose()?;
    for p in emit_reports(&a.out, &strat, Some(&lead), readers.as_ref())? {
        println!("{}", p.display());
    }
    Ok(())
}

fn study_analyze(cfg: &StudyConfig, manifest: &Path, responses: &Path, results: &Path, out: &Path) -> Result<(), StudyError> {
    let m = Manifest::load(manifest)?;
    let results: Vec<CaseResult> = read_json(results)?;
    let r = analyze_readers(cfg, &m, responses, &results)?;
    panscreen_study::write_file(&out.join("reader_report.csv"), panscreen_study::emit::reader_csv(&r).as_bytes())?;
    write_json(&out.join("reader_report.json"), &r)?;
    println!("{} reader sessions analysed", r.readers.len());
    Ok(())
}

fn serve(cfg: &StudyConfig, a: &ServeArgs) -> Result<(), StudyError> {
    let m = Manifest::load(&a.manifest)?;
    let session = a.session.unwrap_or(cfg.serve.session);
    let overlays = if session == 2 { a.overlays.as_deref() } else { None };
    let cases = load_case_images(&m, overlays)?;
    let log = ResponseLog::open(&a.log)?;
    let sc = SessionConfig { session, window: cfg.serve.window, order_seed: rng::derive(cfg.seed, cfg.serve.order_seed) };
    let state = AppState::new(sc, cases, log)?;
    let addr = a.addr.clone().unwrap_or_else(|| cfg.serve.addr.clone());
    let rt = tokio::runtime::Runtime::new().map_err(|e| StudyError::Config(format!("runtime: {e}")))?;
    println!("serving session {session} on {addr}");
    rt.block_on(panscreen_study::service::serve(&addr, state))
}

fn run(cli: Cli) -> Result<(), StudyError> {
    let mut cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Phantom { cmd: PhantomCmd::Gen { out, id, lesion, segment, diameter, duct_dilation } } => {
            phantom_gen(&cfg, &out, &id, lesion, segment, diameter, duct_dilation)
        }
        Command::Cohort { cmd: CohortCmd::Gen { out, n_pdac, n_nonpdac, n_normal } } => {
            cohort_gen(&mut cfg, &out, [n_pdac, n_nonpdac, n_normal])
        }
        Command::Cascade { cmd: CascadeCmd::Run { manifest, case, out, classifier } } => {
            cascade_run(&cfg, &manifest, &case, &out, classifier.as_deref())
        }
        Command::Eval(a) => eval(&mut cfg, &a),
        Command::Report(a) => report(&cfg, &a),
        Command::Study { cmd: StudyCmd::Analyze { manifest, responses, results, out } } => {
            study_analyze(&cfg, &manifest, &responses, &results, &out)
        }
        Command::Serve(a) => serve(&cfg, &a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
