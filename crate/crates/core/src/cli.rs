//! Command-line front end. Every design command writes a [`DesignReport`];
//! the exit code is 0 when its embedded verification passes, 1 when it
//! fails, and [`Error::exit_code`] for everything else.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::blocker::{self, BlockingDesign, ModeChoice};
use crate::error::{Error, Result};
use crate::netmodel::{build_matrices, load_network, simulate, NetworkFile, NetworkModel};
use crate::regional;
use crate::report::{gain_to_raw, ClaimsRecord, CutRecord, DesignReport, ModeRecord};
use crate::spectral::{eig, CVector, Tolerances};
use crate::topology::CutPartition;
use crate::verify::{verify_design, Claims};

#[derive(Debug, Parser)]
#[command(name = "obsblock", version, about = "Observability-blocking feedback design for network synchronization models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hide one or more modes from the measurement nodes.
    DesignBlock(DesignArgs),
    /// Block at a minimum vertex cut between actuators and sensors.
    DesignCutset(DesignArgs),
    /// Block using gains on the accessible region only.
    DesignRegional(DesignArgs),
    /// Regional design with a stabilizing eigenvalue shift.
    DesignRegionalStable(StableArgs),
    /// Re-check the gain stored in a report.
    Verify(ReportArgs),
    /// Simulate the closed loop of a report from its blocking vector.
    Simulate(SimulateArgs),
    /// Make an open-loop hidden mode visible.
    Enable(DesignArgs),
    /// Print a summary of a report.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModeArgs {
    /// 1-based position in the ordered spectrum; repeat to block several
    /// modes (design-block only).
    #[arg(long, num_args = 1.., conflicts_with = "mode_value")]
    pub mode_index: Vec<usize>,
    /// Eigenvalue of L + B F to block, e.g. `3` or `1.5-0.8i`.
    #[arg(long, allow_hyphen_values = true)]
    pub mode_value: Option<Complex64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TolArgs {
    #[arg(long)]
    pub rank_rtol: Option<f64>,
    #[arg(long)]
    pub eig_match_atol: Option<f64>,
    #[arg(long)]
    pub residual_rtol: Option<f64>,
    #[arg(long)]
    pub distinct_sep: Option<f64>,
}

impl TolArgs {
    pub fn apply(&self, mut tol: Tolerances) -> Result<Tolerances> {
        if let Some(v) = self.rank_rtol {
            tol.rank_rtol = v;
        }
        if let Some(v) = self.eig_match_atol {
            tol.eig_match_atol = v;
        }
        if let Some(v) = self.residual_rtol {
            tol.residual_rtol = v;
        }
        if let Some(v) = self.distinct_sep {
            tol.distinct_sep = v;
        }
        tol.validate()?;
        Ok(tol)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    /// Also write a simulation trace (CSV) started from the blocking vector.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    /// Network JSON file.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub mode: ModeArgs,
    /// Recorded in the report; the pipeline itself is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub tol: TolArgs,
    #[command(flatten)]
    pub trace: TraceArgs,
}

#[derive(Debug, Clone, Args)]
pub struct StableArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Initial shift threshold; defaults to 1 + max diag(L).
    #[arg(long)]
    pub d0: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// DesignReport JSON file.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Write the (re-verified) report here.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub tol: TolArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// DesignReport JSON file.
    #[arg(long, short)]
    pub input: PathBuf,
    /// CSV path; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::DesignBlock(a) => emit(design_block(a)?, a),
        Command::DesignCutset(a) => emit(design_cutset(a)?, a),
        Command::DesignRegional(a) => emit(design_regional(a, None)?, a),
        Command::DesignRegionalStable(a) => emit(design_regional(&a.design, Some(a.d0))?, &a.design),
        Command::Enable(a) => emit(design_enable(a)?, a),
        Command::Verify(a) => verify_report(a),
        Command::Simulate(a) => simulate_report(a),
        Command::Report(a) => {
            let report = DesignReport::load(&a.input)?;
            println!("{}", report.summary());
            Ok(exit_status(&report))
        }
    }
}

/// Parses `args`, runs, and maps errors to exit codes with a one-line
/// diagnostic on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn exit_status(report: &DesignReport) -> i32 {
    if report.verification.pass {
        0
    } else {
        eprintln!("verification failed: {}", report.verification.failure_summary());
        1
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit(report: DesignReport, args: &DesignArgs) -> Result<i32> {
    if let Some(path) = &args.trace.trace {
        let model = report.network.clone().into_model()?;
        let csv = trace_csv(&report, &model, args.trace.horizon, args.trace.dt)?;
        write_text(path, &csv)?;
    }
    match &args.output {
        Some(path) => {
            report.save(path)?;
            println!("{}", report.summary());
        }
        None => print!("{}", report.to_json()),
    }
    Ok(exit_status(&report))
}

fn mode_choices(args: &ModeArgs) -> Result<Vec<ModeChoice>> {
    if let Some(v) = args.mode_value {
        return Ok(vec![ModeChoice::Value(v)]);
    }
    args.mode_index
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            i.checked_sub(1).map(ModeChoice::Index).ok_or_else(|| Error::Validation {
                path: format!("mode-index[{k}]"),
                msg: "mode indices are 1-based".into(),
            })
        })
        .collect()
}

fn single_choice(args: &ModeArgs) -> Result<Option<ModeChoice>> {
    let mut choices = mode_choices(args)?;
    if choices.len() > 1 {
        return Err(Error::Validation {
            path: "mode-index".into(),
            msg: "this command blocks a single mode".into(),
        });
    }
    Ok(choices.pop())
}

fn unit(v: &CVector) -> Vec<Complex64> {
    let norm = v.norm();
    if norm == 0.0 {
        return v.iter().copied().collect();
    }
    v.iter().map(|z| z / norm).collect()
}

fn mode_record(design: &BlockingDesign) -> ModeRecord {
    ModeRecord {
        index: design.p + 1,
        lambda: design.lambda_p,
        mode: -design.lambda_p,
    }
}

struct Draft {
    kind: &'static str,
    model: NetworkModel,
    tol: Tolerances,
    f: DMatrix<f64>,
    provenance: String,
    mode: Option<ModeRecord>,
    case: Option<blocker::DesignCase>,
    modified: Vec<usize>,
    vhat_p: Option<Vec<Complex64>>,
    cut: Option<CutPartition>,
    d: Option<f64>,
    stable: Option<bool>,
    claims: Claims,
    seed: u64,
}

impl Draft {
    fn blocking(kind: &'static str, model: NetworkModel, tol: Tolerances, seed: u64, design: &BlockingDesign, claims: Claims) -> Self {
        Draft {
            kind,
            model,
            tol,
            f: design.f.f.clone(),
            provenance: design.f.provenance.clone(),
            mode: Some(mode_record(design)),
            case: Some(design.case),
            modified: design.modified.iter().map(|i| i + 1).collect(),
            vhat_p: Some(unit(&design.vhat_p)),
            cut: None,
            d: None,
            stable: None,
            claims,
            seed,
        }
    }

    fn finish(self) -> Result<DesignReport> {
        let mats = build_matrices(&self.model)?;
        let verification = verify_design(&mats, &self.f, &self.claims, &self.tol)?;
        Ok(DesignReport {
            kind: self.kind.into(),
            network: NetworkFile::from_model(&self.model),
            tolerances: self.tol,
            gain: gain_to_raw(&self.f),
            provenance: self.provenance,
            mode: self.mode,
            case: self.case,
            modified: self.modified,
            vhat_p: self.vhat_p,
            cut: self.cut.as_ref().map(CutRecord::from),
            d: self.d,
            stable: self.stable,
            claims: ClaimsRecord::from(&self.claims),
            verification,
            seed: self.seed,
        })
    }
}

/// Single mode: the real-spectrum algorithm when it applies, the general
/// one otherwise. Several modes are blocked in sequence.
pub fn design_block(args: &DesignArgs) -> Result<DesignReport> {
    let tol = args.tol.apply(Tolerances::default())?;
    let model = load_network(&args.input)?;
    let mats = build_matrices(&model)?;
    let open = eig(&mats.l, &tol)?;
    let choices = mode_choices(&args.mode)?;
    let indices = if choices.is_empty() {
        vec![blocker::select_mode(&mats, &tol)?]
    } else {
        choices.iter().map(|c| c.resolve(&open)).collect::<Result<Vec<_>>>()?
    };
    let design = if indices.len() == 1 {
        match blocker::algorithm1(&mats, indices[0], &tol) {
            Err(Error::NotDistinctReal) => blocker::algorithm2(&mats, indices[0], &tol)?,
            other => other?,
        }
    } else {
        blocker::block_modes(&mats, &indices, &tol)?
    };
    let claims = Claims::blocking(&design, &open);
    Draft::blocking("design-block", model, tol, args.seed, &design, claims).finish()
}

pub fn design_cutset(args: &DesignArgs) -> Result<DesignReport> {
    let tol = args.tol.apply(Tolerances::default())?;
    let model = load_network(&args.input)?;
    let design = regional::cutset_design(&model, single_choice(&args.mode)?, &tol)?;
    let open = eig(&model.graph.laplacian(), &tol)?;
    let claims = Claims::blocking(&design.blocking, &open);
    let mut draft = Draft::blocking("design-cutset", model, tol, args.seed, &design.blocking, claims);
    draft.cut = Some(design.cut);
    draft.finish()
}

/// `d0 = None` is the unshifted design; `Some(d0)` the stabilizing one.
pub fn design_regional(args: &DesignArgs, d0: Option<Option<f64>>) -> Result<DesignReport> {
    let tol = args.tol.apply(Tolerances::default())?;
    let model = load_network(&args.input)?;
    let choice = single_choice(&args.mode)?;
    let (kind, design) = match d0 {
        None => ("design-regional", regional::regional_design(&model, choice, &tol)?),
        Some(d0) => (
            "design-regional-stable",
            regional::regional_stable_design(&model, d0, choice, &tol)?,
        ),
    };
    let lambda = design.lambda_p;
    let mut unobservable = vec![-lambda];
    if lambda.im != 0.0 {
        unobservable.push(-lambda.conj());
    }
    let strict = d0.is_some();
    let claims = Claims {
        unobservable,
        modified: design.blocking.modified.iter().copied().collect(),
        stable: design.stable,
        strict,
        zero_columns: (0..model.n()).filter(|v| !model.is_accessible(*v)).collect(),
        ..Claims::default()
    };
    let draft = Draft {
        kind,
        tol,
        f: design.f.clone(),
        provenance: design.blocking.f.provenance.clone(),
        mode: Some(mode_record(&design.blocking)),
        case: Some(design.blocking.case),
        modified: design.blocking.modified.iter().map(|i| i + 1).collect(),
        vhat_p: Some(unit(&design.vhat_p)),
        cut: Some(design.cut.clone()),
        d: strict.then_some(design.d),
        stable: Some(design.stable),
        claims,
        seed: args.seed,
        model,
    };
    draft.finish()
}

pub fn design_enable(args: &DesignArgs) -> Result<DesignReport> {
    let tol = args.tol.apply(Tolerances::default())?;
    let model = load_network(&args.input)?;
    let mats = build_matrices(&model)?;
    let open = eig(&mats.l, &tol)?;
    let p = match single_choice(&args.mode)? {
        Some(c) => c.resolve(&open)?,
        None => {
            return Err(Error::Validation {
                path: "mode".into(),
                msg: "enable needs --mode-index or --mode-value".into(),
            })
        }
    };
    let design = blocker::enable_mode(&mats, p, &tol)?;
    let mut claims = Claims::blocking(&design, &open);
    claims.observable = vec![-design.lambda_p];
    Draft::blocking("enable", model, tol, args.seed, &design, claims).finish()
}

fn verify_report(args: &ReportArgs) -> Result<i32> {
    let mut report = DesignReport::load(&args.input)?;
    let tol = args.tol.apply(report.tolerances)?;
    let model = report.network.clone().into_model()?;
    let mats = build_matrices(&model)?;
    let f = report.gain_matrix()?;
    let claims = report.claims.to_claims()?;
    report.verification = verify_design(&mats, &f, &claims, &tol)?;
    report.tolerances = tol;
    if let Some(path) = &args.output {
        report.save(path)?;
    }
    println!("{}", report.summary());
    Ok(exit_status(&report))
}

/// Real initial state along the blocking vector: its real part, or the
/// imaginary part when the real part vanishes.
pub fn initial_state(vhat: &[Complex64]) -> DVector<f64> {
    let re = DVector::from_iterator(vhat.len(), vhat.iter().map(|z| z.re));
    let im = DVector::from_iterator(vhat.len(), vhat.iter().map(|z| z.im));
    let x = if re.norm() >= im.norm() { re } else { im };
    let norm = x.norm();
    if norm == 0.0 {
        x
    } else {
        x / norm
    }
}

fn trace_csv(report: &DesignReport, model: &NetworkModel, horizon: f64, dt: f64) -> Result<String> {
    let mats = build_matrices(model)?;
    let f = report.gain_matrix()?;
    let x0 = match &report.vhat_p {
        Some(v) => initial_state(v),
        None => DVector::from_element(model.n(), 1.0 / (model.n() as f64).sqrt()),
    };
    Ok(simulate(&mats, &f, &x0, horizon, dt)?.to_csv())
}

fn simulate_report(args: &SimulateArgs) -> Result<i32> {
    let report = DesignReport::load(&args.input)?;
    let model = report.network.clone().into_model()?;
    let csv = trace_csv(&report, &model, args.horizon, args.dt)?;
    match &args.output {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(0)
}
