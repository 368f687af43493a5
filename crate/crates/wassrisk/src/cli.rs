//! Command-line surface: sample ingestion, run configuration, the seven
//! subcommands, and deterministic artifact emission.
//!
//! Output discipline: result documents and sweep tables contain only values
//! reproducible bit for bit from the config and seed, so wall-clock timing is
//! reported on stderr and never written into an artifact. Every numeric that
//! lands in an artifact is checked finite first; serde_json would otherwise
//! silently turn a NaN into null.
//!
//! Exit codes: 0 on success, 2 for configuration and input problems, 1 for
//! solver failures on a valid configuration.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::applications::{
    absolute_loss, dr_classification, dr_regression, exponential_utility, hinge_loss,
    portfolio_optimize, ApplicationError, BallParams, DriverSolution, LearningProblem,
    PortfolioProblem,
};
use crate::calibration::{
    radius_finite_sample, radius_schedule, CalibrationError, CalibrationInputs, Schedule,
};
use crate::domain::{
    AffinePiece, AmbiguityBall, DiscreteDistribution, DomainError, LossFunction, NormKind, Pwl1d,
    RiskSpec, SupportSet,
};
use crate::exec;
use crate::transport::{self, TransportError};
use crate::worst_case::{
    worst_case_expectation, ActiveBranch, Method, WceResult, WorstCaseError,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    /// Configuration or input problem; exit code 2.
    #[error("{0}")]
    Config(String),
    /// Solver failure on a valid configuration; exit code 1.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }

    fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }
}

impl From<DomainError> for CliError {
    fn from(e: DomainError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ApplicationError> for CliError {
    fn from(e: ApplicationError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Domain(d) => d.into(),
            TransportError::DimensionMismatch(a, b) => {
                CliError::Config(format!("inputs have different widths: {a} vs {b}"))
            }
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<WorstCaseError> for CliError {
    fn from(e: WorstCaseError) -> Self {
        match e {
            WorstCaseError::Domain(d) => d.into(),
            other => CliError::Run(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyArg {
    /// Tail-average aggregation at level alpha.
    Cvar,
    /// Expectile aggregation at level alpha.
    Expectile,
    /// Plain expectation: the type-1 transport ball.
    W1,
    /// Essential supremum: the bounded-shift ball.
    Winf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormArg {
    L1,
    L2,
    Linf,
}

impl NormArg {
    fn to_norm(self) -> NormKind {
        match self {
            NormArg::L1 => NormKind::L1,
            NormArg::L2 => NormKind::L2,
            NormArg::Linf => NormKind::Linf,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Distance,
    Wce,
    Sweep,
    Portfolio,
    Regress,
    Classify,
    Calibrate,
}

/// Level grid "lo:hi:n", endpoints inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl AlphaGrid {
    fn parse(text: &str) -> Result<AlphaGrid, CliError> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(CliError::config(format!("grid '{text}' is not lo:hi:n")));
        }
        let lo = parse_f64(parts[0])?;
        let hi = parse_f64(parts[1])?;
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("grid count '{}' is not an integer", parts[2])))?;
        if n == 0 {
            return Err(CliError::config("grid needs at least one point"));
        }
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(CliError::config(format!("grid range [{lo}, {hi}] is empty")));
        }
        Ok(AlphaGrid { lo, hi, n })
    }

    fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n).map(|j| self.lo + j as f64 * step).collect()
    }
}

/// Calibration-specific parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateParams {
    pub n: usize,
    pub eta: Option<f64>,
    pub dim: usize,
    pub tail_exponent: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// "log2", "power:p", or "value:k"; selects the schedule mode instead of
    /// the finite-sample formula.
    pub schedule: Option<String>,
}

/// One fully specified run. The canonical serialization is the config's
/// identity: parsing it back yields an equal config whose re-serialization is
/// byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub format_version: u32,
    pub command: CommandKind,
    pub inputs: Vec<PathBuf>,
    pub family: Option<FamilyArg>,
    pub alpha: Option<f64>,
    pub alpha_grid: Option<AlphaGrid>,
    pub eps: Option<f64>,
    pub norm: NormArg,
    pub support: Option<String>,
    pub loss: Option<String>,
    pub bounds: Option<String>,
    pub iterations: Option<usize>,
    pub calibrate: Option<CalibrateParams>,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl RunConfig {
    fn base(command: CommandKind) -> RunConfig {
        RunConfig {
            format_version: FORMAT_VERSION,
            command,
            inputs: Vec::new(),
            family: None,
            alpha: None,
            alpha_grid: None,
            eps: None,
            norm: NormArg::L2,
            support: None,
            loss: None,
            bounds: None,
            iterations: None,
            calibrate: None,
            out: None,
            seed: 0,
        }
    }

    pub fn canonical(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn from_canonical(text: &str) -> Result<RunConfig, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config parse: {e}")))
    }
}

fn parse_f64(s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| CliError::config(format!("'{s}' is not a number")))
}

fn parse_vec(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(parse_f64).collect()
}

fn parse_pieces(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    s.split('|')
        .map(|p| {
            let v = parse_vec(p)?;
            if v.len() != 2 {
                return Err(CliError::config(format!(
                    "piece '{p}' needs exactly slope,intercept"
                )));
            }
            Ok((v[0], v[1]))
        })
        .collect()
}

fn parse_params(body: &str) -> Result<Vec<(&str, &str)>, CliError> {
    body.split(';')
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| CliError::config(format!("expected key=value, got '{kv}'")))
        })
        .collect()
}

/// A parsed loss descriptor. Scalar losses apply to one-column samples or,
/// through the composite form, along a fixed direction; utility descriptors
/// belong to the portfolio command.
#[derive(Debug, Clone)]
pub enum LossSpec {
    Scalar { f: Pwl1d, split: Option<f64> },
    Composite { x: Vec<f64>, f: Pwl1d, split: f64 },
    MaxAffine(Vec<AffinePiece>),
    MinAffine(Vec<AffinePiece>),
    Utility(Vec<(f64, f64)>),
}

/// Descriptor grammar: a form name, then ";"-separated key=value parameters.
/// Piece lists are "|"-separated, vector components ","-separated.
///
/// - `abs` and `hinge`: built-in scalar losses.
/// - `pwl:pieces=s,c|s,c[;split=t0]`: scalar max-of-affine loss.
/// - `scalar:x=v1,..,vm;pieces=s,c|s,c;split=t0`: the loss `f(x . xi)`.
/// - `maxaffine:pieces=g1,..,gm,c|..` and `minaffine:...`: losses on R^m.
/// - `utility:pieces=s,c|s,c`: concave min-of-affine utility.
pub fn parse_loss(descriptor: &str) -> Result<LossSpec, CliError> {
    let (name, body) = match descriptor.split_once(':') {
        Some((n, b)) => (n, Some(b)),
        None => (descriptor, None),
    };
    let need_body =
        || body.ok_or_else(|| CliError::config(format!("descriptor '{name}' needs parameters")));
    match name {
        "abs" => Ok(LossSpec::Scalar { f: absolute_loss(), split: Some(0.0) }),
        "hinge" => Ok(LossSpec::Scalar { f: hinge_loss(), split: None }),
        "pwl" => {
            let mut pieces = None;
            let mut split = None;
            for (k, v) in parse_params(need_body()?)? {
                match k {
                    "pieces" => pieces = Some(parse_pieces(v)?),
                    "split" => split = Some(parse_f64(v)?),
                    other => {
                        return Err(CliError::config(format!("unknown pwl key '{other}'")));
                    }
                }
            }
            let pieces =
                pieces.ok_or_else(|| CliError::config("pwl descriptor needs pieces=..."))?;
            Ok(LossSpec::Scalar { f: Pwl1d { pieces }, split })
        }
        "scalar" => {
            let mut x = None;
            let mut pieces = None;
            let mut split = None;
            for (k, v) in parse_params(need_body()?)? {
                match k {
                    "x" => x = Some(parse_vec(v)?),
                    "pieces" => pieces = Some(parse_pieces(v)?),
                    "split" => split = Some(parse_f64(v)?),
                    other => {
                        return Err(CliError::config(format!("unknown scalar key '{other}'")));
                    }
                }
            }
            match (x, pieces, split) {
                (Some(x), Some(pieces), Some(split)) => {
                    Ok(LossSpec::Composite { x, f: Pwl1d { pieces }, split })
                }
                _ => Err(CliError::config("scalar descriptor needs x=, pieces=, split=")),
            }
        }
        "maxaffine" | "minaffine" => {
            let mut pieces = None;
            for (k, v) in parse_params(need_body()?)? {
                match k {
                    "pieces" => {
                        pieces = Some(
                            v.split('|')
                                .map(|p| {
                                    let row = parse_vec(p)?;
                                    if row.len() < 2 {
                                        return Err(CliError::config(format!(
                                            "piece '{p}' needs gradient components and an offset"
                                        )));
                                    }
                                    let (grad, off) = row.split_at(row.len() - 1);
                                    Ok(AffinePiece { gradient: grad.to_vec(), offset: off[0] })
                                })
                                .collect::<Result<Vec<_>, CliError>>()?,
                        )
                    }
                    other => {
                        return Err(CliError::config(format!("unknown {name} key '{other}'")));
                    }
                }
            }
            let pieces =
                pieces.ok_or_else(|| CliError::config(format!("{name} needs pieces=...")))?;
            if name == "maxaffine" {
                Ok(LossSpec::MaxAffine(pieces))
            } else {
                Ok(LossSpec::MinAffine(pieces))
            }
        }
        "utility" => {
            let mut pieces = None;
            for (k, v) in parse_params(need_body()?)? {
                match k {
                    "pieces" => pieces = Some(parse_pieces(v)?),
                    other => {
                        return Err(CliError::config(format!("unknown utility key '{other}'")));
                    }
                }
            }
            Ok(LossSpec::Utility(
                pieces.ok_or_else(|| CliError::config("utility needs pieces=..."))?,
            ))
        }
        other => Err(CliError::config(format!("unknown loss descriptor '{other}'"))),
    }
}

impl LossSpec {
    /// Lower the descriptor to a loss on `dim`-column samples.
    pub fn to_loss(&self, dim: usize) -> Result<LossFunction, CliError> {
        let loss = match self {
            LossSpec::Scalar { f, .. } => {
                if dim != 1 {
                    return Err(CliError::config(
                        "scalar losses need one-column samples; use scalar:x=... for wider data",
                    ));
                }
                LossFunction::MaxAffine {
                    pieces: f
                        .pieces
                        .iter()
                        .map(|&(s, c)| AffinePiece { gradient: vec![s], offset: c })
                        .collect(),
                }
            }
            LossSpec::Composite { x, f, split } => {
                LossFunction::ScalarComposite { x: x.clone(), f: f.clone(), split: *split }
            }
            LossSpec::MaxAffine(p) => LossFunction::MaxAffine { pieces: p.clone() },
            LossSpec::MinAffine(p) => LossFunction::MinAffine { pieces: p.clone() },
            LossSpec::Utility(_) => {
                return Err(CliError::config(
                    "utility descriptors describe portfolio objectives, not sample losses",
                ));
            }
        };
        loss.validate()?;
        if loss.dim() != dim {
            return Err(CliError::config(format!(
                "loss is on {} columns but the samples have {dim}",
                loss.dim()
            )));
        }
        Ok(loss)
    }
}

/// Read a CSV sample file into a uniform empirical distribution. One sample
/// per line, columns comma-separated, an optional non-numeric header line.
/// Ragged and non-finite rows are rejected with their 1-based line number.
pub fn parse_samples(path: &Path) -> Result<DiscreteDistribution, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    parse_samples_text(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn parse_samples_text(text: &str) -> Result<DiscreteDistribution, CliError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let fields = match parsed {
            Ok(v) => v,
            // Only the very first line can be a header.
            Err(_) if idx == 0 => continue,
            Err(e) => return Err(CliError::config(format!("line {}: {e}", idx + 1))),
        };
        if let Some(bad) = fields.iter().position(|v| !v.is_finite()) {
            return Err(CliError::config(format!(
                "line {}: column {} is not finite",
                idx + 1,
                bad + 1
            )));
        }
        if rows.is_empty() {
            width = fields.len();
        } else if fields.len() != width {
            return Err(CliError::config(format!(
                "line {}: {} columns, expected {width}",
                idx + 1,
                fields.len()
            )));
        }
        rows.push(fields);
    }
    if rows.is_empty() {
        return Err(CliError::config("empty input: no sample rows"));
    }
    Ok(DiscreteDistribution::uniform(rows)?)
}

/// Support descriptor: "free", "box:lo,hi;lo,hi;..." (ends may be inf), or
/// "poly:path" where the file holds rows "g1,..,gm,h" meaning g . xi <= h.
fn resolve_support(descriptor: Option<&str>, dim: usize) -> Result<SupportSet, CliError> {
    let desc = descriptor.unwrap_or("free");
    if desc == "free" {
        return Ok(SupportSet::Unconstrained);
    }
    if let Some(body) = desc.strip_prefix("box:") {
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for pair in body.split(';') {
            let v = parse_vec(pair)?;
            if v.len() != 2 {
                return Err(CliError::config(format!("box entry '{pair}' is not lo,hi")));
            }
            lower.push(v[0]);
            upper.push(v[1]);
        }
        let support = SupportSet::Box { lower, upper };
        support.validate(dim)?;
        return Ok(support);
    }
    if let Some(path) = desc.strip_prefix("poly:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {path}: {e}")))?;
        let mut g = Vec::new();
        let mut h = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let row = parse_vec(line)
                .map_err(|e| CliError::config(format!("{path} line {}: {e}", idx + 1)))?;
            if row.len() != dim + 1 {
                return Err(CliError::config(format!(
                    "{path} line {}: {} entries, expected {} coefficients plus a bound",
                    idx + 1,
                    row.len(),
                    dim
                )));
            }
            let (coeffs, bound) = row.split_at(dim);
            g.push(coeffs.to_vec());
            h.push(bound[0]);
        }
        let support = SupportSet::Polyhedron { g, h };
        support.validate(dim)?;
        return Ok(support);
    }
    Err(CliError::config(format!("unknown support descriptor '{desc}'")))
}

fn parse_coord_bounds(descriptor: &str) -> Result<Vec<(f64, f64)>, CliError> {
    descriptor
        .split(';')
        .map(|pair| {
            let v = parse_vec(pair)?;
            if v.len() != 2 {
                return Err(CliError::config(format!("bounds entry '{pair}' is not lo,hi")));
            }
            Ok((v[0], v[1]))
        })
        .collect()
}

fn resolve_risk(family: Option<FamilyArg>, alpha: Option<f64>) -> Result<RiskSpec, CliError> {
    let family = family.ok_or_else(|| CliError::config("--family is required"))?;
    let risk = match family {
        FamilyArg::Cvar => RiskSpec::Cvar {
            alpha: alpha.ok_or_else(|| CliError::config("--alpha is required for cvar"))?,
        },
        FamilyArg::Expectile => RiskSpec::Expectile {
            alpha: alpha.ok_or_else(|| CliError::config("--alpha is required for expectile"))?,
        },
        FamilyArg::W1 => {
            if alpha.is_some() {
                return Err(CliError::config("the w1 family takes no --alpha"));
            }
            RiskSpec::Expectation
        }
        FamilyArg::Winf => {
            if alpha.is_some() {
                return Err(CliError::config("the winf family takes no --alpha"));
            }
            RiskSpec::EssSup
        }
    };
    risk.validate()?;
    Ok(risk)
}

fn required_eps(config: &RunConfig) -> Result<f64, CliError> {
    let eps = config.eps.ok_or_else(|| CliError::config("--eps is required"))?;
    if !eps.is_finite() || eps < 0.0 {
        return Err(CliError::config(format!("radius {eps} must be finite and nonnegative")));
    }
    Ok(eps)
}

fn one_input(config: &RunConfig) -> Result<&PathBuf, CliError> {
    match config.inputs.as_slice() {
        [p] => Ok(p),
        other => Err(CliError::config(format!("expected one input file, got {}", other.len()))),
    }
}

fn method_token(m: Method) -> &'static str {
    match m {
        Method::ConcavePrimal => "concave-primal",
        Method::ConcaveDual => "concave-dual",
        Method::CvarFiniteDim => "cvar-finite-dim",
        Method::CvarClosedForm => "cvar-closed-form",
        Method::ExpectilePrimal => "expectile-primal",
        Method::ExpectileDual => "expectile-dual",
        Method::ExpectileClosedForm => "expectile-closed-form",
        Method::BruteForce => "brute-force",
    }
}

fn branch_token(branch: Option<ActiveBranch>) -> Option<String> {
    branch.map(|b| match b {
        ActiveBranch::SphereMax => "sphere".to_string(),
        ActiveBranch::LipschitzShift => "shift".to_string(),
        ActiveBranch::PerSample { lipschitz_count } => format!("per-sample:{lipschitz_count}"),
    })
}

/// Worst-case distribution in summary form: whether it is attained, and how
/// the per-sample mass behaves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorstCaseSummary {
    pub attained: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_atoms: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub escaping_samples: Option<usize>,
}

fn summarize_worst_case(result: &WceResult) -> Option<WorstCaseSummary> {
    result.worst_case.as_ref().map(|wc| {
        let (fixed, escaping) = match &wc.family {
            Some(fam) => {
                let fixed = fam
                    .per_sample
                    .iter()
                    .filter(|s| matches!(s, crate::worst_case::SampleLimit::Fixed { .. }))
                    .count();
                (Some(fixed), Some(fam.per_sample.len() - fixed))
            }
            None => (None, None),
        };
        WorstCaseSummary {
            attained: wc.attained,
            exact_atoms: wc.exact.as_ref().map(|d| d.n_atoms()),
            fixed_samples: fixed,
            escaping_samples: escaping,
        }
    })
}

/// Structured result document shared by all commands. Optional fields are
/// omitted when a command has nothing to put in them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultDoc {
    pub format_version: u32,
    pub command: CommandKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attained: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst_case: Option<WorstCaseSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decision: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_path: Option<String>,
}

impl ResultDoc {
    fn new(command: CommandKind) -> ResultDoc {
        ResultDoc {
            format_version: FORMAT_VERSION,
            command,
            value: None,
            method: None,
            branch: None,
            attained: None,
            worst_case: None,
            decision: None,
            shift_samples: None,
            n_samples: None,
            iterations: None,
            rows: None,
            table_path: None,
        }
    }

    fn check_finite(&self) -> Result<(), CliError> {
        let bad = |what: &str| {
            Err(CliError::Run(format!("refusing to emit a non-finite {what} in the result")))
        };
        if self.value.is_some_and(|v| !v.is_finite()) {
            return bad("value");
        }
        if let Some(d) = &self.decision {
            if d.iter().any(|v| !v.is_finite()) {
                return bad("decision entry");
            }
        }
        Ok(())
    }

    fn render(&self) -> Result<String, CliError> {
        self.check_finite()?;
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Run(format!("result serialization: {e}")))?;
        text.push('\n');
        Ok(text)
    }
}

/// Everything a run produces. The document is the structured result; sweep
/// runs carry the plot table as well.
#[derive(Debug)]
pub struct RunArtifacts {
    pub document: String,
    pub table: Option<String>,
}

pub fn run(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    if config.format_version != FORMAT_VERSION {
        return Err(CliError::config(format!(
            "config format_version {} is not {FORMAT_VERSION}",
            config.format_version
        )));
    }
    match config.command {
        CommandKind::Distance => cmd_distance(config),
        CommandKind::Wce => cmd_wce(config),
        CommandKind::Sweep => cmd_sweep(config),
        CommandKind::Portfolio => cmd_portfolio(config),
        CommandKind::Regress => cmd_regress(config),
        CommandKind::Classify => cmd_classify(config),
        CommandKind::Calibrate => cmd_calibrate(config),
    }
}

fn document_only(doc: ResultDoc) -> Result<RunArtifacts, CliError> {
    Ok(RunArtifacts { document: doc.render()?, table: None })
}

fn cmd_distance(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    let (a, b) = match config.inputs.as_slice() {
        [a, b] => (a, b),
        other => {
            return Err(CliError::config(format!(
                "distance expects two input files, got {}",
                other.len()
            )));
        }
    };
    let pa = parse_samples(a)?;
    let pb = parse_samples(b)?;
    let risk = resolve_risk(config.family, config.alpha)?;
    let value = transport::distance(risk, &pa, &pb, config.norm.to_norm())?;
    let mut doc = ResultDoc::new(CommandKind::Distance);
    doc.value = Some(value);
    doc.method = Some("transport".to_string());
    document_only(doc)
}

fn cmd_wce(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    let samples = parse_samples(one_input(config)?)?;
    let descriptor =
        config.loss.as_deref().ok_or_else(|| CliError::config("--loss is required"))?;
    let loss = parse_loss(descriptor)?.to_loss(samples.dim())?;
    let support = resolve_support(config.support.as_deref(), samples.dim())?;
    let risk = resolve_risk(config.family, config.alpha)?;
    let eps = required_eps(config)?;
    let ball = AmbiguityBall::new(risk, config.norm.to_norm(), eps, samples, support)?;
    let result = worst_case_expectation(&loss, &ball)?;
    let mut doc = ResultDoc::new(CommandKind::Wce);
    doc.value = Some(result.value);
    doc.method = Some(method_token(result.method).to_string());
    doc.branch = branch_token(result.diagnostics.active_branch);
    doc.attained = Some(result.attained());
    doc.worst_case = summarize_worst_case(&result);
    doc.iterations = Some(result.diagnostics.iterations);
    document_only(doc)
}

/// One sweep row. The grid level `alpha` is the expectile level; the matched
/// tail level is `1 - beta` where `beta = (1 - alpha) / alpha` is the shift
/// coefficient both families put on the Lipschitz branch. Matching the
/// coefficient puts both curves on a shared x-axis where the tail value is a
/// max of two affine functions of `beta` and the expectile value is convex
/// piecewise linear in `beta`, and both meet the sphere mean as `beta -> 0`.
struct SweepRow {
    alpha: f64,
    beta: f64,
    value_cvar: f64,
    value_expectile: f64,
    branch_cvar: String,
    attained_expectile: bool,
}

fn cmd_sweep(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    let grid = config
        .alpha_grid
        .ok_or_else(|| CliError::config("--alpha-grid lo:hi:n is required"))?;
    if grid.lo < 0.5 || grid.hi >= 1.0 {
        return Err(CliError::config(format!(
            "sweep levels must lie in [0.5, 1) so both families are defined; got [{}, {}]",
            grid.lo, grid.hi
        )));
    }
    let samples = parse_samples(one_input(config)?)?;
    let descriptor =
        config.loss.as_deref().ok_or_else(|| CliError::config("--loss is required"))?;
    let loss = parse_loss(descriptor)?.to_loss(samples.dim())?;
    let support = resolve_support(config.support.as_deref(), samples.dim())?;
    let eps = required_eps(config)?;
    let norm = config.norm.to_norm();

    let solved: Vec<Result<SweepRow, CliError>> = exec::par_map(grid.points(), |alpha| {
        let beta = (1.0 - alpha) / alpha;
        let tail_level = 1.0 - beta;
        let cvar_ball = AmbiguityBall::new(
            RiskSpec::Cvar { alpha: tail_level },
            norm,
            eps,
            samples.clone(),
            support.clone(),
        )?;
        let cv = worst_case_expectation(&loss, &cvar_ball)?;
        let expectile_ball = AmbiguityBall::new(
            RiskSpec::Expectile { alpha },
            norm,
            eps,
            samples.clone(),
            support.clone(),
        )?;
        let ev = worst_case_expectation(&loss, &expectile_ball)?;
        for (name, v) in [("tail value", cv.value), ("expectile value", ev.value)] {
            if !v.is_finite() {
                return Err(CliError::Run(format!("{name} at level {alpha} is not finite")));
            }
        }
        Ok(SweepRow {
            alpha,
            beta,
            value_cvar: cv.value,
            value_expectile: ev.value,
            branch_cvar: branch_token(cv.diagnostics.active_branch)
                .unwrap_or_else(|| "unknown".to_string()),
            attained_expectile: ev.attained(),
        })
    });
    let mut rows = solved.into_iter().collect::<Result<Vec<_>, CliError>>()?;
    rows.sort_by(|a, b| a.alpha.partial_cmp(&b.alpha).expect("finite levels"));

    let mut table = String::new();
    table.push_str(&format!("# format_version={FORMAT_VERSION}\n"));
    table.push_str("alpha,beta,value_cvar,value_expectile,branch_cvar,attained_expectile\n");
    for r in &rows {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.alpha, r.beta, r.value_cvar, r.value_expectile, r.branch_cvar, r.attained_expectile
        ));
    }

    let mut doc = ResultDoc::new(CommandKind::Sweep);
    doc.rows = Some(rows.len());
    doc.table_path = config.out.as_ref().map(|p| p.display().to_string());
    Ok(RunArtifacts { document: doc.render()?, table: Some(table) })
}

fn ball_params(config: &RunConfig) -> Result<BallParams, CliError> {
    Ok(BallParams {
        risk: resolve_risk(config.family, config.alpha)?,
        radius: required_eps(config)?,
        norm: config.norm.to_norm(),
    })
}

fn driver_doc(command: CommandKind, sol: &DriverSolution) -> ResultDoc {
    let mut doc = ResultDoc::new(command);
    doc.value = Some(sol.value);
    doc.decision = Some(sol.decision.clone());
    doc.method = Some("projected-subgradient-multistart".to_string());
    doc.branch = Some(if sol.report.final_shift_count == 0 {
        "sphere".to_string()
    } else {
        format!("shift:{}", sol.report.final_shift_count)
    });
    doc.shift_samples = Some(sol.report.final_shift_count);
    doc.n_samples = Some(sol.report.n_samples);
    doc.iterations = Some(sol.report.iterations);
    doc
}

fn cmd_portfolio(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    let samples = parse_samples(one_input(config)?)?;
    let utility = match config.loss.as_deref() {
        // A saturating default: tangents to 1 - exp(-t) around zero.
        None => exponential_utility(&[-1.0, -0.5, 0.0, 0.5, 1.0]),
        Some(d) => match parse_loss(d)? {
            LossSpec::Utility(pieces) => pieces,
            _ => {
                return Err(CliError::config(
                    "portfolio expects a utility:pieces=... descriptor",
                ));
            }
        },
    };
    let mut problem =
        PortfolioProblem::new(samples.points().to_vec(), utility, ball_params(config)?);
    if let Some(b) = config.bounds.as_deref() {
        problem.bounds = Some(parse_coord_bounds(b)?);
    }
    problem.seed = config.seed;
    if let Some(iters) = config.iterations {
        problem.iterations = iters;
    }
    let sol = portfolio_optimize(&problem)?;
    document_only(driver_doc(CommandKind::Portfolio, &sol))
}

/// Split "features..., target" rows into the learning problem's pieces.
fn split_last_column(
    samples: &DiscreteDistribution,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), CliError> {
    if samples.dim() < 2 {
        return Err(CliError::config(
            "learning input needs at least two columns: features, then the target",
        ));
    }
    let mut features = Vec::with_capacity(samples.n_atoms());
    let mut targets = Vec::with_capacity(samples.n_atoms());
    for row in samples.points() {
        let (x, y) = row.split_at(row.len() - 1);
        features.push(x.to_vec());
        targets.push(y[0]);
    }
    Ok((features, targets))
}

fn scalar_loss_from(
    descriptor: Option<&str>,
    default: LossSpec,
) -> Result<(Pwl1d, Option<f64>), CliError> {
    let spec = match descriptor {
        None => default,
        Some(d) => parse_loss(d)?,
    };
    match spec {
        LossSpec::Scalar { f, split } => Ok((f, split)),
        _ => Err(CliError::config(
            "learning commands take a scalar loss: abs, hinge, or pwl:pieces=...",
        )),
    }
}

fn cmd_regress(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    let samples = parse_samples(one_input(config)?)?;
    let (features, targets) = split_last_column(&samples)?;
    let (f, split) = scalar_loss_from(
        config.loss.as_deref(),
        LossSpec::Scalar { f: absolute_loss(), split: Some(0.0) },
    )?;
    let mut problem = LearningProblem::regression(features, targets, ball_params(config)?);
    problem.loss = f;
    problem.split = split;
    if let Some(b) = config.bounds.as_deref() {
        problem.bounds = Some(parse_coord_bounds(b)?);
    }
    problem.seed = config.seed;
    if let Some(iters) = config.iterations {
        problem.iterations = iters;
    }
    let sol = dr_regression(&problem)?;
    document_only(driver_doc(CommandKind::Regress, &sol))
}

fn cmd_classify(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    let samples = parse_samples(one_input(config)?)?;
    let (features, labels) = split_last_column(&samples)?;
    let (f, _) = scalar_loss_from(
        config.loss.as_deref(),
        LossSpec::Scalar { f: hinge_loss(), split: None },
    )?;
    let mut problem = LearningProblem::classification(features, labels, ball_params(config)?);
    problem.loss = f;
    if let Some(b) = config.bounds.as_deref() {
        problem.bounds = Some(parse_coord_bounds(b)?);
    }
    problem.seed = config.seed;
    if let Some(iters) = config.iterations {
        problem.iterations = iters;
    }
    let sol = dr_classification(&problem)?;
    document_only(driver_doc(CommandKind::Classify, &sol))
}

fn parse_schedule(descriptor: &str) -> Result<Schedule, CliError> {
    if descriptor == "log2" {
        return Ok(Schedule::LogSquared);
    }
    if let Some(p) = descriptor.strip_prefix("power:") {
        return Ok(Schedule::Power { p: parse_f64(p)? });
    }
    if let Some(k) = descriptor.strip_prefix("value:") {
        return Ok(Schedule::Value(parse_f64(k)?));
    }
    Err(CliError::config(format!(
        "unknown schedule '{descriptor}'; use log2, power:p, or value:k"
    )))
}

fn cmd_calibrate(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    let params = config
        .calibrate
        .as_ref()
        .ok_or_else(|| CliError::config("calibrate parameters are missing"))?;
    let mut doc = ResultDoc::new(CommandKind::Calibrate);
    if let Some(desc) = &params.schedule {
        let schedule = parse_schedule(desc)?;
        doc.value = Some(radius_schedule(params.n as f64, &schedule, params.dim)?);
        doc.method = Some("schedule".to_string());
    } else {
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| CliError::config(format!("--{name} is required for calibration")))
        };
        let risk = resolve_risk(config.family, config.alpha)?;
        let inputs = CalibrationInputs::for_risk(
            params.n,
            need("eta", params.eta)?,
            params.dim,
            need("tail-exponent", params.tail_exponent)?,
            need("c1", params.c1)?,
            need("c2", params.c2)?,
            risk,
        )?;
        doc.value = Some(radius_finite_sample(&inputs)?);
        doc.method = Some("finite-sample".to_string());
    }
    document_only(doc)
}

#[derive(Args, Debug)]
struct BallFlags {
    /// Aggregation family of the transport ball.
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Aggregation level; required for cvar and expectile.
    #[arg(long)]
    alpha: Option<f64>,
    /// Ball radius.
    #[arg(long)]
    eps: Option<f64>,
    /// Ground norm on the sample space.
    #[arg(long, value_enum, default_value = "l2")]
    norm: NormArg,
}

#[derive(Args, Debug)]
struct DriverFlags {
    /// Per-coordinate decision bounds "lo,hi;lo,hi;...".
    #[arg(long)]
    bounds: Option<String>,
    /// Subgradient iteration budget per start.
    #[arg(long)]
    iterations: Option<usize>,
    /// Seed for the multi-start initial points.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Parser, Debug)]
#[command(
    name = "wassrisk",
    version,
    about = "Worst-case risk analysis over risk-aggregated transport balls"
)]
pub struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Subcommand, Debug)]
enum CliCommand {
    /// Transport distance between two sample files under a risk aggregation.
    Distance {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, value_enum, default_value = "l2")]
        norm: NormArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Worst-case expected loss over one ball.
    Wce {
        input: PathBuf,
        #[command(flatten)]
        ball: BallFlags,
        /// Loss descriptor, e.g. "abs" or "scalar:x=1,2;pieces=1,0|-1,0;split=0".
        #[arg(long)]
        loss: String,
        /// Support descriptor: free, box:lo,hi;..., or poly:path.
        #[arg(long)]
        support: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Worst-case values on a level grid, emitted as a plot-ready table.
    Sweep {
        input: PathBuf,
        /// Level grid "lo:hi:n" in [0.5, 1); serves both families.
        #[arg(long = "alpha-grid")]
        alpha_grid: String,
        #[arg(long)]
        eps: f64,
        #[arg(long, value_enum, default_value = "l2")]
        norm: NormArg,
        #[arg(long)]
        loss: String,
        #[arg(long)]
        support: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Worst-case utility portfolio selection over the simplex.
    Portfolio {
        input: PathBuf,
        #[command(flatten)]
        ball: BallFlags,
        /// Utility descriptor "utility:pieces=s,c|s,c"; a saturating default
        /// utility is used when omitted.
        #[arg(long)]
        loss: Option<String>,
        #[command(flatten)]
        driver: DriverFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distributionally robust regression; the last column is the target.
    Regress {
        input: PathBuf,
        #[command(flatten)]
        ball: BallFlags,
        /// Scalar loss descriptor; defaults to abs.
        #[arg(long)]
        loss: Option<String>,
        #[command(flatten)]
        driver: DriverFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distributionally robust classification; the last column is the label.
    Classify {
        input: PathBuf,
        #[command(flatten)]
        ball: BallFlags,
        /// Scalar loss descriptor; defaults to hinge.
        #[arg(long)]
        loss: Option<String>,
        #[command(flatten)]
        driver: DriverFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Radius calibration: finite-sample formula or a shrinking schedule.
    Calibrate {
        /// Sample count.
        #[arg(long)]
        samples: usize,
        /// Confidence level in (0, 1).
        #[arg(long)]
        eta: Option<f64>,
        /// Sample space dimension.
        #[arg(long)]
        dim: usize,
        /// Light-tail exponent, > 1.
        #[arg(long = "tail-exponent")]
        tail_exponent: Option<f64>,
        /// Concentration constants.
        #[arg(long)]
        c1: Option<f64>,
        #[arg(long)]
        c2: Option<f64>,
        /// Schedule mode: log2, power:p, or value:k.
        #[arg(long)]
        schedule: Option<String>,
        /// Family whose envelope constant scales the radius.
        #[arg(long, value_enum)]
        family: Option<FamilyArg>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Cli {
    pub fn into_config(self) -> Result<RunConfig, CliError> {
        Ok(match self.command {
            CliCommand::Distance { a, b, family, alpha, norm, out } => {
                let mut c = RunConfig::base(CommandKind::Distance);
                c.inputs = vec![a, b];
                c.family = Some(family);
                c.alpha = alpha;
                c.norm = norm;
                c.out = out;
                c
            }
            CliCommand::Wce { input, ball, loss, support, out } => {
                let mut c = RunConfig::base(CommandKind::Wce);
                c.inputs = vec![input];
                c.family = Some(ball.family);
                c.alpha = ball.alpha;
                c.eps = ball.eps;
                c.norm = ball.norm;
                c.loss = Some(loss);
                c.support = support;
                c.out = out;
                c
            }
            CliCommand::Sweep { input, alpha_grid, eps, norm, loss, support, out } => {
                let mut c = RunConfig::base(CommandKind::Sweep);
                c.inputs = vec![input];
                c.alpha_grid = Some(AlphaGrid::parse(&alpha_grid)?);
                c.eps = Some(eps);
                c.norm = norm;
                c.loss = Some(loss);
                c.support = support;
                c.out = out;
                c
            }
            CliCommand::Portfolio { input, ball, loss, driver, out } => {
                let mut c = RunConfig::base(CommandKind::Portfolio);
                c.inputs = vec![input];
                c.family = Some(ball.family);
                c.alpha = ball.alpha;
                c.eps = ball.eps;
                c.norm = ball.norm;
                c.loss = loss;
                c.bounds = driver.bounds;
                c.iterations = driver.iterations;
                c.seed = driver.seed;
                c.out = out;
                c
            }
            CliCommand::Regress { input, ball, loss, driver, out } => {
                let mut c = RunConfig::base(CommandKind::Regress);
                c.inputs = vec![input];
                c.family = Some(ball.family);
                c.alpha = ball.alpha;
                c.eps = ball.eps;
                c.norm = ball.norm;
                c.loss = loss;
                c.bounds = driver.bounds;
                c.iterations = driver.iterations;
                c.seed = driver.seed;
                c.out = out;
                c
            }
            CliCommand::Classify { input, ball, loss, driver, out } => {
                let mut c = RunConfig::base(CommandKind::Classify);
                c.inputs = vec![input];
                c.family = Some(ball.family);
                c.alpha = ball.alpha;
                c.eps = ball.eps;
                c.norm = ball.norm;
                c.loss = loss;
                c.bounds = driver.bounds;
                c.iterations = driver.iterations;
                c.seed = driver.seed;
                c.out = out;
                c
            }
            CliCommand::Calibrate {
                samples,
                eta,
                dim,
                tail_exponent,
                c1,
                c2,
                schedule,
                family,
                alpha,
                out,
            } => {
                let mut c = RunConfig::base(CommandKind::Calibrate);
                c.family = family;
                c.alpha = alpha;
                c.calibrate =
                    Some(CalibrateParams { n: samples, eta, dim, tail_exponent, c1, c2, schedule });
                c.out = out;
                c
            }
        })
    }
}

/// Binary entry point. Artifact routing: a sweep table goes to --out when
/// given (the document then goes to stdout), otherwise the table itself is
/// the stdout payload; other commands send their document to --out or stdout.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    let started = std::time::Instant::now();
    let config = match cli.into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&config) {
        Ok(artifacts) => {
            // Timing stays on stderr so artifacts are byte-identical across runs.
            eprintln!("elapsed: {:.3}s", started.elapsed().as_secs_f64());
            let written = match (&artifacts.table, &config.out) {
                (Some(table), Some(path)) => {
                    print!("{}", artifacts.document);
                    std::fs::write(path, table)
                }
                (Some(table), None) => {
                    print!("{table}");
                    Ok(())
                }
                (None, Some(path)) => std::fs::write(path, &artifacts.document),
                (None, None) => {
                    print!("{}", artifacts.document);
                    Ok(())
                }
            };
            if let Err(e) = written {
                eprintln!("error: cannot write output: {e}");
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> PathBuf {
        let path = dir.path().join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    #[test]
    fn sample_parsing_accepts_headers_and_reports_line_numbers() {
        let d = parse_samples_text("a,b,c\n0.2,-0.32,0.5\n-0.2,-0.2,0.2\n0.3,-0.1,-0.1\n")
            .unwrap();
        assert_eq!(d.n_atoms(), 3);
        assert_eq!(d.dim(), 3);
        assert!(d.weights().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));

        let err = parse_samples_text("").unwrap_err();
        assert!(err.to_string().contains("empty input"), "{err}");

        let err = parse_samples_text("1,2\n3,NaN\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let err = parse_samples_text("1,2\n3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(err.to_string().contains("expected 2"), "{err}");

        let err = parse_samples_text("1,2\nx,2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn config_round_trips_through_its_canonical_form() {
        let mut config = RunConfig::base(CommandKind::Sweep);
        config.inputs = vec![PathBuf::from("samples.csv")];
        config.alpha_grid = Some(AlphaGrid { lo: 0.5, hi: 0.995, n: 21 });
        config.eps = Some(0.2);
        config.loss = Some("scalar:x=1,2,-1;pieces=1,0|-1,0;split=0".to_string());
        config.out = Some(PathBuf::from("table.csv"));
        let canonical = config.canonical();
        let parsed = RunConfig::from_canonical(&canonical).unwrap();
        assert_eq!(parsed, config);
        assert_eq!(parsed.canonical(), canonical);
    }

    #[test]
    fn loss_descriptor_grammar_covers_every_form() {
        assert!(matches!(parse_loss("abs").unwrap(), LossSpec::Scalar { split: Some(s), .. } if s == 0.0));
        assert!(matches!(parse_loss("hinge").unwrap(), LossSpec::Scalar { split: None, .. }));
        match parse_loss("pwl:pieces=2,0|-1,1;split=0.5").unwrap() {
            LossSpec::Scalar { f, split } => {
                assert_eq!(f.pieces, vec![(2.0, 0.0), (-1.0, 1.0)]);
                assert_eq!(split, Some(0.5));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_loss("scalar:x=1,2,-1;pieces=1,0|-1,0;split=0").unwrap() {
            LossSpec::Composite { x, f, split } => {
                assert_eq!(x, vec![1.0, 2.0, -1.0]);
                assert_eq!(f.pieces.len(), 2);
                assert_eq!(split, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_loss("maxaffine:pieces=1,0,0.5|0,1,-0.2").unwrap() {
            LossSpec::MaxAffine(p) => {
                assert_eq!(p[0].gradient, vec![1.0, 0.0]);
                assert_eq!(p[0].offset, 0.5);
                assert_eq!(p[1].gradient, vec![0.0, 1.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_loss("utility:pieces=1,0|0.5,0.1").unwrap(),
            LossSpec::Utility(p) if p.len() == 2
        ));

        assert!(parse_loss("nope").is_err());
        assert!(parse_loss("pwl:junk=1").is_err());
        assert!(parse_loss("scalar:x=1").is_err());
        // Utility descriptors never lower to a sample loss.
        assert!(parse_loss("utility:pieces=1,0").unwrap().to_loss(1).is_err());
        // Scalar losses need one-column samples.
        assert!(parse_loss("abs").unwrap().to_loss(2).is_err());
    }

    #[test]
    fn support_descriptors_resolve_and_validate() {
        assert!(matches!(resolve_support(None, 3).unwrap(), SupportSet::Unconstrained));
        match resolve_support(Some("box:-1,1;0,inf"), 2).unwrap() {
            SupportSet::Box { lower, upper } => {
                assert_eq!(lower, vec![-1.0, 0.0]);
                assert_eq!(upper[0], 1.0);
                assert!(upper[1].is_infinite());
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(resolve_support(Some("box:1,0"), 1).is_err());
        assert!(resolve_support(Some("box:-1,1"), 2).is_err());
        assert!(resolve_support(Some("mystery"), 1).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "poly.csv", "1,1,1\n-1,0,0\n0,-1,0\n");
        match resolve_support(Some(&format!("poly:{}", path.display())), 2).unwrap() {
            SupportSet::Polyhedron { g, h } => {
                assert_eq!(g.len(), 3);
                assert_eq!(h, vec![1.0, 0.0, 0.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_radius_wce_is_the_sample_average() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_file(&dir, "x.csv", "1.5\n-0.5\n3.0\n");
        let mut config = RunConfig::base(CommandKind::Wce);
        config.inputs = vec![input];
        config.family = Some(FamilyArg::Cvar);
        config.alpha = Some(0.3);
        config.eps = Some(0.0);
        config.loss = Some("abs".to_string());
        let artifacts = run(&config).unwrap();
        let doc: ResultDoc = serde_json::from_str(&artifacts.document).unwrap();
        let saa = (1.5 + 0.5 + 3.0) / 3.0;
        assert!((doc.value.unwrap() - saa).abs() < 1e-15, "value {:?}", doc.value);
        assert_eq!(doc.attained, Some(true));
    }

    #[test]
    fn distance_command_reproduces_the_tail_average() {
        let dir = tempfile::tempdir().unwrap();
        let a = write_file(&dir, "a.csv", "0\n");
        let b_rows = "0\n".repeat(19) + "1\n";
        let b = write_file(&dir, "b.csv", &b_rows);
        let mut config = RunConfig::base(CommandKind::Distance);
        config.inputs = vec![a, b];
        config.family = Some(FamilyArg::Cvar);
        config.alpha = Some(0.9);
        config.norm = NormArg::L1;
        let artifacts = run(&config).unwrap();
        let doc: ResultDoc = serde_json::from_str(&artifacts.document).unwrap();
        // The forced coupling has cost 1 on a 0.05 atom; the 0.1 tail
        // averages to one half.
        assert!((doc.value.unwrap() - 0.5).abs() < 1e-9, "value {:?}", doc.value);
    }

    /// Tangent surrogate of t^2 capped by linear tails, folded along a fixed
    /// direction: the instance behind the level-sweep shape checks.
    fn sweep_instance(dir: &tempfile::TempDir) -> RunConfig {
        let f = Pwl1d::quadratic_tangents(
            &[-1.0, -0.94, -0.5, 0.0, 0.5, 0.94, 1.0],
            Some((7.0, -6.0)),
        );
        let pieces: Vec<String> =
            f.pieces.iter().map(|&(s, c)| format!("{s},{c}")).collect();
        let descriptor = format!("scalar:x=1,2,-1;pieces={};split=0", pieces.join("|"));
        let input =
            write_file(dir, "samples.csv", "0.2,-0.32,0.5\n-0.2,-0.2,0.2\n0.3,-0.1,-0.1\n");
        let mut config = RunConfig::base(CommandKind::Sweep);
        config.inputs = vec![input];
        config.alpha_grid = Some(AlphaGrid { lo: 0.5, hi: 0.995, n: 21 });
        config.eps = Some(0.2);
        config.loss = Some(descriptor);
        config
    }

    fn parse_table(table: &str) -> Vec<(f64, f64, f64, f64, String, bool)> {
        table
            .lines()
            .skip(2)
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                (
                    f[0].parse().unwrap(),
                    f[1].parse().unwrap(),
                    f[2].parse().unwrap(),
                    f[3].parse().unwrap(),
                    f[4].to_string(),
                    f[5].parse().unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn sweep_table_has_the_advertised_shape() {
        let dir = tempfile::tempdir().unwrap();
        let config = sweep_instance(&dir);
        let artifacts = run(&config).unwrap();
        let table = artifacts.table.unwrap();
        assert!(table.starts_with("# format_version=1\nalpha,beta,"));
        let rows = parse_table(&table);
        assert_eq!(rows.len(), 21);
        // Rows are sorted by level; the shift coefficient runs the other way.
        for w in rows.windows(2) {
            assert!(w[1].0 > w[0].0);
            assert!(w[1].1 < w[0].1);
        }

        // Tail column: a max of two affine functions of the coefficient. The
        // flat line is read off the smallest coefficient, the sloped line off
        // the two largest; every row must then sit on the upper envelope.
        let mut by_beta: Vec<(f64, f64)> = rows.iter().map(|r| (r.1, r.2)).collect();
        by_beta.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let flat = by_beta[0].1;
        let (b1, v1) = by_beta[by_beta.len() - 2];
        let (b2, v2) = by_beta[by_beta.len() - 1];
        let slope = (v2 - v1) / (b2 - b1);
        let intercept = v2 - slope * b2;
        for &(beta, v) in &by_beta {
            let fit = flat.max(intercept + slope * beta);
            assert!((v - fit).abs() < 1e-9, "residual at beta {beta}: {v} vs {fit}");
        }

        // Expectile column: convex in the coefficient, so the divided
        // differences must be nondecreasing.
        let ev: Vec<(f64, f64)> = {
            let mut v: Vec<(f64, f64)> = rows.iter().map(|r| (r.1, r.3)).collect();
            v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            v
        };
        let mut prev_slope = f64::NEG_INFINITY;
        for w in ev.windows(2) {
            let s = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            assert!(s >= prev_slope - 1e-9, "convexity breaks at beta {}", w[1].0);
            prev_slope = s;
        }

        // Both families meet the sphere mean once the coefficient is small.
        let last = rows.last().unwrap();
        assert!((last.2 - last.3).abs() < 1e-9, "curves split at tiny beta");

        // The instance exercises both tail branches and both attainability
        // answers across the grid.
        assert!(rows.iter().any(|r| r.4 == "sphere") && rows.iter().any(|r| r.4 == "shift"));
        assert!(rows.iter().any(|r| r.5) && rows.iter().any(|r| !r.5));
    }

    #[test]
    fn sweep_artifacts_are_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let config = sweep_instance(&dir);
        let first = run(&config).unwrap();
        let second = run(&config).unwrap();
        assert_eq!(first.document, second.document);
        assert_eq!(first.table, second.table);
    }

    #[test]
    fn driver_commands_solve_and_report() {
        let dir = tempfile::tempdir().unwrap();

        let input = write_file(&dir, "returns.csv", "0.15,-0.05\n-0.02,0.10\n");
        let mut config = RunConfig::base(CommandKind::Portfolio);
        config.inputs = vec![input];
        config.family = Some(FamilyArg::Cvar);
        config.alpha = Some(0.5);
        config.eps = Some(0.05);
        let doc: ResultDoc =
            serde_json::from_str(&run(&config).unwrap().document).unwrap();
        let x = doc.decision.unwrap();
        assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-9, "allocation {x:?}");
        assert!(doc.value.unwrap().is_finite());

        let input = write_file(&dir, "reg.csv", "1,1\n");
        let mut config = RunConfig::base(CommandKind::Regress);
        config.inputs = vec![input];
        config.family = Some(FamilyArg::Cvar);
        config.alpha = Some(0.0);
        config.eps = Some(0.1);
        config.norm = NormArg::L1;
        let doc: ResultDoc =
            serde_json::from_str(&run(&config).unwrap().document).unwrap();
        assert!((doc.value.unwrap() - 0.1).abs() < 2e-3, "value {:?}", doc.value);

        let input = write_file(&dir, "cls.csv", "2,1\n-1,-1\n");
        let mut config = RunConfig::base(CommandKind::Classify);
        config.inputs = vec![input];
        config.family = Some(FamilyArg::Cvar);
        config.alpha = Some(0.5);
        config.eps = Some(0.0);
        let doc: ResultDoc =
            serde_json::from_str(&run(&config).unwrap().document).unwrap();
        assert!(doc.value.unwrap() < 1e-6, "value {:?}", doc.value);

        let input = write_file(&dir, "badlabel.csv", "2,1\n-1,0.5\n");
        let mut config = RunConfig::base(CommandKind::Classify);
        config.inputs = vec![input];
        config.family = Some(FamilyArg::Cvar);
        config.alpha = Some(0.5);
        config.eps = Some(0.0);
        let err = run(&config).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }

    #[test]
    fn calibrate_command_evaluates_both_modes() {
        let mut config = RunConfig::base(CommandKind::Calibrate);
        config.family = Some(FamilyArg::Cvar);
        config.alpha = Some(0.5);
        config.calibrate = Some(CalibrateParams {
            n: 1,
            eta: Some((-1.0f64).exp()),
            dim: 2,
            tail_exponent: Some(2.0),
            c1: Some(1.0),
            c2: Some(1.0),
            schedule: None,
        });
        let doc: ResultDoc =
            serde_json::from_str(&run(&config).unwrap().document).unwrap();
        // Envelope constant 2 at level one half; e0 = 1 lands in the small
        // regime, so the radius is exactly 2.
        assert!((doc.value.unwrap() - 2.0).abs() < 1e-12, "value {:?}", doc.value);

        config.calibrate.as_mut().unwrap().schedule = Some("log2".to_string());
        config.calibrate.as_mut().unwrap().n = 100;
        let doc: ResultDoc =
            serde_json::from_str(&run(&config).unwrap().document).unwrap();
        let expected = (100.0f64.ln().powi(2) / 100.0).sqrt();
        assert!((doc.value.unwrap() - expected).abs() < 1e-15);

        config.calibrate.as_mut().unwrap().schedule = Some("power:1".to_string());
        assert_eq!(run(&config).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn documents_refuse_non_finite_numbers() {
        let mut doc = ResultDoc::new(CommandKind::Wce);
        doc.value = Some(f64::NAN);
        assert!(doc.render().is_err());
        doc.value = Some(1.0);
        doc.decision = Some(vec![0.5, f64::INFINITY]);
        assert!(doc.render().is_err());
        doc.decision = Some(vec![0.5, 0.5]);
        assert!(doc.render().is_ok());
    }
}
