//! Refinement studies: solve a benchmark on successively finer grids, record
//! the probe value, iteration counts and wall time per level, and emit tables.

use crate::bellman::{policy_iteration, BellmanError};
use crate::grid::Mesh;
use crate::hjbqvi::{export_layer, recover_controls, solve_finite_horizon, solve_infinite_horizon, HjbError, ImpulseProblem, NodeRecord, SchemeConfig, SchemeKind, Solution};
use crate::problems::{build_consumption, build_fex, build_gmwb, build_infinite_consumption, build_mdp, Benchmark, ConsumptionParams, FexParams, GmwbParams, MdpSpec, ProblemError};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid study: {0}")]
    InvalidStudy(String),
    #[error("level {level}: {source}")]
    Solve { level: usize, source: HjbError },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Bellman(#[from] BellmanError),
    #[error(transparent)]
    Hjb(#[from] HjbError),
    #[error("table i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("table csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("table json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot parse table: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemName {
    Fex,
    Consumption,
    Gmwb,
    ConsumptionInfinite,
    MdpRandom,
}

impl FromStr for ProblemName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fex" => Ok(Self::Fex),
            "consumption" => Ok(Self::Consumption),
            "gmwb" => Ok(Self::Gmwb),
            "consumption-infinite" => Ok(Self::ConsumptionInfinite),
            "mdp-random" => Ok(Self::MdpRandom),
            _ => Err(format!("unknown problem '{s}' (fex, consumption, gmwb, consumption-infinite, mdp-random)")),
        }
    }
}

impl std::fmt::Display for ProblemName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fex => "fex",
            Self::Consumption => "consumption",
            Self::Gmwb => "gmwb",
            Self::ConsumptionInfinite => "consumption-infinite",
            Self::MdpRandom => "mdp-random",
        })
    }
}

/// Benchmark parameters; a config file may override any subset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemParams {
    pub fex: FexParams,
    pub consumption: ConsumptionParams,
    pub gmwb: GmwbParams,
    pub mdp: MdpStudyParams,
}

/// Random MDP studies double the state count per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MdpStudyParams {
    pub states: usize,
    pub controls: usize,
    pub max_discount: f64,
    pub seed: u64,
}

impl Default for MdpStudyParams {
    fn default() -> Self {
        Self { states: 16, controls: 3, max_discount: 0.95, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySpec {
    pub problem: ProblemName,
    pub scheme: SchemeKind,
    /// Number of levels; level `l` has `h = 2^-l`.
    pub levels: usize,
    /// Defaults to the benchmark's own probe point.
    pub probe: Option<Vec<f64>>,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Fail on stability warnings and check every policy matrix.
    pub strict: bool,
    pub params: ProblemParams,
    pub output: Option<PathBuf>,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            problem: ProblemName::Fex,
            scheme: SchemeKind::Penalty,
            levels: 3,
            probe: None,
            tolerance: 1e-6,
            max_iterations: 500,
            strict: false,
            params: ProblemParams::default(),
            output: None,
        }
    }
}

impl StudySpec {
    pub fn new(problem: ProblemName, scheme: SchemeKind, levels: usize) -> Self {
        Self { problem, scheme, levels, ..Self::default() }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.levels < 2 {
            return Err(HarnessError::InvalidStudy(format!("need at least 2 levels, got {}", self.levels)));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(HarnessError::InvalidStudy("tolerance and max_iterations must be positive".into()));
        }
        if self.problem == ProblemName::ConsumptionInfinite && self.scheme == SchemeKind::ExplicitImpulse {
            return Err(HarnessError::InvalidStudy("explicit-impulse needs a finite horizon".into()));
        }
        Ok(())
    }

    pub fn scheme_config(&self) -> SchemeConfig {
        let mut cfg = SchemeConfig::new(self.scheme);
        cfg.iteration.tolerance = self.tolerance;
        cfg.iteration.max_iterations = self.max_iterations;
        cfg.iteration.check_m_matrix = self.strict;
        cfg.strict = self.strict;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub h: f64,
    pub value: f64,
    pub avg_policy_its: f64,
    pub avg_linear_its: f64,
    pub ratio: Option<f64>,
    pub time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<LevelReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ConvergenceReport {
    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }
}

/// Ratio of successive changes `(V[l-1] - V[l-2]) / (V[l] - V[l-1])`;
/// `None` for the first two levels and for a zero denominator.
pub fn successive_ratios(values: &[f64]) -> Vec<Option<f64>> {
    (0..values.len())
        .map(|l| {
            if l < 2 {
                return None;
            }
            let den = values[l] - values[l - 1];
            (den != 0.0).then(|| (values[l - 1] - values[l - 2]) / den)
        })
        .collect()
}

struct LevelOutcome {
    value: f64,
    avg_policy_its: f64,
    avg_linear_its: f64,
    warnings: Vec<String>,
}

fn check_probe(mesh: &Mesh, probe: &[f64]) -> Result<(), HarnessError> {
    if probe.len() != mesh.dim() {
        return Err(HarnessError::InvalidStudy(format!("probe has {} coordinates, mesh has {}", probe.len(), mesh.dim())));
    }
    for (k, &x) in probe.iter().enumerate() {
        let g = mesh.axis(k);
        if !(x >= g.lo() && x <= g.hi()) {
            return Err(HarnessError::InvalidStudy(format!("probe coordinate {x} outside [{}, {}]", g.lo(), g.hi())));
        }
    }
    Ok(())
}

fn solve_benchmark<P: ImpulseProblem>(b: Benchmark<P>, spec: &StudySpec, cfg: &SchemeConfig) -> Result<(Solution, Mesh, Vec<f64>), HjbError> {
    let solution = match &b.time {
        Some(time) => solve_finite_horizon(&b.problem, time, cfg)?,
        None => solve_infinite_horizon(&b.problem, cfg)?,
    };
    let probe = spec.probe.clone().unwrap_or(b.probe);
    Ok((solution, b.problem.mesh().clone(), probe))
}

fn run_level(spec: &StudySpec, level: usize) -> Result<LevelOutcome, HarnessError> {
    let cfg = spec.scheme_config();
    let lv = level as u32;
    let p = &spec.params;
    let wrap = |source| HarnessError::Solve { level, source };
    let (solution, mesh, probe) = match spec.problem {
        ProblemName::Fex => solve_benchmark(build_fex(&p.fex, lv)?, spec, &cfg).map_err(wrap)?,
        ProblemName::Consumption => solve_benchmark(build_consumption(&p.consumption, lv)?, spec, &cfg).map_err(wrap)?,
        ProblemName::ConsumptionInfinite => solve_benchmark(build_infinite_consumption(&p.consumption, lv)?, spec, &cfg).map_err(wrap)?,
        ProblemName::Gmwb => solve_benchmark(build_gmwb(&p.gmwb, lv)?, spec, &cfg).map_err(wrap)?,
        ProblemName::MdpRandom => return run_mdp_level(spec, level),
    };
    check_probe(&mesh, &probe)?;
    Ok(LevelOutcome {
        value: solution.value_at(&mesh, &probe),
        avg_policy_its: solution.avg_policy_iterations(),
        avg_linear_its: solution.avg_linear_iterations(),
        warnings: solution.warnings,
    })
}

fn run_mdp_level(spec: &StudySpec, level: usize) -> Result<LevelOutcome, HarnessError> {
    let m = &spec.params.mdp;
    let states = m.states << level;
    let mut rng = StdRng::seed_from_u64(m.seed);
    let mdp = build_mdp(MdpSpec::random(states, m.controls, m.max_discount, &mut rng))?;
    let state = match spec.probe.as_deref() {
        None => 0,
        Some([x]) if *x >= 0.0 && x.fract() == 0.0 && (*x as usize) < states => *x as usize,
        Some(p) => return Err(HarnessError::InvalidStudy(format!("mdp probe must be one state index below {states}, got {p:?}"))),
    };
    let cfg = spec.scheme_config();
    let (u, stats) = policy_iteration(&mdp, &vec![0.0; states], &cfg.iteration)?;
    Ok(LevelOutcome {
        value: u[state],
        avg_policy_its: stats.policy_iterations as f64,
        avg_linear_its: stats.total_linear_iterations() as f64,
        warnings: Vec::new(),
    })
}

/// Runs the levels in order; a failing level aborts the study.
pub fn run_study(spec: &StudySpec) -> Result<ConvergenceReport, HarnessError> {
    spec.validate()?;
    let mut report = ConvergenceReport::default();
    for level in 0..spec.levels {
        let start = Instant::now();
        let out = run_level(spec, level)?;
        let time_s = start.elapsed().as_secs_f64();
        report.warnings.extend(out.warnings.into_iter().map(|w| format!("level {level}: {w}")));
        report.rows.push(LevelReport {
            h: 0.5f64.powi(level as i32),
            value: out.value,
            avg_policy_its: out.avg_policy_its,
            avg_linear_its: out.avg_linear_its,
            ratio: None,
            time_s,
        });
        let ratios = successive_ratios(&report.values());
        report.rows.last_mut().expect("row pushed").ratio = ratios[level];
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
    Pretty,
}

impl FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "pretty" | "txt" => Ok(Self::Pretty),
            _ => Err(format!("unknown table format '{s}'")),
        }
    }
}

impl TableFormat {
    /// Guess from a file extension; anything unknown is pretty.
    pub fn from_path(path: &Path) -> Self {
        path.extension().and_then(|e| e.to_str()).and_then(|e| e.parse().ok()).unwrap_or(Self::Pretty)
    }
}

pub const COLUMNS: [&str; 6] = ["h", "value", "avg_policy_its", "avg_linear_its", "ratio", "time_s"];

/// `x` with 12 significant digits in fixed notation.
pub fn sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-6..=15).contains(&mag) {
        return format!("{x:.11e}");
    }
    format!("{:.*}", (11 - mag).max(0) as usize, x)
}

/// csv and json keep every bit so that they parse back exactly; the pretty
/// table rounds values to 12 significant digits.
pub fn render_table(report: &ConvergenceReport, format: TableFormat) -> Result<String, HarnessError> {
    if report.rows.is_empty() {
        return Err(HarnessError::InvalidStudy("empty report".into()));
    }
    match format {
        TableFormat::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        TableFormat::Csv => {
            let mut wr = csv::Writer::from_writer(Vec::new());
            wr.write_record(COLUMNS)?;
            for r in &report.rows {
                wr.write_record([
                    r.h.to_string(),
                    r.value.to_string(),
                    r.avg_policy_its.to_string(),
                    r.avg_linear_its.to_string(),
                    r.ratio.map(|x| x.to_string()).unwrap_or_default(),
                    r.time_s.to_string(),
                ])?;
            }
            let bytes = wr.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
            String::from_utf8(bytes).map_err(|e| HarnessError::Parse(e.to_string()))
        }
        TableFormat::Pretty => {
            let cells: Vec<[String; 6]> = report
                .rows
                .iter()
                .map(|r| {
                    [
                        h_label(r.h),
                        sig12(r.value),
                        format!("{:.2}", r.avg_policy_its),
                        format!("{:.2}", r.avg_linear_its),
                        r.ratio.map(|x| format!("{x:.2}")).unwrap_or_default(),
                        format!("{:.3}", r.time_s),
                    ]
                })
                .collect();
            let widths: Vec<usize> = (0..6).map(|k| cells.iter().map(|c| c[k].len()).chain([COLUMNS[k].len()]).max().unwrap_or(0)).collect();
            let mut out = String::new();
            let line = |out: &mut String, row: &[&str]| {
                let padded: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
                let _ = writeln!(out, "{}", padded.join("  ").trim_end());
            };
            line(&mut out, &COLUMNS);
            for c in &cells {
                line(&mut out, &c.iter().map(String::as_str).collect::<Vec<_>>());
            }
            Ok(out)
        }
    }
}

fn h_label(h: f64) -> String {
    if h >= 1.0 {
        return format!("{h}");
    }
    let inv = 1.0 / h;
    if inv.fract() == 0.0 {
        format!("1/{inv}")
    } else {
        format!("{h}")
    }
}

pub fn parse_table(text: &str, format: TableFormat) -> Result<ConvergenceReport, HarnessError> {
    match format {
        TableFormat::Json => Ok(serde_json::from_str(text)?),
        TableFormat::Csv => {
            let mut rd = csv::Reader::from_reader(text.as_bytes());
            let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
            if header != COLUMNS {
                return Err(HarnessError::Parse(format!("unexpected header {header:?}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| HarnessError::Parse(format!("'{s}': {e}")));
            let rows = rd
                .records()
                .map(|rec| {
                    let rec = rec?;
                    Ok(LevelReport {
                        h: num(&rec[0])?,
                        value: num(&rec[1])?,
                        avg_policy_its: num(&rec[2])?,
                        avg_linear_its: num(&rec[3])?,
                        ratio: if rec[4].is_empty() { None } else { Some(num(&rec[4])?) },
                        time_s: num(&rec[5])?,
                    })
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            Ok(ConvergenceReport { rows, warnings: Vec::new() })
        }
        TableFormat::Pretty => Err(HarnessError::Parse("the pretty format is for reading, not parsing".into())),
    }
}

pub fn emit_table(report: &ConvergenceReport, format: TableFormat, path: &Path) -> Result<(), HarnessError> {
    let text = render_table(report, format)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Exports value and optimal controls of `layer` (0 is the terminal layer
/// for finite horizons) as csv or, for a `.json` path, json.
pub fn export_control_field<P: ImpulseProblem + ?Sized>(prob: &P, solution: &Solution, layer: usize, cfg: &SchemeConfig, path: &Path) -> Result<(), HarnessError> {
    if solution.layers.is_empty() {
        return Err(HarnessError::InvalidStudy("solution has no layers".into()));
    }
    let controls = recover_controls(prob, solution, layer, cfg)?;
    export_layer(prob.mesh(), &solution.layers[layer], &controls, path)?;
    Ok(())
}

/// Trading regions of the consumption problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Buy,
    Sell,
    NoTransaction,
}

impl Region {
    pub fn label(self) -> &'static str {
        match self {
            Self::Buy => "B",
            Self::Sell => "S",
            Self::NoTransaction => "NT",
        }
    }
}

/// Impulse nodes buy or sell by the sign of `z`; everything else is NT.
pub fn region(record: &NodeRecord) -> Region {
    match (record.d, record.z) {
        (1, Some(z)) if z > 0.0 => Region::Buy,
        (1, Some(z)) if z < 0.0 => Region::Sell,
        _ => Region::NoTransaction,
    }
}
