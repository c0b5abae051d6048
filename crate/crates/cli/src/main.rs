use clap::{Args, Parser, Subcommand};
use qvi::bellman::policy_iteration;
use qvi::harness::{emit_table, render_table, run_study, ProblemName, StudySpec, TableFormat};
use qvi::hjbqvi::SchemeKind;
use qvi::problems::{build_mdp, MdpSpec};
use rand::rngs::StdRng;
use rand::SeedableRng;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "qvi-solve", about = "Refinement studies for impulse-control HJB quasi-variational inequalities")]
struct Cli {
    /// JSON study file; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a benchmark on levels h = 1, 1/2, ... and print the convergence table.
    Run(RunArgs),
    /// Solve one random discounted MDP by policy iteration.
    Mdp(MdpArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    problem: Option<ProblemName>,
    #[arg(long)]
    scheme: Option<SchemeKind>,
    #[arg(long)]
    levels: Option<usize>,
    /// Comma-separated probe coordinates, e.g. "45.2,45.2".
    #[arg(long)]
    probe: Option<String>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Table path; the format follows the extension (csv, json, else pretty).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the format implied by --out.
    #[arg(long)]
    format: Option<TableFormat>,
    /// Check every policy matrix and fail on stability violations.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct MdpArgs {
    #[arg(long, default_value_t = 6)]
    states: usize,
    #[arg(long, default_value_t = 3)]
    controls: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.95)]
    max_discount: f64,
}

fn parse_probe(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("probe '{t}': {e}"))).collect()
}

fn load_spec(config: Option<&PathBuf>) -> Result<StudySpec, Box<dyn std::error::Error>> {
    Ok(match config {
        Some(path) => StudySpec::from_json(&std::fs::read_to_string(path)?)?,
        None => StudySpec::default(),
    })
}

fn run(config: Option<&PathBuf>, args: RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = load_spec(config)?;
    if let Some(p) = args.problem {
        spec.problem = p;
    }
    if let Some(s) = args.scheme {
        spec.scheme = s;
    }
    if let Some(l) = args.levels {
        spec.levels = l;
    }
    if let Some(p) = &args.probe {
        spec.probe = Some(parse_probe(p)?);
    }
    if let Some(t) = args.tolerance {
        spec.tolerance = t;
    }
    if args.out.is_some() {
        spec.output = args.out;
    }
    spec.strict |= args.strict;

    let report = run_study(&spec)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", render_table(&report, TableFormat::Pretty)?);
    if let Some(path) = &spec.output {
        let format = args.format.unwrap_or_else(|| TableFormat::from_path(path));
        emit_table(&report, format, path)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn mdp(args: MdpArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = StdRng::seed_from_u64(args.seed);
    let problem = build_mdp(MdpSpec::random(args.states, args.controls, args.max_discount, &mut rng))?;
    let (values, stats) = policy_iteration(&problem, &vec![0.0; args.states], &Default::default())?;
    println!("state  value");
    for (i, v) in values.iter().enumerate() {
        println!("{i:>5}  {v:.12}");
    }
    println!("policy iterations: {}, residual: {:.3e}", stats.policy_iterations, stats.residual_inf);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(cli.config.as_ref(), args),
        Command::Mdp(args) => mdp(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
