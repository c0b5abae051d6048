//! Guaranteed minimum withdrawal benefit: value at (s, q) = (100, 100) and
//! the withdrawal decision along the guarantee account.
//!
//! ```text
//! cargo run --release --example gmwb [levels]
//! ```

use qvi::harness::{render_table, run_study, ProblemName, StudySpec, TableFormat};
use qvi::hjbqvi::{recover_controls, solve_finite_horizon, ImpulseProblem, SchemeConfig, SchemeKind};
use qvi::problems::{build_gmwb, GmwbParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let levels = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2);
    let report = run_study(&StudySpec::new(ProblemName::Gmwb, SchemeKind::Penalty, levels))?;
    print!("{}", render_table(&report, TableFormat::Pretty)?);

    let b = build_gmwb(&GmwbParams::default(), 0)?;
    let cfg = SchemeConfig::new(SchemeKind::Penalty);
    let sol = solve_finite_horizon(&b.problem, b.time.as_ref().expect("finite horizon"), &cfg)?;
    let controls = recover_controls(&b.problem, &sol, sol.layers.len() - 1, &cfg)?;
    let mesh = b.problem.mesh();
    let s = mesh.axis(0).points();
    let i = s.iter().position(|x| *x >= 100.0).unwrap_or(0);
    println!("\nt = 0, s = {:.1}", s[i]);
    println!("{:>8}  {:>10}  {:>6}  action", "q", "V", "rate");
    for (j, q) in mesh.axis(1).points().iter().enumerate().step_by(5) {
        let node = mesh.flatten([i, j]);
        let c = &controls[node];
        let action = match (c.impulse, c.z) {
            (true, Some(z)) => format!("withdraw {z:.2}"),
            _ => "continue".to_string(),
        };
        println!("{q:8.2}  {:10.4}  {:6.2}  {action}", sol.last()[node], c.w);
    }
    Ok(())
}
