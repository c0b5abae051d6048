//! Stationary consumption problem: one nonlinear system instead of time
//! stepping. Compares the penalty and direct control formulations.
//!
//! ```text
//! cargo run --release --example infinite_consumption
//! ```

use qvi::hjbqvi::{solve_infinite_horizon, ImpulseProblem, SchemeConfig, SchemeKind};
use qvi::problems::{build_infinite_consumption, ConsumptionParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = ConsumptionParams::default();
    for level in 0..2 {
        let b = build_infinite_consumption(&params, level)?;
        for scheme in [SchemeKind::Penalty, SchemeKind::DirectControl] {
            let sol = solve_infinite_horizon(&b.problem, &SchemeConfig::new(scheme))?;
            let stats = &sol.stats[0];
            println!(
                "level {level} {scheme:?}: V(s0, q0) = {:.8}, {} policy its, {} linear its",
                sol.value_at(b.problem.mesh(), &b.probe),
                stats.policy_iterations,
                stats.total_linear_iterations()
            );
        }
    }
    Ok(())
}
