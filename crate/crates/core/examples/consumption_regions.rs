//! Optimal consumption with transaction costs: the buy, sell and
//! no-transaction regions at t = 0 on the coarsest grid.
//!
//! ```text
//! cargo run --release --example consumption_regions
//! ```

use qvi::harness::region;
use qvi::hjbqvi::{layer_records, recover_controls, solve_finite_horizon, ImpulseProblem, SchemeConfig, SchemeKind};
use qvi::problems::{build_consumption, ConsumptionParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = ConsumptionParams::default();
    let b = build_consumption(&params, 0)?;
    let cfg = SchemeConfig::new(SchemeKind::Penalty);
    let time = b.time.as_ref().expect("finite horizon");
    let sol = solve_finite_horizon(&b.problem, time, &cfg)?;
    let mesh = b.problem.mesh();
    println!("V(0, s0, q0) = {:.8}", sol.value_at(mesh, &b.probe));

    let controls = recover_controls(&b.problem, &sol, sol.layers.len() - 1, &cfg)?;
    let records = layer_records(mesh, sol.last(), &controls);
    let (ns, nq) = (mesh.axis(0).len(), mesh.axis(1).len());
    // s across, q down (largest q first); B buy stock, S sell stock, . no transaction
    println!("rows: q from {} down to 0; columns: s from 0 to {}", params.r_q, params.r_s);
    for j in (0..nq).rev() {
        let line: String = (0..ns)
            .map(|i| match region(&records[mesh.flatten([i, j])]).label() {
                "B" => 'B',
                "S" => 'S',
                _ => '.',
            })
            .collect();
        println!("{:7.1} {line}", mesh.axis(1).points()[j]);
    }
    Ok(())
}
