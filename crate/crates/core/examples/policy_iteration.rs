//! Policy iteration on a small row-decoupled Bellman problem, with
//! epsilon-policy iteration, row scaling and control restriction.
//!
//! ```text
//! cargo run --release --example policy_iteration
//! ```

use qvi::bellman::{
    eps_policy_iteration, exact_improver, improve_policy, policy_iteration, restrict_controls, scale_problem, BellmanProblem, DenseBellman,
    IterationConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a random walk on 5 sites with a choice, at each site, between resting
    // (reward 0.2, strong discount) and moving right (reward by site)
    let n = 5;
    let rows = (0..n)
        .map(|i| {
            let mut rest = vec![0.0; n];
            rest[i] = 1.0;
            let mut step = vec![0.0; n];
            step[i] = 1.0;
            if i + 1 < n {
                step[i + 1] = -0.9;
            }
            vec![(rest, 0.2), (step, i as f64 * 0.1 - 0.1)]
        })
        .collect();
    let prob = DenseBellman { rows };
    let cfg = IterationConfig { tolerance: 1e-12, ..IterationConfig::default() };

    let (u, stats) = policy_iteration(&prob, &vec![0.0; n], &cfg)?;
    println!("U = {u:.6?}");
    println!("policy {:?}, {} iterations", improve_policy(&prob, &u)?.0, stats.policy_iterations);
    for rec in &stats.log {
        println!("  iteration {}: residual {:.2e}", rec.iter, rec.residual_inf);
    }

    let (v, _) = eps_policy_iteration(&prob, &vec![0.0; n], &cfg, exact_improver)?;
    println!("epsilon-PI agrees: {}", u.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-10));

    let scaled = scale_problem(&prob, |i, p| 1.0 + (i + p) as f64)?;
    let (w, _) = policy_iteration(&scaled, &vec![0.0; n], &cfg)?;
    println!("scaled rows give the same U: {}", u.iter().zip(&w).all(|(a, b)| (a - b).abs() < 1e-10));

    let resting = restrict_controls(&prob, |_, p| p == 0)?;
    let (r, _) = policy_iteration(&resting, &vec![0.0; n], &cfg)?;
    println!("always resting: U = {r:.6?} ({} controls per row)", resting.control_count(0));
    Ok(())
}
