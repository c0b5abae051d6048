//! Discounted Markov decision processes as Bellman problems.
//!
//! ```text
//! cargo run --release --example mdp
//! ```

use qvi::bellman::{improve_policy, policy_iteration, restrict_controls, IterationConfig};
use qvi::problems::{build_mdp, MdpSpec};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // machine maintenance: state 0 working, 1 worn, 2 broken
    // controls: 0 keep running, 1 repair
    let spec = MdpSpec {
        reward: vec![vec![10.0, 4.0], vec![6.0, 0.0], vec![0.0, -8.0]],
        discount: vec![vec![0.9; 2]; 3],
        transition: vec![
            vec![vec![0.7, 0.3, 0.0], vec![1.0, 0.0, 0.0]],
            vec![vec![0.0, 0.6, 0.4], vec![1.0, 0.0, 0.0]],
            vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
        ],
    };
    let mdp = build_mdp(spec)?;
    let cfg = IterationConfig { tolerance: 1e-12, ..IterationConfig::default() };
    let (v, stats) = policy_iteration(&mdp, &[0.0; 3], &cfg)?;
    let pol = improve_policy(&mdp, &v)?;
    println!("values {v:.4?}, policy {:?} after {} iterations", pol.0, stats.policy_iterations);

    // forbidding repairs of a working machine changes nothing at the optimum
    let r = restrict_controls(&mdp, |i, p| i != 0 || p == 0)?;
    let (w, _) = policy_iteration(&r, &[0.0; 3], &cfg)?;
    println!("restricted values {w:.4?}");

    let mut rng = StdRng::seed_from_u64(1);
    let big = build_mdp(MdpSpec::random(200, 4, 0.95, &mut rng))?;
    let (v, stats) = policy_iteration(&big, &vec![0.0; 200], &cfg)?;
    println!(
        "random 200-state MDP: V[0] = {:.6}, {} policy iterations, {} linear iterations",
        v[0],
        stats.policy_iterations,
        stats.total_linear_iterations()
    );
    Ok(())
}
