//! A user-defined impulse control problem: cash balance management.
//!
//! The balance `x` follows `dx = -mu (x - x_bar) dt + sigma dW`. Holding a
//! balance away from zero costs `x^2` per unit time; the treasurer may pay
//! `c + k |z|` to move the balance by `z`. Only the trait methods are
//! supplied, the schemes come from the library.
//!
//! ```text
//! cargo run --release --example custom_problem
//! ```

use qvi::grid::{build_uniform_grid, DiscreteControlSet, Mesh, TimeGrid};
use qvi::hjbqvi::{recover_controls, solve_finite_horizon, ImpulseProblem, SchemeConfig, SchemeKind};

struct CashBalance {
    mesh: Mesh,
    w: DiscreteControlSet,
    mu: f64,
    x_bar: f64,
    sigma: f64,
    c: f64,
    k: f64,
}

impl CashBalance {
    fn new(points: usize) -> Result<Self, Box<dyn std::error::Error>> {
        Ok(Self {
            mesh: Mesh::line(build_uniform_grid(3.0, points)?),
            w: DiscreteControlSet::new(vec![0.0])?,
            mu: 0.5,
            x_bar: 1.0,
            sigma: 0.5,
            c: 0.2,
            k: 0.1,
        })
    }
}

impl ImpulseProblem for CashBalance {
    fn mesh(&self) -> &Mesh {
        &self.mesh
    }
    fn horizon(&self) -> f64 {
        5.0
    }
    fn discount(&self) -> f64 {
        0.05
    }
    fn controls(&self) -> &DiscreteControlSet {
        &self.w
    }
    fn drift(&self, _t: f64, x: [f64; 2], _w: f64) -> [f64; 2] {
        [-self.mu * (x[0] - self.x_bar), 0.0]
    }
    fn volatility(&self, _t: f64, _x: [f64; 2], _w: f64) -> [f64; 2] {
        [self.sigma, 0.0]
    }
    fn reward(&self, t: f64, x: [f64; 2], _w: f64) -> f64 {
        -(-self.discount() * t).exp() * x[0] * x[0]
    }
    fn terminal(&self, _x: [f64; 2]) -> f64 {
        0.0
    }
    fn impulse_controls(&self, _t: f64, node: usize) -> Vec<f64> {
        let x = self.mesh.coords(node)[0];
        self.mesh.axis(0).points().iter().map(|p| p - x).filter(|z| *z != 0.0).collect()
    }
    fn destination(&self, _t: f64, x: [f64; 2], z: f64) -> [f64; 2] {
        [x[0] + z, x[1]]
    }
    fn cost(&self, t: f64, _x: [f64; 2], z: f64) -> f64 {
        -(-self.discount() * t).exp() * (self.c + self.k * z.abs())
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prob = CashBalance::new(60)?;
    let time = TimeGrid::new(prob.horizon(), 50)?;
    for scheme in [SchemeKind::Penalty, SchemeKind::DirectControl, SchemeKind::ExplicitImpulse] {
        let cfg = SchemeConfig::new(scheme);
        let sol = solve_finite_horizon(&prob, &time, &cfg)?;
        println!("{scheme:?}: V(0, 0) = {:.6}, {:.2} policy its/step", sol.value_at(prob.mesh(), &[0.0]), sol.avg_policy_iterations());
    }

    // the band outside which the treasurer intervenes at t = 0
    let cfg = SchemeConfig::new(SchemeKind::Penalty);
    let sol = solve_finite_horizon(&prob, &time, &cfg)?;
    let controls = recover_controls(&prob, &sol, sol.layers.len() - 1, &cfg)?;
    let x = prob.mesh().axis(0).points();
    let inside: Vec<f64> = x.iter().zip(&controls).filter(|(_, c)| !c.impulse).map(|(x, _)| *x).collect();
    if let (Some(lo), Some(hi)) = (inside.first(), inside.last()) {
        println!("no intervention for x in [{lo:.2}, {hi:.2}]");
    }
    for (xi, c) in x.iter().zip(&controls).filter(|(_, c)| c.impulse).step_by(6) {
        println!("  x = {xi:6.2} -> jump to {:6.2}", xi + c.z.unwrap_or(0.0));
    }
    Ok(())
}
