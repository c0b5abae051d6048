//! Writes value and optimal controls of the FEX problem at t = 0 as CSV and
//! JSON.
//!
//! ```text
//! cargo run --release --example export_controls [out_dir]
//! ```

use std::path::PathBuf;

use qvi::harness::export_control_field;
use qvi::hjbqvi::{solve_finite_horizon, SchemeConfig, SchemeKind};
use qvi::problems::{build_fex, FexParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&dir)?;
    let b = build_fex(&FexParams::default(), 1)?;
    let cfg = SchemeConfig::new(SchemeKind::DirectControl);
    let sol = solve_finite_horizon(&b.problem, b.time.as_ref().expect("finite horizon"), &cfg)?;
    let last = sol.layers.len() - 1;
    for name in ["fex_controls.csv", "fex_controls.json"] {
        let path = dir.join(name);
        export_control_field(&b.problem, &sol, last, &cfg, &path)?;
        println!("wrote {}", path.display());
    }
    let text = std::fs::read_to_string(dir.join("fex_controls.csv"))?;
    for line in text.lines().take(6) {
        println!("  {line}");
    }
    Ok(())
}
