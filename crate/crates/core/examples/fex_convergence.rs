//! Refinement study of the foreign exchange intervention problem with all
//! three schemes.
//!
//! ```text
//! cargo run --release --example fex_convergence [levels]
//! ```

use qvi::harness::{render_table, run_study, ProblemName, StudySpec, TableFormat};
use qvi::hjbqvi::SchemeKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let levels = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(4);
    for scheme in [SchemeKind::DirectControl, SchemeKind::Penalty, SchemeKind::ExplicitImpulse] {
        let report = run_study(&StudySpec::new(ProblemName::Fex, scheme, levels))?;
        println!("{scheme:?}, V(0, m)");
        print!("{}", render_table(&report, TableFormat::Pretty)?);
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        println!();
    }
    Ok(())
}
