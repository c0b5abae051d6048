//! A refinement study described by a JSON config, written as CSV and read
//! back.
//!
//! ```text
//! cargo run --release --example study_config [config.json]
//! ```

use qvi::harness::{emit_table, parse_table, render_table, run_study, StudySpec, TableFormat};

const DEFAULT: &str = r#"{
    "problem": "fex",
    "scheme": "penalty",
    "levels": 3,
    "tolerance": 1e-8,
    "params": { "fex": { "c": 0.2, "kappa": 0.5 } }
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => DEFAULT.to_string(),
    };
    let spec = StudySpec::from_json(&text)?;
    println!("{} with {:?}, {} levels", spec.problem, spec.scheme, spec.levels);
    let report = run_study(&spec)?;
    print!("{}", render_table(&report, TableFormat::Pretty)?);

    let path = spec.output.clone().unwrap_or_else(|| std::env::temp_dir().join("qvi_study.csv"));
    let format = TableFormat::from_path(&path);
    emit_table(&report, format, &path)?;
    if format != TableFormat::Pretty {
        let back = parse_table(&std::fs::read_to_string(&path)?, format)?;
        println!("wrote {} ({} rows, identical on reload: {})", path.display(), back.rows.len(), back.values() == report.values());
    }
    Ok(())
}
