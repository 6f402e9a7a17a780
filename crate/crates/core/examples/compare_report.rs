//! Trains the three policies briefly and writes aligned comparison tables.
//!
//! `cargo run --release --example compare_report`

use marginmatch::cli;
use marginmatch::policy::PolicyKind;
use marginmatch::RunConfig;

fn main() -> marginmatch::Result<()> {
    let root = std::env::temp_dir().join("marginmatch-report-example");
    let mut dirs = Vec::new();
    for policy in PolicyKind::ALL {
        let dir = root.join(policy.as_str());
        let cfg = RunConfig::load(
            None,
            &[
                "steps=1400".into(),
                format!("policy={policy}"),
                format!("output.dir=\"{}\"", dir.display()),
            ],
        )?;
        cli::train(&cfg)?;
        dirs.push(dir);
    }
    let report = cli::report(&dirs, &root.join("report"))?;
    for n in &report.notes {
        println!("note: {n}");
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    let text = std::fs::read_to_string(root.join("report").join("report_impurity.csv")).unwrap_or_default();
    for line in text.lines().rev().take(3).collect::<Vec<_>>().into_iter().rev() {
        println!("{line}");
    }
    Ok(())
}
