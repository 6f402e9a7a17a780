//! Trains one run, writes its artifacts, and prints a per-pass summary.
//!
//! Arguments are `key=value` config overrides:
//! `cargo run --release --example train_run -- policy=flexmatch steps=2000 output.dir=runs/flex`

use marginmatch::cli;
use marginmatch::RunConfig;

fn main() -> marginmatch::Result<()> {
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let cfg = RunConfig::load(None, &overrides)?;
    let (dir, out) = cli::train(&cfg)?;
    let every = (out.metrics.len() / 20).max(1);
    println!("pass   mask  impurity  test_err  gamma");
    for m in out.metrics.iter().filter(|m| (m.pass_index as usize).is_multiple_of(every)) {
        println!(
            "{:4}  {:.3}  {:>8}  {:.4}    {}",
            m.pass_index,
            m.mask_rate,
            m.impurity.map_or("-".into(), |v| format!("{v:.4}")),
            m.test_error,
            m.gamma.map_or("-".into(), |g| format!("{g:+.3}")),
        );
    }
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}
