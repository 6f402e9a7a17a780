//! Runs the fixed/flexible threshold ablation and the smoothing sweep on a
//! reduced budget and prints both tables.
//!
//! `cargo run --release --example ablation -- steps=3000`

use marginmatch::cli::{self, AblationKind};
use marginmatch::RunConfig;

fn main() -> marginmatch::Result<()> {
    let mut overrides: Vec<String> = vec!["steps=1400".into()];
    overrides.extend(std::env::args().skip(1));
    let cfg = RunConfig::load(None, &overrides)?;
    let seeds = cli::seed_list(cfg.seed, 2);
    let out = std::env::temp_dir().join("marginmatch-ablation-example");
    for kind in [AblationKind::Thresholds, AblationKind::Delta] {
        let table = cli::ablate(kind, &cfg, &seeds, &out)?;
        print!("{}", cli::render_table(kind, &table));
        println!();
    }
    println!("csv files in {}", out.display());
    Ok(())
}
