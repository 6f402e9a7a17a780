//! Generates a synthetic bundle, moves threshold samples to the virtual
//! class, and round-trips it through disk.
//!
//! `cargo run --example dataset -- /tmp/mm-data`

use marginmatch::data::{assign_threshold_samples, generate_synthetic, DataConfig, DatasetBundle};

fn main() -> marginmatch::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "runs/dataset".into());
    let cfg = DataConfig::default();
    let bundle = assign_threshold_samples(generate_synthetic(&cfg, 42)?, 0.01, 10, 42)?;
    println!(
        "labeled {}  threshold {}  unlabeled {}  test {}",
        bundle.labeled.len(),
        bundle.threshold_samples.len(),
        bundle.unlabeled.len(),
        bundle.test.len()
    );
    for (c, mean) in cfg.class_means().iter().enumerate() {
        println!("class {c} mean {mean:?}");
    }
    bundle.save(dir.as_ref(), &toml::to_string(&cfg).unwrap_or_default())?;
    let (back, manifest) = DatasetBundle::load(dir.as_ref())?;
    println!("reloaded from {dir}: {} unlabeled, config {}", back.unlabeled.len(), manifest.config_hash);
    Ok(())
}
