//! Per-class learning status and the flexible thresholds derived from it.
//!
//! `cargo run --example flexible_thresholds`

use marginmatch::thresholds::{flexible_thresholds, learning_status};

fn main() -> marginmatch::Result<()> {
    let tau = 0.95;
    let predictions = vec![
        vec![0.97, 0.02, 0.01],
        vec![0.99, 0.005, 0.005],
        vec![0.96, 0.03, 0.01],
        vec![0.01, 0.98, 0.01],
        vec![0.30, 0.60, 0.10],
        vec![0.20, 0.20, 0.60],
    ];
    let status = learning_status(3, &predictions, tau)?;
    println!("confident predictions per class: {:?}", status.counts);
    let t = flexible_thresholds(&status, tau)?;
    for (c, v) in t.iter().enumerate() {
        println!("class {c}: threshold {v:.4}");
    }
    Ok(())
}
