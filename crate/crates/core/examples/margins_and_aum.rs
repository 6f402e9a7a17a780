//! Margins, smoothed AUM trackers and the gamma cutoff on hand-made logits.
//!
//! `cargo run --example margins_and_aum`

use marginmatch::aum::{calibrate_gamma, margin_vector, threshold_margin, AumTracker};

fn main() -> marginmatch::Result<()> {
    // three genuine classes plus the virtual class at index 3
    let logits = [2.0, 0.5, -1.0, 0.0];
    let m = margin_vector(&logits)?;
    println!("logits  {logits:?}");
    println!("margins {:?}", m.as_slice());
    println!("virtual-class margin {}", threshold_margin(&logits, 3)?);

    // an example whose prediction flips from class 1 to class 0 halfway
    let mut tr = AumTracker::new(7, 4);
    for t in 1..=10u32 {
        let z = if t <= 5 { [0.0, 2.0, -1.0, -1.0] } else { [2.0, 0.0, -1.0, -1.0] };
        tr.apply(margin_vector(&z)?.as_slice(), t, 0.997)?;
        println!("pass {t:2}: AUM class0 {:+.3}  class1 {:+.3}", tr.aum[0], tr.aum[1]);
    }

    // gamma from a set of threshold-sample AUMs
    let thresh = [-2.1, -1.7, -1.5, -1.2, -0.9, -0.8, -0.4, -0.3, 0.1, 0.6];
    for p in [50.0, 90.0, 95.0] {
        println!("{p}th percentile gamma = {}", calibrate_gamma(&thresh, p)?);
    }
    Ok(())
}
