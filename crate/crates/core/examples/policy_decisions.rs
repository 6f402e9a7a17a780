//! The three selection rules applied to the same predictions.
//!
//! `cargo run --example policy_decisions`

use marginmatch::aum::{AumGate, AumTracker};
use marginmatch::policy::{decide, PolicyKind};
use marginmatch::thresholds::ThresholdState;

fn main() -> marginmatch::Result<()> {
    let state = ThresholdState {
        pass_index: 4,
        tau: 0.95,
        per_class: vec![0.95, 0.6, 0.3],
        gamma: AumGate::Cutoff(-0.5),
    };
    let cases = [
        ("confident, steady", vec![0.97, 0.02, 0.01], vec![2.5, -2.5, -3.0, -3.0]),
        ("slow class, steady", vec![0.2, 0.7, 0.1], vec![-1.0, 1.0, -2.0, -2.0]),
        ("slow class, flipping", vec![0.2, 0.7, 0.1], vec![0.4, -0.9, -2.0, -2.0]),
        ("low confidence", vec![0.4, 0.35, 0.25], vec![0.1, -0.1, -0.5, -1.0]),
    ];
    println!("{:22} {:>10} {:>10} {:>12}", "example", "fixmatch", "flexmatch", "marginmatch");
    for (i, (name, probs, aum)) in cases.iter().enumerate() {
        let mut tr = AumTracker::new(i as u64, 4);
        tr.aum = aum.clone();
        let verdicts: Vec<String> = PolicyKind::ALL
            .iter()
            .map(|&p| {
                decide(p, i as u64, probs, &state, Some(&tr))
                    .map(|d| if d.selected { format!("class {}", d.pseudo_label) } else { "masked".into() })
            })
            .collect::<marginmatch::Result<_>>()?;
        println!("{name:22} {:>10} {:>10} {:>12}", verdicts[0], verdicts[1], verdicts[2]);
    }
    Ok(())
}
