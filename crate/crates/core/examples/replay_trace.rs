//! Records a logit trace during a short run, then replays it under every
//! policy to compare what each would have selected.
//!
//! `cargo run --release --example replay_trace`

use marginmatch::cli;
use marginmatch::policy::PolicyKind;
use marginmatch::trace::{read_trace, replay};
use marginmatch::RunConfig;

fn main() -> marginmatch::Result<()> {
    let dir = std::env::temp_dir().join("marginmatch-replay-example");
    let cfg = RunConfig::load(
        None,
        &[
            "steps=700".into(),
            "output.record_trace=true".into(),
            format!("output.dir=\"{}\"", dir.display()),
        ],
    )?;
    cli::train(&cfg)?;
    let trace = read_trace(&dir.join(cli::TRACE_FILE))?;
    println!(
        "trace: {} records, {} passes, {} threshold samples",
        trace.header.record_count,
        trace.header.pass_count,
        trace.header.threshold_ids.len()
    );
    let last = trace.header.pass_count;
    for policy in PolicyKind::ALL {
        let mut sel = cfg.selection();
        sel.policy = policy;
        let out = replay(&trace, &sel)?;
        let final_pass: Vec<_> = out.decisions.iter().filter(|d| d.pass == last).collect();
        let selected = final_pass.iter().filter(|d| d.selected).count();
        println!("{policy:12} selects {selected} of {} in pass {last}", final_pass.len());
    }
    Ok(())
}
