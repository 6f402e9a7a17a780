//! The four command surfaces: `train`, `replay`, `ablate`, `report`.
//!
//! Each is a plain function so the binary stays a thin argument parser and
//! the same code paths are exercised by tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Mlp, OptimizerState};
use crate::policy::PolicyKind;
use crate::seeds::{content_hash_u64, rng_for};
use crate::trace::{
    read_jsonl, read_trace, replay as replay_trace, write_checkpoint, write_trace, Checkpoint,
    DecisionRecord, JsonlHeader, JsonlWriter, TraceFile, TraceRecord, DECISIONS_FORMAT,
    METRICS_FORMAT,
};
use crate::trainer::{run, NullObserver, PassMetrics, RunObserver, RunOutcome};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const TRACE_FILE: &str = "trace.bin";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.bin";
pub const ERROR_FILE: &str = "error.json";

/// Streams run artifacts into an output directory.
struct DirObserver {
    dir: PathBuf,
    config_hash: u64,
    checkpoint_every: u32,
    metrics: JsonlWriter,
    decisions: Option<JsonlWriter>,
    trace: Option<Vec<TraceRecord>>,
}

impl RunObserver for DirObserver {
    fn wants_decisions(&self) -> bool {
        self.decisions.is_some()
    }

    fn wants_trace(&self) -> bool {
        self.trace.is_some()
    }

    fn decision(&mut self, record: &DecisionRecord) -> Result<()> {
        match self.decisions.as_mut() {
            Some(w) => w.write(record),
            None => Ok(()),
        }
    }

    fn trace_record(&mut self, record: TraceRecord) -> Result<()> {
        if let Some(t) = self.trace.as_mut() {
            t.push(record);
        }
        Ok(())
    }

    fn pass_finished(&mut self, m: &PassMetrics, model: &Mlp, opt: &OptimizerState) -> Result<()> {
        self.metrics.write(m)?;
        if self.checkpoint_every > 0 && m.pass_index.is_multiple_of(self.checkpoint_every) {
            let ck = Checkpoint {
                config_hash: self.config_hash,
                pass_index: m.pass_index,
                model: model.clone(),
                optimizer: opt.clone(),
            };
            write_checkpoint(&ck, &self.dir.join(format!("checkpoint_pass{:05}.bin", m.pass_index)))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ErrorRecord {
    kind: String,
    message: String,
}

/// Runs `config`, writing every artifact under its output directory.
pub fn train(config: &RunConfig) -> Result<(PathBuf, RunOutcome)> {
    config.validate()?;
    let dir = config.resolved_output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let toml_text = config.to_toml();
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, &toml_text).map_err(|e| Error::io(&cfg_path, e))?;
    let hash = config.hash();

    let mut obs = DirObserver {
        dir: dir.clone(),
        config_hash: content_hash_u64(&toml_text),
        checkpoint_every: config.output.checkpoint_every,
        metrics: JsonlWriter::create(
            &dir.join(METRICS_FILE),
            &JsonlHeader::new(METRICS_FORMAT, &hash, config.seed, config.policy),
        )?,
        decisions: if config.output.write_decisions {
            Some(JsonlWriter::create(
                &dir.join(DECISIONS_FILE),
                &JsonlHeader::new(DECISIONS_FORMAT, &hash, config.seed, config.policy),
            )?)
        } else {
            None
        },
        trace: config.output.record_trace.then(Vec::new),
    };

    let result = run(config, &mut obs);
    let DirObserver {
        metrics,
        decisions,
        trace,
        config_hash,
        ..
    } = obs;
    metrics.finish()?;
    if let Some(d) = decisions {
        d.finish()?;
    }
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            let rec = ErrorRecord {
                kind: "error".into(),
                message: e.to_string(),
            };
            let p = dir.join(ERROR_FILE);
            fs::write(&p, serde_json::to_string(&rec)?).map_err(|err| Error::io(&p, err))?;
            return Err(e);
        }
    };
    if let Some(records) = trace {
        let t = TraceFile::new(
            outcome.classes as u32,
            config_hash,
            outcome.threshold_ids.clone(),
            records,
        )?;
        write_trace(&t, &dir.join(TRACE_FILE))?;
    }
    let ck = Checkpoint {
        config_hash,
        pass_index: outcome.metrics.len() as u32,
        model: outcome.model.clone(),
        optimizer: outcome.optimizer.clone(),
    };
    write_checkpoint(&ck, &dir.join(FINAL_CHECKPOINT))?;
    Ok((dir, outcome))
}

/// Replays a recorded trace under `config`'s selection settings and writes
/// `replay_decisions.jsonl`, `replay_thresholds.jsonl` and
/// `replay_trackers.jsonl` into `out_dir`.
pub fn replay(trace_path: &Path, config: &RunConfig, out_dir: &Path) -> Result<usize> {
    config.validate()?;
    let trace = read_trace(trace_path)?;
    let out = replay_trace(&trace, &config.selection())?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let hash_hex: String = trace
        .header
        .config_hash
        .to_le_bytes()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();

    let mut w = JsonlWriter::create(
        &out_dir.join("replay_decisions.jsonl"),
        &JsonlHeader::new(DECISIONS_FORMAT, &hash_hex, config.seed, config.policy),
    )?;
    for d in &out.decisions {
        w.write(d)?;
    }
    w.finish()?;

    #[derive(Serialize)]
    struct ThresholdLine<'a> {
        kind: &'static str,
        pass_index: u32,
        per_class_thresholds: &'a [f64],
        gamma: Option<f64>,
    }
    let mut w = JsonlWriter::create(
        &out_dir.join("replay_thresholds.jsonl"),
        &JsonlHeader::new("marginmatch-thresholds", &hash_hex, config.seed, config.policy),
    )?;
    for st in &out.history {
        w.write(&ThresholdLine {
            kind: "thresholds",
            pass_index: st.pass_index,
            per_class_thresholds: &st.per_class,
            gamma: st.gamma.gamma(),
        })?;
    }
    w.finish()?;

    #[derive(Serialize)]
    struct TrackerLine<'a> {
        kind: &'static str,
        role: &'static str,
        example_id: u64,
        last_t: u32,
        aum: &'a [f64],
    }
    let mut w = JsonlWriter::create(
        &out_dir.join("replay_trackers.jsonl"),
        &JsonlHeader::new("marginmatch-trackers", &hash_hex, config.seed, config.policy),
    )?;
    for (role, trs) in [("unlabeled", &out.unlabeled_trackers), ("threshold", &out.threshold_trackers)] {
        for tr in trs {
            w.write(&TrackerLine {
                kind: "tracker",
                role,
                example_id: tr.example_id,
                last_t: tr.last_t,
                aum: &tr.aum,
            })?;
        }
    }
    w.finish()?;
    Ok(out.decisions.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    /// 2x2 grid: fixed/flexible confidence x fixed/flexible AUM cutoff.
    Thresholds,
    /// AUM smoothing sweep.
    Delta,
}

impl std::str::FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "thresholds" => Ok(AblationKind::Thresholds),
            "delta" => Ok(AblationKind::Delta),
            other => Err(Error::config(format!("unknown ablation `{other}`"))),
        }
    }
}

pub const DELTA_GRID: [f64; 6] = [0.95, 0.99, 0.995, 0.997, 0.999, 1.0];

/// AUM cutoff used by fixed-AUM cells when the base config sets none.
pub const DEFAULT_FIXED_GAMMA: f64 = -1.0;

/// One grid cell: a label and the config it runs.
#[derive(Clone, Debug)]
pub struct GridCell {
    pub row: String,
    pub col: String,
    pub config: RunConfig,
}

/// The cells of an ablation built on `base`.
pub fn ablation_cells(kind: AblationKind, base: &RunConfig) -> Vec<GridCell> {
    match kind {
        AblationKind::Thresholds => {
            let gamma = base.fixed_gamma.unwrap_or(DEFAULT_FIXED_GAMMA);
            let mut cells = Vec::new();
            for (row, fixed_aum) in [("fixed_aum", true), ("flexible_aum", false)] {
                for (col, fixed_conf) in [("fixed_conf", true), ("flexible_conf", false)] {
                    let mut c = base.clone();
                    c.policy = PolicyKind::MarginMatch;
                    c.fixed_confidence = fixed_conf;
                    c.fixed_gamma = fixed_aum.then_some(gamma);
                    cells.push(GridCell {
                        row: row.into(),
                        col: col.into(),
                        config: c,
                    });
                }
            }
            cells
        }
        AblationKind::Delta => DELTA_GRID
            .iter()
            .map(|&d| {
                let mut c = base.clone();
                c.policy = PolicyKind::MarginMatch;
                c.delta = d;
                GridCell {
                    row: format!("{d}"),
                    col: "error_rate".into(),
                    config: c,
                }
            })
            .collect(),
    }
}

/// Final-pass numbers for one (cell, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub row: String,
    pub col: String,
    pub seed: u64,
    pub test_error: f64,
    pub mask_rate: f64,
    pub impurity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub row: String,
    pub col: String,
    /// Median final test error across seeds; `None` if any seed failed.
    pub median_test_error: Option<f64>,
    pub runs: Vec<CellRun>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Runs every cell under every seed. Failed runs leave the cell partial.
pub fn run_grid(cells: &[GridCell], seeds: &[u64]) -> (Vec<CellSummary>, Vec<String>) {
    let mut out = Vec::with_capacity(cells.len());
    let mut failures = Vec::new();
    for cell in cells {
        let mut runs = Vec::new();
        let mut ok = true;
        for &seed in seeds {
            let mut cfg = cell.config.clone();
            cfg.seed = seed;
            match run(&cfg, &mut NullObserver) {
                Ok(o) => {
                    let m = o.final_metrics();
                    runs.push(CellRun {
                        row: cell.row.clone(),
                        col: cell.col.clone(),
                        seed,
                        test_error: m.test_error,
                        mask_rate: m.mask_rate,
                        impurity: m.impurity,
                    });
                }
                Err(e) => {
                    ok = false;
                    failures.push(format!("{}/{} seed {seed}: {e}", cell.row, cell.col));
                }
            }
        }
        let errs: Vec<f64> = runs.iter().map(|r| r.test_error).collect();
        out.push(CellSummary {
            row: cell.row.clone(),
            col: cell.col.clone(),
            median_test_error: if ok { median(&errs) } else { None },
            runs,
        });
    }
    (out, failures)
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |e| format!("{:.2}", 100.0 * e))
}

/// Renders a grid as CSV. Threshold ablations use the 2x2 layout (rows:
/// AUM cutoff kind, columns: confidence kind); the delta sweep has one row
/// per smoothing value. Values are median error rates in percent.
pub fn render_table(kind: AblationKind, cells: &[CellSummary]) -> String {
    let mut s = String::new();
    match kind {
        AblationKind::Thresholds => {
            s.push_str("aum_threshold,fixed_conf,flexible_conf\n");
            for row in ["fixed_aum", "flexible_aum"] {
                let get = |col: &str| {
                    cells
                        .iter()
                        .find(|c| c.row == row && c.col == col)
                        .and_then(|c| c.median_test_error)
                };
                let _ = writeln!(s, "{row},{},{}", fmt_cell(get("fixed_conf")), fmt_cell(get("flexible_conf")));
            }
        }
        AblationKind::Delta => {
            s.push_str("delta,error_rate\n");
            for c in cells {
                let _ = writeln!(s, "{},{}", c.row, fmt_cell(c.median_test_error));
            }
        }
    }
    s
}

/// Per-seed long-form CSV behind a table.
pub fn render_runs(cells: &[CellSummary]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "col", "seed", "test_error", "mask_rate", "impurity"])?;
    for c in cells {
        for r in &c.runs {
            w.write_record([
                r.row.clone(),
                r.col.clone(),
                r.seed.to_string(),
                r.test_error.to_string(),
                r.mask_rate.to_string(),
                r.impurity.map_or_else(String::new, |v| v.to_string()),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Runs an ablation and writes `ablation_<kind>.csv` plus
/// `ablation_<kind>_runs.csv` into `out_dir`. A grid with failed runs is
/// still written (failed cells read `NA`) and then reported as an error.
pub fn ablate(kind: AblationKind, base: &RunConfig, seeds: &[u64], out_dir: &Path) -> Result<Vec<CellSummary>> {
    base.validate()?;
    let cells = ablation_cells(kind, base);
    let (summary, failures) = run_grid(&cells, seeds);
    write_ablation(kind, &summary, &failures, out_dir)?;
    if !failures.is_empty() {
        return Err(Error::invalid(format!("partial table: {}", failures.join("; "))));
    }
    Ok(summary)
}

pub fn write_ablation(kind: AblationKind, summary: &[CellSummary], failures: &[String], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let name = match kind {
        AblationKind::Thresholds => "thresholds",
        AblationKind::Delta => "delta",
    };
    let mut table = render_table(kind, summary);
    if !failures.is_empty() {
        table.push_str("# partial: some runs failed\n");
    }
    let p = out_dir.join(format!("ablation_{name}.csv"));
    fs::write(&p, table).map_err(|e| Error::io(&p, e))?;
    let p = out_dir.join(format!("ablation_{name}_runs.csv"));
    fs::write(&p, render_runs(summary)?).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

/// Seeds `0..n` expanded from a base seed.
pub fn seed_list(base: u64, n: usize) -> Vec<u64> {
    use rand::Rng;
    let mut rng = rng_for(base, &[0x5eed]);
    (0..n).map(|_| rng.random()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub rows: usize,
    pub notes: Vec<String>,
}

/// Aligns per-pass metrics of several runs by pass index and writes one CSV
/// per quantity (`report_<quantity>.csv`) with a column per run.
pub fn report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<ReportOutput> {
    if run_dirs.is_empty() {
        return Err(Error::invalid("report needs at least one run directory"));
    }
    let mut runs: Vec<(String, JsonlHeader, Vec<PassMetrics>)> = Vec::new();
    for (i, d) in run_dirs.iter().enumerate() {
        let (h, m): (JsonlHeader, Vec<PassMetrics>) = read_jsonl(&d.join(METRICS_FILE), METRICS_FORMAT)?;
        let base = d
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("run{i}"));
        let mut label = base.clone();
        let mut k = 1;
        while runs.iter().any(|(l, _, _)| *l == label) {
            k += 1;
            label = format!("{base}_{k}");
        }
        runs.push((label, h, m));
    }
    let mut notes = Vec::new();
    let hashes: std::collections::BTreeSet<&str> = runs.iter().map(|(_, h, _)| h.config_hash.as_str()).collect();
    if hashes.len() > 1 {
        notes.push("warning: runs have different config hashes; aligned by pass index only".to_string());
    }
    let rows = runs.iter().map(|(_, _, m)| m.len()).min().unwrap_or(0);
    if runs.iter().any(|(_, _, m)| m.len() != rows) {
        notes.push(format!("truncated to {rows} passes (shortest run)"));
    }

    type Extract = fn(&PassMetrics) -> Vec<Option<f64>>;
    let mut quantities: BTreeMap<&str, (Extract, usize)> = BTreeMap::new();
    quantities.insert("mask_rate", (|m| vec![Some(m.mask_rate)], 1));
    quantities.insert("impurity", (|m| vec![m.impurity], 1));
    quantities.insert("test_error", (|m| vec![Some(m.test_error)], 1));
    quantities.insert("gamma", (|m| vec![m.gamma], 1));
    let classes = runs[0].2.first().map_or(0, |m| m.per_class_thresholds.len());
    quantities.insert("thresholds", (|m| m.per_class_thresholds.iter().map(|&v| Some(v)).collect(), classes));

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = Vec::new();
    for (name, (extract, width)) in &quantities {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["pass".to_string()];
        for (label, _, _) in &runs {
            if *width == 1 {
                header.push(label.clone());
            } else {
                header.extend((0..*width).map(|c| format!("{label}_class{c}")));
            }
        }
        w.write_record(&header)?;
        for p in 0..rows {
            let mut rec = vec![(p + 1).to_string()];
            for (_, _, m) in &runs {
                let mut vals = extract(&m[p]);
                vals.resize(*width, None);
                rec.extend(vals.into_iter().map(|v| v.map_or_else(String::new, |x| x.to_string())));
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        let p = out_dir.join(format!("report_{name}.csv"));
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        files.push(p);
    }
    if !notes.is_empty() {
        let p = out_dir.join("report_notes.txt");
        fs::write(&p, notes.join("\n") + "\n").map_err(|e| Error::io(&p, e))?;
        files.push(p);
    }
    Ok(ReportOutput { files, rows, notes })
}
