use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::PipelineError;

/// `rank,a,b,...,h` rows, rank 8 first so the text reads like a board.
pub fn heatmap_csv(map: &[[u32; 8]; 8]) -> String {
    let mut out = String::from("rank,a,b,c,d,e,f,g,h\n");
    for rank in (0..8).rev() {
        let cells: Vec<String> = map[rank].iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "{},{}", rank + 1, cells.join(","));
    }
    out
}

/// Writes plot-ready CSV files from a run's `metrics.jsonl` into `out`:
/// `loss.csv` (training loss log), `epochs.csv` (mean loss per attempt),
/// `elo.csv`, `value_drop.csv` and `heatmap-gen-NNNN.csv` per generation.
pub fn export_metrics(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let text = fs::read_to_string(run_dir.join("metrics.jsonl"))?;
    let events: Vec<Value> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| PipelineError::State(format!("metrics.jsonl: {e}"))))
        .collect::<Result<_, _>>()?;
    fs::create_dir_all(out)?;
    let of = |e: &Value, k: &str| e.get(k).map(|v| v.to_string()).unwrap_or_default();
    let window = |e: &Value| {
        let w: Vec<String> = e["window"].as_array().map(|a| a.iter().map(|v| v.to_string()).collect()).unwrap_or_default();
        w.join(" ")
    };

    let mut loss = String::from("generation,round,attempt,step,loss,lr,window,window_shift\n");
    let mut epochs = String::from("generation,round,attempt,steps,mean_loss,window,window_shift\n");
    let mut elo = String::from("generation,promoted,elo,gate_wins,gate_draws,gate_losses\n");
    let mut drops = String::from("generation,round,games,mean,std,max\n");
    let mut written = Vec::new();
    for e in &events {
        match e["event"].as_str() {
            Some("train") => {
                let _ = writeln!(
                    loss,
                    "{},{},{},{},{},{},{},{}",
                    of(e, "generation"),
                    of(e, "round"),
                    of(e, "attempt"),
                    of(e, "step"),
                    of(e, "loss"),
                    of(e, "lr"),
                    window(e),
                    of(e, "window_shift")
                );
            }
            Some("epoch") => {
                let _ = writeln!(
                    epochs,
                    "{},{},{},{},{},{},{}",
                    of(e, "generation"),
                    of(e, "round"),
                    of(e, "attempt"),
                    of(e, "steps"),
                    of(e, "mean_loss"),
                    window(e),
                    of(e, "window_shift")
                );
            }
            Some("generation") => {
                let r = &e["record"];
                let gate = r["gates"].as_array().and_then(|g| g.last()).cloned().unwrap_or(Value::Null);
                let _ = writeln!(
                    elo,
                    "{},{},{},{},{},{}",
                    of(r, "index"),
                    of(r, "promoted"),
                    r["metrics"]["elo"],
                    of(&gate, "wins"),
                    of(&gate, "draws"),
                    of(&gate, "losses")
                );
                let d = &r["metrics"]["value_drop"];
                if !d.is_null() {
                    let _ = writeln!(
                        drops,
                        "{},{},{},{},{},{}",
                        of(r, "index"),
                        of(r, "round"),
                        of(d, "games"),
                        of(d, "mean"),
                        of(d, "std"),
                        of(d, "max")
                    );
                }
                if let Ok(map) = serde_json::from_value::<[[u32; 8]; 8]>(r["metrics"]["heatmap"].clone()) {
                    let path = out.join(format!("heatmap-gen-{:04}-r{}.csv", r["index"].as_u64().unwrap_or(0), of(r, "round")));
                    fs::write(&path, heatmap_csv(&map))?;
                    written.push(path);
                }
            }
            _ => {}
        }
    }
    for (name, body) in [("loss.csv", loss), ("epochs.csv", epochs), ("elo.csv", elo), ("value_drop.csv", drops)] {
        let path = out.join(name);
        fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
