use std::fmt::Write as _;
use std::path::Path;

use super::checkpoint::Checkpoint;
use super::config::{load_data, Split};
use crate::data::{ConceptGraph, FeaturePanel};
use crate::error::{MtmdError, Result};
use crate::numerics::Tensor;

/// Stage labels in export order.
pub const EXPORT_STAGES: [&str; 4] = ["h1", "q1", "q2", "ĥ3"];

/// `date,stock_id,stage,d0..d{L-1}` rows for every date of `range`, one
/// row per stock and stage. Banks stay frozen.
pub fn embeddings_csv(
    checkpoint: &Checkpoint,
    panel: &FeaturePanel,
    graph: &ConceptGraph,
    range: std::ops::Range<usize>,
) -> Result<String> {
    let width = checkpoint.model.config.width;
    let mut out = String::from("date,stock_id,stage");
    for k in 0..width {
        let _ = write!(out, ",d{k}");
    }
    out.push('\n');
    for d in range {
        let slice = &panel.dates[d];
        let trace = checkpoint.model.trace_eval(slice, &graph.dates[d])?;
        let stages: [&Tensor; 4] = [&trace.h1, &trace.q1, &trace.q2, &trace.hhat3];
        for (s, id) in slice.stock_ids.iter().enumerate() {
            for (label, t) in EXPORT_STAGES.iter().zip(stages) {
                let _ = write!(out, "{},{},{}", slice.date, id, label);
                for v in t.row(s) {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Writes the embeddings of one split of the checkpoint's own data.
pub fn export_embeddings(checkpoint: &Checkpoint, split: Split, out: &Path) -> Result<usize> {
    let cfg = checkpoint
        .meta
        .train
        .as_ref()
        .ok_or_else(|| MtmdError::Checkpoint("checkpoint carries no training config".into()))?;
    let (panel, graph) = load_data(&cfg.data)?;
    let range = cfg.split.resolve(&panel)?.get(split);
    let csv = embeddings_csv(checkpoint, &panel, &graph, range)?;
    std::fs::write(out, &csv)?;
    Ok(csv.lines().count() - 1)
}
