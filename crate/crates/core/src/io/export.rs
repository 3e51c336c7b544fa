//! Challenge-style tracker output: per dialog, per turn, per slot a
//! `value -> probability` map sorted by probability, with probabilities on a
//! 1e-6 grid that still sum to exactly one.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{DstError, Result};
use crate::model::{Ontology, NONE_LABEL};
use crate::tracker::TrackerRun;

pub const TRACKER_OUTPUT_FORMAT: &str = "hybrid-dst-tracker-output/1";

const GRID: f64 = 1e6;

/// Round onto the 1e-6 grid with largest-remainder apportionment so the
/// rounded entries keep the original (unit) total.
fn round_distribution(h: &[f64]) -> Vec<u64> {
    let total = GRID.round() as u64;
    let mass: f64 = h.iter().sum();
    let scaled: Vec<f64> = h.iter().map(|&p| if mass > 0.0 { p / mass * GRID } else { 0.0 }).collect();
    let mut units: Vec<u64> = scaled.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = units.iter().sum();
    let mut order: Vec<usize> = (0..h.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        units[i] += 1;
    }
    units
}

fn slot_map(ontology: &Ontology, slot: usize, h: &[f64]) -> Map<String, Value> {
    let units = round_distribution(h);
    let mut entries: Vec<(usize, u64)> = units.into_iter().enumerate().filter(|&(_, u)| u > 0).collect();
    entries.sort_by(|a, b| h[b.0].total_cmp(&h[a.0]).then(a.0.cmp(&b.0)));
    entries
        .into_iter()
        .map(|(v, u)| (ontology.value_label(slot, v).to_owned(), Value::from(u as f64 / GRID)))
        .collect()
}

fn none_map() -> Map<String, Value> {
    let mut m = Map::new();
    m.insert(NONE_LABEL.into(), Value::from(1.0));
    m
}

pub fn tracker_output_value(runs: &[TrackerRun], ontology: &Ontology) -> Value {
    let sessions: Vec<Value> = runs
        .iter()
        .map(|run| {
            let turns: Vec<Value> = (0..run.num_turns())
                .map(|t| {
                    let mut labels = Map::new();
                    for (s, trace) in run.slots.iter().enumerate() {
                        labels.insert(ontology.slots()[s].clone(), Value::Object(slot_map(ontology, s, &trace.beliefs[t])));
                    }
                    for name in ontology.untracked() {
                        labels.insert(name.clone(), Value::Object(none_map()));
                    }
                    serde_json::json!({ "goal-labels": labels })
                })
                .collect();
            serde_json::json!({ "session-id": run.dialog_id, "turns": turns })
        })
        .collect();
    serde_json::json!({ "format": TRACKER_OUTPUT_FORMAT, "sessions": sessions })
}

pub fn export_tracker_output(runs: &[TrackerRun], ontology: &Ontology, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&tracker_output_value(runs, ontology))?;
    std::fs::write(path, text).map_err(|e| DstError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedTurn {
    #[serde(rename = "goal-labels")]
    pub goal_labels: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedSession {
    #[serde(rename = "session-id")]
    pub session_id: String,
    pub turns: Vec<ExportedTurn>,
}

#[derive(Deserialize)]
struct ExportedDoc {
    format: String,
    sessions: Vec<ExportedSession>,
}

impl ExportedTurn {
    /// `(value, probability)` pairs for a slot, in file order.
    pub fn slot(&self, slot: &str) -> Option<Vec<(String, f64)>> {
        let map = self.goal_labels.get(slot)?.as_object()?;
        Some(map.iter().filter_map(|(k, v)| Some((k.clone(), v.as_f64()?))).collect())
    }

    /// Most probable value of a slot (first in file order).
    pub fn top(&self, slot: &str) -> Option<String> {
        self.slot(slot)?.into_iter().next().map(|(v, _)| v)
    }
}

pub fn read_tracker_output(path: &Path) -> Result<Vec<ExportedSession>> {
    let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
    let doc: ExportedDoc = serde_json::from_str(&text)?;
    if doc.format != TRACKER_OUTPUT_FORMAT {
        return Err(DstError::Version {
            expected: TRACKER_OUTPUT_FORMAT.into(),
            found: doc.format,
        });
    }
    Ok(doc.sessions)
}
