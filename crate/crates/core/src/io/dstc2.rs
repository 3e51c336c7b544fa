//! DSTC2 call logs.
//!
//! A list file names one call directory per line (relative to the data
//! root, or to `<root>/data`). Each call directory holds `log.json` with the
//! system output and live SLU n-best per turn, and optionally `label.json`
//! with per-turn goal labels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{DstError, Result};
use crate::model::{ActType, Dialog, DialogAct, SluHypothesis, Turn};

#[derive(Debug, Clone, PartialEq)]
pub struct Dstc2Corpus {
    pub dialogs: Vec<Dialog>,
    /// Calls that could not be read or parsed.
    pub skipped: usize,
}

#[derive(Deserialize)]
struct RawAct {
    act: String,
    #[serde(default)]
    slots: Vec<Vec<serde_json::Value>>,
}

#[derive(Deserialize)]
struct RawLog {
    #[serde(rename = "session-id")]
    session_id: String,
    turns: Vec<RawLogTurn>,
}

#[derive(Deserialize)]
struct RawLogTurn {
    output: RawOutput,
    input: RawInput,
}

#[derive(Deserialize)]
struct RawOutput {
    #[serde(rename = "dialog-acts", default)]
    dialog_acts: Vec<RawAct>,
}

#[derive(Deserialize)]
struct RawInput {
    live: RawLive,
}

#[derive(Deserialize)]
struct RawLive {
    #[serde(rename = "slu-hyps", default)]
    slu_hyps: Vec<RawSluHyp>,
}

#[derive(Deserialize)]
struct RawSluHyp {
    score: f64,
    #[serde(rename = "slu-hyp", default)]
    slu_hyp: Vec<RawAct>,
}

#[derive(Deserialize)]
struct RawLabel {
    turns: Vec<RawLabelTurn>,
}

#[derive(Deserialize)]
struct RawLabelTurn {
    #[serde(rename = "goal-labels", default)]
    goal_labels: BTreeMap<String, String>,
}

fn scalar(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// One `DialogAct` per slot pair; `request` carries `["slot", name]`.
fn convert_act(raw: &RawAct) -> Vec<DialogAct> {
    let act = ActType::parse(&raw.act);
    if raw.slots.is_empty() {
        return vec![DialogAct::bare(act)];
    }
    raw.slots
        .iter()
        .map(|pair| {
            let first = pair.first().and_then(scalar);
            let second = pair.get(1).and_then(scalar);
            match (first.as_deref(), second) {
                (Some("slot"), Some(name)) => DialogAct::new(act.clone(), Some(&name), None),
                (slot, value) => DialogAct::new(act.clone(), slot, value.as_deref()),
            }
        })
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_call(dir: &Path) -> Result<Dialog> {
    let log: RawLog = read_json(&dir.join("log.json"))?;
    let label_path = dir.join("label.json");
    let labels: Option<RawLabel> = if label_path.exists() { Some(read_json(&label_path)?) } else { None };
    if let Some(l) = &labels {
        if l.turns.len() != log.turns.len() {
            return Err(DstError::Data(format!(
                "{}: {} log turns but {} label turns",
                dir.display(),
                log.turns.len(),
                l.turns.len()
            )));
        }
    }

    let mut cumulative: BTreeMap<String, String> = BTreeMap::new();
    let turns = log
        .turns
        .iter()
        .enumerate()
        .map(|(t, raw)| {
            let machine_acts = raw.output.dialog_acts.iter().flat_map(convert_act).collect();
            let slu_nbest = raw
                .input
                .live
                .slu_hyps
                .iter()
                .map(|h| SluHypothesis {
                    acts: h.slu_hyp.iter().flat_map(convert_act).collect(),
                    score: h.score,
                })
                .collect();
            let goal_labels = labels.as_ref().map(|l| {
                for (slot, value) in &l.turns[t].goal_labels {
                    cumulative.insert(slot.clone(), value.clone());
                }
                cumulative.clone()
            });
            Turn::new(machine_acts, slu_nbest, goal_labels)
        })
        .collect();
    crate::io::canonical::sanitize_dialog(Dialog::new(log.session_id, turns)?)
}

fn call_dir(root: &Path, entry: &str) -> PathBuf {
    let direct = root.join(entry);
    if direct.is_dir() {
        direct
    } else {
        root.join("data").join(entry)
    }
}

pub fn load_dstc2(root: &Path, list_file: &Path) -> Result<Dstc2Corpus> {
    let list = std::fs::read_to_string(list_file).map_err(|e| DstError::io(list_file, e))?;
    let entries: Vec<&str> = list.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let results: Vec<Result<Dialog>> = entries
        .par_iter()
        .map(|entry| load_call(&call_dir(root, entry)))
        .collect();
    let mut dialogs = Vec::with_capacity(results.len());
    let mut skipped = 0;
    for (entry, r) in entries.iter().zip(results) {
        match r {
            Ok(d) => dialogs.push(d),
            Err(e) => {
                warn!("skipping call {entry}: {e}");
                skipped += 1;
            }
        }
    }
    Ok(Dstc2Corpus { dialogs, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOG: &str = r#"{
      "session-id": "voip-abc",
      "turns": [
        {"turn-index": 0,
         "output": {"dialog-acts": [{"act": "welcomemsg", "slots": []}]},
         "input": {"live": {"slu-hyps": [
            {"score": 0.7, "slu-hyp": [{"act": "inform", "slots": [["food", "Thai"]]}]},
            {"score": 0.2, "slu-hyp": [{"act": "inform", "slots": [["food", "thai"], ["area", "north"]]}]}
         ], "asr-hyps": []}, "batch": {}}},
        {"turn-index": 1,
         "output": {"dialog-acts": [{"act": "expl-conf", "slots": [["area", "north"]]},
                                     {"act": "request", "slots": [["slot", "pricerange"]]}]},
         "input": {"live": {"slu-hyps": [{"score": 1.0, "slu-hyp": [{"act": "affirm", "slots": []}]}]}}}
      ]
    }"#;

    const LABEL: &str = r#"{"session-id": "voip-abc", "turns": [
        {"goal-labels": {"food": "thai"}, "method-label": "byconstraints", "requested-slots": []},
        {"goal-labels": {"area": "north"}}
    ]}"#;

    fn write_call(root: &Path, rel: &str, log: &str, label: Option<&str>) {
        let dir = root.join("data").join(rel);
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("log.json"), log).unwrap();
        if let Some(l) = label {
            std::fs::write(dir.join("label.json"), l).unwrap();
        }
    }

    #[test]
    fn parses_calls_and_counts_failures() {
        let tmp = tempfile::tempdir().unwrap();
        write_call(tmp.path(), "Mar13_S0A0/voip-abc", LOG, Some(LABEL));
        write_call(tmp.path(), "Mar13_S0A0/voip-bad", "{not json", None);
        let list = tmp.path().join("train.flist");
        std::fs::write(&list, "Mar13_S0A0/voip-abc\nMar13_S0A0/voip-bad\n\nMar13_S0A0/voip-missing\n").unwrap();

        let corpus = load_dstc2(tmp.path(), &list).unwrap();
        assert_eq!(corpus.skipped, 2);
        let d = &corpus.dialogs[0];
        assert_eq!(d.id, "voip-abc");
        assert_eq!(d.turns[0].slu_nbest[1].acts, vec![DialogAct::inform("food", "thai"), DialogAct::inform("area", "north")]);
        assert_eq!(d.turns[1].machine_acts[1], DialogAct::request("pricerange"));
        let labels = d.turns[1].goal_labels.as_ref().unwrap();
        assert_eq!(labels.get("food").map(String::as_str), Some("thai"));
        assert_eq!(labels.get("area").map(String::as_str), Some("north"));
    }

    #[test]
    fn unlabeled_calls_load_without_labels() {
        let tmp = tempfile::tempdir().unwrap();
        write_call(tmp.path(), "c1", LOG, None);
        let list = tmp.path().join("l.flist");
        std::fs::write(&list, "c1\n").unwrap();
        let corpus = load_dstc2(tmp.path(), &list).unwrap();
        assert!(corpus.dialogs[0].turns.iter().all(|t| t.goal_labels.is_none()));
    }

    #[test]
    fn empty_and_missing_list_files() {
        let tmp = tempfile::tempdir().unwrap();
        let list = tmp.path().join("empty.flist");
        std::fs::write(&list, "").unwrap();
        assert_eq!(load_dstc2(tmp.path(), &list).unwrap(), Dstc2Corpus { dialogs: vec![], skipped: 0 });
        assert!(matches!(load_dstc2(tmp.path(), &tmp.path().join("nope")), Err(DstError::Io { .. })));
    }
}
