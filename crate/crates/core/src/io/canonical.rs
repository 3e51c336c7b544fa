//! Line-delimited dialog corpus.
//!
//! The first line is the header `{"format":"hybrid-dst-dialogs/1"}`; every
//! following non-blank line is one dialog:
//!
//! ```json
//! {"id":"d1","turns":[{"machine_acts":[{"act":"request","slot":"food"}],
//!   "slu_nbest":[{"acts":[{"act":"inform","slot":"food","value":"thai"}],"score":0.8}],
//!   "goal_labels":{"food":"thai"}}]}
//! ```
//!
//! `goal_labels` is `null` (or absent) on unlabeled turns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};
use crate::model::{normalize_token, Dialog, DialogAct, Turn};

pub const DIALOG_FORMAT: &str = "hybrid-dst-dialogs/1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
}

/// Case-fold, trim and validate a dialog read from disk.
pub(crate) fn sanitize_dialog(mut dialog: Dialog) -> Result<Dialog> {
    if dialog.turns.is_empty() {
        return Err(DstError::Data(format!("dialog `{}` has no turns", dialog.id)));
    }
    let fix_act = |a: &mut DialogAct| {
        *a = DialogAct::new(a.act.clone(), a.slot.as_deref(), a.value.as_deref());
    };
    for turn in &mut dialog.turns {
        turn.machine_acts.iter_mut().for_each(fix_act);
        for hyp in &mut turn.slu_nbest {
            if !(0.0..=1.0).contains(&hyp.score) {
                return Err(DstError::Data(format!("dialog `{}`: score {} outside [0, 1]", dialog.id, hyp.score)));
            }
            hyp.acts.iter_mut().for_each(fix_act);
        }
        if let Some(labels) = turn.goal_labels.take() {
            let fixed: BTreeMap<String, String> = labels
                .into_iter()
                .map(|(k, v)| (normalize_token(&k), normalize_token(&v)))
                .collect();
            turn.goal_labels = Some(fixed);
        }
        turn.normalize_scores();
    }
    Ok(dialog)
}

pub fn read_dialogs_from(reader: impl Read) -> Result<Vec<Dialog>> {
    let lines = BufReader::new(reader).lines().enumerate();
    let mut header_seen = false;
    let mut dialogs = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| DstError::io("<dialogs>", e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            let header: Header = serde_json::from_str(line)
                .map_err(|e| DstError::Data(format!("line {}: missing dialog file header: {e}", n + 1)))?;
            if header.format != DIALOG_FORMAT {
                return Err(DstError::Version {
                    expected: DIALOG_FORMAT.into(),
                    found: header.format,
                });
            }
            header_seen = true;
            continue;
        }
        let dialog: Dialog =
            serde_json::from_str(line).map_err(|e| DstError::Data(format!("line {}: {e}", n + 1)))?;
        dialogs.push(sanitize_dialog(dialog)?);
    }
    Ok(dialogs)
}

pub fn read_dialogs(path: &Path) -> Result<Vec<Dialog>> {
    let file = File::open(path).map_err(|e| DstError::io(path, e))?;
    read_dialogs_from(file).map_err(|e| match e {
        DstError::Data(msg) => DstError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_dialogs_to(mut writer: impl Write, dialogs: &[Dialog]) -> Result<()> {
    let header = Header {
        format: DIALOG_FORMAT.into(),
    };
    let io_err = |e| DstError::io("<dialogs>", e);
    writeln!(writer, "{}", serde_json::to_string(&header)?).map_err(io_err)?;
    for d in dialogs {
        writeln!(writer, "{}", serde_json::to_string(d)?).map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}

pub fn write_dialogs(path: &Path, dialogs: &[Dialog]) -> Result<()> {
    let file = File::create(path).map_err(|e| DstError::io(path, e))?;
    write_dialogs_to(BufWriter::new(file), dialogs)
}

/// Parse one turn object, applying the same sanitation as file loading.
pub fn turn_from_value(value: serde_json::Value) -> Result<Turn> {
    let turn: Turn = serde_json::from_value(value)?;
    let dialog = sanitize_dialog(Dialog {
        id: String::new(),
        turns: vec![turn],
    })?;
    Ok(dialog.turns.into_iter().next().expect("one turn"))
}
