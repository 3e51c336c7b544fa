//! File formats: canonical dialogs, DSTC2 logs, model files and
//! challenge-style tracker output.

mod canonical;
mod dstc2;
mod export;
mod model_file;

pub use canonical::{turn_from_value as canonical_turn, read_dialogs, read_dialogs_from, write_dialogs, write_dialogs_to, DIALOG_FORMAT};
pub use dstc2::{load_dstc2, Dstc2Corpus};
pub use export::{tracker_output_value, export_tracker_output, read_tracker_output, ExportedSession, ExportedTurn, TRACKER_OUTPUT_FORMAT};
pub use model_file::{load_model, model_from_str, model_to_string, save_model, MODEL_FORMAT};

use std::path::Path;

use crate::error::{DstError, Result};
use crate::model::Ontology;

pub fn read_ontology(path: &Path) -> Result<Ontology> {
    let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
    Ontology::from_json_str(&text)
}

pub fn write_ontology(path: &Path, ontology: &Ontology) -> Result<()> {
    std::fs::write(path, ontology.to_json_string()).map_err(|e| DstError::io(path, e))
}
