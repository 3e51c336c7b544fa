//! Model files.
//!
//! Line 1 is a header `{"format":"hybrid-dst-model/1","checksum":"<sha256>"}`;
//! the rest of the file is the JSON body whose exact bytes the checksum
//! covers. Weights are stored as named row-major arrays with explicit
//! dimensions.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DstError, Result};
use crate::model::Ontology;
use crate::nn::{NetParams, NetShape};
use crate::rules::TransitionReading;
use crate::slu::FeatureVocab;
use crate::tracker::TrackerParams;
use crate::train::TrainConfig;

pub const MODEL_FORMAT: &str = "hybrid-dst-model/1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    checksum: String,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Network {
    input_size: usize,
    hidden: usize,
    arrays: Vec<NamedArray>,
}

#[derive(Serialize, Deserialize)]
struct Body {
    ontology_hash: String,
    ontology: serde_json::Value,
    vocab: FeatureVocab,
    /// Indices of zeroed bag-of-words coordinates.
    fm_mask: Option<Vec<usize>>,
    reading: TransitionReading,
    network: Network,
    config: Option<TrainConfig>,
}

fn checksum(body: &str) -> String {
    hex::encode(Sha256::digest(body.as_bytes()))
}

pub fn model_to_string(params: &TrackerParams) -> Result<String> {
    let shape = params.net.shape();
    let body = Body {
        ontology_hash: params.ontology.content_hash(),
        ontology: serde_json::from_str(&params.ontology.to_json_string())?,
        vocab: params.vocab.clone(),
        fm_mask: params
            .fm_mask
            .as_ref()
            .map(|m| m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()),
        reading: params.reading,
        network: Network {
            input_size: shape.input_size,
            hidden: shape.hidden,
            arrays: params
                .net
                .named_blocks()
                .into_iter()
                .map(|(name, rows, cols, data)| NamedArray {
                    name: name.into(),
                    rows,
                    cols,
                    data: data.to_vec(),
                })
                .collect(),
        },
        config: params.config.clone(),
    };
    let body = serde_json::to_string(&body)?;
    let header = Header {
        format: MODEL_FORMAT.into(),
        checksum: checksum(&body),
    };
    Ok(format!("{}\n{}\n", serde_json::to_string(&header)?, body))
}

/// Parse a model; when `expected` is given, its content hash must match.
pub fn model_from_str(text: &str, expected: Option<&Ontology>) -> Result<TrackerParams> {
    let (header_line, rest) = text
        .split_once('\n')
        .ok_or_else(|| DstError::Data("model file has no body".into()))?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|e| DstError::Data(format!("model header: {e}")))?;
    if header.format != MODEL_FORMAT {
        return Err(DstError::Version {
            expected: MODEL_FORMAT.into(),
            found: header.format,
        });
    }
    let body_text = rest.strip_suffix('\n').unwrap_or(rest);
    if checksum(body_text) != header.checksum {
        return Err(DstError::Checksum);
    }
    let body: Body = serde_json::from_str(body_text)?;

    let ontology = Ontology::from_json_str(&body.ontology.to_string())?;
    if ontology.content_hash() != body.ontology_hash {
        return Err(DstError::Data("stored ontology does not match its hash".into()));
    }
    if let Some(given) = expected {
        let given_hash = given.content_hash();
        if given_hash != body.ontology_hash {
            return Err(DstError::OntologyMismatch {
                model: body.ontology_hash,
                given: given_hash,
            });
        }
    }

    let shape = NetShape::new(body.network.input_size, body.network.hidden);
    let expected_blocks = shape.blocks();
    DstError::check_dim("model arrays", expected_blocks.len(), body.network.arrays.len())?;
    let mut data = Vec::with_capacity(shape.param_count());
    for (array, (name, rows, cols)) in body.network.arrays.into_iter().zip(expected_blocks) {
        if array.name != name || array.rows != rows || array.cols != cols || array.data.len() != rows * cols {
            return Err(DstError::Data(format!(
                "array `{}` ({}x{}, {} values) where `{name}` ({rows}x{cols}) was expected",
                array.name,
                array.rows,
                array.cols,
                array.data.len()
            )));
        }
        data.extend(array.data);
    }
    let net = NetParams::from_flat(shape, data)?;

    let mut vocab = body.vocab;
    vocab.rebuild_index();
    let fm_mask = match body.fm_mask {
        None => None,
        Some(indices) => {
            let mut mask = vec![false; vocab.len()];
            for i in indices {
                *mask
                    .get_mut(i)
                    .ok_or_else(|| DstError::Data(format!("mask index {i} outside vocabulary")))? = true;
            }
            Some(mask)
        }
    };
    let mut params = TrackerParams::new(ontology, vocab, net, fm_mask, body.reading)?;
    params.config = body.config;
    Ok(params)
}

pub fn save_model(path: &Path, params: &TrackerParams) -> Result<()> {
    let text = model_to_string(params)?;
    std::fs::write(path, text).map_err(|e| DstError::io(path, e))
}

pub fn load_model(path: &Path, expected: Option<&Ontology>) -> Result<TrackerParams> {
    let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
    model_from_str(&text, expected)
}
