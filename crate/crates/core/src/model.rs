//! Domain types shared by the whole tracker: ontology, dialog acts, turns,
//! dialogs and per-slot belief states.
//!
//! Every belief vector is indexed `[None, v_1, ..., v_K]`; index 0 is the
//! distinguished "no goal yet" hypothesis and is never stored in the
//! ontology's value lists.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DstError, Result};

/// Index of the None hypothesis in every belief vector.
pub const NONE_INDEX: usize = 0;

/// Display name used for the None hypothesis in exported documents.
pub const NONE_LABEL: &str = "None";

/// Case-fold and trim a slot or value string as read from a corpus.
pub fn normalize_token(s: &str) -> String {
    s.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    slots: Vec<String>,
    values: Vec<Vec<String>>,
    untracked: Vec<String>,
    value_index: Vec<HashMap<String, usize>>,
}

/// On-disk form: `{"food": [...], "area": [...]}`, optionally wrapped as
/// `{"tracked": {...}, "untracked": ["name"]}`.
#[derive(Serialize, Deserialize)]
struct OntologyDoc {
    tracked: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    untracked: Vec<String>,
}

impl Ontology {
    pub fn new(slots: Vec<(String, Vec<String>)>) -> Result<Self> {
        Self::with_untracked(slots, Vec::new())
    }

    pub fn with_untracked(slots: Vec<(String, Vec<String>)>, untracked: Vec<String>) -> Result<Self> {
        let mut names = Vec::with_capacity(slots.len());
        let mut values = Vec::with_capacity(slots.len());
        let mut value_index = Vec::with_capacity(slots.len());
        for (slot, vals) in slots {
            let slot = normalize_token(&slot);
            if names.contains(&slot) {
                return Err(DstError::Ontology(format!("duplicate slot `{slot}`")));
            }
            if vals.is_empty() {
                return Err(DstError::Ontology(format!("slot `{slot}` has no values")));
            }
            let mut index = HashMap::with_capacity(vals.len());
            let mut list = Vec::with_capacity(vals.len());
            for v in vals {
                let v = normalize_token(&v);
                if v == NONE_LABEL.to_lowercase() || v.is_empty() {
                    return Err(DstError::Ontology(format!("slot `{slot}` lists reserved value `{v}`")));
                }
                if index.insert(v.clone(), list.len() + 1).is_some() {
                    return Err(DstError::Ontology(format!("slot `{slot}` lists `{v}` twice")));
                }
                list.push(v);
            }
            names.push(slot);
            values.push(list);
            value_index.push(index);
        }
        let untracked = untracked.iter().map(|s| normalize_token(s)).collect();
        Ok(Self {
            slots: names,
            values,
            untracked,
            value_index,
        })
    }

    /// Parse either the native document or a DSTC2-style ontology with an
    /// `informable` section. For the latter the `name` slot is untracked
    /// and `dontcare` is added to every value list.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| DstError::Ontology("expected a JSON object".into()))?;

        let string_list = |slot: &str, v: &serde_json::Value| -> Result<Vec<String>> {
            v.as_array()
                .ok_or_else(|| DstError::Ontology(format!("slot `{slot}`: expected a list")))?
                .iter()
                .map(|x| {
                    x.as_str()
                        .map(str::to_owned)
                        .ok_or_else(|| DstError::Ontology(format!("slot `{slot}`: non-string value")))
                })
                .collect()
        };

        if let Some(informable) = obj.get("informable").and_then(|v| v.as_object()) {
            let mut slots = Vec::new();
            let mut untracked = Vec::new();
            for (slot, vals) in informable {
                if slot == "name" {
                    untracked.push(slot.clone());
                    continue;
                }
                let mut list = string_list(slot, vals)?;
                if !list.iter().any(|v| normalize_token(v) == "dontcare") {
                    list.push("dontcare".into());
                }
                slots.push((slot.clone(), list));
            }
            return Self::with_untracked(slots, untracked);
        }

        let (tracked, untracked) = match obj.get("tracked").and_then(|v| v.as_object()) {
            Some(t) => {
                let doc: OntologyDoc = serde_json::from_value(value.clone())?;
                (t.clone(), doc.untracked)
            }
            None => (obj.clone(), Vec::new()),
        };
        let slots = tracked
            .iter()
            .map(|(slot, vals)| Ok((slot.clone(), string_list(slot, vals)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::with_untracked(slots, untracked)
    }

    pub fn to_json_string(&self) -> String {
        let tracked = self
            .slots
            .iter()
            .zip(&self.values)
            .map(|(s, v)| (s.clone(), serde_json::json!(v)))
            .collect();
        let doc = OntologyDoc {
            tracked,
            untracked: self.untracked.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("ontology serializes")
    }

    /// Stable content hash over slot order and value order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (slot, vals) in self.slots.iter().zip(&self.values) {
            hasher.update(slot.as_bytes());
            hasher.update([0u8]);
            for v in vals {
                hasher.update(v.as_bytes());
                hasher.update([1u8]);
            }
            hasher.update([2u8]);
        }
        for s in &self.untracked {
            hasher.update(s.as_bytes());
            hasher.update([3u8]);
        }
        hex::encode(hasher.finalize())
    }

    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Slots that are always reported as None.
    pub fn untracked(&self) -> &[String] {
        &self.untracked
    }

    pub fn slot_index(&self, slot: &str) -> Option<usize> {
        self.slots.iter().position(|s| s == slot)
    }

    pub fn require_slot(&self, slot: &str) -> Result<usize> {
        self.slot_index(slot)
            .ok_or_else(|| DstError::UnknownSlot(slot.to_owned()))
    }

    pub fn values(&self, slot: usize) -> &[String] {
        &self.values[slot]
    }

    /// Length of the slot's belief vector (values + None).
    pub fn belief_len(&self, slot: usize) -> usize {
        self.values[slot].len() + 1
    }

    /// Belief index of `value`, or `None` if it is not in the ontology.
    pub fn value_index(&self, slot: usize, value: &str) -> Option<usize> {
        self.value_index[slot].get(value).copied()
    }

    /// Label for a belief index; index 0 is `"None"`.
    pub fn value_label(&self, slot: usize, index: usize) -> &str {
        if index == NONE_INDEX {
            NONE_LABEL
        } else {
            &self.values[slot][index - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ActType {
    Inform,
    Request,
    Affirm,
    Negate,
    Confirm,
    ExplConf,
    ImplConf,
    Deny,
    Other(String),
}

impl ActType {
    pub fn parse(raw: &str) -> Self {
        match normalize_token(raw).as_str() {
            "inform" => ActType::Inform,
            "request" => ActType::Request,
            "affirm" => ActType::Affirm,
            "negate" => ActType::Negate,
            "confirm" => ActType::Confirm,
            "expl-conf" => ActType::ExplConf,
            "impl-conf" => ActType::ImplConf,
            "deny" => ActType::Deny,
            other => ActType::Other(other.to_owned()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            ActType::Inform => "inform",
            ActType::Request => "request",
            ActType::Affirm => "affirm",
            ActType::Negate => "negate",
            ActType::Confirm => "confirm",
            ActType::ExplConf => "expl-conf",
            ActType::ImplConf => "impl-conf",
            ActType::Deny => "deny",
            ActType::Other(s) => s,
        }
    }

    /// Machine acts that an `affirm` can answer.
    pub fn is_confirm_family(&self) -> bool {
        matches!(self, ActType::Confirm | ActType::ExplConf | ActType::ImplConf)
    }
}

impl fmt::Display for ActType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ActType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ActType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(ActType::parse(&raw))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogAct {
    pub act: ActType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl DialogAct {
    pub fn new(act: ActType, slot: Option<&str>, value: Option<&str>) -> Self {
        Self {
            act,
            slot: slot.map(normalize_token),
            value: value.map(normalize_token),
        }
    }

    pub fn bare(act: ActType) -> Self {
        Self::new(act, None, None)
    }

    pub fn inform(slot: &str, value: &str) -> Self {
        Self::new(ActType::Inform, Some(slot), Some(value))
    }

    pub fn request(slot: &str) -> Self {
        Self::new(ActType::Request, Some(slot), None)
    }

    pub fn expl_conf(slot: &str, value: &str) -> Self {
        Self::new(ActType::ExplConf, Some(slot), Some(value))
    }

    pub fn impl_conf(slot: &str, value: &str) -> Self {
        Self::new(ActType::ImplConf, Some(slot), Some(value))
    }

    pub fn affirm() -> Self {
        Self::bare(ActType::Affirm)
    }

    pub fn negate() -> Self {
        Self::bare(ActType::Negate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SluHypothesis {
    pub acts: Vec<DialogAct>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub machine_acts: Vec<DialogAct>,
    pub slu_nbest: Vec<SluHypothesis>,
    /// Cumulative true goal at this turn; `None` for an unlabeled turn.
    #[serde(default)]
    pub goal_labels: Option<BTreeMap<String, String>>,
}

impl Turn {
    /// Build a turn, clamping scores into [0, 1] and scaling the n-best down
    /// if its total mass exceeds 1.
    pub fn new(
        machine_acts: Vec<DialogAct>,
        slu_nbest: Vec<SluHypothesis>,
        goal_labels: Option<BTreeMap<String, String>>,
    ) -> Self {
        let mut turn = Self {
            machine_acts,
            slu_nbest,
            goal_labels,
        };
        turn.normalize_scores();
        turn
    }

    pub(crate) fn normalize_scores(&mut self) {
        for h in &mut self.slu_nbest {
            h.score = if h.score.is_finite() { h.score.clamp(0.0, 1.0) } else { 0.0 };
        }
        let total: f64 = self.slu_nbest.iter().map(|h| h.score).sum();
        if total > 1.0 + 1e-6 {
            for h in &mut self.slu_nbest {
                h.score /= total;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialog {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Result<Self> {
        let id = id.into();
        if turns.is_empty() {
            return Err(DstError::Data(format!("dialog `{id}` has no turns")));
        }
        Ok(Self { id, turns })
    }

    pub fn is_labeled(&self) -> bool {
        self.turns.iter().any(|t| t.goal_labels.is_some())
    }
}

/// Per-slot distributions, aligned with the ontology's tracked slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub per_slot: Vec<Vec<f64>>,
}

impl BeliefState {
    pub fn is_valid(&self, tol: f64) -> bool {
        self.per_slot.iter().all(|h| is_distribution(h, tol))
    }
}

pub fn is_distribution(h: &[f64], tol: f64) -> bool {
    !h.is_empty() && h.iter().all(|&p| p >= 0.0 && p.is_finite()) && (h.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// All mass on None for every tracked slot.
pub fn initial_belief(ontology: &Ontology) -> BeliefState {
    let per_slot = (0..ontology.num_slots())
        .map(|s| delta_none(ontology.belief_len(s)))
        .collect();
    BeliefState { per_slot }
}

pub(crate) fn delta_none(len: usize) -> Vec<f64> {
    let mut h = vec![0.0; len];
    h[NONE_INDEX] = 1.0;
    h
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(h: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in h.iter().enumerate().skip(1) {
        if p > h[best] {
            best = i;
        }
    }
    best
}

/// Mode of the product distribution: the per-slot argmax, as belief indices.
pub fn joint_top_hypothesis(belief: &BeliefState) -> Vec<usize> {
    belief.per_slot.iter().map(|h| argmax(h)).collect()
}
