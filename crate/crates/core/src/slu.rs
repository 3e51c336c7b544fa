//! Turn preprocessing: affirm rewriting, the informed-value marginal, the
//! machine-act vocabulary and per-turn network features.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{ActType, Dialog, DialogAct, Ontology, Turn, NONE_INDEX};

/// Width of the fixed-size summary of the informed-value marginal.
pub const INFORM_SUMMARY_DIM: usize = 6;

/// Number of sorted marginal entries kept in the summary.
const SUMMARY_TOP_K: usize = INFORM_SUMMARY_DIM - 1;

/// Replace every `affirm` by `inform(s=v)` for each confirm-family machine act
/// `confirm(s=v)`. An affirm with nothing to confirm is dropped.
pub fn rewrite_affirm(machine_acts: &[DialogAct], user_acts: &[DialogAct]) -> Vec<DialogAct> {
    let confirmed: Vec<DialogAct> = machine_acts
        .iter()
        .filter(|a| a.act.is_confirm_family())
        .filter_map(|a| match (&a.slot, &a.value) {
            (Some(s), Some(v)) => Some(DialogAct {
                act: ActType::Inform,
                slot: Some(s.clone()),
                value: Some(v.clone()),
            }),
            _ => None,
        })
        .collect();

    let mut out = Vec::with_capacity(user_acts.len());
    for act in user_acts {
        if act.act == ActType::Affirm {
            out.extend(confirmed.iter().cloned());
        } else {
            out.push(act.clone());
        }
    }
    out
}

/// Marginal probability that each value of one slot was informed this turn.
#[derive(Debug, Clone, PartialEq)]
pub struct InformMarginal {
    /// Aligned with the slot's belief vector; entry 0 (None) is always 0.
    pub per_value: Vec<f64>,
    pub total_mass: f64,
    /// Informs of values missing from the ontology, dropped.
    pub unknown_values: usize,
}

impl InformMarginal {
    pub fn zeros(len: usize) -> Self {
        Self {
            per_value: vec![0.0; len],
            total_mass: 0.0,
            unknown_values: 0,
        }
    }

    /// `[total_mass, top-5 entries sorted descending, zero padded]`.
    pub fn summary(&self) -> [f64; INFORM_SUMMARY_DIM] {
        let mut sorted: Vec<f64> = self.per_value.iter().copied().filter(|&p| p > 0.0).collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut out = [0.0; INFORM_SUMMARY_DIM];
        out[0] = self.total_mass;
        for (dst, p) in out[1..].iter_mut().zip(sorted.into_iter().take(SUMMARY_TOP_K)) {
            *dst = p;
        }
        out
    }
}

pub fn marginalize_informs(turn: &Turn, slot: usize, ontology: &Ontology) -> InformMarginal {
    let slot_name = &ontology.slots()[slot];
    let mut marginal = InformMarginal::zeros(ontology.belief_len(slot));
    let mut seen = Vec::new();
    for hyp in &turn.slu_nbest {
        seen.clear();
        for act in rewrite_affirm(&turn.machine_acts, &hyp.acts) {
            if act.act != ActType::Inform || act.slot.as_ref() != Some(slot_name) {
                continue;
            }
            let Some(value) = act.value.as_deref() else { continue };
            match ontology.value_index(slot, value) {
                Some(idx) if !seen.contains(&idx) => {
                    seen.push(idx);
                    marginal.per_value[idx] += hyp.score;
                }
                Some(_) => {}
                None => marginal.unknown_values += 1,
            }
        }
    }
    for p in &mut marginal.per_value {
        *p = p.clamp(0.0, 1.0);
    }
    marginal.per_value[NONE_INDEX] = 0.0;
    let total: f64 = marginal.per_value.iter().sum();
    // A hypothesis informing two values of one slot can push the mass over 1.
    if total > 1.0 {
        for p in &mut marginal.per_value {
            *p /= total;
        }
        marginal.total_mass = marginal.per_value.iter().sum();
    } else {
        marginal.total_mass = total;
    }
    marginal
}

/// Word tokens of one machine act: act type, then slot and value if present.
pub fn act_tokens(act: &DialogAct) -> impl Iterator<Item = &str> {
    std::iter::once(act.act.as_str())
        .chain(act.slot.as_deref())
        .chain(act.value.as_deref())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVocab {
    pub tokens: Vec<String>,
    pub min_count: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl FeatureVocab {
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens,
            min_count,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        if self.index.len() != self.tokens.len() {
            // deserialized without the lookup table
            return self.tokens.iter().position(|t| t == token);
        }
        self.index.get(token).copied()
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }
}

/// Tokens seen strictly more than `min_count` times, in first-seen order.
pub fn build_vocab(dialogs: &[Dialog], min_count: usize) -> FeatureVocab {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut order: Vec<&str> = Vec::new();
    for dialog in dialogs {
        for turn in &dialog.turns {
            for act in &turn.machine_acts {
                for tok in act_tokens(act) {
                    let c = counts.entry(tok).or_insert_with(|| {
                        order.push(tok);
                        0
                    });
                    *c += 1;
                }
            }
        }
    }
    let tokens = order
        .into_iter()
        .filter(|t| counts[t] > min_count)
        .map(str::to_owned)
        .collect();
    FeatureVocab::from_tokens(tokens, min_count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnFeatures {
    pub slot_one_hot: Vec<f64>,
    pub machine_bow: Vec<f64>,
    pub inform_summary: [f64; INFORM_SUMMARY_DIM],
}

impl TurnFeatures {
    pub fn input_size(num_slots: usize, vocab_len: usize) -> usize {
        num_slots + vocab_len + INFORM_SUMMARY_DIM
    }

    /// Zero out bag-of-words coordinates whose mask entry is `true`.
    pub fn apply_mask(&mut self, masked: &[bool]) {
        for (x, &m) in self.machine_bow.iter_mut().zip(masked) {
            if m {
                *x = 0.0;
            }
        }
    }

    /// Network input as sparse `(index, value)` pairs; layout is
    /// `[slot one-hot | bag of words | inform summary]`.
    pub fn to_input(&self) -> SparseInput {
        let dim = self.slot_one_hot.len() + self.machine_bow.len() + INFORM_SUMMARY_DIM;
        let entries = self
            .slot_one_hot
            .iter()
            .chain(&self.machine_bow)
            .chain(&self.inform_summary)
            .copied()
            .enumerate()
            .filter(|&(_, x)| x != 0.0)
            .collect();
        SparseInput { dim, entries }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        self.slot_one_hot
            .iter()
            .chain(&self.machine_bow)
            .chain(&self.inform_summary)
            .copied()
            .collect()
    }
}

/// Input vector with only its nonzero coordinates stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInput {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseInput {
    pub fn from_dense(x: &[f64]) -> Self {
        Self {
            dim: x.len(),
            entries: x.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect(),
        }
    }
}

pub fn featurize(
    turn: &Turn,
    slot: usize,
    num_slots: usize,
    vocab: &FeatureVocab,
    marginal: &InformMarginal,
) -> TurnFeatures {
    let mut slot_one_hot = vec![0.0; num_slots];
    slot_one_hot[slot] = 1.0;
    let mut machine_bow = vec![0.0; vocab.len()];
    for act in &turn.machine_acts {
        for tok in act_tokens(act) {
            if let Some(j) = vocab.index_of(tok) {
                machine_bow[j] = 1.0;
            }
        }
    }
    TurnFeatures {
        slot_one_hot,
        machine_bow,
        inform_summary: marginal.summary(),
    }
}
