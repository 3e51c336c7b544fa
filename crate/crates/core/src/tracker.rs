//! The hybrid tracker: for each tracked slot, one shared LSTM is unrolled
//! over the dialog and its per-turn coefficients drive the belief update.

use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};
use crate::model::{delta_none, BeliefState, Dialog, Ontology, Turn};
use crate::nn::{head_forward, lstm_step_sparse, LstmState, NetParams, NetShape};
use crate::rules::{rule_update_with, RuleCoefficients, TransitionReading};
use crate::slu::{featurize, marginalize_informs, FeatureVocab, SparseInput, TurnFeatures};
use crate::train::TrainConfig;

/// Everything needed to run one trained tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerParams {
    pub ontology: Ontology,
    pub vocab: FeatureVocab,
    pub net: NetParams,
    /// `true` marks a bag-of-words coordinate that is always zeroed.
    pub fm_mask: Option<Vec<bool>>,
    pub reading: TransitionReading,
    /// Training configuration snapshot, if the model came from the trainer.
    pub config: Option<TrainConfig>,
}

impl TrackerParams {
    pub fn new(
        ontology: Ontology,
        vocab: FeatureVocab,
        net: NetParams,
        fm_mask: Option<Vec<bool>>,
        reading: TransitionReading,
    ) -> Result<Self> {
        let expected = TurnFeatures::input_size(ontology.num_slots(), vocab.len());
        DstError::check_dim("network input size", expected, net.shape().input_size)?;
        if let Some(mask) = &fm_mask {
            DstError::check_dim("feature mask", vocab.len(), mask.len())?;
        }
        Ok(Self {
            ontology,
            vocab,
            net,
            fm_mask,
            reading,
            config: None,
        })
    }

    pub fn shape_for(ontology: &Ontology, vocab: &FeatureVocab, hidden: usize) -> NetShape {
        NetShape::new(TurnFeatures::input_size(ontology.num_slots(), vocab.len()), hidden)
    }

    /// Network input and inform marginal for one slot at one turn.
    pub fn turn_inputs(&self, turn: &Turn, slot: usize) -> (SparseInput, Vec<f64>) {
        let marginal = marginalize_informs(turn, slot, &self.ontology);
        let mut features = featurize(turn, slot, self.ontology.num_slots(), &self.vocab, &marginal);
        if let Some(mask) = &self.fm_mask {
            features.apply_mask(mask);
        }
        (features.to_input(), marginal.per_value)
    }

    /// Inputs for every turn of one slot.
    pub fn slot_inputs(&self, dialog: &Dialog, slot: usize) -> SlotInputs {
        let (inputs, informs) = dialog.turns.iter().map(|t| self.turn_inputs(t, slot)).unzip();
        SlotInputs { inputs, informs }
    }
}

#[derive(Debug, Clone)]
pub struct SlotInputs {
    pub inputs: Vec<SparseInput>,
    pub informs: Vec<Vec<f64>>,
}

/// Coefficients and recurrent states produced by one tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberTrace {
    pub coefficients: Vec<RuleCoefficients>,
    pub states: Vec<LstmState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace {
    /// Belief after each turn.
    pub beliefs: Vec<Vec<f64>>,
    /// One entry for a single tracker, one per member for an ensemble.
    pub members: Vec<MemberTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerRun {
    pub dialog_id: String,
    /// Aligned with the ontology's tracked slots.
    pub slots: Vec<SlotTrace>,
}

impl TrackerRun {
    pub fn num_turns(&self) -> usize {
        self.slots.first().map_or(0, |s| s.beliefs.len())
    }

    pub fn belief_at(&self, turn: usize) -> BeliefState {
        BeliefState {
            per_slot: self.slots.iter().map(|s| s.beliefs[turn].clone()).collect(),
        }
    }
}

/// Per-turn result of an online session.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutput {
    pub beliefs: Vec<Vec<f64>>,
    pub coefficients: Vec<RuleCoefficients>,
    pub states: Vec<LstmState>,
}

/// Incremental tracking of one dialog, turn by turn.
#[derive(Debug, Clone)]
pub struct TrackerSession<'a> {
    params: &'a TrackerParams,
    beliefs: Vec<Vec<f64>>,
    states: Vec<LstmState>,
}

impl<'a> TrackerSession<'a> {
    pub fn new(params: &'a TrackerParams) -> Self {
        let onto = &params.ontology;
        Self {
            params,
            beliefs: (0..onto.num_slots()).map(|s| delta_none(onto.belief_len(s))).collect(),
            states: vec![LstmState::zeros(params.net.shape().hidden); onto.num_slots()],
        }
    }

    pub fn step(&mut self, turn: &Turn) -> Result<TurnOutput> {
        let p = self.params;
        let mut coefficients = Vec::with_capacity(self.beliefs.len());
        for slot in 0..self.beliefs.len() {
            let (x, inform) = p.turn_inputs(turn, slot);
            let (state, _) = lstm_step_sparse(&p.net, &self.states[slot], &x)?;
            let c = head_forward(&p.net, &state);
            self.beliefs[slot] = rule_update_with(p.reading, &self.beliefs[slot], &inform, c)?;
            self.states[slot] = state;
            coefficients.push(c);
        }
        Ok(TurnOutput {
            beliefs: self.beliefs.clone(),
            coefficients,
            states: self.states.clone(),
        })
    }
}

pub fn track_dialog(params: &TrackerParams, dialog: &Dialog) -> Result<TrackerRun> {
    if dialog.turns.is_empty() {
        return Err(DstError::Data(format!("dialog `{}` has no turns", dialog.id)));
    }
    let n_slots = params.ontology.num_slots();
    let mut slots: Vec<SlotTrace> = (0..n_slots)
        .map(|_| SlotTrace {
            beliefs: Vec::with_capacity(dialog.turns.len()),
            members: vec![MemberTrace {
                coefficients: Vec::with_capacity(dialog.turns.len()),
                states: Vec::with_capacity(dialog.turns.len()),
            }],
        })
        .collect();
    let mut session = TrackerSession::new(params);
    for turn in &dialog.turns {
        let out = session.step(turn)?;
        for (s, trace) in slots.iter_mut().enumerate() {
            trace.beliefs.push(out.beliefs[s].clone());
            trace.members[0].coefficients.push(out.coefficients[s]);
            trace.members[0].states.push(out.states[s].clone());
        }
    }
    Ok(TrackerRun {
        dialog_id: dialog.id.clone(),
        slots,
    })
}

/// `(c_new, c_override)` per turn for one slot, from the first member.
pub fn coefficient_trajectory(run: &TrackerRun, ontology: &Ontology, slot: &str) -> Result<Vec<(f64, f64)>> {
    member_trajectory(run, ontology, slot, 0)
}

pub fn member_trajectory(run: &TrackerRun, ontology: &Ontology, slot: &str, member: usize) -> Result<Vec<(f64, f64)>> {
    let s = ontology.require_slot(slot)?;
    let trace = run
        .slots
        .get(s)
        .and_then(|t| t.members.get(member))
        .ok_or_else(|| DstError::Data(format!("run has no member {member} for slot `{slot}`")))?;
    Ok(trace.coefficients.iter().map(|c| (c.c_new, c.c_override)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DialogAct, SluHypothesis};
    use crate::nn::init_params;
    use crate::slu::FeatureVocab;

    fn onto() -> Ontology {
        Ontology::new(vec![
            ("food".into(), vec!["chinese".into(), "indian".into()]),
            ("pricerange".into(), vec!["cheap".into(), "expensive".into()]),
            ("area".into(), vec!["north".into(), "south".into()]),
        ])
        .unwrap()
    }

    fn vocab() -> FeatureVocab {
        FeatureVocab::from_tokens(["request", "food", "area", "expl-conf"].map(String::from).to_vec(), 5)
    }

    fn tracker(seed: u64) -> TrackerParams {
        let o = onto();
        let v = vocab();
        let shape = TrackerParams::shape_for(&o, &v, 5);
        TrackerParams::new(o, v, init_params(seed, shape), None, TransitionReading::SourceNone).unwrap()
    }

    fn turn(machine: Vec<DialogAct>, nbest: Vec<(Vec<DialogAct>, f64)>) -> Turn {
        Turn::new(
            machine,
            nbest.into_iter().map(|(acts, score)| SluHypothesis { acts, score }).collect(),
            None,
        )
    }

    #[test]
    fn no_evidence_keeps_none() {
        let d = Dialog::new(
            "quiet",
            vec![turn(vec![DialogAct::request("food")], vec![]), turn(vec![DialogAct::request("area")], vec![(vec![DialogAct::negate()], 0.9)])],
        )
        .unwrap();
        let run = track_dialog(&tracker(1), &d).unwrap();
        for slot in &run.slots {
            for b in &slot.beliefs {
                assert_eq!(b[0], 1.0);
            }
        }
    }

    #[test]
    fn single_full_inform_moves_c_new() {
        let d = Dialog::new("one", vec![turn(vec![], vec![(vec![DialogAct::inform("food", "chinese")], 1.0)])]).unwrap();
        let p = tracker(2);
        let run = track_dialog(&p, &d).unwrap();
        let (c_new, _) = coefficient_trajectory(&run, &p.ontology, "food").unwrap()[0];
        assert!((run.slots[0].beliefs[0][1] - c_new).abs() < 1e-15);
        assert!((run.slots[0].beliefs[0][0] - (1.0 - c_new)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_valid() {
        let d = Dialog::new(
            "mixed",
            vec![
                turn(vec![], vec![(vec![DialogAct::inform("food", "chinese")], 0.7), (vec![DialogAct::inform("area", "north")], 0.2)]),
                turn(vec![DialogAct::expl_conf("food", "chinese")], vec![(vec![DialogAct::affirm()], 0.9)]),
                turn(vec![], vec![(vec![DialogAct::inform("food", "indian")], 0.8)]),
                turn(vec![DialogAct::request("area")], vec![(vec![DialogAct::inform("area", "south")], 0.6)]),
                turn(vec![], vec![]),
            ],
        )
        .unwrap();
        let p = tracker(3);
        let a = track_dialog(&p, &d).unwrap();
        let b = track_dialog(&p, &d).unwrap();
        assert_eq!(a, b);
        for slot in &a.slots {
            for h in &slot.beliefs {
                assert!(crate::model::is_distribution(h, 1e-9));
            }
        }
        let traj = coefficient_trajectory(&a, &p.ontology, "area").unwrap();
        assert_eq!(traj.len(), 5);
        assert!(traj.iter().all(|&(n, o)| n > 0.0 && n < 1.0 && o > 0.0 && o < 1.0));
        assert!(coefficient_trajectory(&a, &p.ontology, "name").is_err());
    }

    #[test]
    fn zero_head_gives_half_coefficients() {
        let mut p = tracker(4);
        p.net.head_weights_mut().fill(0.0);
        p.net.head_bias_mut().fill(0.0);
        let d = Dialog::new("d", vec![turn(vec![], vec![]); 3]).unwrap();
        let run = track_dialog(&p, &d).unwrap();
        assert!(coefficient_trajectory(&run, &p.ontology, "food").unwrap().iter().all(|&c| c == (0.5, 0.5)));
    }

    #[test]
    fn other_slot_informs_only_reach_through_the_network() {
        // With the bag of words masked out and no inform-summary weights,
        // the network sees the same inputs for `food` in both dialogs.
        let mut p = tracker(5);
        let o = &p.ontology;
        let d_in = TurnFeatures::input_size(o.num_slots(), p.vocab.len());
        let h = p.net.shape().hidden;
        for row in 0..4 * h {
            for j in (d_in - crate::slu::INFORM_SUMMARY_DIM)..d_in {
                p.net.input_weights_mut()[row * d_in + j] = 0.0;
            }
        }
        p.fm_mask = Some(vec![true; p.vocab.len()]);
        let base = vec![
            turn(vec![DialogAct::request("food")], vec![(vec![DialogAct::inform("food", "chinese")], 0.8)]),
            turn(vec![], vec![(vec![DialogAct::inform("area", "north")], 0.9)]),
        ];
        let mut edited = base.clone();
        edited[1] = turn(vec![DialogAct::request("area")], vec![(vec![DialogAct::inform("area", "south")], 0.4)]);
        let a = track_dialog(&p, &Dialog::new("a", base).unwrap()).unwrap();
        let b = track_dialog(&p, &Dialog::new("b", edited).unwrap()).unwrap();
        assert_eq!(a.slots[0], b.slots[0]);
        assert_ne!(a.slots[2].beliefs, b.slots[2].beliefs);
    }

    #[test]
    fn mismatched_input_size_is_rejected() {
        let o = onto();
        let v = vocab();
        let net = init_params(0, NetShape::new(3, 5));
        assert!(TrackerParams::new(o, v, net, None, TransitionReading::SourceNone).is_err());
    }
}
