//! Seeded generator of small labeled slot-filling dialogs, used for
//! end-to-end checks and demos when no real corpus is at hand.
//!
//! The simulated system asks for unfilled slots, explicitly confirms values
//! it heard with low confidence and finally offers a venue. The simulated
//! user answers truthfully; the SLU channel corrupts the informed value with
//! probability `slu_noise` (the true act then appears as a lower-ranked
//! hypothesis). With probability `goal_change` the user switches one slot
//! to a new value after the offer.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{ActType, Dialog, DialogAct, Ontology, SluHypothesis, Turn};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub dialogs: usize,
    pub slots: usize,
    pub values_per_slot: usize,
    pub slu_noise: f64,
    pub goal_change: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dialogs: 200,
            slots: 3,
            values_per_slot: 5,
            slu_noise: 0.1,
            goal_change: 0.15,
            seed: 0,
        }
    }
}

const SLOT_NAMES: [&str; 3] = ["food", "pricerange", "area"];

/// Below this top score the system confirms what it heard.
const CONFIRM_BELOW: f64 = 0.75;

pub fn synth_ontology(config: &SynthConfig) -> Result<Ontology> {
    let slots = (0..config.slots)
        .map(|s| {
            let name = SLOT_NAMES.get(s).map_or_else(|| format!("slot{s}"), |n| n.to_string());
            let values = (0..config.values_per_slot).map(|v| format!("{name}-{v}")).collect();
            (name, values)
        })
        .collect();
    Ontology::new(slots)
}

struct Sim<'a> {
    rng: ChaCha8Rng,
    onto: &'a Ontology,
    config: &'a SynthConfig,
}

impl Sim<'_> {
    fn value(&self, slot: usize, v: usize) -> &str {
        &self.onto.values(slot)[v]
    }

    fn other_value(&mut self, v: usize) -> usize {
        let k = self.config.values_per_slot;
        (v + self.rng.gen_range(1..k)) % k
    }

    /// N-best for a user turn; returns it with the value the system heard
    /// best for each informed slot and that hypothesis' score.
    fn slu(&mut self, user: &[DialogAct]) -> (Vec<SluHypothesis>, Vec<(usize, usize, f64)>) {
        let informs: Vec<(usize, usize)> = user
            .iter()
            .filter(|a| a.act == ActType::Inform)
            .filter_map(|a| {
                let s = self.onto.slot_index(a.slot.as_deref()?)?;
                Some((s, self.onto.value_index(s, a.value.as_deref()?)? - 1))
            })
            .collect();

        let noisy = !informs.is_empty() && self.rng.gen_bool(self.config.slu_noise);
        let mut nbest = Vec::new();
        let top_score: f64;
        let mut heard = informs.clone();
        if noisy {
            let k = self.rng.gen_range(0..informs.len());
            let (slot, v) = informs[k];
            let wrong = self.other_value(v);
            heard[k] = (slot, wrong);
            top_score = self.rng.gen_range(0.45..0.7);
            let true_score = self.rng.gen_range(0.1..(1.0 - top_score).min(top_score - 0.1));
            let corrupted = user
                .iter()
                .map(|a| {
                    if a.act == ActType::Inform && a.slot.as_deref() == Some(self.onto.slots()[slot].as_str()) {
                        DialogAct::inform(&self.onto.slots()[slot], self.value(slot, wrong))
                    } else {
                        a.clone()
                    }
                })
                .collect();
            nbest.push(SluHypothesis { acts: corrupted, score: top_score });
            nbest.push(SluHypothesis { acts: user.to_vec(), score: true_score });
        } else {
            top_score = self.rng.gen_range(0.55..0.97);
            nbest.push(SluHypothesis { acts: user.to_vec(), score: top_score });
            if let Some(&(slot, v)) = informs.first() {
                if self.rng.gen_bool(0.5) {
                    let distractor = self.other_value(v);
                    let score = self.rng.gen_range(0.0..(1.0 - top_score)) * 0.8;
                    nbest.push(SluHypothesis {
                        acts: vec![DialogAct::inform(&self.onto.slots()[slot], self.value(slot, distractor))],
                        score,
                    });
                }
            }
        }
        (nbest, heard.into_iter().map(|(s, v)| (s, v, top_score)).collect())
    }

    fn dialog(&mut self, id: String) -> Result<Dialog> {
        let n_slots = self.onto.num_slots();
        let k = self.config.values_per_slot;
        let mut goal: Vec<usize> = (0..n_slots).map(|_| self.rng.gen_range(0..k)).collect();
        let mut told: BTreeMap<String, String> = BTreeMap::new();
        let mut heard: Vec<Option<(usize, f64)>> = vec![None; n_slots];
        let mut confirm: Option<usize> = None;
        let mut offered = false;
        let mut changed = !self.rng.gen_bool(self.config.goal_change);
        let mut turns = Vec::new();

        let mut order: Vec<usize> = (0..n_slots).collect();
        order.shuffle(&mut self.rng);
        let opening = self.rng.gen_range(1..=n_slots.min(2));

        for t in 0..(4 * n_slots + 4) {
            let mut machine = Vec::new();
            let mut user = Vec::new();
            let mut done = false;
            if t == 0 {
                machine.push(DialogAct::bare(ActType::Other("welcomemsg".into())));
                for &s in order.iter().take(opening) {
                    user.push(DialogAct::inform(&self.onto.slots()[s], self.value(s, goal[s])));
                }
            } else if let Some(s) = confirm.take() {
                let (v, _) = heard[s].expect("confirming a heard slot");
                machine.push(DialogAct::expl_conf(&self.onto.slots()[s], self.value(s, v)));
                if v == goal[s] {
                    user.push(DialogAct::affirm());
                } else {
                    user.push(DialogAct::negate());
                    user.push(DialogAct::inform(&self.onto.slots()[s], self.value(s, goal[s])));
                }
            } else if let Some(s) = order.iter().copied().find(|&s| heard[s].is_none()) {
                machine.push(DialogAct::request(&self.onto.slots()[s]));
                user.push(DialogAct::inform(&self.onto.slots()[s], self.value(s, goal[s])));
            } else if !offered || !changed {
                machine.push(DialogAct::new(ActType::Other("offer".into()), Some("name"), Some("venue")));
                offered = true;
                if !changed {
                    changed = true;
                    let s = self.rng.gen_range(0..n_slots);
                    goal[s] = self.other_value(goal[s]);
                    user.push(DialogAct::bare(ActType::Other("reqalts".into())));
                    user.push(DialogAct::inform(&self.onto.slots()[s], self.value(s, goal[s])));
                } else {
                    user.push(DialogAct::bare(ActType::Other("thankyou".into())));
                }
            } else {
                machine.push(DialogAct::bare(ActType::Other("bye".into())));
                user.push(DialogAct::bare(ActType::Other("bye".into())));
                done = true;
            }

            for a in &user {
                if a.act == ActType::Inform {
                    told.insert(a.slot.clone().unwrap_or_default(), a.value.clone().unwrap_or_default());
                }
            }
            if user.contains(&DialogAct::affirm()) {
                if let Some(conf) = machine.first() {
                    told.insert(conf.slot.clone().unwrap_or_default(), conf.value.clone().unwrap_or_default());
                }
            }

            let (nbest, heard_now) = self.slu(&user);
            for (s, v, score) in heard_now {
                heard[s] = Some((v, score));
                if score < CONFIRM_BELOW && confirm.is_none() {
                    confirm = Some(s);
                }
            }
            turns.push(Turn::new(machine, nbest, Some(told.clone())));
            if done {
                break;
            }
        }
        Dialog::new(id, turns)
    }
}

/// Generate the ontology and `config.dialogs` dialogs.
pub fn generate(config: &SynthConfig) -> Result<(Ontology, Vec<Dialog>)> {
    let onto = synth_ontology(config)?;
    let mut sim = Sim {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        onto: &onto,
        config,
    };
    let dialogs = (0..config.dialogs)
        .map(|i| sim.dialog(format!("synth-{:04}", i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((onto.clone(), dialogs))
}
