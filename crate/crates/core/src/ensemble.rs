//! Ensembles by belief averaging, joint accuracy / L2 scoring and random
//! subset selection on a development set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};
use crate::model::{argmax, Dialog, Ontology, NONE_INDEX};
use crate::slu::marginalize_informs;
use crate::tracker::{track_dialog, SlotTrace, TrackerParams, TrackerRun};

/// Entries kept per slot, besides None, when forming the joint support for L2.
pub const L2_TOP_VALUES: usize = 10;

/// Members of an ensemble, as indices into a pool of trackers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<usize>,
}

impl EnsembleSpec {
    pub fn new(members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(DstError::Config("an ensemble needs at least one member".into()));
        }
        let mut sorted = members.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(DstError::Config("ensemble members must be distinct".into()));
        }
        Ok(Self { members })
    }

    pub fn all(pool_size: usize) -> Result<Self> {
        Self::new((0..pool_size).collect())
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    fn resolve<'a>(&self, pool: &'a [TrackerParams]) -> Result<Vec<&'a TrackerParams>> {
        self.members
            .iter()
            .map(|&i| {
                pool.get(i)
                    .ok_or_else(|| DstError::Config(format!("ensemble member {i} outside pool of {}", pool.len())))
            })
            .collect()
    }
}

/// Average the member beliefs per slot per turn; coefficients stay per member.
pub fn ensemble_track(pool: &[TrackerParams], spec: &EnsembleSpec, dialog: &Dialog) -> Result<TrackerRun> {
    let members = spec.resolve(pool)?;
    let runs = members
        .iter()
        .map(|p| track_dialog(p, dialog))
        .collect::<Result<Vec<_>>>()?;
    average_runs(runs)
}

pub fn average_runs(runs: Vec<TrackerRun>) -> Result<TrackerRun> {
    let mut iter = runs.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| DstError::Config("cannot average zero runs".into()))?;
    let mut count = 1.0;
    let mut acc = first;
    for run in iter {
        if run.slots.len() != acc.slots.len() || run.num_turns() != acc.num_turns() {
            return Err(DstError::Data(format!("member output shapes differ on `{}`", acc.dialog_id)));
        }
        for (a, b) in acc.slots.iter_mut().zip(run.slots) {
            for (ha, hb) in a.beliefs.iter_mut().zip(&b.beliefs) {
                DstError::check_dim("member belief", ha.len(), hb.len())?;
                for (x, y) in ha.iter_mut().zip(hb) {
                    *x += y;
                }
            }
            a.members.extend(b.members);
        }
        count += 1.0;
    }
    if count > 1.0 {
        for SlotTrace { beliefs, .. } in &mut acc.slots {
            for h in beliefs {
                for x in h.iter_mut() {
                    *x /= count;
                }
            }
        }
    }
    Ok(acc)
}

/// Which labeled turns count towards the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Every turn carrying a goal label.
    #[default]
    AllLabeled,
    /// Only labeled turns at or after the first SLU mention of a tracked
    /// slot (per slot for per-slot accuracy, any slot for joint scores).
    Schedule2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotScore {
    pub slot: String,
    pub accuracy: f64,
    pub turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub joint_accuracy: f64,
    /// Mean over scored turns of `sum_j (p_j - delta_j)^2` on the joint support.
    pub joint_l2: f64,
    /// Mean of the square root of the same quantity.
    pub joint_l2_norm: f64,
    pub per_slot: Vec<SlotScore>,
    pub turns: usize,
    pub mode: ScoringMode,
}

impl ScoreReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:>9} {:>7}\n", "metric", "value", "turns"));
        out.push_str(&format!("{:<14} {:>9.4} {:>7}\n", "joint acc", self.joint_accuracy, self.turns));
        out.push_str(&format!("{:<14} {:>9.4} {:>7}\n", "joint L2", self.joint_l2, self.turns));
        out.push_str(&format!("{:<14} {:>9.4} {:>7}\n", "joint L2 norm", self.joint_l2_norm, self.turns));
        for s in &self.per_slot {
            out.push_str(&format!("{:<14} {:>9.4} {:>7}\n", format!("{} acc", s.slot), s.accuracy, s.turns));
        }
        out
    }
}

/// Squared distance to the one-hot gold over the product of per-slot
/// supports, each truncated to None plus the `L2_TOP_VALUES` most likely
/// values. Entries outside the support count as probability 0.
pub fn joint_l2_turn(beliefs: &[&[f64]], gold: &[Option<usize>]) -> f64 {
    let mut sum_sq = 1.0;
    let mut p_gold = 1.0;
    let mut gold_in_support = true;
    for (h, g) in beliefs.iter().zip(gold) {
        let mut order: Vec<usize> = (1..h.len()).collect();
        order.sort_by(|&a, &b| h[b].total_cmp(&h[a]).then(a.cmp(&b)));
        order.truncate(L2_TOP_VALUES);
        order.push(NONE_INDEX);
        sum_sq *= order.iter().map(|&v| h[v] * h[v]).sum::<f64>();
        match g {
            Some(g) if order.contains(g) => p_gold *= h[*g],
            _ => gold_in_support = false,
        }
    }
    let p_gold = if gold_in_support { p_gold } else { 0.0 };
    (sum_sq - 2.0 * p_gold + 1.0).max(0.0)
}

/// Gold per slot per turn; `None` marks a labeled value outside the ontology.
fn gold_table(dialog: &Dialog, ontology: &Ontology) -> Vec<Vec<Option<usize>>> {
    (0..ontology.num_slots())
        .map(|s| {
            let name = &ontology.slots()[s];
            let mut current = Some(NONE_INDEX);
            dialog
                .turns
                .iter()
                .map(|t| {
                    if let Some(labels) = &t.goal_labels {
                        current = match labels.get(name) {
                            Some(v) => ontology.value_index(s, v),
                            None => Some(NONE_INDEX),
                        };
                    }
                    current
                })
                .collect()
        })
        .collect()
}

pub fn score(runs: &[TrackerRun], dialogs: &[Dialog], ontology: &Ontology, mode: ScoringMode) -> Result<ScoreReport> {
    if runs.len() != dialogs.len() {
        return Err(DstError::LabelMismatch(format!("{} runs for {} dialogs", runs.len(), dialogs.len())));
    }
    let n_slots = ontology.num_slots();
    let mut joint_correct = 0usize;
    let mut joint_turns = 0usize;
    let mut l2_sum = 0.0;
    let mut l2_norm_sum = 0.0;
    let mut slot_correct = vec![0usize; n_slots];
    let mut slot_turns = vec![0usize; n_slots];

    for (run, dialog) in runs.iter().zip(dialogs) {
        if run.dialog_id != dialog.id {
            return Err(DstError::LabelMismatch(format!("run `{}` paired with dialog `{}`", run.dialog_id, dialog.id)));
        }
        if run.slots.len() != n_slots || run.num_turns() != dialog.turns.len() {
            return Err(DstError::LabelMismatch(format!("shape of run `{}` differs from its dialog", run.dialog_id)));
        }
        let gold = gold_table(dialog, ontology);
        let mentioned: Vec<Vec<bool>> = match mode {
            ScoringMode::AllLabeled => vec![vec![true; dialog.turns.len()]; n_slots],
            ScoringMode::Schedule2 => (0..n_slots)
                .map(|s| {
                    let mut seen = false;
                    dialog
                        .turns
                        .iter()
                        .map(|t| {
                            seen |= marginalize_informs(t, s, ontology).total_mass > 0.0;
                            seen
                        })
                        .collect()
                })
                .collect(),
        };

        for (t, turn) in dialog.turns.iter().enumerate() {
            if turn.goal_labels.is_none() {
                continue;
            }
            let top: Vec<usize> = run.slots.iter().map(|s| argmax(&s.beliefs[t])).collect();
            for s in 0..n_slots {
                if mentioned[s][t] {
                    slot_turns[s] += 1;
                    if gold[s][t] == Some(top[s]) {
                        slot_correct[s] += 1;
                    }
                }
            }
            if !(0..n_slots).any(|s| mentioned[s][t]) && n_slots > 0 {
                continue;
            }
            joint_turns += 1;
            if (0..n_slots).all(|s| gold[s][t] == Some(top[s])) {
                joint_correct += 1;
            }
            let beliefs: Vec<&[f64]> = run.slots.iter().map(|s| s.beliefs[t].as_slice()).collect();
            let golds: Vec<Option<usize>> = gold.iter().map(|g| g[t]).collect();
            let l2 = joint_l2_turn(&beliefs, &golds);
            l2_sum += l2;
            l2_norm_sum += l2.sqrt();
        }
    }

    if joint_turns == 0 {
        return Err(DstError::NoScoredTurns);
    }
    let n = joint_turns as f64;
    Ok(ScoreReport {
        joint_accuracy: joint_correct as f64 / n,
        joint_l2: l2_sum / n,
        joint_l2_norm: l2_norm_sum / n,
        per_slot: ontology
            .slots()
            .iter()
            .enumerate()
            .map(|(s, name)| SlotScore {
                slot: name.clone(),
                accuracy: if slot_turns[s] == 0 { 0.0 } else { slot_correct[s] as f64 / slot_turns[s] as f64 },
                turns: slot_turns[s],
            })
            .collect(),
        turns: joint_turns,
        mode,
    })
}

/// Track every dialog with the ensemble, in parallel over dialogs.
pub fn ensemble_track_all(pool: &[TrackerParams], spec: &EnsembleSpec, dialogs: &[Dialog]) -> Result<Vec<TrackerRun>> {
    dialogs.par_iter().map(|d| ensemble_track(pool, spec, d)).collect()
}

pub fn evaluate(pool: &[TrackerParams], spec: &EnsembleSpec, dialogs: &[Dialog], mode: ScoringMode) -> Result<ScoreReport> {
    let first = spec.resolve(pool)?[0];
    let runs = ensemble_track_all(pool, spec, dialogs)?;
    score(&runs, dialogs, &first.ontology, mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrial {
    pub members: Vec<usize>,
    pub dev: ScoreReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: EnsembleSpec,
    pub trials: Vec<SelectionTrial>,
}

/// Draw `trials` random `k`-subsets of the pool, score each on `dev` and keep
/// the most accurate (first drawn wins ties).
pub fn select_ensemble(
    pool: &[TrackerParams],
    k: usize,
    trials: usize,
    dev: &[Dialog],
    seed: u64,
    mode: ScoringMode,
) -> Result<Selection> {
    if k == 0 || k > pool.len() {
        return Err(DstError::Config(format!("ensemble size {k} with a pool of {}", pool.len())));
    }
    if trials == 0 {
        return Err(DstError::Config("at least one selection trial is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results: Vec<SelectionTrial> = Vec::with_capacity(trials);
    for _ in 0..trials {
        let mut members = rand::seq::index::sample(&mut rng, pool.len(), k).into_vec();
        members.sort_unstable();
        let spec = EnsembleSpec::new(members.clone())?;
        let report = evaluate(pool, &spec, dev, mode)?;
        results.push(SelectionTrial { members, dev: report });
    }
    let mut best = 0;
    for (i, t) in results.iter().enumerate() {
        if t.dev.joint_accuracy > results[best].dev.joint_accuracy {
            best = i;
        }
    }
    Ok(Selection {
        best: EnsembleSpec::new(results[best].members.clone())?,
        trials: results,
    })
}
