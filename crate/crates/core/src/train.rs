//! Training: per-slot samples, the cross-entropy dialog loss, its gradient
//! through the rule chain and the LSTM, and the two trainer groups.
//!
//! Group A uses AdaGrad (lr 0.5, global-norm clip 10) and relies on random
//! initialization for diversity. Group B uses Adam (lr 0.01, betas 0.9 /
//! 0.999) and additionally zeroes a random, run-fixed subset of the
//! machine-act bag-of-words features.

use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};
use crate::model::{Dialog, Ontology, NONE_INDEX};
use crate::nn::{backward_sequence, forward_sequence, init_params, NetParams, OptimizerKind, OptimizerState, DEFAULT_HIDDEN};
use crate::rules::{rule_update_backward_with, rule_update_with, TransitionReading};
use crate::slu::FeatureVocab;
use crate::tracker::{SlotInputs, TrackerParams};

/// Added inside the log so a zero belief on the gold value stays finite.
pub const LOSS_FLOOR: f64 = 1e-12;

const MASK_STREAM: u64 = 0x6d61_736b;
const SHUFFLE_STREAM: u64 = 0x7368_7566;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum Group {
    /// AdaGrad, lr 0.5, gradient clipping at 10.
    A,
    /// Adam, lr 0.01, with random bag-of-words masking.
    B,
}

impl Group {
    pub fn optimizer(self) -> OptimizerKind {
        match self {
            Group::A => OptimizerKind::adagrad(),
            Group::B => OptimizerKind::adam(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub group: Group,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of bag-of-words coordinates zeroed for the run (group B).
    pub mask_rate: f64,
    pub hidden: usize,
    pub reading: TransitionReading,
}

impl TrainConfig {
    pub fn new(group: Group, seed: u64) -> Self {
        Self {
            group,
            epochs: 10,
            seed,
            mask_rate: 0.2,
            hidden: DEFAULT_HIDDEN,
            reading: TransitionReading::SourceNone,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(DstError::Config("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(DstError::Config(format!("mask rate {} outside [0, 1)", self.mask_rate)));
        }
        if self.hidden == 0 {
            return Err(DstError::Config("hidden size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub dialog: usize,
    pub slot: usize,
    /// Gold belief index per turn.
    pub gold: Vec<usize>,
}

/// Gold index per turn for one slot. Unlabeled turns inherit the previous
/// labels; values outside the ontology map to None.
pub fn gold_sequence(dialog: &Dialog, slot: usize, ontology: &Ontology) -> Vec<usize> {
    let name = &ontology.slots()[slot];
    let mut current = NONE_INDEX;
    dialog
        .turns
        .iter()
        .map(|turn| {
            if let Some(labels) = &turn.goal_labels {
                current = labels
                    .get(name)
                    .and_then(|v| ontology.value_index(slot, v))
                    .unwrap_or(NONE_INDEX);
            }
            current
        })
        .collect()
}

/// One sample per (dialog, tracked slot).
pub fn extract_samples(dialogs: &[Dialog], ontology: &Ontology) -> Vec<TrainingSample> {
    dialogs
        .iter()
        .enumerate()
        .flat_map(|(d, dialog)| {
            (0..ontology.num_slots()).map(move |slot| TrainingSample {
                dialog: d,
                slot,
                gold: gold_sequence(dialog, slot, ontology),
            })
        })
        .collect()
}

/// `sum_t -ln(h_t[gold_t] + floor)` and its gradient with respect to each
/// belief vector.
pub fn dialog_loss(beliefs: &[Vec<f64>], gold: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    DstError::check_dim("gold sequence", beliefs.len(), gold.len())?;
    let mut loss = 0.0;
    let mut seeds = Vec::with_capacity(beliefs.len());
    for (h, &g) in beliefs.iter().zip(gold) {
        if g >= h.len() {
            return Err(DstError::Dimension {
                context: "gold index",
                expected: h.len(),
                got: g,
            });
        }
        let p = h[g] + LOSS_FLOOR;
        loss -= p.ln();
        let mut seed = vec![0.0; h.len()];
        seed[g] = -1.0 / p;
        seeds.push(seed);
    }
    Ok((loss, seeds))
}

/// Loss of one slot sample and its parameter gradient, accumulated into
/// `grads`.
pub fn sample_loss_and_gradient(
    net: &NetParams,
    reading: TransitionReading,
    inputs: &SlotInputs,
    gold: &[usize],
    grads: &mut NetParams,
) -> Result<f64> {
    let trace = forward_sequence(net, &inputs.inputs)?;
    let len = inputs.informs.first().map_or(0, Vec::len);
    let mut h = crate::model::delta_none(len);
    let mut history = Vec::with_capacity(inputs.inputs.len() + 1);
    history.push(h.clone());
    for (inform, &c) in inputs.informs.iter().zip(&trace.coefficients) {
        h = rule_update_with(reading, &h, inform, c)?;
        history.push(h.clone());
    }
    let (loss, seeds) = dialog_loss(&history[1..], gold)?;

    let mut coeff_grads = vec![[0.0; 2]; seeds.len()];
    let mut carry = vec![0.0; len];
    for t in (0..seeds.len()).rev() {
        let upstream: Vec<f64> = seeds[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
        let g = rule_update_backward_with(reading, &history[t], &inputs.informs[t], trace.coefficients[t], &upstream)?;
        coeff_grads[t] = [g.d_c_new, g.d_c_override];
        carry = g.d_h_prev;
    }
    grads.add_assign(&backward_sequence(net, &trace, &coeff_grads)?);
    Ok(loss)
}

/// Summed loss over every tracked slot of a dialog, with its gradient.
pub fn dialog_loss_and_gradient(params: &TrackerParams, dialog: &Dialog) -> Result<(f64, NetParams)> {
    let mut grads = NetParams::zeros(params.net.shape());
    let mut loss = 0.0;
    for slot in 0..params.ontology.num_slots() {
        let inputs = params.slot_inputs(dialog, slot);
        let gold = gold_sequence(dialog, slot, &params.ontology);
        loss += sample_loss_and_gradient(&params.net, params.reading, &inputs, &gold, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Run-fixed bag-of-words mask: `true` zeroes the coordinate.
pub fn draw_mask(seed: u64, len: usize, rate: f64) -> Option<Vec<bool>> {
    if rate <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ MASK_STREAM);
    Some((0..len).map(|_| rng.gen_bool(rate)).collect())
}

pub fn train_one(config: &TrainConfig, corpus: &[Dialog], vocab: &FeatureVocab, ontology: &Ontology) -> Result<TrackerParams> {
    train_one_logged(config, corpus, vocab, ontology).map(|(p, _)| p)
}

/// Like [`train_one`], also returning the mean per-dialog loss of each epoch.
pub fn train_one_logged(
    config: &TrainConfig,
    corpus: &[Dialog],
    vocab: &FeatureVocab,
    ontology: &Ontology,
) -> Result<(TrackerParams, Vec<f64>)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(DstError::Data("empty training corpus".into()));
    }
    let shape = TrackerParams::shape_for(ontology, vocab, config.hidden);
    let mask = match config.group {
        Group::A => None,
        Group::B => draw_mask(config.seed, vocab.len(), config.mask_rate),
    };
    let mut params = TrackerParams::new(
        ontology.clone(),
        vocab.clone(),
        init_params(config.seed, shape),
        mask,
        config.reading,
    )?;
    params.config = Some(config.clone());

    let prepared: Vec<Vec<(SlotInputs, Vec<usize>)>> = corpus
        .iter()
        .map(|d| {
            (0..ontology.num_slots())
                .map(|s| (params.slot_inputs(d, s), gold_sequence(d, s, ontology)))
                .collect()
        })
        .collect();

    let mut optimizer = OptimizerState::new(config.group.optimizer(), shape.param_count());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut history = Vec::with_capacity(config.epochs);
    let mut grads = NetParams::zeros(shape);

    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &d in &order {
            grads.as_mut_slice().fill(0.0);
            let mut loss = 0.0;
            for (inputs, gold) in &prepared[d] {
                loss += sample_loss_and_gradient(&params.net, params.reading, inputs, gold, &mut grads)?;
            }
            if !loss.is_finite() || !grads.is_finite() {
                return Err(DstError::Diverged {
                    epoch,
                    dialog: corpus[d].id.clone(),
                });
            }
            optimizer.step(params.net.as_mut_slice(), grads.as_slice())?;
            total += loss;
        }
        let mean = total / corpus.len() as f64;
        info!(
            "group {:?} seed {} epoch {}: mean loss {:.4} ({:.2}s)",
            config.group,
            config.seed,
            epoch + 1,
            mean,
            started.elapsed().as_secs_f64()
        );
        history.push(mean);
    }
    Ok((params, history))
}

/// Settings shared by every member of a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPlan {
    pub count_a: usize,
    pub count_b: usize,
    /// One seed per member, group A first.
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub mask_rate: f64,
    pub reading: TransitionReading,
}

impl GroupPlan {
    pub fn configs(&self) -> Result<Vec<TrainConfig>> {
        let n = self.count_a + self.count_b;
        if self.seeds.len() != n {
            return Err(DstError::Config(format!("{} seeds given for {} trackers", self.seeds.len(), n)));
        }
        Ok(self
            .seeds
            .iter()
            .enumerate()
            .map(|(k, &seed)| {
                let group = if k < self.count_a { Group::A } else { Group::B };
                TrainConfig {
                    epochs: self.epochs,
                    mask_rate: self.mask_rate,
                    reading: self.reading,
                    ..TrainConfig::new(group, seed)
                }
            })
            .collect())
    }
}

/// Train every member of the plan on a pool of `jobs` workers; output order
/// follows the plan.
pub fn train_groups(
    plan: &GroupPlan,
    corpus: &[Dialog],
    vocab: &FeatureVocab,
    ontology: &Ontology,
    jobs: usize,
) -> Result<Vec<TrackerParams>> {
    let configs = plan.configs()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DstError::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        configs
            .par_iter()
            .map(|c| train_one(c, corpus, vocab, ontology))
            .collect()
    })
}
