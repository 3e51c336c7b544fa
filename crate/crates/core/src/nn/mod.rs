//! The recurrent part of the tracker: an LSTM layer whose hidden state is
//! mapped by a linear head plus logistic squashing onto the two rule
//! coefficients. Forward and backward passes are written out by hand.

mod lstm;
mod optim;

pub use lstm::{
    backward_sequence, backward_through_time, forward_sequence, head_forward, lstm_step, lstm_step_sparse,
    LstmState, SequenceTrace, StepCache,
};
pub use optim::{OptimizerKind, OptimizerState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};

/// Number of LSTM cells.
pub const DEFAULT_HIDDEN: usize = 5;

/// Gates in storage order.
pub const GATES: usize = 4;
pub(crate) const GATE_INPUT: usize = 0;
pub(crate) const GATE_FORGET: usize = 1;
pub(crate) const GATE_OUTPUT: usize = 2;
pub(crate) const GATE_CELL: usize = 3;

/// Outputs of the head: `c_new`, `c_override`.
pub const HEAD_OUTPUTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input_size: usize,
    pub hidden: usize,
}

impl NetShape {
    pub fn new(input_size: usize, hidden: usize) -> Self {
        Self { input_size, hidden }
    }

    fn input_weights_len(&self) -> usize {
        GATES * self.hidden * self.input_size
    }

    fn recurrent_weights_len(&self) -> usize {
        GATES * self.hidden * self.hidden
    }

    fn gate_bias_len(&self) -> usize {
        GATES * self.hidden
    }

    fn head_weights_len(&self) -> usize {
        HEAD_OUTPUTS * self.hidden
    }

    pub fn param_count(&self) -> usize {
        self.input_weights_len()
            + self.recurrent_weights_len()
            + self.gate_bias_len()
            + self.head_weights_len()
            + HEAD_OUTPUTS
    }

    /// `(name, rows, cols)` of each named block, in storage order.
    pub fn blocks(&self) -> [(&'static str, usize, usize); 5] {
        [
            ("lstm.input_weights", GATES * self.hidden, self.input_size),
            ("lstm.recurrent_weights", GATES * self.hidden, self.hidden),
            ("lstm.gate_bias", GATES * self.hidden, 1),
            ("head.weights", HEAD_OUTPUTS, self.hidden),
            ("head.bias", HEAD_OUTPUTS, 1),
        ]
    }
}

/// All network weights in one flat buffer.
///
/// Gate-major layout: rows `[input | forget | output | cell]`, each `hidden`
/// rows long, for the input weights, recurrent weights and gate biases. The
/// same type carries gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    shape: NetShape,
    data: Vec<f64>,
}

impl NetParams {
    pub fn zeros(shape: NetShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_flat(shape: NetShape, data: Vec<f64>) -> Result<Self> {
        DstError::check_dim("parameter buffer", shape.param_count(), data.len())?;
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(DstError::NonFinite(format!("parameter #{i}")));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn offsets(&self) -> [usize; 6] {
        let s = &self.shape;
        let a = s.input_weights_len();
        let b = a + s.recurrent_weights_len();
        let c = b + s.gate_bias_len();
        let d = c + s.head_weights_len();
        [0, a, b, c, d, d + HEAD_OUTPUTS]
    }

    fn block(&self, k: usize) -> &[f64] {
        let o = self.offsets();
        &self.data[o[k]..o[k + 1]]
    }

    fn block_mut(&mut self, k: usize) -> &mut [f64] {
        let o = self.offsets();
        &mut self.data[o[k]..o[k + 1]]
    }

    /// `4H x D`, row-major.
    pub fn input_weights(&self) -> &[f64] {
        self.block(0)
    }

    /// `4H x H`, row-major.
    pub fn recurrent_weights(&self) -> &[f64] {
        self.block(1)
    }

    pub fn gate_bias(&self) -> &[f64] {
        self.block(2)
    }

    /// `2 x H`, row-major.
    pub fn head_weights(&self) -> &[f64] {
        self.block(3)
    }

    pub fn head_bias(&self) -> &[f64] {
        self.block(4)
    }

    pub fn input_weights_mut(&mut self) -> &mut [f64] {
        self.block_mut(0)
    }

    pub fn recurrent_weights_mut(&mut self) -> &mut [f64] {
        self.block_mut(1)
    }

    pub fn gate_bias_mut(&mut self) -> &mut [f64] {
        self.block_mut(2)
    }

    pub fn head_weights_mut(&mut self) -> &mut [f64] {
        self.block_mut(3)
    }

    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        self.block_mut(4)
    }

    /// Named blocks with their dimensions, in storage order.
    pub fn named_blocks(&self) -> Vec<(&'static str, usize, usize, &[f64])> {
        self.shape
            .blocks()
            .iter()
            .enumerate()
            .map(|(k, &(name, r, c))| (name, r, c, self.block(k)))
            .collect()
    }

    pub(crate) fn add_assign(&mut self, other: &NetParams) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Seeded initialization: uniform in `±1/sqrt(fan_in)` per matrix, forget
/// gate bias 1, all other biases 0.
pub fn init_params(seed: u64, shape: NetShape) -> NetParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetParams::zeros(shape);
    let mut fill = |buf: &mut [f64], fan_in: usize| {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        for w in buf {
            *w = rng.gen_range(-bound..=bound);
        }
    };
    fill(params.input_weights_mut(), shape.input_size);
    fill(params.recurrent_weights_mut(), shape.hidden);
    fill(params.head_weights_mut(), shape.hidden);
    let h = shape.hidden;
    params.gate_bias_mut()[GATE_FORGET * h..(GATE_FORGET + 1) * h].fill(1.0);
    params
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
