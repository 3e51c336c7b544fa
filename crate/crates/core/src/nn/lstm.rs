use serde::{Deserialize, Serialize};

use super::{sigmoid, NetParams, GATES, GATE_CELL, GATE_FORGET, GATE_INPUT, GATE_OUTPUT, HEAD_OUTPUTS};
use crate::error::{DstError, Result};
use crate::rules::RuleCoefficients;
use crate::slu::SparseInput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            hidden: vec![0.0; hidden],
            cell: vec![0.0; hidden],
        }
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    input: SparseInput,
    prev: LstmState,
    /// Post-activation gates, gate-major like the parameters.
    gates: Vec<f64>,
    tanh_cell: Vec<f64>,
}

pub fn lstm_step(params: &NetParams, state: &LstmState, x: &[f64]) -> Result<LstmState> {
    DstError::check_dim("lstm input", params.shape().input_size, x.len())?;
    lstm_step_sparse(params, state, &SparseInput::from_dense(x)).map(|(s, _)| s)
}

pub fn lstm_step_sparse(params: &NetParams, state: &LstmState, x: &SparseInput) -> Result<(LstmState, StepCache)> {
    let shape = params.shape();
    let (d, h) = (shape.input_size, shape.hidden);
    DstError::check_dim("lstm input", d, x.dim)?;
    DstError::check_dim("lstm hidden state", h, state.hidden.len())?;
    DstError::check_dim("lstm cell state", h, state.cell.len())?;

    let wx = params.input_weights();
    let wh = params.recurrent_weights();
    let mut z = params.gate_bias().to_vec();
    for (row, zr) in z.iter_mut().enumerate() {
        let wx_row = &wx[row * d..(row + 1) * d];
        let wh_row = &wh[row * h..(row + 1) * h];
        *zr += x.entries.iter().map(|&(j, v)| wx_row[j] * v).sum::<f64>();
        *zr += wh_row.iter().zip(&state.hidden).map(|(w, s)| w * s).sum::<f64>();
    }

    let mut gates = z;
    for (k, g) in gates.iter_mut().enumerate() {
        *g = if k / h == GATE_CELL { g.tanh() } else { sigmoid(*g) };
    }
    let gate = |kind: usize, u: usize| gates[kind * h + u];

    let mut next = LstmState::zeros(h);
    let mut tanh_cell = vec![0.0; h];
    #[allow(clippy::needless_range_loop)]
    for u in 0..h {
        let c = gate(GATE_FORGET, u) * state.cell[u] + gate(GATE_INPUT, u) * gate(GATE_CELL, u);
        tanh_cell[u] = c.tanh();
        next.cell[u] = c;
        next.hidden[u] = gate(GATE_OUTPUT, u) * tanh_cell[u];
    }
    let cache = StepCache {
        input: x.clone(),
        prev: state.clone(),
        gates,
        tanh_cell,
    };
    Ok((next, cache))
}

/// Linear map of the hidden state, squashed into (0, 1).
pub fn head_forward(params: &NetParams, state: &LstmState) -> RuleCoefficients {
    let h = params.shape().hidden;
    let w = params.head_weights();
    let b = params.head_bias();
    let out = |k: usize| {
        let z: f64 = b[k] + w[k * h..(k + 1) * h].iter().zip(&state.hidden).map(|(w, s)| w * s).sum::<f64>();
        sigmoid(z)
    };
    RuleCoefficients::new(out(0), out(1))
}

#[derive(Debug, Clone)]
pub struct SequenceTrace {
    pub states: Vec<LstmState>,
    pub coefficients: Vec<RuleCoefficients>,
    steps: Vec<StepCache>,
}

/// Unroll from the zero state over a whole input sequence.
pub fn forward_sequence(params: &NetParams, inputs: &[SparseInput]) -> Result<SequenceTrace> {
    let mut state = LstmState::zeros(params.shape().hidden);
    let mut trace = SequenceTrace {
        states: Vec::with_capacity(inputs.len()),
        coefficients: Vec::with_capacity(inputs.len()),
        steps: Vec::with_capacity(inputs.len()),
    };
    for x in inputs {
        let (next, cache) = lstm_step_sparse(params, &state, x)?;
        trace.coefficients.push(head_forward(params, &next));
        trace.states.push(next.clone());
        trace.steps.push(cache);
        state = next;
    }
    Ok(trace)
}

/// BPTT over a recorded trace. `upstream[t]` holds `dL/dc_new, dL/dc_override`
/// for turn `t`; the returned gradient has the same layout as the params.
pub fn backward_sequence(params: &NetParams, trace: &SequenceTrace, upstream: &[[f64; 2]]) -> Result<NetParams> {
    DstError::check_dim("coefficient gradients", trace.steps.len(), upstream.len())?;
    let shape = params.shape();
    let (d, h) = (shape.input_size, shape.hidden);
    let mut grads = NetParams::zeros(shape);
    let head_w = params.head_weights().to_vec();
    let wh = params.recurrent_weights().to_vec();

    let mut d_hidden_next = vec![0.0; h];
    let mut d_cell_next = vec![0.0; h];
    let mut dz = vec![0.0; GATES * h];

    for t in (0..trace.steps.len()).rev() {
        let step = &trace.steps[t];
        let state = &trace.states[t];
        let c = trace.coefficients[t];
        let head_dz = [
            upstream[t][0] * c.c_new * (1.0 - c.c_new),
            upstream[t][1] * c.c_override * (1.0 - c.c_override),
        ];

        let mut d_hidden = d_hidden_next.clone();
        {
            let gw = grads.head_weights_mut();
            for k in 0..HEAD_OUTPUTS {
                for u in 0..h {
                    gw[k * h + u] += head_dz[k] * state.hidden[u];
                    d_hidden[u] += head_w[k * h + u] * head_dz[k];
                }
            }
        }
        for (b, dz) in grads.head_bias_mut().iter_mut().zip(&head_dz) {
            *b += dz;
        }

        let gate = |kind: usize, u: usize| step.gates[kind * h + u];
        for u in 0..h {
            let (i, f, o, g) = (gate(GATE_INPUT, u), gate(GATE_FORGET, u), gate(GATE_OUTPUT, u), gate(GATE_CELL, u));
            let tc = step.tanh_cell[u];
            let d_out = d_hidden[u] * tc;
            let d_cell = d_hidden[u] * o * (1.0 - tc * tc) + d_cell_next[u];
            dz[GATE_INPUT * h + u] = d_cell * g * i * (1.0 - i);
            dz[GATE_FORGET * h + u] = d_cell * step.prev.cell[u] * f * (1.0 - f);
            dz[GATE_OUTPUT * h + u] = d_out * o * (1.0 - o);
            dz[GATE_CELL * h + u] = d_cell * i * (1.0 - g * g);
            d_cell_next[u] = d_cell * f;
        }

        {
            let gx = grads.input_weights_mut();
            for (row, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                for &(j, v) in &step.input.entries {
                    gx[row * d + j] += dzr * v;
                }
            }
        }
        {
            let gr = grads.recurrent_weights_mut();
            for (row, &dzr) in dz.iter().enumerate() {
                for u in 0..h {
                    gr[row * h + u] += dzr * step.prev.hidden[u];
                }
            }
        }
        for (b, &dzr) in grads.gate_bias_mut().iter_mut().zip(&dz) {
            *b += dzr;
        }
        d_hidden_next.iter_mut().for_each(|x| *x = 0.0);
        for (row, &dzr) in dz.iter().enumerate() {
            for u in 0..h {
                d_hidden_next[u] += wh[row * h + u] * dzr;
            }
        }
    }
    Ok(grads)
}

pub fn backward_through_time(params: &NetParams, inputs: &[SparseInput], upstream: &[[f64; 2]]) -> Result<NetParams> {
    DstError::check_dim("coefficient gradients", inputs.len(), upstream.len())?;
    let trace = forward_sequence(params, inputs)?;
    backward_sequence(params, &trace, upstream)
}
