//! Differentiable belief update rule.
//!
//! Given the previous slot distribution `h`, the informed-value marginal `i`
//! and the two coefficients, probability flows from every source value `s`
//! to every informed target `t != s` in the amount `h[s] * i[t] * a(t, s)`:
//!
//! ```text
//! h'[v] = h[v] - h[v] * sum_{t != v} i[t] a(t, v) + i[v] * sum_{s != v} h[s] a(v, s)
//! ```
//!
//! The transition coefficient `a(t, s)` is `c_new` for flows out of None and
//! `c_override` otherwise. Because the gained and lost mass are the same
//! double sum, the update conserves total probability without any
//! renormalization.
//!
//! `a` depends on only one of its two indices, which lets both passes run in
//! O(K) instead of O(K^2). The diagonal terms `t == s` cancel between gain
//! and loss, so the sums below include them.

use serde::{Deserialize, Serialize};

use crate::error::{DstError, Result};
use crate::model::NONE_INDEX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleCoefficients {
    pub c_new: f64,
    pub c_override: f64,
}

impl RuleCoefficients {
    pub fn new(c_new: f64, c_override: f64) -> Self {
        Self { c_new, c_override }
    }
}

/// Which index of `a(target, source)` selects `c_new`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionReading {
    /// `c_new` governs flows whose source is None (None -> value).
    #[default]
    SourceNone,
    /// `c_new` governs flows whose target is None. Since None is never
    /// informed, `c_new` then has no effect; kept for ablations.
    TargetNone,
}

impl TransitionReading {
    /// `a(target, source)`.
    pub fn coefficient(self, c: RuleCoefficients, target: usize, source: usize) -> f64 {
        let keyed = match self {
            TransitionReading::SourceNone => source,
            TransitionReading::TargetNone => target,
        };
        if keyed == NONE_INDEX {
            c.c_new
        } else {
            c.c_override
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleGradients {
    pub d_h_prev: Vec<f64>,
    pub d_inform: Vec<f64>,
    pub d_c_new: f64,
    pub d_c_override: f64,
}

fn check(h_prev: &[f64], inform: &[f64]) -> Result<()> {
    if h_prev.is_empty() {
        return Err(DstError::Dimension {
            context: "rule update belief",
            expected: 1,
            got: 0,
        });
    }
    DstError::check_dim("rule update inform marginal", h_prev.len(), inform.len())
}

/// One application of the update rule with the default reading.
pub fn rule_update(h_prev: &[f64], inform: &[f64], c: RuleCoefficients) -> Result<Vec<f64>> {
    rule_update_with(TransitionReading::default(), h_prev, inform, c)
}

pub fn rule_update_with(
    reading: TransitionReading,
    h_prev: &[f64],
    inform: &[f64],
    c: RuleCoefficients,
) -> Result<Vec<f64>> {
    check(h_prev, inform)?;
    let mut out = Vec::with_capacity(h_prev.len());
    match reading {
        TransitionReading::SourceNone => {
            // a(t, s) = alpha_s
            let alpha = |s: usize| if s == NONE_INDEX { c.c_new } else { c.c_override };
            let inform_mass: f64 = inform.iter().sum();
            let weighted_h: f64 = h_prev.iter().enumerate().map(|(s, &h)| h * alpha(s)).sum();
            for (v, (&h, &i)) in h_prev.iter().zip(inform).enumerate() {
                // a float sum of a unit marginal can land one ulp above 1
                let keep = (1.0 - alpha(v) * inform_mass).max(0.0);
                out.push(h * keep + i * weighted_h);
            }
        }
        TransitionReading::TargetNone => {
            // a(t, s) = beta_t
            let beta = |t: usize| if t == NONE_INDEX { c.c_new } else { c.c_override };
            let mass: f64 = h_prev.iter().sum();
            let weighted_i: f64 = inform.iter().enumerate().map(|(t, &i)| i * beta(t)).sum();
            let keep = (1.0 - weighted_i).max(0.0);
            for (v, (&h, &i)) in h_prev.iter().zip(inform).enumerate() {
                out.push(h * keep + i * beta(v) * mass);
            }
        }
    }
    Ok(out)
}

pub fn rule_update_backward(
    h_prev: &[f64],
    inform: &[f64],
    c: RuleCoefficients,
    upstream: &[f64],
) -> Result<RuleGradients> {
    rule_update_backward_with(TransitionReading::default(), h_prev, inform, c, upstream)
}

/// Gradients of `sum_v upstream[v] * h'[v]`.
///
/// Writing each flow as `f(t, s) = h[s] i[t] a(t, s)` moving mass from `s`
/// to `t`, every partial derivative picks up the factor `g[t] - g[s]`.
pub fn rule_update_backward_with(
    reading: TransitionReading,
    h_prev: &[f64],
    inform: &[f64],
    c: RuleCoefficients,
    upstream: &[f64],
) -> Result<RuleGradients> {
    check(h_prev, inform)?;
    DstError::check_dim("rule update upstream gradient", h_prev.len(), upstream.len())?;
    let g = upstream;
    let n = h_prev.len();
    let mut d_h_prev = Vec::with_capacity(n);
    let mut d_inform = Vec::with_capacity(n);
    let inform_mass: f64 = inform.iter().sum();
    let ig: f64 = inform.iter().zip(g).map(|(i, g)| i * g).sum();

    let (d_c_new, d_c_override) = match reading {
        TransitionReading::SourceNone => {
            let alpha = |s: usize| if s == NONE_INDEX { c.c_new } else { c.c_override };
            let weighted_h: f64 = (0..n).map(|s| h_prev[s] * alpha(s)).sum();
            let weighted_hg: f64 = (0..n).map(|s| h_prev[s] * alpha(s) * g[s]).sum();
            let mut d_new = 0.0;
            let mut d_override = 0.0;
            for s in 0..n {
                // sum_t i[t] (g[t] - g[s])
                let spread = ig - g[s] * inform_mass;
                d_h_prev.push(g[s] + alpha(s) * spread);
                d_inform.push(g[s] * weighted_h - weighted_hg);
                if s == NONE_INDEX {
                    d_new += h_prev[s] * spread;
                } else {
                    d_override += h_prev[s] * spread;
                }
            }
            (d_new, d_override)
        }
        TransitionReading::TargetNone => {
            let beta = |t: usize| if t == NONE_INDEX { c.c_new } else { c.c_override };
            let mass: f64 = h_prev.iter().sum();
            let hg: f64 = h_prev.iter().zip(g).map(|(h, g)| h * g).sum();
            let weighted_i: f64 = (0..n).map(|t| inform[t] * beta(t)).sum();
            let weighted_ig: f64 = (0..n).map(|t| inform[t] * beta(t) * g[t]).sum();
            let mut d_new = 0.0;
            let mut d_override = 0.0;
            for v in 0..n {
                d_h_prev.push(g[v] + weighted_ig - g[v] * weighted_i);
                // sum_s h[s] (g[t] - g[s])
                let spread = g[v] * mass - hg;
                d_inform.push(beta(v) * spread);
                if v == NONE_INDEX {
                    d_new += inform[v] * spread;
                } else {
                    d_override += inform[v] * spread;
                }
            }
            (d_new, d_override)
        }
    };

    Ok(RuleGradients {
        d_h_prev,
        d_inform,
        d_c_new,
        d_c_override,
    })
}
