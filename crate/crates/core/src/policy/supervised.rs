//! Supervised ask classifiers: cross-entropy imitation and the defer-aware
//! surrogate.

use serde::{Deserialize, Serialize};

use super::{dot, sigmoid, AskFeatures, LinearAskPolicy, PolicyError, PolicyKind, N_FEATURES};

const ITERATIONS: usize = 200;
const LEARNING_RATE: f64 = 0.1;
const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L2dConfig {
    pub c_ask: f64,
    pub c_err: f64,
}

impl Default for L2dConfig {
    fn default() -> Self {
        Self {
            c_ask: 0.2,
            c_err: 1.0,
        }
    }
}

impl L2dConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.c_ask > 0.0 && self.c_err > 0.0 && self.c_ask < self.c_err) {
            return Err(PolicyError::Config(
                "l2d costs need 0 < c_ask < c_err".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisedExample {
    pub features: AskFeatures,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    CrossEntropy,
    L2dSurrogate(L2dConfig),
}

pub fn l2d_loss(p_ask: f64, need_ask: bool, config: &L2dConfig) -> f64 {
    let e = f64::from(u8::from(need_ask));
    config.c_err * e * (1.0 - p_ask) + config.c_ask * p_ask
}

fn mean_loss(w: &[f64; N_FEATURES], data: &[([f64; N_FEATURES], bool)], obj: &Objective) -> f64 {
    let total: f64 = data
        .iter()
        .map(|(f, y)| {
            let p = sigmoid(dot(w, f));
            match obj {
                Objective::CrossEntropy => {
                    let q = if *y { p } else { 1.0 - p };
                    -q.max(1e-300).ln()
                }
                Objective::L2dSurrogate(c) => l2d_loss(p, *y, c),
            }
        })
        .sum();
    total / data.len() as f64
}

/// Full-batch gradient descent from zero weights. An empty dataset is an
/// error; the caller keeps its prior policy.
pub fn fit_supervised(
    examples: &[SupervisedExample],
    objective: Objective,
) -> Result<LinearAskPolicy, PolicyError> {
    if examples.is_empty() {
        return Err(PolicyError::Empty);
    }
    let kind = match objective {
        Objective::CrossEntropy => PolicyKind::Sft,
        Objective::L2dSurrogate(c) => {
            c.validate()?;
            PolicyKind::L2d {
                c_ask: c.c_ask,
                c_err: c.c_err,
            }
        }
    };
    let data: Vec<([f64; N_FEATURES], bool)> =
        examples.iter().map(|e| (e.features.to_vec(), e.label)).collect();
    let n = data.len() as f64;
    let mut w = [0.0; N_FEATURES];
    let mut prev = mean_loss(&w, &data, &objective);
    for _ in 0..ITERATIONS {
        let mut g = [0.0; N_FEATURES];
        for (f, y) in &data {
            let p = sigmoid(dot(&w, f));
            let y = f64::from(u8::from(*y));
            let dz = match objective {
                Objective::CrossEntropy => p - y,
                Objective::L2dSurrogate(c) => (c.c_ask - c.c_err * y) * p * (1.0 - p),
            };
            for k in 0..N_FEATURES {
                g[k] += dz * f[k] / n;
            }
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(PolicyError::NonFiniteGradient);
        }
        for k in 0..N_FEATURES {
            w[k] -= LEARNING_RATE * g[k];
        }
        let loss = mean_loss(&w, &data, &objective);
        if (prev - loss).abs() < TOLERANCE {
            break;
        }
        prev = loss;
    }
    Ok(LinearAskPolicy {
        kind,
        weights: w,
        value_weights: [0.0; N_FEATURES],
    })
}
