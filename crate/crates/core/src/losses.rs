//! Reference numerics for the Mask R-CNN loss family and the optimizer
//! update rules.
//!
//! Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any log.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::BoxDelta;

pub mod check;
pub mod cases;

pub const PROB_EPS: f64 = 1e-7;
/// Box-loss balancing weight.
pub const DEFAULT_LAMBDA: f64 = 10.0;
/// Anchors per RPN mini-batch.
pub const DEFAULT_N_CLS: usize = 256;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClsItem {
    /// Predicted objectness probability.
    pub prob: f64,
    /// Ground-truth label, 0 or 1.
    pub label: f64,
}

/// Classification mini-batch. The normalizer is the batch length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsBatch {
    pub items: Vec<ClsItem>,
}

impl ClsBatch {
    pub fn new(items: Vec<ClsItem>) -> Self {
        Self { items }
    }

    pub fn n_cls(&self) -> usize {
        self.items.len()
    }
}

fn bce(p: f64, y: f64) -> f64 {
    let p = clamp_prob(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

// d bce / dp on the unclamped interior
fn bce_grad(p: f64, y: f64) -> f64 {
    if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
        return 0.0;
    }
    -(y / p - (1.0 - y) / (1.0 - p))
}

/// Mean binary log-loss over the batch; 0 for an empty batch.
pub fn cls_loss(batch: &ClsBatch) -> f64 {
    let n = batch.n_cls();
    if n == 0 {
        return 0.0;
    }
    batch.items.iter().map(|it| bce(it.prob, it.label)).sum::<f64>() / n as f64
}

/// Gradient of [`cls_loss`] with respect to each predicted probability.
pub fn cls_loss_grad(batch: &ClsBatch) -> Vec<f64> {
    let n = batch.n_cls().max(1) as f64;
    batch
        .items
        .iter()
        .map(|it| bce_grad(it.prob, it.label) / n)
        .collect()
}

pub fn smooth_l1(s: f64) -> f64 {
    let a = s.abs();
    if a < 1.0 {
        0.5 * s * s
    } else {
        a - 0.5
    }
}

pub fn smooth_l1_grad(s: f64) -> f64 {
    if s.abs() < 1.0 {
        s
    } else {
        s.signum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxItem {
    pub pred: BoxDelta,
    pub target: BoxDelta,
    /// Anchor positivity weight; 0 for negative anchors.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBatch {
    pub items: Vec<BoxItem>,
    pub lambda: f64,
    pub n_cls: usize,
}

impl BoxBatch {
    pub fn new(items: Vec<BoxItem>) -> Self {
        Self {
            items,
            lambda: DEFAULT_LAMBDA,
            n_cls: DEFAULT_N_CLS,
        }
    }
}

/// `(λ / N_cls) · Σ_i P_i · Σ_c smooth_l1(t_i,c − t*_i,c)`.
pub fn box_loss(batch: &BoxBatch) -> f64 {
    let n = batch.n_cls.max(1) as f64;
    let sum: f64 = batch
        .items
        .iter()
        .map(|it| {
            let (p, t) = (it.pred.to_array(), it.target.to_array());
            it.weight * (0..4).map(|c| smooth_l1(p[c] - t[c])).sum::<f64>()
        })
        .sum();
    batch.lambda / n * sum
}

/// Gradient of [`box_loss`] with respect to every predicted delta.
pub fn box_loss_grad(batch: &BoxBatch) -> Vec<BoxDelta> {
    let k = batch.lambda / batch.n_cls.max(1) as f64;
    batch
        .items
        .iter()
        .map(|it| {
            let (p, t) = (it.pred.to_array(), it.target.to_array());
            BoxDelta::from_array([0, 1, 2, 3].map(|c| k * it.weight * smooth_l1_grad(p[c] - t[c])))
        })
        .collect()
}

/// Ground truth and predicted probabilities on an `m × m` grid for the
/// ground-truth class `class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPair {
    pub m: usize,
    pub class: usize,
    /// Row-major `m²` labels, each 0 or 1.
    pub target: Vec<f64>,
    /// Row-major `m²` probabilities for `class`.
    pub pred: Vec<f64>,
}

impl MaskPair {
    pub fn new(m: usize, class: usize, target: Vec<f64>, pred: Vec<f64>) -> Result<Self> {
        for v in [&target, &pred] {
            if v.len() != m * m {
                return Err(Error::ShapeMismatch {
                    expected: m * m,
                    got: v.len(),
                });
            }
        }
        Ok(Self {
            m,
            class,
            target,
            pred,
        })
    }
}

/// Mean per-pixel binary cross-entropy over the `m × m` grid.
pub fn mask_loss(pair: &MaskPair) -> f64 {
    let cells = (pair.m * pair.m).max(1) as f64;
    pair.target
        .iter()
        .zip(&pair.pred)
        .map(|(&y, &p)| bce(p, y))
        .sum::<f64>()
        / cells
}

pub fn mask_loss_grad(pair: &MaskPair) -> Vec<f64> {
    let cells = (pair.m * pair.m).max(1) as f64;
    pair.target
        .iter()
        .zip(&pair.pred)
        .map(|(&y, &p)| bce_grad(p, y) / cells)
        .collect()
}

pub fn total_loss(cls: f64, bbox: f64, mask: f64) -> f64 {
    cls + bbox + mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub bias_correction: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            bias_correction: true,
        }
    }
}

/// Parameters, first and second moments and the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub theta: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: Hyperparams,
}

impl OptimizerState {
    pub fn new(theta: Vec<f64>, hyper: Hyperparams) -> Self {
        let n = theta.len();
        Self {
            theta,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            hyper,
        }
    }

    fn check_shape(&self, g: &[f64]) -> Result<()> {
        if g.len() != self.theta.len() {
            return Err(Error::ShapeMismatch {
                expected: self.theta.len(),
                got: g.len(),
            });
        }
        Ok(())
    }
}

pub fn adam_step(state: &OptimizerState, g: &[f64]) -> Result<OptimizerState> {
    state.check_shape(g)?;
    let h = state.hyper;
    let t = state.t + 1;
    let (c1, c2) = if h.bias_correction {
        (1.0 - h.beta1.powf(t as f64), 1.0 - h.beta2.powf(t as f64))
    } else {
        (1.0, 1.0)
    };
    let mut next = state.clone();
    next.t = t;
    for j in 0..g.len() {
        let m = h.beta1 * state.m[j] + (1.0 - h.beta1) * g[j];
        let v = h.beta2 * state.v[j] + (1.0 - h.beta2) * g[j] * g[j];
        let m_hat = m / c1;
        let v_hat = v / c2;
        next.m[j] = m;
        next.v[j] = v;
        next.theta[j] = state.theta[j] - h.lr / (v_hat.sqrt() + h.eps) * m_hat;
    }
    Ok(next)
}

/// Plain SGD without momentum; moments are left untouched.
pub fn sgd_step(state: &OptimizerState, g: &[f64]) -> Result<OptimizerState> {
    state.check_shape(g)?;
    let mut next = state.clone();
    next.t += 1;
    for (th, gj) in next.theta.iter_mut().zip(g) {
        *th -= state.hyper.lr * gj;
    }
    Ok(next)
}

pub fn step(kind: OptimizerKind, state: &OptimizerState, g: &[f64]) -> Result<OptimizerState> {
    match kind {
        OptimizerKind::Sgd => sgd_step(state, g),
        OptimizerKind::Adam => adam_step(state, g),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub start_epoch: u32,
    pub kind: OptimizerKind,
    pub lr: f64,
}

/// Piecewise-constant optimizer plan, sorted by start epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    entries: Vec<ScheduleEntry>,
}

impl SchedulePlan {
    pub fn new(entries: Vec<ScheduleEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidSchedule("plan has no entries".into()));
        }
        if entries.windows(2).any(|w| w[0].start_epoch >= w[1].start_epoch) {
            return Err(Error::InvalidSchedule(
                "start epochs must be strictly increasing".into(),
            ));
        }
        if entries.iter().any(|e| !(e.lr > 0.0 && e.lr.is_finite())) {
            return Err(Error::InvalidSchedule("learning rates must be positive".into()));
        }
        Ok(Self { entries })
    }

    /// Three learning-rate phases over a run of `epochs`, split into thirds.
    pub fn three_phase(kind: OptimizerKind, rates: [f64; 3], epochs: u32) -> Result<Self> {
        let third = epochs / 3;
        Self::new(
            rates
                .iter()
                .enumerate()
                .map(|(i, &lr)| ScheduleEntry {
                    start_epoch: third * i as u32,
                    kind,
                    lr,
                })
                .collect(),
        )
    }

    /// SGD until `switch_epoch`, Adam from then on, both at `lr`.
    pub fn sgd_then_adam(switch_epoch: u32, lr: f64) -> Result<Self> {
        Self::new(vec![
            ScheduleEntry {
                start_epoch: 0,
                kind: OptimizerKind::Sgd,
                lr,
            },
            ScheduleEntry {
                start_epoch: switch_epoch,
                kind: OptimizerKind::Adam,
                lr,
            },
        ])
    }

    pub fn entries(&self) -> &[ScheduleEntry] {
        &self.entries
    }
}

/// Entry with the greatest start epoch not after `epoch`.
pub fn schedule(epoch: u32, plan: &SchedulePlan) -> Result<(OptimizerKind, f64)> {
    plan.entries
        .iter()
        .rev()
        .find(|e| e.start_epoch <= epoch)
        .map(|e| (e.kind, e.lr))
        .ok_or(Error::EpochBeforeSchedule {
            epoch,
            first: plan.entries[0].start_epoch,
        })
}
