//! Self-check of the loss and optimizer numerics against scalar-loop
//! re-derivations and central finite differences. Backs `losses check`.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::BoxDelta;

use super::*;

pub const ORACLE_TOL: f64 = 1e-12;
pub const FD_REL_TOL: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, worst: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.3e} (tol {tol:.0e})"),
    }
}

fn rand_prob(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0.02..0.98)
}

fn rand_label(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        0.0
    }
}

fn scalar_log_loss(p: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut i = 0;
    while i < p.len() {
        let q = p[i].max(PROB_EPS).min(1.0 - PROB_EPS);
        if y[i] == 1.0 {
            s += -q.ln();
        } else if y[i] == 0.0 {
            s += -(1.0 - q).ln();
        } else {
            s += -(y[i] * q.ln() + (1.0 - y[i]) * (1.0 - q).ln());
        }
        i += 1;
    }
    s / p.len() as f64
}

fn scalar_huber(d: f64) -> f64 {
    if d > -1.0 && d < 1.0 {
        d * d / 2.0
    } else if d >= 1.0 {
        d - 0.5
    } else {
        -d - 0.5
    }
}

pub fn random_cls_batch(rng: &mut ChaCha8Rng, n: usize) -> ClsBatch {
    ClsBatch::new(
        (0..n)
            .map(|_| ClsItem {
                prob: rand_prob(rng),
                label: rand_label(rng),
            })
            .collect(),
    )
}

pub fn random_box_batch(rng: &mut ChaCha8Rng, n: usize) -> BoxBatch {
    let d = |rng: &mut ChaCha8Rng| {
        BoxDelta::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        )
    };
    BoxBatch::new(
        (0..n)
            .map(|_| BoxItem {
                pred: d(rng),
                target: d(rng),
                weight: rand_label(rng),
            })
            .collect(),
    )
}

pub fn random_mask_pair(rng: &mut ChaCha8Rng, m: usize) -> MaskPair {
    let target = (0..m * m).map(|_| rand_label(rng)).collect();
    let pred = (0..m * m).map(|_| rand_prob(rng)).collect();
    MaskPair::new(m, 0, target, pred).expect("shapes agree")
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Run every check. `seed` fixes the random batches.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let b = random_cls_batch(&mut rng, DEFAULT_N_CLS);
        let p: Vec<f64> = b.items.iter().map(|i| i.prob).collect();
        let y: Vec<f64> = b.items.iter().map(|i| i.label).collect();
        worst = worst.max((cls_loss(&b) - scalar_log_loss(&p, &y)).abs());
    }
    out.push(outcome("cls_loss vs scalar loop", worst, ORACLE_TOL));

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let b = random_box_batch(&mut rng, 64);
        let mut s = 0.0;
        for it in &b.items {
            let mut r = 0.0;
            r += scalar_huber(it.pred.tx - it.target.tx);
            r += scalar_huber(it.pred.ty - it.target.ty);
            r += scalar_huber(it.pred.tw - it.target.tw);
            r += scalar_huber(it.pred.th - it.target.th);
            s += it.weight * r;
        }
        worst = worst.max((box_loss(&b) - b.lambda * s / b.n_cls as f64).abs());
    }
    out.push(outcome("box_loss vs scalar loop", worst, ORACLE_TOL));

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let pair = random_mask_pair(&mut rng, 28);
        worst = worst.max((mask_loss(&pair) - scalar_log_loss(&pair.pred, &pair.target)).abs());
    }
    out.push(outcome("mask_loss vs scalar loop", worst, ORACLE_TOL));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let b = random_cls_batch(&mut rng, 32);
        let g = cls_loss_grad(&b);
        for i in 0..b.items.len() {
            let mut up = b.clone();
            let mut dn = b.clone();
            up.items[i].prob += FD_STEP;
            dn.items[i].prob -= FD_STEP;
            let fd = (cls_loss(&up) - cls_loss(&dn)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g[i], fd));
        }
    }
    out.push(outcome("cls_loss gradient vs finite differences", worst, FD_REL_TOL));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let pair = random_mask_pair(&mut rng, 8);
        let g = mask_loss_grad(&pair);
        for i in 0..pair.pred.len() {
            let mut up = pair.clone();
            let mut dn = pair.clone();
            up.pred[i] += FD_STEP;
            dn.pred[i] -= FD_STEP;
            let fd = (mask_loss(&up) - mask_loss(&dn)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g[i], fd));
        }
    }
    out.push(outcome("mask_loss gradient vs finite differences", worst, FD_REL_TOL));

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let b = random_box_batch(&mut rng, 16);
        let g = box_loss_grad(&b);
        for i in 0..b.items.len() {
            for c in 0..4 {
                let shift = |sign: f64| {
                    let mut bb = b.clone();
                    let mut a = bb.items[i].pred.to_array();
                    a[c] += sign * FD_STEP;
                    bb.items[i].pred = BoxDelta::from_array(a);
                    box_loss(&bb)
                };
                let fd = (shift(1.0) - shift(-1.0)) / (2.0 * FD_STEP);
                let an = g[i].to_array()[c];
                let diff = b.items[i].pred.to_array()[c] - b.items[i].target.to_array()[c];
                // skip the kink neighbourhood
                if (diff.abs() - 1.0).abs() < 1e-4 {
                    continue;
                }
                if an == 0.0 && fd.abs() < 1e-9 {
                    continue;
                }
                worst = worst.max(rel_err(an, fd));
            }
        }
    }
    out.push(outcome("box_loss gradient vs finite differences", worst, FD_REL_TOL));

    let h = 1e-9;
    let cont = (smooth_l1(1.0 - h) - smooth_l1(1.0 + h))
        .abs()
        .max((smooth_l1(-1.0 + h) - smooth_l1(-1.0 - h)).abs());
    out.push(outcome("smooth_l1 continuity at |s| = 1", cont, 1e-8));
    let d = 1e-6;
    let left = (smooth_l1(1.0 - d) - smooth_l1(1.0 - 2.0 * d)) / d;
    let right = (smooth_l1(1.0 + 2.0 * d) - smooth_l1(1.0 + d)) / d;
    out.push(outcome(
        "smooth_l1 derivative limits at |s| = 1",
        (left - 1.0).abs().max((right - 1.0).abs()),
        1e-5,
    ));

    let lr = 1e-3;
    let theta: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..1000)
        .map(|_| {
            let mag = 10f64.powf(rng.random_range(-4.0..2.0));
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let s0 = OptimizerState::new(theta, Hyperparams { lr, ..Default::default() });
    let s1 = adam_step(&s0, &g).expect("shapes agree");
    let mut worst = 0.0f64;
    for j in 0..g.len() {
        let step = (s1.theta[j] - s0.theta[j]).abs();
        let excess = if step > lr {
            step - lr
        } else if step < 0.99 * lr {
            0.99 * lr - step
        } else {
            0.0
        };
        worst = worst.max(excess);
    }
    out.push(outcome("adam first-step magnitude in [0.99 lr, lr]", worst, 0.0));

    let (ok, detail) = adam_quadratic(0.2, lr, 100);
    out.push(CheckOutcome {
        name: "adam halves a quadratic within 100 steps",
        passed: ok,
        detail,
    });

    let mut s = OptimizerState::new(vec![1.5], Hyperparams { lr: 0.1, ..Default::default() });
    let mut worst = 0.0f64;
    for t in 1..=50 {
        s = sgd_step(&s, &[2.0 * s.theta[0]]).expect("shapes agree");
        worst = worst.max((s.theta[0] - 1.5 * 0.8f64.powi(t)).abs());
    }
    out.push(outcome("sgd on θ² matches θ₀(1 − 2η)^t", worst, 1e-12));

    out
}

/// Minimize `θ²` from `theta0` with Adam. Passes when the loss is
/// non-increasing from step 2 on and ends below half its initial value.
pub fn adam_quadratic(theta0: f64, lr: f64, steps: usize) -> (bool, String) {
    let mut s = OptimizerState::new(vec![theta0], Hyperparams { lr, ..Default::default() });
    let f0 = theta0 * theta0;
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        s = adam_step(&s, &[2.0 * s.theta[0]]).expect("shapes agree");
        losses.push(s.theta[0] * s.theta[0]);
    }
    let monotone = losses.windows(2).skip(1).all(|w| w[1] <= w[0]);
    let last = *losses.last().unwrap_or(&f0);
    (
        monotone && last < f0 / 2.0,
        format!("f0 {f0:.4e}, f_end {last:.4e}, monotone {monotone}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_all(7) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
