use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus};

/// Vote ratios are clamped to `[VOTE_CLAMP, 1 - VOTE_CLAMP]` before taking
/// the logit.
pub const VOTE_CLAMP: f64 = 1e-6;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 200;
const RIDGE: f64 = 1e-12;

/// `p = sigmoid(a * score + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattCalibrator {
    pub a: f64,
    pub b: f64,
}

impl PlattCalibrator {
    pub fn apply(&self, score: f64) -> f64 {
        sigmoid(self.a * score + self.b)
    }
}

/// Score used for calibrating a vote-ratio model.
pub fn vote_score(ratio: f64) -> f64 {
    let p = ratio.clamp(VOTE_CLAMP, 1.0 - VOTE_CLAMP);
    (p / (1.0 - p)).ln()
}

/// Fits `(a, b)` by damped Newton iterations on the cross-entropy against
/// the smoothed targets `(N+ + 1) / (N+ + 2)` and `1 / (N- + 2)`.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<PlattCalibrator> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Calibration(format!("non-finite score {s}")));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Calibration(
            "Platt scaling needs both classes in the calibration set".into(),
        ));
    }
    let t_pos = (n_pos as f64 + 1.0) / (n_pos as f64 + 2.0);
    let t_neg = 1.0 / (n_neg as f64 + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&y| if y { t_pos } else { t_neg }).collect();
    let n = scores.len() as f64;

    let objective = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(&s, &t)| {
                let z = a * s + b;
                softplus(z) - t * z
            })
            .sum::<f64>()
            / n
    };

    let mut a = 0.0;
    let mut b = ((n_pos as f64 + 1.0) / (n_neg as f64 + 1.0)).ln();
    let mut f = objective(a, b);
    for _ in 0..MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &t) in scores.iter().zip(&targets) {
            let p = sigmoid(a * s + b);
            let d = p - t;
            let w = p * (1.0 - p);
            ga += d * s;
            gb += d;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        let (ga, gb) = (ga / n, gb / n);
        if ga.hypot(gb) < GRAD_TOL {
            break;
        }
        let (haa, hab, hbb) = (haa / n + RIDGE, hab / n, hbb / n + RIDGE);
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 && det.is_finite() {
            (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
        } else {
            (-ga, -gb)
        };

        let mut step = 1.0;
        let slope = ga * da + gb * db;
        let accepted = loop {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf <= f + 1e-4 * step * slope {
                break Some((na, nb, nf));
            }
            step *= 0.5;
            if step < 1e-12 {
                break None;
            }
        };
        match accepted {
            Some((na, nb, nf)) => {
                a = na;
                b = nb;
                f = nf;
            }
            None => break,
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Numerical("Platt fit diverged".into()));
    }
    Ok(PlattCalibrator { a, b })
}
