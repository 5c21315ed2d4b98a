//! Post hoc calibration fitted on the validation fold.

mod isotonic;
mod platt;
mod venn_abers;

pub use isotonic::{pava, IsotonicFit};
pub use platt::{fit_platt, vote_score, PlattCalibrator, VOTE_CLAMP};
pub use venn_abers::{va_point, venn_abers, VennAbersCalibrator, VennAbersState, VA_DENOM_TOL};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CalibrationMethod {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "platt")]
    Platt,
    #[serde(rename = "va")]
    VennAbers,
}

impl CalibrationMethod {
    pub const ALL: [CalibrationMethod; 3] = [Self::None, Self::Platt, Self::VennAbers];

    pub fn key(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Platt => "platt",
            Self::VennAbers => "va",
        }
    }

    /// Model-name suffix, e.g. `MLPE-P`.
    pub fn suffix(self) -> &'static str {
        match self {
            Self::None => "",
            Self::Platt => "-P",
            Self::VennAbers => "-VA",
        }
    }
}

impl fmt::Display for CalibrationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for CalibrationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "platt" => Ok(Self::Platt),
            "va" => Ok(Self::VennAbers),
            other => Err(Error::Config(format!("unknown calibrator {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedCalibrator {
    Identity,
    Platt(PlattCalibrator),
    VennAbers(VennAbersCalibrator),
}

/// A calibration method plus its fitted state. Scores are on the logit
/// scale (see [`vote_score`] for forests); the identity method maps them
/// back through the sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    method: CalibrationMethod,
    fitted: Option<FittedCalibrator>,
}

impl Calibrator {
    pub fn new(method: CalibrationMethod) -> Self {
        Self {
            method,
            fitted: None,
        }
    }

    pub fn method(&self) -> CalibrationMethod {
        self.method
    }

    pub fn fitted(&self) -> Option<&FittedCalibrator> {
        self.fitted.as_ref()
    }

    pub fn fit(&mut self, scores: &[f64], labels: &[bool]) -> Result<()> {
        self.fitted = Some(match self.method {
            CalibrationMethod::None => FittedCalibrator::Identity,
            CalibrationMethod::Platt => FittedCalibrator::Platt(fit_platt(scores, labels)?),
            CalibrationMethod::VennAbers => {
                FittedCalibrator::VennAbers(VennAbersCalibrator::fit(scores, labels)?)
            }
        });
        Ok(())
    }

    pub fn apply(&self, score: f64) -> Result<f64> {
        match &self.fitted {
            None => Err(Error::Contract(format!(
                "{} calibrator applied before fitting",
                self.method
            ))),
            Some(FittedCalibrator::Identity) => Ok(sigmoid(score)),
            Some(FittedCalibrator::Platt(p)) => Ok(p.apply(score)),
            Some(FittedCalibrator::VennAbers(v)) => v.apply(score),
        }
    }

    pub fn apply_all(&self, scores: &[f64]) -> Result<Vec<f64>> {
        scores.iter().map(|&s| self.apply(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{ace, auc};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn distorted_sample(rng: &mut impl Rng, n: usize, temperature: f64) -> (Vec<f64>, Vec<bool>) {
        let normal = Normal::new(0.0, 1.5).unwrap();
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let s: f64 = normal.sample(rng);
            labels.push(rng.random::<f64>() < sigmoid(s));
            scores.push(s * temperature);
        }
        (scores, labels)
    }

    #[test]
    fn unfitted_calibrator_is_a_contract_violation() {
        let cal = Calibrator::new(CalibrationMethod::Platt);
        assert!(matches!(cal.apply(0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_platt_is_sigmoid() {
        let p = PlattCalibrator { a: 1.0, b: 0.0 };
        for s in [-3.0, 0.0, 0.4, 7.0] {
            assert_eq!(p.apply(s), sigmoid(s));
        }
    }

    #[test]
    fn calibration_preserves_auc_on_fixture() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let (cs, cl) = distorted_sample(&mut rng, 400, 2.0);
        // test scores spread so that no two share a Venn-ABERS slot
        let mut sorted_cal = cs.clone();
        sorted_cal.sort_by(f64::total_cmp);
        let test_scores: Vec<f64> = sorted_cal.windows(2).step_by(8).map(|w| (w[0] + w[1]) / 2.0).collect();
        let test_labels: Vec<bool> = test_scores.iter().map(|&s| rng.random::<f64>() < sigmoid(s / 2.0)).collect();
        let raw = auc(&test_scores, &test_labels).unwrap();
        for method in CalibrationMethod::ALL {
            let mut cal = Calibrator::new(method);
            cal.fit(&cs, &cl).unwrap();
            let probs = cal.apply_all(&test_scores).unwrap();
            assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| test_scores[a].total_cmp(&test_scores[b]));
            assert!(order.windows(2).all(|w| probs[w[0]] <= probs[w[1]]), "{method}");
            if method != CalibrationMethod::VennAbers {
                assert_eq!(auc(&probs, &test_labels).unwrap(), raw, "{method}");
            }
        }
    }

    #[test]
    fn calibration_reduces_ace_of_overconfident_scorer() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let (cs, cl) = distorted_sample(&mut rng, 10_000, 3.0);
        let (ts, tl) = distorted_sample(&mut rng, 10_000, 3.0);
        let raw: Vec<f64> = ts.iter().map(|&s| sigmoid(s)).collect();
        let before = ace(&raw, &tl, 10).unwrap();
        for method in [CalibrationMethod::Platt, CalibrationMethod::VennAbers] {
            let mut cal = Calibrator::new(method);
            cal.fit(&cs, &cl).unwrap();
            let after = ace(&cal.apply_all(&ts).unwrap(), &tl, 10).unwrap();
            assert!(after <= 0.7 * before, "{method}: {before} -> {after}");
        }
    }

    #[test]
    fn method_names_roundtrip() {
        for m in CalibrationMethod::ALL {
            assert_eq!(m.key().parse::<CalibrationMethod>().unwrap(), m);
        }
        assert!("isotonic".parse::<CalibrationMethod>().is_err());
    }
}
