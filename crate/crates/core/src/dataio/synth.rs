//! Shift-controlled synthetic assays.
//!
//! The template is a set of `support_size` slots, each with a bit position,
//! a Bernoulli rate and a planted logit weight. A record sets each slot's bit
//! with the slot's rate. Entering each span from `drift_onset` on relocates
//! `round(drift * support_size)` slots to positions not used before (falling
//! back to any free position once the fresh pool is exhausted); a relocated
//! slot keeps its rate and weight, so drift changes only where bits fall.
//! Labels follow the planted sparse logistic model with an intercept that
//! decreases by `label_shift` per span. The raw value is the logit plus
//! standard logistic noise, so thresholding at zero reproduces
//! Bernoulli(sigmoid(logit)) labels.

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AssaySpec, CompoundRecord, Direction, Fingerprint, Transform};
use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

pub const SYNTH_SPEC_NAME: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub fp_len: usize,
    pub records_per_span: usize,
    pub n_spans: usize,
    /// Fraction of template support relocated per span, in [0, 1].
    pub drift: f64,
    /// First span (0-based) whose template is relocated.
    pub drift_onset: usize,
    /// Per-span decrease of the logit intercept.
    pub label_shift: f64,
    /// Fraction of template slots with a non-zero planted weight.
    pub weight_sparsity: f64,
    pub weight_scale: f64,
    pub intercept: f64,
    pub support_size: usize,
    /// Bernoulli rates on the support are drawn from `[min_rate, max_rate]`.
    pub min_rate: f64,
    pub max_rate: f64,
    pub start_date: NaiveDate,
    pub span_days: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            fp_len: 1024,
            records_per_span: 200,
            n_spans: 5,
            drift: 0.0,
            drift_onset: 1,
            label_shift: 0.0,
            weight_sparsity: 0.5,
            weight_scale: 1.0,
            intercept: 0.0,
            support_size: 64,
            min_rate: 0.05,
            max_rate: 0.5,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            span_days: 365,
        }
    }
}

impl SynthParams {
    /// Labelling rule that reproduces the generated labels from raw values.
    pub fn assay_spec(&self) -> AssaySpec {
        AssaySpec {
            name: SYNTH_SPEC_NAME.into(),
            transform: Transform::Identity,
            threshold: 0.0,
            direction: Direction::PreferredAbove,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.records_per_span == 0 || self.n_spans == 0 {
            return bad("records_per_span and n_spans must be positive".into());
        }
        if self.fp_len == 0 || self.support_size == 0 || self.support_size > self.fp_len {
            return bad(format!(
                "support_size {} must lie in 1..={}",
                self.support_size, self.fp_len
            ));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return bad(format!("drift {} outside [0, 1]", self.drift));
        }
        if !self.label_shift.is_finite() || self.label_shift.abs() > 10.0 {
            return bad(format!("label_shift {} outside [-10, 10]", self.label_shift));
        }
        if !(0.0..=1.0).contains(&self.weight_sparsity) {
            return bad(format!("weight_sparsity {} outside [0, 1]", self.weight_sparsity));
        }
        if !(self.weight_scale.is_finite() && self.weight_scale >= 0.0 && self.intercept.is_finite()) {
            return bad("weight_scale and intercept must be finite, scale non-negative".into());
        }
        if !(0.0 < self.min_rate && self.min_rate <= self.max_rate && self.max_rate <= 1.0) {
            return bad(format!(
                "rates [{}, {}] must satisfy 0 < min <= max <= 1",
                self.min_rate, self.max_rate
            ));
        }
        if self.span_days == 0 {
            return bad("span_days must be positive".into());
        }
        Ok(())
    }
}

pub fn synth_generate(params: &SynthParams, seed: u64) -> Result<Vec<CompoundRecord>> {
    params.validate()?;
    let mut rng = StreamRng::seed_from_u64(seed);
    let len = params.fp_len;

    let weight_dist = Normal::new(0.0, params.weight_scale)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let mut pool: Vec<usize> = (0..len).collect();
    pool.shuffle(&mut rng);
    let mut slots: Vec<Slot> = pool
        .drain(..params.support_size)
        .map(|position| Slot {
            position,
            rate: rng.random_range(params.min_rate..=params.max_rate),
            weight: if rng.random::<f64>() < params.weight_sparsity {
                weight_dist.sample(&mut rng)
            } else {
                0.0
            },
        })
        .collect();
    let mut occupied = vec![false; len];
    for s in &slots {
        occupied[s.position] = true;
    }

    // template drift, record draws and the final shuffle use separate streams
    let mut drift_rng = stream(seed, &[1]);
    let mut draw_rng = stream(seed, &[2]);
    let n_moves = (params.drift * params.support_size as f64).round() as usize;
    let mut records = Vec::with_capacity(params.records_per_span * params.n_spans);
    for span in 0..params.n_spans {
        if span > 0 && span >= params.drift_onset && n_moves > 0 {
            relocate(&mut slots, &mut occupied, &mut pool, n_moves, &mut drift_rng);
        }
        let span_intercept = params.intercept - params.label_shift * span as f64;
        let span_start = params.start_date + Days::new(span as u64 * params.span_days);
        for i in 0..params.records_per_span {
            let mut fp = Fingerprint::zeros(len);
            let mut logit = span_intercept;
            for s in &slots {
                if draw_rng.random::<f64>() < s.rate {
                    fp.set(s.position, true);
                    logit += s.weight;
                }
            }
            if fp.count_ones() == 0 {
                let s = &slots[draw_rng.random_range(0..slots.len())];
                fp.set(s.position, true);
                logit += s.weight;
            }
            let u: f64 = draw_rng.random_range(f64::EPSILON..1.0);
            let raw_value = logit + (u / (1.0 - u)).ln();
            let offset = i as u64 * params.span_days / params.records_per_span as u64;
            records.push(CompoundRecord {
                id: format!("syn-{span}-{i}"),
                fp,
                raw_value,
                date: span_start + Days::new(offset),
                label: raw_value > 0.0,
            });
        }
    }
    records.shuffle(&mut stream(seed, &[3]));
    Ok(records)
}

struct Slot {
    position: usize,
    rate: f64,
    weight: f64,
}

fn relocate(slots: &mut [Slot], occupied: &mut [bool], pool: &mut Vec<usize>, n_moves: usize, rng: &mut StreamRng) {
    let moving = rand::seq::index::sample(rng, slots.len(), n_moves).into_vec();
    let leaving: Vec<usize> = moving.iter().map(|&k| slots[k].position).collect();
    for &j in &leaving {
        occupied[j] = false;
    }
    for &k in &moving {
        let fresh = loop {
            match pool.pop() {
                Some(j) if !occupied[j] => break Some(j),
                Some(_) => continue,
                None => break None,
            }
        };
        let j = fresh.unwrap_or_else(|| {
            let outside: Vec<usize> = (0..occupied.len())
                .filter(|&j| !occupied[j] && !leaving.contains(&j))
                .collect();
            if outside.is_empty() {
                *leaving
                    .iter()
                    .find(|&&j| !occupied[j])
                    .expect("a vacated position is free")
            } else {
                outside[rng.random_range(0..outside.len())]
            }
        });
        occupied[j] = true;
        slots[k].position = j;
    }
}
