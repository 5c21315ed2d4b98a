use std::sync::Mutex;

use rayon::prelude::*;

use super::config::MlpConfig;
use super::train::{train_mlp, TrainedMlp};
use super::Samples;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Validation losses closer than this count as a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SearchOutcome<C, M> {
    pub best_index: usize,
    pub config: C,
    pub model: M,
    /// Validation loss per candidate, `None` where training failed.
    pub losses: Vec<Option<f64>>,
    pub failures: Vec<(usize, String)>,
}

/// Trains every candidate (in parallel) and keeps the one with the lowest
/// validation loss. Losses within [`TIE_TOLERANCE`] of the running best do
/// not displace it, so ties go to the earliest candidate.
///
/// `fit` must be deterministic in `(index, config)`: only the model with the
/// lowest loss is kept in memory, and the winner is refit if the tie rule
/// picks a different candidate.
pub fn grid_search<C, M, F>(space: &[C], fit: F) -> Result<SearchOutcome<C, M>>
where
    C: Clone + Sync,
    M: Send,
    F: Fn(usize, &C) -> Result<(M, f64)> + Sync,
{
    if space.is_empty() {
        return Err(Error::InvalidParams("empty search space".into()));
    }
    let held: Mutex<Option<(f64, usize, M)>> = Mutex::new(None);
    let results: Vec<std::result::Result<f64, String>> = space
        .par_iter()
        .enumerate()
        .map(|(i, c)| match fit(i, c) {
            Ok((model, loss)) if loss.is_finite() => {
                let mut slot = held.lock().expect("search mutex poisoned");
                let better = slot.as_ref().is_none_or(|(l, j, _)| (loss, i) < (*l, *j));
                if better {
                    *slot = Some((loss, i, model));
                }
                Ok(loss)
            }
            Ok((_, loss)) => Err(format!("non-finite validation loss {loss}")),
            Err(e) => Err(e.to_string()),
        })
        .collect();

    let losses: Vec<Option<f64>> = results.iter().map(|r| r.as_ref().ok().copied()).collect();
    let failures: Vec<(usize, String)> = results
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e.clone())))
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, loss) in losses.iter().enumerate() {
        if let Some(l) = *loss {
            if best.is_none_or(|(_, b)| l < b - TIE_TOLERANCE) {
                best = Some((i, l));
            }
        }
    }
    let Some((best_index, _)) = best else {
        return Err(Error::SearchFailed(failures));
    };
    let model = match held.into_inner().expect("search mutex poisoned") {
        Some((_, i, m)) if i == best_index => m,
        _ => fit(best_index, &space[best_index])?.0,
    };
    Ok(SearchOutcome {
        best_index,
        config: space[best_index].clone(),
        model,
        losses,
        failures,
    })
}

/// Grid search over MLP configurations scored by best-epoch validation BCE.
/// Candidate `i` trains with seed `derive_seed(seed, [i])`.
pub fn search_mlp(
    space: &[MlpConfig],
    train: &Samples<'_>,
    valid: &Samples<'_>,
    seed: u64,
) -> Result<SearchOutcome<MlpConfig, TrainedMlp>> {
    let seeded: Vec<MlpConfig> = space
        .iter()
        .enumerate()
        .map(|(i, c)| MlpConfig {
            seed: derive_seed(seed, &[i as u64]),
            ..c.clone()
        })
        .collect();
    grid_search(&seeded, |_, c| {
        let m = train_mlp(train, valid, c)?;
        let loss = m.valid_bce_at_best;
        Ok((m, loss))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Fingerprint;

    #[test]
    fn singleton_space_returns_its_config() {
        let out = grid_search(&[7u32], |_, &c| Ok((c * 2, 0.3))).unwrap();
        assert_eq!((out.best_index, out.config, out.model), (0, 7, 14));
    }

    #[test]
    fn ties_go_to_first_candidate() {
        let losses = [0.5, 0.2 + 5e-13, 0.2, 0.2 - 5e-13, 0.9];
        let out = grid_search(&losses, |i, &l| Ok((i, l))).unwrap();
        assert_eq!(out.best_index, 1);
        assert_eq!(out.model, 1);
    }

    #[test]
    fn failures_are_skipped_and_all_fail_reports_causes() {
        let out = grid_search(&[0, 1, 2], |i, _| {
            if i == 1 {
                Ok((i, 0.1))
            } else {
                Err(Error::Numerical(format!("boom {i}")))
            }
        })
        .unwrap();
        assert_eq!(out.best_index, 1);
        assert_eq!(out.failures.len(), 2);
        let err = grid_search(&[0, 1], |i, _| -> Result<(usize, f64)> {
            Err(Error::Numerical(format!("boom {i}")))
        })
        .unwrap_err();
        match err {
            Error::SearchFailed(causes) => assert_eq!(causes.iter().map(|c| c.0).collect::<Vec<_>>(), [0, 1]),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            grid_search(&[] as &[u8], |_, _| Ok(((), 0.0))),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn degenerate_learning_rate_loses() {
        let fps: Vec<Fingerprint> = [vec![0usize], vec![0, 1], vec![], vec![1]]
            .into_iter()
            .map(|o| Fingerprint::from_indices(2, o).unwrap())
            .collect();
        let data = Samples::new(fps.iter().collect(), vec![true, true, false, false]);
        let good = MlpConfig {
            input_dim: 2,
            hidden_dim: 8,
            dropout_rate: 0.0,
            learning_rate: 0.01,
            max_epochs: 200,
            batch_size: 4,
            ..Default::default()
        };
        let dead = MlpConfig {
            learning_rate: 0.0,
            ..good.clone()
        };
        let out = search_mlp(&[dead, good], &data, &data, 4).unwrap();
        assert_eq!(out.best_index, 1);
        assert!(out.losses[1].unwrap() < out.losses[0].unwrap());
    }
}
